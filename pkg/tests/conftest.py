import numpy as np
import pytest

from specaudit.data import synth_corpus
from specaudit.model import ModelConfig, SkipCAE, TrainConfig, train

TOY_SHAPE = (16, 32)


def toy_crops(n_normal=30, seed=11):
    """Small spectrograms: every fifth mel bin and the first 32 frames of synthetic clips."""
    clips = synth_corpus(n_normal, 0, seed=seed)
    return np.stack([c.values[::5, :TOY_SHAPE[1]] for c in clips])


@pytest.fixture(scope="session")
def toy_model():
    model = SkipCAE(ModelConfig(mel_bins=TOY_SHAPE[0], frames=TOY_SHAPE[1], channels=(4, 8, 16), attn_dim=8))
    train(model, toy_crops(), TrainConfig(epochs=30, batch_size=8, lr_max=3e-3, patience=30))
    for p in model.parameters():
        p.requires_grad = False
    return model


@pytest.fixture(scope="session")
def toy_inputs():
    return toy_crops(n_normal=10, seed=12)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and rep.when != "call":
        detail = f"{rep.when} error"
    ACCEPTANCE[marker.args[0]] = (marker.args[1], rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
