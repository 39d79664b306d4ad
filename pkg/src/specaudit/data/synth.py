"""Synthetic machine-hum corpus with annotated anomalies.

Normal clips are a stationary harmonic stack over pink-ish noise with a
slow amplitude modulation. Anomalous clips add one or two events, each a
whole number of seconds long:

* ``burst``     broadband noise burst (impacts, broken material)
* ``band-warp`` frequency wobble of one partial (something stuck or rubbing)
* ``dropout``   all partials attenuated (load change, uneven feed)

The machine itself (fundamental, partial layout) comes from ``machine_seed``
so that independently seeded corpora share one notion of "normal".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .io import AnnotationSet
from .mel import CLIP_SECONDS, SAMPLE_RATE, mel_metadata, mel_spectrogram

ANOMALY_TYPES = ("burst", "band-warp", "dropout")
_FADE_SECONDS = 0.02


@dataclass(frozen=True)
class AnomalyEvent:
    kind: str
    start_sec: float
    dur_sec: float
    intensity: float

    @property
    def end_sec(self) -> float:
        return self.start_sec + self.dur_sec


@dataclass
class SyntheticClipSpec:
    seed: int
    f0: float
    partials: list            # [(harmonic number, amplitude)]
    noise_level: float
    am_rate: float
    am_depth: float
    events: list = field(default_factory=list)


@dataclass
class SynthClip:
    clip_id: str
    values: np.ndarray        # (80, 401) normalized spectrogram
    label: str                # "normal" or the anomaly kind(s) joined by "+"
    spec: SyntheticClipSpec
    annotation: AnnotationSet | None = None
    audio: np.ndarray | None = None

    @property
    def is_anomalous(self) -> bool:
        return self.label != "normal"

    def metadata(self) -> dict:
        meta = {"source_id": self.clip_id, "label": self.label, "generator": "synth",
                "seed": str(self.spec.seed)}
        if self.spec.events:
            meta["events"] = ";".join(f"{e.kind}@{e.start_sec:g}+{e.dur_sec:g}x{e.intensity:.3f}"
                                      for e in self.spec.events)
        meta.update(mel_metadata())
        return meta


def machine_profile(machine_seed: int = 0) -> dict:
    rng = np.random.default_rng([machine_seed, 0xC0FFEE])
    f0 = float(rng.uniform(140.0, 220.0))
    harmonics = sorted(rng.choice(np.arange(1, 25), size=8, replace=False).tolist())
    amps = rng.uniform(0.15, 0.4, size=8)
    return {"f0": f0, "harmonics": harmonics, "amps": amps.tolist()}


def _envelope(t: np.ndarray, start: float, end: float) -> np.ndarray:
    """1 inside [start, end) with short raised-cosine edges, 0 outside."""
    rise = np.clip((t - start) / _FADE_SECONDS, 0.0, 1.0)
    fall = np.clip((end - t) / _FADE_SECONDS, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * np.minimum(rise, fall))


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    noise = np.fft.irfft(spec / np.sqrt(f), n)
    return noise / noise.std()


def sample_clip_spec(rng: np.random.Generator, seed: int, machine: dict,
                     n_events: int = 0, duration: float = CLIP_SECONDS) -> SyntheticClipSpec:
    n_partials = int(rng.integers(4, 9))
    pick = np.sort(rng.choice(len(machine["harmonics"]), size=n_partials, replace=False))
    partials = [(machine["harmonics"][i], machine["amps"][i] * float(rng.uniform(0.85, 1.15))) for i in pick]
    spec = SyntheticClipSpec(
        seed=seed,
        f0=machine["f0"] * float(rng.uniform(0.99, 1.01)),
        partials=partials,
        noise_level=float(rng.uniform(0.015, 0.03)),
        am_rate=float(rng.uniform(0.1, 0.4)),
        am_depth=float(rng.uniform(0.05, 0.2)),
    )
    # events occupy whole seconds and never touch each other
    seconds = int(duration)
    taken = np.zeros(seconds, dtype=bool)
    for _ in range(n_events):
        kind = ANOMALY_TYPES[int(rng.integers(len(ANOMALY_TYPES)))]
        for _attempt in range(50):
            dur = int(rng.integers(1, 3))
            start = int(rng.integers(0, seconds - dur + 1))
            lo, hi = max(0, start - 1), min(seconds, start + dur + 1)
            if not taken[lo:hi].any():
                taken[start:start + dur] = True
                spec.events.append(AnomalyEvent(kind, float(start), float(dur), float(rng.uniform(0.7, 1.0))))
                break
    spec.events.sort(key=lambda e: e.start_sec)
    return spec


def render_audio(spec: SyntheticClipSpec, rng: np.random.Generator,
                 sample_rate: int = SAMPLE_RATE, duration: float = CLIP_SECONDS) -> np.ndarray:
    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate
    am = 1.0 + spec.am_depth * np.sin(2 * np.pi * spec.am_rate * t + rng.uniform(0, 2 * np.pi))

    gain = np.ones(n)
    warps = []
    for ev in spec.events:
        env = _envelope(t, ev.start_sec, ev.end_sec)
        if ev.kind == "dropout":
            gain *= 1.0 - 0.97 * ev.intensity * env
        elif ev.kind == "band-warp":
            warps.append((ev, env))

    nyquist = sample_rate / 2.0
    warp_target = int(rng.integers(len(spec.partials)))
    tone = np.zeros(n)
    for k, (harmonic, amp) in enumerate(spec.partials):
        freq = np.full(n, harmonic * spec.f0)
        if k == warp_target:
            for ev, env in warps:
                wobble = np.sin(2 * np.pi * 3.0 * (t - ev.start_sec))
                freq = freq * (1.0 + 0.25 * ev.intensity * env * wobble)
        if freq.max() >= nyquist:
            continue
        phase = 2 * np.pi * np.cumsum(freq) / sample_rate + rng.uniform(0, 2 * np.pi)
        tone += amp * np.sin(phase)
    signal = am * gain * tone + spec.noise_level * pink_noise(n, rng)

    for ev in spec.events:
        if ev.kind == "burst":
            env = _envelope(t, ev.start_sec, ev.end_sec)
            # rattling impacts: noise gated at ~12 Hz
            gate = 0.6 + 0.4 * np.sign(np.sin(2 * np.pi * 12.0 * t + rng.uniform(0, 2 * np.pi)))
            signal = signal + 0.5 * ev.intensity * env * gate * rng.standard_normal(n)
    return signal


def annotation_for(clip_id: str, spec: SyntheticClipSpec) -> AnnotationSet:
    return AnnotationSet(clip_id, [(e.start_sec, e.end_sec) for e in spec.events], [e.kind for e in spec.events])


def synth_clip(seed: int, index: int, anomalous: bool, machine_seed: int = 0,
               clip_id: str | None = None, keep_audio: bool = False) -> SynthClip:
    rng = np.random.default_rng([seed, index, int(anomalous)])
    machine = machine_profile(machine_seed)
    spec = sample_clip_spec(rng, seed, machine, n_events=int(rng.integers(1, 3)) if anomalous else 0)
    audio = render_audio(spec, rng)
    values = mel_spectrogram(audio, sample_rate=SAMPLE_RATE)
    if clip_id is None:
        clip_id = f"s{seed}_{'a' if anomalous else 'n'}{index:03d}"
    label = "+".join(dict.fromkeys(e.kind for e in spec.events)) if anomalous else "normal"
    ann = annotation_for(clip_id, spec) if anomalous else None
    return SynthClip(clip_id, values, label, spec, ann, audio if keep_audio else None)


def synth_corpus(n_normal: int, n_anomalous: int, seed: int, machine_seed: int = 0,
                 keep_audio: bool = False) -> list:
    """Deterministic corpus: ``n_normal`` normal clips followed by ``n_anomalous`` anomalous ones."""
    if n_normal < 10:
        raise ValueError(f"minimum 10 normal clips (got {n_normal})")
    if n_anomalous < 0:
        raise ValueError("n_anomalous must be >= 0")
    clips = [synth_clip(seed, i, False, machine_seed, keep_audio=keep_audio) for i in range(n_normal)]
    clips += [synth_clip(seed, i, True, machine_seed, keep_audio=keep_audio) for i in range(n_anomalous)]
    return clips
