"""Skip-connected convolutional autoencoder with an attention bottleneck."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .config import ModelConfig


class SkipCAE:
    """Conv encoder -> single-head attention over time tokens -> mirrored decoder.

    Each encoder stage is conv3x3 -> norm -> ReLU -> maxpool(2), where norm is
    batch normalization or, with ``norm="none"``, a per-channel bias. The
    pooled output of every stage but the deepest is added into the decoder
    stage at the same resolution. The decoder upsamples (nearest) before each
    conv and ends in a sigmoid, matching inputs normalized to [0, 1].

    Inputs whose sides are not multiples of ``2 ** depth`` are zero-padded on
    the bottom/right and the reconstruction is cropped back.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        rng = np.random.default_rng(config.seed)
        ch = config.channels
        depth = len(ch)
        unit = 2 ** depth
        self.padded_shape = (-(-config.mel_bins // unit) * unit, -(-config.frames // unit) * unit)
        hb = self.padded_shape[0] // unit
        d_tok = ch[-1] * hb
        d = config.attn_dim

        c_in = 1
        for i, c in enumerate(ch):
            self._conv(f"enc{i}", rng, c_in, c)
            self._norm_params(f"enc{i}", c)
            c_in = c
        self._linear("attn.w_in", rng, d_tok, d)
        for name in ("wq", "wk", "wv"):
            self._linear(f"attn.{name}", rng, d, d)
        self._linear("attn.w_out", rng, d, d_tok)
        for i in range(depth - 1, 0, -1):
            self._conv(f"dec{i}", rng, ch[i], ch[i - 1])
            self._norm_params(f"dec{i}", ch[i - 1])
        self._conv("out", rng, ch[0], 1)
        self.params["out.bias"] = Tensor(np.zeros(1), requires_grad=True)

    def _conv(self, name, rng, c_in, c_out):
        std = np.sqrt(2.0 / (c_in * 9))
        self.params[f"{name}.weight"] = Tensor(rng.normal(0.0, std, (c_out, c_in, 3, 3)), requires_grad=True)

    def _norm_params(self, name, c):
        if self.config.norm == "none":
            self.params[f"{name}.bias"] = Tensor(np.zeros(c), requires_grad=True)
            return
        self.params[f"{name}.gamma"] = Tensor(np.ones(c), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(c), requires_grad=True)
        self.buffers[f"{name}.running_mean"] = np.zeros(c)
        self.buffers[f"{name}.running_var"] = np.ones(c)

    def _linear(self, name, rng, n_in, n_out):
        self.params[name] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, n_out)), requires_grad=True)

    # ------------------------------------------------------------------

    def parameters(self) -> list:
        return list(self.params.values())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, v.data.copy()) for k, v in self.params.items())
        state.update((k, v.copy()) for k, v in self.buffers.items())
        return state

    def load_state_dict(self, state: dict) -> None:
        expected = set(self.params) | set(self.buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"state mismatch: missing={missing} unexpected={extra}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)
        for k in self.buffers:
            self.buffers[k] = np.array(state[k], dtype=np.float64)

    def as_batch(self, x) -> np.ndarray:
        """Coerce (H, W), (N, H, W) or (N, 1, H, W) input to a checked NCHW batch.

        Inputs one frame longer than the configured length are cropped, so
        401-frame spectrograms feed a 400-frame masked model directly.
        """
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None, None]
        elif x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected a spectrogram or batch of spectrograms, got shape {x.shape}")
        H, W = self.config.shape
        if x.shape[3] == W + 1:
            x = x[..., :W]
        if x.shape[2:] != (H, W):
            raise ValueError(f"input is {x.shape[2]}x{x.shape[3]}, model expects {H}x{W}")
        return x

    def forward(self, x, training: bool = False):
        """Run the network on an NCHW tensor.

        Returns the reconstruction and a dict of named intermediate tensors;
        ``acts["enc_last"]`` is the final encoder conv output (pre-norm,
        pre-pool).
        """
        if not isinstance(x, Tensor):
            x = Tensor(self.as_batch(x))
        H, W = self.config.shape
        if x.ndim != 4 or x.shape[1:] != (1, H, W):
            raise ValueError(f"forward expects [N, 1, {H}, {W}], got {x.shape}")
        P = self.params
        depth = len(self.config.channels)
        Hp, Wp = self.padded_shape
        h = x
        if (Hp, Wp) != (H, W):
            h = T.pad2d(h, 0, Hp - H, 0, Wp - W)

        acts = {}
        skips = []
        for i in range(depth):
            c = T.conv2d(h, P[f"enc{i}.weight"], padding=1)
            acts[f"enc{i}"] = c
            h = T.maxpool2d(T.relu(self._norm(f"enc{i}", c, training)))
            skips.append(h)
        acts["enc_last"] = acts[f"enc{depth - 1}"]

        N, C, hb, wb = h.shape
        tokens = h.transpose(0, 3, 1, 2).reshape(N, wb, C * hb)
        z = tokens @ P["attn.w_in"]
        z = T.attention(z, P["attn.wq"], P["attn.wk"], P["attn.wv"])
        h = (z @ P["attn.w_out"]).reshape(N, wb, C, hb).transpose(0, 2, 3, 1)
        acts["bottleneck"] = h

        for i in range(depth - 1, 0, -1):
            h = T.upsample_nearest(h)
            h = T.relu(self._norm(f"dec{i}", T.conv2d(h, P[f"dec{i}.weight"], padding=1), training))
            h = h + skips[i - 1]
        h = T.upsample_nearest(h)
        out = T.sigmoid(T.conv2d(h, P["out.weight"], P["out.bias"], padding=1))
        if (Hp, Wp) != (H, W):
            out = out[:, :, :H, :W]
        return out, acts

    def _norm(self, name, x, training):
        if self.config.norm == "none":
            return x + self.params[f"{name}.bias"].reshape(1, -1, 1, 1)
        return T.batchnorm2d(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                             self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"],
                             training=training)

    def reconstruct(self, x, batch_size: int = 16) -> np.ndarray:
        """Eval-mode reconstruction as a plain array shaped like ``x``'s spectrograms."""
        xb = self.as_batch(x)
        outs = [self.forward(Tensor(xb[s:s + batch_size]))[0].data for s in range(0, len(xb), batch_size)]
        out = np.concatenate(outs)[:, 0]
        return out[0] if np.ndim(x) == 2 else out


def anomaly_score(model: SkipCAE, x) -> float:
    """Mean squared reconstruction error of one unmasked spectrogram."""
    xb = model.as_batch(x)
    if len(xb) != 1:
        raise ValueError("anomaly_score takes a single spectrogram")
    recon = model.reconstruct(xb)
    d = recon - xb[:, 0]
    return float(np.sum(d * d) / d.size)


def anomaly_scores(model: SkipCAE, xs, batch_size: int = 16) -> np.ndarray:
    xb = model.as_batch(xs)
    recon = model.reconstruct(xb, batch_size=batch_size)
    d = recon - xb[:, 0]
    return np.array([float(np.sum(r * r) / r.size) for r in d])
