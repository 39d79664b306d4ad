"""Central finite-difference gradient checking shared by the test modules."""

import numpy as np

from specaudit import tensor as T
from specaudit.tensor import Tensor

STEP = 1e-3
RTOL = 1e-3


def numeric_grad(f, arrays, which, step=STEP):
    """d f(arrays) / d arrays[which] by central differences; f returns a float."""
    base = [a.copy() for a in arrays]
    x = base[which]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        fp = f(base)
        x[idx] = orig - step
        fm = f(base)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * step)
    return g


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_op(op, arrays, rng, wrt=None):
    """Compare analytic and numeric gradients of sum(op(*inputs) * R) for random R.

    Returns the worst relative error over the checked inputs.
    """
    out_shape = op(*[Tensor(a) for a in arrays]).shape
    weights = rng.standard_normal(out_shape)

    def scalar(arrs):
        return float(np.sum(op(*[Tensor(a) for a in arrs]).data * weights))

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = T.tsum(T.mul(op(*tensors), weights))
    wrt = range(len(arrays)) if wrt is None else wrt
    analytic = T.grad(loss, [tensors[i] for i in wrt])
    worst = 0.0
    for i, ga in zip(wrt, analytic):
        worst = max(worst, relative_error(ga, numeric_grad(scalar, arrays, i)))
    return worst


class RegionRecorder:
    """Records which linear piece ReLU and max-pool take during a forward pass.

    Central differences are only meaningful when ``x - h`` and ``x + h`` lie
    in the same piece as ``x``; this lets a check detect a kink crossing.
    """

    def __init__(self):
        self.trace = []

    def __enter__(self):
        self._relu, self._pool = T.relu, T.maxpool2d
        relu, pool, trace = self._relu, self._pool, self.trace

        def relu_rec(x):
            trace.append((x.data > 0).tobytes())
            return relu(x)

        def pool_rec(x, factor=2):
            N, C, H, W = x.shape
            f = factor
            blocks = x.data.reshape(N, C, H // f, f, W // f, f).transpose(0, 1, 2, 4, 3, 5)
            trace.append(blocks.reshape(N, C, H // f, W // f, f * f).argmax(-1).tobytes())
            return pool(x, factor)

        T.relu, T.maxpool2d = relu_rec, pool_rec
        return self

    def __exit__(self, *exc):
        T.relu, T.maxpool2d = self._relu, self._pool

    def signature(self):
        return tuple(self.trace)


def crosses_kink(f_forward, x, step=STEP, cells=None):
    """True if perturbing any single entry of ``x`` (or of ``cells``) by +-step changes the ReLU/max-pool pieces."""
    def sig(a):
        with RegionRecorder() as rec:
            f_forward(a)
        return rec.signature()

    base = sig(x)
    probe = x.copy()
    for idx in (np.ndindex(*x.shape) if cells is None else cells):
        orig = probe[idx]
        for d in (step, -step):
            probe[idx] = orig + d
            if sig(probe) != base:
                return True
        probe[idx] = orig
    return False
