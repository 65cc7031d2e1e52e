"""Quantized rectifier activations: the deterministic quantizer and the noise adaptor.

Both share one set of backward rules; the deterministic path is simply the
noise-adaptor path with the cached noise fixed at zero.
"""

from __future__ import annotations

import numpy as np

from .tensor import StateError, as_tensor

MIN_SCALE = 1e-4


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 generator whose stream is a pure function of ``(seed, *keys)``.

    Derived streams (per epoch, per sample, per layer) go through
    ``SeedSequence`` so that nearby keys give statistically independent
    streams.  PCG64 output is identical across platforms.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def sample_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """I.i.d. uniform samples strictly inside (-0.5, 0.5)."""
    u = rng.random(shape)
    # random() is [0, 1); redraw the (astronomically rare) exact zeros
    while True:
        zeros = u == 0.0
        if not zeros.any():
            break
        u[zeros] = rng.random(int(zeros.sum()))
    return u - 0.5


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero.

    Computed as ``floor(|x|) + (frac >= 0.5)`` rather than ``floor(x + 0.5)``,
    which misrounds 0.49999999999999994.
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    f = np.floor(a)
    return np.copysign(f + (a - f >= 0.5), x)


def quantize_ratio(y: np.ndarray, p: int) -> np.ndarray:
    """Integer state round(clip(y, 0, p)); clip first, then round."""
    return round_half_away(np.clip(y, 0.0, p))


def grad_factors(y: np.ndarray, p: int):
    """Per-element (d out/d v, d out/d s) for the quantizer at ratio ``y``.

    ``y`` is v/s (+ eps when the noise adaptor is active).  The piecewise
    rules: below or at 0 both are zero; strictly inside (0, p) the input
    gradient passes straight through and the scale gradient is
    ``round(y) - y``; at or above p the input gradient is zero and the
    scale gradient is p.
    """
    inside = (y > 0) & (y < p)
    upper = y >= p
    dv = inside.astype(np.float64)
    ds = np.where(inside, -y + round_half_away(y), 0.0)
    ds = np.where(upper, float(p), ds)
    return dv, ds


class QuantActLayer:
    """Quantized activation ``s * round(clip(v/s [+ eps], 0, p))`` with learnable ``s``.

    With ``noise_enabled`` the layer draws fresh uniform noise on every
    training forward pass and reuses it in the matching backward pass.
    Evaluation (``training=False``) is always deterministic.
    """

    kind = "quant"

    def __init__(self, p: int, s: float = 1.0, noise_enabled: bool = False, initialized: bool = True):
        if int(p) != p or p < 1:
            raise ValueError(f"p must be a positive integer, got {p!r}")
        self._p = int(p)
        self.s = float(s)
        self.noise_enabled = bool(noise_enabled)
        self.initialized = initialized
        self.training = False
        self.grad_s = 0.0
        self.cache = None  # (x, eps)

    @property
    def p(self) -> int:
        return self._p

    def _check_scale(self) -> None:
        if not (self.s > 0 and np.isfinite(self.s)):
            raise StateError(f"quantizer scale must be positive and finite, got s={self.s}")

    def init_scale(self, v: np.ndarray) -> None:
        """LSQ-style initial scale 2*mean|v|/sqrt(p) from the first batch."""
        m = float(np.mean(np.abs(v)))
        self.s = max(2.0 * m / np.sqrt(self.p), MIN_SCALE)
        self.initialized = True

    def quant_forward(self, v) -> np.ndarray:
        self._check_scale()
        v = as_tensor(v)
        x = v / self.s
        self.cache = (x, np.zeros_like(x))
        return self.s * quantize_ratio(x, self.p)

    def na_forward(self, v, rng: np.random.Generator) -> np.ndarray:
        if not self.noise_enabled:
            raise StateError("na_forward called on a layer without the noise adaptor enabled")
        self._check_scale()
        v = as_tensor(v)
        x = v / self.s
        eps = sample_noise(rng, x.shape)
        self.cache = (x, eps)
        return self.s * quantize_ratio(x + eps, self.p)

    def forward(self, v, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.training and not self.initialized:
            self.init_scale(v)
        if self.training and self.noise_enabled:
            if rng is None:
                raise StateError("noise adaptor needs an rng during training")
            return self.na_forward(v, rng)
        return self.quant_forward(v)

    def backward(self, grad_out) -> np.ndarray:
        """Straight-through input gradient; accumulates the scale gradient into ``grad_s``."""
        if self.cache is None:
            raise StateError("quant backward called without a cached forward pass (x, eps)")
        x, eps = self.cache
        dv, ds = grad_factors(x + eps, self.p)
        grad_out = as_tensor(grad_out)
        self.grad_s += float(np.sum(grad_out * ds))
        self.cache = None
        return grad_out * dv

    # both paths share the same rules; the names mirror the two forward kernels
    quant_backward = backward
    na_backward = backward

    def apply(self, v) -> np.ndarray:
        """Deterministic inference, no caching."""
        self._check_scale()
        return self.s * quantize_ratio(as_tensor(v) / self.s, self.p)

    def states(self, v) -> np.ndarray:
        """Integer activation states round(clip(v/s, 0, p))."""
        self._check_scale()
        return quantize_ratio(as_tensor(v) / self.s, self.p)

    def expected_activation(self, v) -> np.ndarray:
        """Mean of the noise-adaptor output over eps: clip(v, 0, s*p)."""
        return expected_activation(v, self.s, self.p)

    def zero_grad(self) -> None:
        self.grad_s = 0.0

    def clamp_scale(self) -> None:
        self.s = max(self.s, MIN_SCALE)

    def params(self):
        return []

    def describe(self) -> dict:
        return {"type": "quant", "p": self.p, "noise": self.noise_enabled}


def expected_activation(v, s: float, p: int) -> np.ndarray:
    return np.clip(as_tensor(v), 0.0, s * p)
