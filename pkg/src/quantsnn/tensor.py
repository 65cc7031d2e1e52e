"""Dense float64 layers with hand-written forward/backward passes.

Tensors are plain ``numpy.ndarray`` objects of dtype float64, batch-leading
and row-major.  There is no autodiff graph: every layer caches what its own
backward pass needs and nothing else.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    """Raised when a layer is used out of order (e.g. backward before forward)."""


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values produced in {where}")
    return x


class AffineLayer:
    """y = x @ W.T + B with W of shape (out, in)."""

    kind = "affine"

    def __init__(self, W, B):
        self.W = as_tensor(W)
        self.B = as_tensor(B)
        if self.W.ndim != 2 or self.B.shape != (self.W.shape[0],):
            raise ShapeError(
                f"affine parameters incompatible: W {self.W.shape}, B {self.B.shape}"
            )
        self.grad_W = np.zeros_like(self.W)
        self.grad_B = np.zeros_like(self.B)
        self.cached_input = None

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "AffineLayer":
        # He-uniform, suited to rectifier-like activations
        bound = np.sqrt(6.0 / n_in)
        W = rng.uniform(-bound, bound, size=(n_out, n_in))
        return cls(W, np.zeros(n_out))

    @property
    def in_features(self) -> int:
        return self.W.shape[1]

    @property
    def out_features(self) -> int:
        return self.W.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Forward without caching (used by inference and the SNN engine)."""
        x = as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise ShapeError(
                f"affine input shape {x.shape} does not match weight shape {self.W.shape}"
            )
        return x @ self.W.T + self.B

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = check_finite(self.apply(x), "affine_forward")
        self.cached_input = as_tensor(x)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self.cached_input is None:
            raise StateError("affine backward called without a preceding forward")
        x = self.cached_input
        grad_out = as_tensor(grad_out)
        expected = x.shape[:-1] + (self.out_features,)
        if grad_out.shape != expected:
            raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {expected}")
        g2 = grad_out.reshape(-1, self.out_features)
        x2 = x.reshape(-1, self.in_features)
        self.grad_W += g2.T @ x2
        self.grad_B += g2.sum(axis=0)
        self.cached_input = None
        return check_finite(grad_out @ self.W, "affine_backward")

    def zero_grad(self) -> None:
        self.grad_W.fill(0.0)
        self.grad_B.fill(0.0)

    def params(self):
        return [(self.W, self.grad_W), (self.B, self.grad_B)]

    def describe(self) -> dict:
        return {"type": "affine", "in": self.in_features, "out": self.out_features}


class AvgPoolLayer:
    """Average pooling over flattened (C, H, W) feature vectors.

    Inputs are ``(batch, C*H*W)``; outputs are ``(batch, C*H'*W')`` with
    ``H' = (H - kh) // sh + 1``.  Only configurations where the window tiles
    the input exactly are accepted.
    """

    kind = "avgpool"

    def __init__(self, channels: int, height: int, width: int, window=(2, 2), stride=None):
        window = tuple(int(w) for w in np.broadcast_to(window, 2))
        stride = window if stride is None else tuple(int(s) for s in np.broadcast_to(stride, 2))
        if min(window) < 1 or min(stride) < 1:
            raise ShapeError(f"window {window} and stride {stride} must be positive")
        for dim, k, s in ((height, window[0], stride[0]), (width, window[1], stride[1])):
            if dim < k or (dim - k) % s != 0:
                raise ShapeError(
                    f"pool window {window}/stride {stride} incompatible with "
                    f"spatial dims ({height}, {width})"
                )
        self.channels, self.height, self.width = channels, height, width
        self.window, self.stride = window, stride
        self.out_h = (height - window[0]) // stride[0] + 1
        self.out_w = (width - window[1]) // stride[1] + 1
        self.cached_input_shape = None

    @property
    def in_features(self) -> int:
        return self.channels * self.height * self.width

    @property
    def out_features(self) -> int:
        return self.channels * self.out_h * self.out_w

    def _windows(self):
        kh, kw = self.window
        sh, sw = self.stride
        for i in range(self.out_h):
            for j in range(self.out_w):
                yield i, j, slice(i * sh, i * sh + kh), slice(j * sw, j * sw + kw)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"avgpool input shape {x.shape} incompatible with "
                f"(C, H, W) = ({self.channels}, {self.height}, {self.width})"
            )
        img = x.reshape(x.shape[0], self.channels, self.height, self.width)
        if self.window == self.stride:
            kh, kw = self.window
            out = img.reshape(
                x.shape[0], self.channels, self.out_h, kh, self.out_w, kw
            ).mean(axis=(3, 5))
        else:
            out = np.empty((x.shape[0], self.channels, self.out_h, self.out_w))
            for i, j, rs, cs in self._windows():
                out[:, :, i, j] = img[:, :, rs, cs].mean(axis=(2, 3))
        return out.reshape(x.shape[0], -1)

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = self.apply(x)
        self.cached_input_shape = x.shape
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self.cached_input_shape is None:
            raise StateError("avgpool backward called without a preceding forward")
        n = self.cached_input_shape[0]
        g = as_tensor(grad_out).reshape(n, self.channels, self.out_h, self.out_w)
        area = self.window[0] * self.window[1]
        grad_in = np.zeros((n, self.channels, self.height, self.width))
        for i, j, rs, cs in self._windows():
            grad_in[:, :, rs, cs] += g[:, :, i, j][:, :, None, None] / area
        self.cached_input_shape = None
        return grad_in.reshape(n, -1)

    def zero_grad(self) -> None:
        pass

    def params(self):
        return []

    def describe(self) -> dict:
        return {
            "type": "avgpool",
            "channels": self.channels,
            "height": self.height,
            "width": self.width,
            "window": list(self.window),
            "stride": list(self.stride),
        }


class ReLULayer:
    """Full-precision rectifier, used for float pre-training before quantization."""

    kind = "relu"

    def __init__(self):
        self.cached_mask = None

    def apply(self, x):
        return np.maximum(x, 0.0)

    def forward(self, x):
        self.cached_mask = x > 0
        return self.apply(x)

    def backward(self, grad_out):
        if self.cached_mask is None:
            raise StateError("relu backward called without a preceding forward")
        g = grad_out * self.cached_mask
        self.cached_mask = None
        return g

    def zero_grad(self) -> None:
        pass

    def params(self):
        return []

    def describe(self) -> dict:
        return {"type": "relu"}


def softmax_cross_entropy(logits, labels):
    """Mean softmax cross-entropy over a batch.

    ``logits`` is (batch, classes) or a single 1-D logit vector; ``labels``
    are class indices.  Returns ``(loss, grad_logits)`` where the gradient
    is already divided by the batch size.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label out of range [0, {k}): {labels[(labels < 0) | (labels >= k)][:5]}")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)
