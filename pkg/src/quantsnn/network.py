"""QuantNet: a feed-forward stack of affine, pooling and activation blocks."""

from __future__ import annotations

import numpy as np

from .quant import QuantActLayer, make_rng
from .tensor import AffineLayer, AvgPoolLayer, ReLULayer, ShapeError, as_tensor


def _build_layer(spec: dict, rng: np.random.Generator):
    kind = spec["type"]
    if kind == "affine":
        return AffineLayer.init(int(spec["in"]), int(spec["out"]), rng)
    if kind == "avgpool":
        return AvgPoolLayer(
            int(spec["channels"]), int(spec["height"]), int(spec["width"]),
            spec.get("window", (2, 2)), spec.get("stride"),
        )
    if kind == "relu":
        return ReLULayer()
    if kind == "quant":
        return QuantActLayer(int(spec["p"]), float(spec.get("s", 1.0)),
                             bool(spec.get("noise", False)), initialized=False)
    raise ValueError(f"unknown layer type {kind!r}")


class QuantNet:
    """Ordered layers; the last affine is the classifier head."""

    def __init__(self, layers):
        self.layers = list(layers)
        self._check()

    def _check(self) -> None:
        if not self.layers or not isinstance(self.layers[-1], AffineLayer):
            raise ShapeError("network must end with an affine head")
        width = None
        for i, layer in enumerate(self.layers):
            n_in = getattr(layer, "in_features", None)
            if n_in is not None and width is not None and n_in != width:
                raise ShapeError(f"layer {i} ({layer.kind}) expects {n_in} inputs, got {width}")
            width = getattr(layer, "out_features", width)

    @classmethod
    def from_architecture(cls, arch, seed: int = 0) -> "QuantNet":
        rng = make_rng(seed, 0xA11CE)
        return cls([_build_layer(spec, rng) for spec in arch])

    @classmethod
    def mlp(cls, sizes, p: int = 2, noise: bool = False, seed: int = 0,
            activation: str = "quant") -> "QuantNet":
        return cls.from_architecture(mlp_architecture(sizes, p, noise, activation), seed)

    def architecture(self) -> list[dict]:
        return [layer.describe() for layer in self.layers]

    @property
    def quant_layers(self) -> list[QuantActLayer]:
        return [l for l in self.layers if isinstance(l, QuantActLayer)]

    @property
    def affine_layers(self) -> list[AffineLayer]:
        return [l for l in self.layers if isinstance(l, AffineLayer)]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_features

    def train(self, mode: bool = True) -> "QuantNet":
        for layer in self.quant_layers:
            layer.training = mode
        return self

    def eval(self) -> "QuantNet":
        return self.train(False)

    def forward(self, x, rng: np.random.Generator | None = None) -> np.ndarray:
        h = as_tensor(x)
        for layer in self.layers:
            h = layer.forward(h, rng) if isinstance(layer, QuantActLayer) else layer.forward(h)
        return h

    def backward(self, grad_logits) -> np.ndarray:
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def predict_logits(self, x, return_hidden: bool = False):
        """Deterministic inference; optionally also the quantized hidden activations."""
        h = as_tensor(x)
        hidden = []
        for layer in self.layers:
            h = layer.apply(h)
            if isinstance(layer, QuantActLayer):
                hidden.append(h)
        return (h, hidden) if return_hidden else h

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def set_noise(self, enabled: bool) -> None:
        for layer in self.quant_layers:
            layer.noise_enabled = enabled

    def with_quantized_activations(self, p: int, noise: bool = False) -> "QuantNet":
        """Copy of this network with every ReLU replaced by a fresh quantizer.

        Used to fine-tune a full-precision pre-trained model; scales are
        initialised from the first training batch.
        """
        layers = []
        for layer in self.layers:
            if isinstance(layer, ReLULayer):
                layers.append(QuantActLayer(p, 1.0, noise, initialized=False))
            elif isinstance(layer, AffineLayer):
                layers.append(AffineLayer(layer.W.copy(), layer.B.copy()))
            elif isinstance(layer, QuantActLayer):
                q = QuantActLayer(layer.p, layer.s, layer.noise_enabled, layer.initialized)
                layers.append(q)
            else:
                layers.append(_build_layer(layer.describe(), None))
        return QuantNet(layers)


def mlp_architecture(sizes, p: int = 2, noise: bool = False, activation: str = "quant") -> list[dict]:
    arch = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        arch.append({"type": "affine", "in": int(a), "out": int(b)})
        if i < len(sizes) - 2:
            arch.append({"type": "quant", "p": p, "noise": noise} if activation == "quant"
                        else {"type": "relu"})
    return arch
