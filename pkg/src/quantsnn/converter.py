"""Quantized ANN -> integrate-and-fire SNN conversion."""

from __future__ import annotations

import numpy as np

from .checkpoint import CheckpointError, dump_json, net_from_dict, net_to_dict, read_json
from .network import QuantNet
from .quant import QuantActLayer
from .tensor import AffineLayer, AvgPoolLayer

PRECHARGE = 0.5


class ConversionError(ValueError):
    pass


def _copy_linear(layer):
    if isinstance(layer, AffineLayer):
        return AffineLayer(layer.W.copy(), layer.B.copy())
    return AvgPoolLayer(layer.channels, layer.height, layer.width, layer.window, layer.stride)


class LinearStage:
    """A run of affine/pooling layers applied to one input current."""

    def __init__(self, ops):
        self.ops = list(ops)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        for op in self.ops:
            x = op.apply(x)
        return x

    @property
    def affine(self) -> AffineLayer | None:
        aff = [op for op in self.ops if isinstance(op, AffineLayer)]
        return aff[-1] if aff else None

    @property
    def W(self) -> np.ndarray:
        return self.affine.W

    @property
    def B(self) -> np.ndarray:
        return self.affine.B

    @property
    def out_features(self) -> int:
        return self.ops[-1].out_features


class SnnLayer(LinearStage):
    """Integrate-and-fire population fed by a linear stage.

    ``th = p * s`` of the source quantizer; ``u`` and ``z_prev`` are
    ``(batch, neurons)`` arrays allocated by ``reset``.
    """

    def __init__(self, ops, p: int, s: float):
        super().__init__(ops)
        self.p = int(p)
        self.s = float(s)
        self.th = self.p * self.s
        self.u = None
        self.z_prev = None
        self.count = None

    def reset(self, batch: int = 1, width: int | None = None) -> None:
        n = self.out_features if width is None else width
        self.u = np.full((batch, n), PRECHARGE * self.th)
        self.z_prev = np.zeros((batch, n))
        self.count = np.zeros((batch, n))


class SnnNet:
    """Converted network: spiking hidden layers plus a non-spiking integrating head."""

    dt = 1.0  # ms per step
    input_coding = "analog"

    def __init__(self, layers: list[SnnLayer], head: LinearStage):
        self.layers = layers
        self.head = head
        self.logits = None
        self.t = 0
        self.batch = 0

    @property
    def thresholds(self) -> list[float]:
        return [layer.th for layer in self.layers]

    def reset_state(self, batch: int = 1) -> None:
        for layer in self.layers:
            layer.reset(batch)
        self.logits = np.zeros((batch, self.head.out_features))
        self.t = 0
        self.batch = batch

    def to_quantnet(self) -> QuantNet:
        """Rebuild the source ANN (weights and (p, s) read back from the SNN)."""
        layers = []
        for layer in self.layers:
            layers.extend(_copy_linear(op) for op in layer.ops)
            layers.append(QuantActLayer(layer.p, layer.s))
        layers.extend(_copy_linear(op) for op in self.head.ops)
        return QuantNet(layers)


def convert(net: QuantNet) -> SnnNet:
    """Copy weights and biases verbatim and set each threshold to p * s."""
    layers, pending = [], []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, (AffineLayer, AvgPoolLayer)):
            pending.append(_copy_linear(layer))
        elif isinstance(layer, QuantActLayer):
            if not pending:
                raise ConversionError(f"quantizer at layer {i} has no preceding linear stage")
            layers.append(SnnLayer(pending, layer.p, layer.s))
            pending = []
        else:
            raise ConversionError(
                f"layer {i} ({layer.kind}) is not a quantized activation; "
                "only quantized hidden activations can be converted"
            )
    head = LinearStage(pending)
    if head.affine is None:
        raise ConversionError("network has no affine output head after the last quantizer")
    snn = SnnNet(layers, head)
    snn.reset_state()
    return snn


def reset_state(snn: SnnNet, batch: int = 1) -> None:
    snn.reset_state(batch)


def snn_to_dict(snn: SnnNet, *, seed: int | None = None, meta: dict | None = None) -> dict:
    doc = net_to_dict(snn.to_quantnet(), seed=seed, meta=meta)
    doc["snn"] = {
        "th": snn.thresholds,
        "precharge": PRECHARGE,
        "dt_ms": snn.dt,
        "input_coding": snn.input_coding,
    }
    return doc


def save_snn(snn: SnnNet, path, **kw) -> None:
    dump_json(snn_to_dict(snn, **kw), path)


def load_snn(path) -> SnnNet:
    doc = read_json(path)
    snn = convert(net_from_dict(doc))
    section = doc.get("snn")
    if section is not None:
        th = section.get("th")
        if not isinstance(th, list) or len(th) != len(snn.layers):
            raise CheckpointError("threshold list does not match hidden layer count", field="snn.th")
        for i, (stored, layer) in enumerate(zip(th, snn.layers)):
            if stored != layer.th:
                raise CheckpointError(f"stored threshold {stored!r} != p*s = {layer.th!r}",
                                      field=f"snn.th[{i}]")
    return snn
