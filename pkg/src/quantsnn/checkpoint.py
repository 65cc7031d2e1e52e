"""JSON checkpoints with round-trip-exact float formatting.

Python's ``repr(float)`` is the shortest decimal string that parses back to
the same IEEE-754 double, and ``json`` uses it, so a save/load cycle is
bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .network import QuantNet
from .quant import QuantActLayer
from .tensor import AffineLayer, AvgPoolLayer, ReLULayer

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, message: str, *, offset: int | None = None, field: str | None = None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))
        self.offset = offset
        self.field = field


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def net_to_dict(net: QuantNet, *, seed: int | None = None, meta: dict | None = None) -> dict:
    params = []
    for layer in net.layers:
        if isinstance(layer, AffineLayer):
            params.append({"W": layer.W.tolist(), "B": layer.B.tolist()})
        elif isinstance(layer, QuantActLayer):
            params.append({"s": layer.s, "p": layer.p})
        else:
            params.append({})
    quant = net.quant_layers
    return {
        "format_version": FORMAT_VERSION,
        "architecture": net.architecture(),
        "p": [q.p for q in quant],
        "flags": {"noise_adaptor": any(q.noise_enabled for q in quant)},
        "seed": seed,
        "meta": meta or {},
        "params": params,
    }


def _require(d: dict, key: str, ctx: str):
    if not isinstance(d, dict) or key not in d:
        raise CheckpointError("missing required field", field=f"{ctx}{key}")
    return d[key]


def _array(value, field: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"not a numeric array: {exc}", field=field) from None
    if arr.ndim != ndim:
        raise CheckpointError(f"expected {ndim}-D array, got shape {arr.shape}", field=field)
    return arr


def net_from_dict(doc: dict) -> QuantNet:
    version = _require(doc, "format_version", "")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version!r}", field="format_version")
    arch = _require(doc, "architecture", "")
    params = _require(doc, "params", "")
    if not isinstance(arch, list) or not isinstance(params, list) or len(arch) != len(params):
        raise CheckpointError("architecture and params must be equal-length lists", field="params")
    layers = []
    for i, (spec, par) in enumerate(zip(arch, params)):
        kind = _require(spec, "type", f"architecture[{i}].")
        ctx = f"params[{i}]."
        if kind == "affine":
            W = _array(_require(par, "W", ctx), ctx + "W", 2)
            B = _array(_require(par, "B", ctx), ctx + "B", 1)
            if W.shape != (spec.get("out"), spec.get("in")) or B.shape != (W.shape[0],):
                raise CheckpointError(
                    f"parameter shapes W {W.shape}, B {B.shape} disagree with architecture",
                    field=ctx + "W",
                )
            layers.append(AffineLayer(W, B))
        elif kind == "quant":
            s = _require(par, "s", ctx)
            p = _require(par, "p", ctx)
            if not isinstance(s, (int, float)) or not s > 0:
                raise CheckpointError(f"scale must be a positive number, got {s!r}", field=ctx + "s")
            layers.append(QuantActLayer(int(p), float(s), bool(spec.get("noise", False))))
        elif kind == "relu":
            layers.append(ReLULayer())
        elif kind == "avgpool":
            layers.append(AvgPoolLayer(spec["channels"], spec["height"], spec["width"],
                                       spec["window"], spec["stride"]))
        else:
            raise CheckpointError(f"unknown layer type {kind!r}", field=f"architecture[{i}].type")
    return QuantNet(layers)


def dump_json(doc: dict, path) -> None:
    text = json.dumps(doc, allow_nan=False, separators=(",", ":"))
    Path(path).write_text(text + "\n")


def read_json(path) -> dict:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError("file is not valid UTF-8", offset=exc.start) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise CheckpointError(f"malformed JSON: {exc.msg}", offset=offset) from None


def save_checkpoint(net: QuantNet, path, *, seed: int | None = None, meta: dict | None = None) -> None:
    dump_json(net_to_dict(net, seed=seed, meta=meta), path)


def load_checkpoint(path) -> QuantNet:
    return net_from_dict(read_json(path))
