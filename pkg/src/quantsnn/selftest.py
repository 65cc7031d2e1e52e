"""Fast invariant checks, one printed line per property."""

from __future__ import annotations

import math
import time

import numpy as np

from .converter import convert
from .engine import SimConfig, conservation_audit, simulate, unevenness_demo
from .network import QuantNet
from .quant import QuantActLayer, make_rng, quantize_ratio


def _scalar_state(y: float, p: int) -> float:
    if y <= 0:
        return 0.0
    if y >= p:
        return float(p)
    f = math.floor(y)
    return float(f + (1 if y - f >= 0.5 else 0))


def _scalar_ds(y: float, p: int) -> float:
    if y <= 0:
        return 0.0
    if y >= p:
        return float(p)
    f = math.floor(y)
    return -y + (f + (1 if y - f >= 0.5 else 0))


def check_quant_grid():
    bad = 0
    for p in (1, 2, 3, 4):
        x = np.round(np.arange(-100, 100 * (p + 1) + 1) * 0.01, 10)
        for eps in (-0.49, -0.25, 0.0, 0.25, 0.49):
            layer = QuantActLayer(p, 1.0, noise_enabled=True)
            layer.cache = (x, np.full_like(x, eps))
            y = x + eps
            keep = np.abs(y - np.floor(y) - 0.5) >= 1e-9
            out = layer.s * np.array([_scalar_state(v, p) for v in y])
            got = layer.s * quantize_ratio(y, p)
            g = layer.backward(np.ones_like(x))
            dv = np.array([1.0 if 0 < v < p else 0.0 for v in y])
            bad += int(np.sum((got != out)[keep]))
            bad += int(np.sum((g != dv)[keep]))
            ds = np.array([_scalar_ds(v, p) for v in y])
            for i in np.flatnonzero(keep)[:: max(1, len(x) // 50)]:
                layer.cache = (x[i:i + 1], np.full(1, eps))
                layer.grad_s = 0.0
                layer.backward(np.ones(1))
                bad += int(layer.grad_s != ds[i])
    return bad == 0, f"{bad} mismatches"


def check_unbiased(n_draws: int = 20000, n_points: int = 10):
    rng = make_rng(1234)
    s, p = 0.7, 3
    layer = QuantActLayer(p, s, noise_enabled=True)
    v = rng.uniform(0, s * p, n_points)
    mean = layer.na_forward(np.broadcast_to(v, (n_draws, n_points)), rng).mean(axis=0)
    tol = 4 * 0.5 * s / math.sqrt(n_draws)
    err = float(np.max(np.abs(mean - np.clip(v, 0, s * p))))
    return err <= tol, f"max |mean - clip| = {err:.2e} (tol {tol:.2e})"


def micro_net(p: int, sizes=(16, 24, 24, 5), seed: int = 7) -> QuantNet:
    net = QuantNet.mlp(list(sizes), p=p, seed=seed)
    rng = make_rng(seed, 1)
    for q in net.quant_layers:
        q.s = float(rng.uniform(0.2, 0.6))
        q.initialized = True
    for a in net.affine_layers:
        a.B[:] = rng.normal(0, 0.2, a.B.shape)
    return net


def check_t1_equivalence():
    net = micro_net(1)
    x = make_rng(99).random((500, 16))
    logits, hidden = net.predict_logits(x, return_hidden=True)
    top2 = np.sort(logits, axis=1)[:, -2:]
    keep = (top2[:, 1] - top2[:, 0]) >= 1e-9
    res = simulate(convert(net), x, SimConfig(T=1, record_trace=True))
    agree = res.predictions[0][keep] == np.argmax(logits, axis=1)[keep]
    layer_ok = all(
        np.array_equal(tr.z[0] * q.s, h) for tr, q, h in zip(res.trace, net.quant_layers, hidden)
    )
    return bool(agree.all()) and layer_ok, f"{int(agree.sum())}/{int(keep.sum())} agree, layerwise z*s == v_hat: {layer_ok}"


def check_conservation():
    net = micro_net(3)
    x = make_rng(5).random((50, 16))
    worst = 0.0
    for corr in ("none", "negative-spikes"):
        res = simulate(convert(net), x, SimConfig(T=32, correction=corr, record_trace=True))
        snn = convert(net)
        worst = max(worst, *res.residuals,
                    *(conservation_audit(layer, tr) for layer, tr in zip(snn.layers, res.trace)))
    return worst <= 1e-9, f"max residual {worst:.2e}"


def check_unevenness():
    rows = unevenness_demo()
    r = rows[0]
    ok = (r["snn_count"] == 1 and r["ann_state"] == 0
          and r["negative_spikes_count"] == 0 and r["two_stage_count"] == 0)
    ok &= all(row["snn_count"] == row["ann_state"] for row in rows[1:])
    return ok, f"(+2,-2): snn {r['snn_count']:.0f}, ann {r['ann_state']:.0f}, neg {r['negative_spikes_count']:.0f}, 2-stage {r['two_stage_count']:.0f}"


CHECKS = [
    ("quantizer closed-form grid", check_quant_grid),
    ("noise adaptor unbiasedness", check_unbiased),
    ("T=1 / p=1 exact conversion", check_t1_equivalence),
    ("charge conservation", check_conservation),
    ("unevenness demo + corrections", check_unevenness),
]


def selftest(out=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        out(f"{'PASS' if ok else 'FAIL'}  {name:<32} {detail}  [{time.perf_counter() - t0:.2f}s]")
    out("selftest: " + ("all properties hold" if all_ok else "FAILURES"))
    return all_ok
