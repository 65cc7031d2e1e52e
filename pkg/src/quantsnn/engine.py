"""Time-stepped integrate-and-fire simulation with reset-by-subtraction.

Per hidden layer and step::

    u <- u + c - z_prev * th        c = stage(input current), bias included
    z <- 1 if u >= th else 0

The reset of a spike emitted at step t is applied at step t+1.  The first
stage receives the analog input every step; later stages receive the
previous layer's spikes weighted by that layer's threshold.  The head does
not spike: it integrates its drive, and the running sum is the readout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .converter import PRECHARGE, SnnLayer, SnnNet
from .tensor import StateError, as_tensor

CORRECTIONS = ("none", "negative-spikes", "two-stage-offset")


@dataclass
class SimConfig:
    T: int
    correction: str = "none"
    record_trace: bool = False
    readout: str = "accumulated"  # or "instantaneous"
    keep_logits: bool = True

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T!r}")
        if self.correction not in CORRECTIONS:
            raise ValueError(f"unknown correction {self.correction!r}; expected one of {CORRECTIONS}")
        if self.readout not in ("accumulated", "instantaneous"):
            raise ValueError(f"unknown readout {self.readout!r}")


@dataclass
class LayerTrace:
    u0: np.ndarray
    u: list = field(default_factory=list)   # membrane after integration, per step
    z: list = field(default_factory=list)   # emitted spikes, per step
    c: list = field(default_factory=list)   # total input drive, per step

    def arrays(self):
        return np.stack(self.u), np.stack(self.z), np.stack(self.c)


@dataclass
class SimResult:
    predictions: np.ndarray                 # (T, N)
    accuracy: np.ndarray | None             # (T,) when labels are given
    spike_counts: list                      # per layer: total spike events (|z| summed)
    counts: list                            # per layer: (N, neurons) net spike counts
    residuals: list                         # per layer: max conservation residual
    logits: np.ndarray | None = None        # (T, N, classes)
    trace: list | None = None               # per layer LayerTrace
    stage1: "SimResult | None" = None
    events: np.ndarray | None = None        # (T,) cumulative spike events, all layers

    def spikes_per_sample_at(self, T: int) -> float:
        n = self.predictions.shape[1]
        return float(self.events[T - 1]) / n if n else 0.0

    @property
    def T(self) -> int:
        return self.predictions.shape[0]

    @property
    def spikes_per_sample(self) -> float:
        n = self.predictions.shape[1]
        return float(sum(self.spike_counts)) / n if n else 0.0


def fire(u, th, count=None, negative: bool = False) -> np.ndarray:
    """Spike decision: +1 at u >= th; with ``negative``, -1 when u < 0 and the
    neuron's emitted count so far is positive."""
    z = (u >= th).astype(np.float64)
    if negative:
        z -= ((u < 0) & (count > 0)).astype(np.float64)
    return z


def if_update(layer: SnnLayer, c: np.ndarray, negative: bool = False) -> np.ndarray:
    layer.u = layer.u + c - layer.z_prev * layer.th
    z = fire(layer.u, layer.th, layer.count, negative)
    layer.count = layer.count + z
    layer.z_prev = z
    return z


class _Audit:
    """Running sums for the telescoped membrane identity of one layer."""

    def __init__(self, layer: SnnLayer):
        self.u0 = layer.u.copy()
        self.charge = np.zeros_like(layer.u)
        self.spikes = np.zeros_like(layer.u)
        self.events = 0.0
        self.z_last = np.zeros_like(layer.u)

    def add(self, c, z):
        self.charge += c
        self.spikes += z
        self.events += float(np.abs(z).sum())
        self.z_last = z

    def residual(self, layer: SnnLayer) -> float:
        # the last step's spike has not been reset-subtracted yet
        r = layer.u - self.u0 - self.charge + layer.th * (self.spikes - self.z_last)
        return float(np.max(np.abs(r))) if r.size else 0.0


class Session:
    """One simulation of a batch: resets the network, then allows exactly T steps."""

    def __init__(self, snn: SnnNet, x, T: int, *, correction: str = "none",
                 record_trace: bool = False, readout: str = "accumulated"):
        self.snn = snn
        self.x = as_tensor(x)
        if self.x.ndim == 1:
            self.x = self.x[None, :]
        self.T = int(T)
        self.negative = correction == "negative-spikes"
        self.readout = readout
        snn.reset_state(len(self.x))
        self.audits = [_Audit(layer) for layer in snn.layers]
        self.trace = [LayerTrace(layer.u.copy()) for layer in snn.layers] if record_trace else None
        # the first stage's analog drive is constant across steps
        self._c0 = snn.layers[0](self.x) if snn.layers else None

    @property
    def t(self) -> int:
        return self.snn.t

    def step(self) -> np.ndarray:
        """Advance one step; returns the readout logits after this step."""
        snn = self.snn
        if snn.t >= self.T:
            raise StateError(f"session already ran its {self.T} steps; start a new session")
        inp = self.x
        for i, layer in enumerate(snn.layers):
            c = self._c0 if i == 0 else layer(inp)
            z = if_update(layer, c, self.negative)
            self.audits[i].add(c, z)
            if self.trace is not None:
                tr = self.trace[i]
                tr.u.append(layer.u.copy())
                tr.z.append(z)
                tr.c.append(c)
            inp = z * layer.th
        drive = snn.head(inp)
        if self.readout == "accumulated":
            snn.logits = snn.logits + drive
        else:
            snn.logits = drive
        snn.t += 1
        return snn.logits

    def residuals(self) -> list[float]:
        return [a.residual(layer) for a, layer in zip(self.audits, self.snn.layers)]


def step(snn: SnnNet, x, t: int, *, negative: bool = False) -> np.ndarray:
    """Single free-standing step of the accumulated-readout dynamics.

    ``t`` must equal the number of steps taken since the last
    ``reset_state``, so a stale state cannot silently leak into a new sample.
    """
    if t != snn.t:
        raise StateError(f"step index {t} but network is at step {snn.t}; call reset_state first")
    x = as_tensor(x)
    if x.ndim == 1:
        x = x[None, :]
    if snn.logits is None or snn.logits.shape[0] != len(x):
        raise StateError("network state not initialised for this batch; call reset_state(batch)")
    inp = x
    for layer in snn.layers:
        inp = if_update(layer, layer(inp), negative) * layer.th
    snn.logits = snn.logits + snn.head(inp)
    snn.t += 1
    return snn.logits


def simulate(snn: SnnNet, x, cfg: SimConfig, labels=None) -> SimResult:
    """Run every sample of ``x`` for ``cfg.T`` steps from a fresh pre-charged state."""
    if cfg.correction == "two-stage-offset":
        return two_stage_offset(snn, x, cfg, labels)
    sess = Session(snn, x, cfg.T, correction=cfg.correction,
                   record_trace=cfg.record_trace, readout=cfg.readout)
    n = len(sess.x)
    preds = np.empty((cfg.T, n), dtype=np.int64)
    logits = np.empty((cfg.T, n, snn.head.out_features)) if cfg.keep_logits else None
    events = np.empty(cfg.T)
    for t in range(cfg.T):
        out = sess.step()
        preds[t] = np.argmax(out, axis=1)
        events[t] = sum(a.events for a in sess.audits)
        if logits is not None:
            logits[t] = out
    return SimResult(
        predictions=preds,
        accuracy=_accuracy(preds, labels),
        spike_counts=[a.events for a in sess.audits],
        counts=[layer.count.copy() for layer in snn.layers],
        residuals=sess.residuals(),
        logits=logits,
        trace=sess.trace,
        events=events,
    )


def _accuracy(preds, labels):
    if labels is None:
        return None
    return np.mean(preds == np.asarray(labels)[None, :], axis=1)


def ideal_count(charge, th: float, t: int) -> np.ndarray:
    """Spike count a pre-charged neuron owes for accumulated charge over t steps."""
    return np.clip(np.floor((PRECHARGE * th + charge) / th), 0, t)


def two_stage_offset(snn: SnnNet, x, cfg: SimConfig, labels=None) -> SimResult:
    """Plain simulation, then a charge-based recount of every layer's spikes.

    Stage 1 is an ordinary run that measures each neuron's accumulated input
    charge.  Stage 2 replaces the first layer's spike count by the count its
    charge entitles it to, recomputes downstream charges from the corrected
    upstream counts, and replays the head on the corrected counts.  Both
    stages are evaluated after every step, so the result carries per-step
    predictions like a plain run; ``result.stage1`` holds the plain run.
    """
    sess = Session(snn, x, cfg.T, record_trace=cfg.record_trace)
    n = len(sess.x)
    classes = snn.head.out_features
    preds1 = np.empty((cfg.T, n), dtype=np.int64)
    preds2 = np.empty((cfg.T, n), dtype=np.int64)
    keep = cfg.keep_logits
    logits1 = np.empty((cfg.T, n, classes)) if keep else None
    logits2 = np.empty((cfg.T, n, classes)) if keep else None
    counts2 = []
    events1 = np.empty(cfg.T)
    events2 = np.empty(cfg.T)
    for t in range(cfg.T):
        out1 = sess.step()
        events1[t] = sum(a.events for a in sess.audits)
        steps = t + 1
        counts2 = []
        inp_k = None
        for i, layer in enumerate(snn.layers):
            if i == 0:
                charge = sess.audits[0].charge
            else:
                # sum over steps of stage(z*th) = stage(K*th) + (steps-1)*stage(0)
                charge = layer(inp_k) + (steps - 1) * layer(np.zeros_like(inp_k))
            k = ideal_count(charge, layer.th, steps)
            counts2.append(k)
            inp_k = k * layer.th
        if inp_k is None:
            out2 = out1
        else:
            out2 = snn.head(inp_k) + (steps - 1) * snn.head(np.zeros_like(inp_k))
        if cfg.readout == "instantaneous":
            out2 = out2 / steps
        events2[t] = sum(float(np.abs(k).sum()) for k in counts2)
        preds1[t] = np.argmax(out1, axis=1)
        preds2[t] = np.argmax(out2, axis=1)
        if keep:
            logits1[t], logits2[t] = out1, out2
    residuals = sess.residuals()
    stage1 = SimResult(preds1, _accuracy(preds1, labels), [a.events for a in sess.audits],
                       [layer.count.copy() for layer in snn.layers], residuals, logits1, sess.trace,
                       events=events1)
    return SimResult(
        predictions=preds2,
        accuracy=_accuracy(preds2, labels),
        spike_counts=[float(np.abs(k).sum()) for k in counts2],
        counts=counts2,
        residuals=residuals,
        logits=logits2,
        stage1=stage1,
        events=events2,
    )


def conservation_audit(layer: SnnLayer, trace: LayerTrace) -> float:
    """max |u_T - u_0 - sum_t c_t + th * sum_{t<T} z_t| over the layer's neurons."""
    u, z, c = trace.arrays()
    r = u[-1] - trace.u0 - c.sum(axis=0) + layer.th * z[:-1].sum(axis=0)
    return float(np.max(np.abs(r))) if r.size else 0.0


def logits_from_trace(snn: SnnNet, trace: list[LayerTrace]) -> np.ndarray:
    """Accumulated head drive per step, recomputed post hoc from recorded spike trains."""
    if not snn.layers:
        raise ValueError("network has no spiking layers")
    last = snn.layers[-1]
    z = np.stack(trace[-1].z)
    drive = np.stack([snn.head(zt * last.th) for zt in z])
    return np.cumsum(drive, axis=0)


# -- single-neuron schedules --------------------------------------------------

@dataclass
class NeuronRun:
    currents: np.ndarray
    u: np.ndarray
    z: np.ndarray
    th: float

    @property
    def count(self) -> float:
        return float(self.z.sum())


def drive_neuron(currents, th: float = 1.0, correction: str = "none") -> NeuronRun:
    """Feed an explicit per-step current schedule to one pre-charged IF neuron.

    Uses the same update kernel as the network engine.  With
    ``two-stage-offset`` the plain run is recorded and the returned spike
    train is replaced by the charge-entitled count, emitted as early as
    possible.
    """
    currents = np.asarray(currents, dtype=np.float64)
    layer = SnnLayer([], 1, th)
    layer.reset(1, width=1)
    us, zs = [], []
    negative = correction == "negative-spikes"
    for c in currents:
        z = if_update(layer, np.array([[c]]), negative)
        us.append(layer.u[0, 0])
        zs.append(z[0, 0])
    z = np.array(zs)
    if correction == "two-stage-offset":
        k = int(ideal_count(currents.sum(), th, len(currents)))
        z = np.zeros(len(currents))
        z[:k] = 1.0
    return NeuronRun(currents, np.array(us), z, th)


def quantized_state(total_charge: float, th: float, T: int) -> float:
    """Integer state of the time-free quantizer for the same total drive."""
    return float(ideal_count(total_charge, th, T))


def unevenness_demo(schedules=((2.0, -2.0), (1.0, 1.0), (-1.0, 2.0)), th: float = 1.0) -> list[dict]:
    """Show spike-count error caused purely by the temporal order of inputs.

    For each schedule: the plain IF count, the quantized-ANN state for the
    same total drive, and the counts after negative-spike and two-stage
    correction, with the plain membrane trace.
    """
    rows = []
    for sched in schedules:
        plain = drive_neuron(sched, th)
        rows.append({
            "schedule": list(map(float, sched)),
            "th": th,
            "u0": PRECHARGE * th,
            "u": plain.u.tolist(),
            "z": plain.z.tolist(),
            "snn_count": plain.count,
            "ann_state": quantized_state(float(np.sum(sched)), th, len(sched)),
            "negative_spikes_count": drive_neuron(sched, th, "negative-spikes").count,
            "two_stage_count": drive_neuron(sched, th, "two-stage-offset").count,
        })
    return rows


def write_trace_csv(path, trace: list[LayerTrace], dt: float = 1.0) -> None:
    """Dump a recorded trace; ``t`` is the time in ms at the end of each step."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "layer", "neuron", "t", "u", "z", "input_current"])
        for li, tr in enumerate(trace):
            u, z, c = tr.arrays()
            T, n, m = u.shape
            for s in range(n):
                for j in range(m):
                    for t in range(T):
                        w.writerow([s, li, j, repr((t + 1) * dt), repr(float(u[t, s, j])),
                                    int(z[t, s, j]), repr(float(c[t, s, j]))])
