"""Sweeps over (seed, p, noise adaptor) and accuracy-vs-T reporting."""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import config_hash, save_checkpoint
from .converter import convert
from .data import Dataset, find_mnist, gen_synthetic, load_mnist
from .engine import CORRECTIONS, SimConfig, simulate
from .network import QuantNet
from .trainer import TrainConfig, evaluate_ann, train

RESULT_COLUMNS = ["seed", "p", "noise_adaptor", "correction", "T",
                  "ann_acc", "snn_acc", "spikes_per_sample"]


@dataclass
class DataSpec:
    source: str = "auto"          # auto | mnist | blobs | spirals
    path: str | None = None       # MNIST directory
    n: int = 8000
    classes: int = 10
    dim: int = 32
    spread: float | None = 0.07
    test_fraction: float = 0.3
    seed: int | None = None       # None: one synthetic draw per run seed
    train_subset: int | None = None
    test_subset: int | None = None


@dataclass
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    hidden: list = field(default_factory=lambda: [256])
    train: dict = field(default_factory=dict)   # TrainConfig fields except seed/p/noise_adaptor
    p_list: list = field(default_factory=lambda: [2])
    T_list: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64])
    corrections: list = field(default_factory=lambda: ["none"])
    noise_adaptor: list = field(default_factory=lambda: [False, True])
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "results"
    save_checkpoints: bool = False
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.data, dict):
            self.data = DataSpec(**self.data)
        self.validate()

    def validate(self) -> None:
        for name in ("p_list", "T_list", "corrections", "noise_adaptor", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"experiment config: {name} must be a nonempty list")
        if any(int(T) != T or T < 1 for T in self.T_list):
            raise ValueError(f"experiment config: T_list entries must be positive integers: {self.T_list}")
        if any(int(p) != p or p < 1 for p in self.p_list):
            raise ValueError(f"experiment config: p_list entries must be positive integers: {self.p_list}")
        bad = [c for c in self.corrections if c not in CORRECTIONS]
        if bad:
            raise ValueError(f"experiment config: unknown corrections {bad}")
        if self.data.source == "mnist" and find_mnist(self.data.path) is None:
            raise ValueError(f"experiment config: MNIST IDX files not found under {self.data.path!r}")
        if self.data.source not in ("auto", "mnist", "blobs", "spirals"):
            raise ValueError(f"experiment config: unknown data source {self.data.source!r}")
        unknown = set(self.train) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"experiment config: unknown train fields {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"experiment config: unknown keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        return config_hash(d)


def resolve_data(spec: DataSpec, seed: int) -> tuple[Dataset, Dataset]:
    """Train/test split for one run; MNIST when available (or requested), else synthetic."""
    use_mnist = spec.source == "mnist" or (spec.source == "auto" and find_mnist(spec.path))
    if use_mnist:
        train_set, test_set = load_mnist(spec.path)
    else:
        kind = "blobs" if spec.source == "auto" else spec.source
        dseed = seed if spec.seed is None else spec.seed
        full = gen_synthetic(kind, spec.n, spec.classes, dseed, dim=spec.dim, spread=spec.spread)
        train_set, test_set = full.split(spec.test_fraction, dseed)
    if spec.train_subset:
        train_set = train_set.head(spec.train_subset)
    if spec.test_subset:
        test_set = test_set.head(spec.test_subset)
    return train_set, test_set


def run_cell(cfg: ExperimentConfig, seed: int, p: int, noise: bool) -> dict:
    """Train, evaluate, convert and simulate one (seed, p, noise) cell."""
    train_set, test_set = resolve_data(cfg.data, seed)
    tcfg = TrainConfig(**{**cfg.train, "seed": seed, "p": p, "noise_adaptor": noise})
    sizes = [train_set.dim, *cfg.hidden, max(train_set.n_classes, test_set.n_classes)]
    net = QuantNet.mlp(sizes, p=p, noise=noise, seed=seed)
    net, history = train(net, train_set, tcfg)
    ann_acc = evaluate_ann(net, test_set)
    snn = convert(net)
    T_max = max(cfg.T_list)
    rows = []
    residual = 0.0
    for corr in cfg.corrections:
        res = simulate(snn, test_set.x, SimConfig(T_max, corr, keep_logits=False), test_set.y)
        residual = max([residual, *res.residuals])
        for T in sorted(cfg.T_list):
            rows.append({
                "seed": seed, "p": p, "noise_adaptor": int(noise), "correction": corr, "T": T,
                "ann_acc": ann_acc, "snn_acc": float(res.accuracy[T - 1]),
                "spikes_per_sample": res.spikes_per_sample_at(T),
            })
    ckpt = None
    if cfg.save_checkpoints:
        ckdir = Path(cfg.output_dir) / "checkpoints"
        ckdir.mkdir(parents=True, exist_ok=True)
        ckpt = ckdir / f"seed{seed}_p{p}_na{int(noise)}.json"
        save_checkpoint(net, ckpt, seed=seed, meta={"epoch": tcfg.epochs, "config_hash": tcfg.hash()})
    return {
        "rows": rows,
        "history": {"train_loss": history.train_loss, "eval_acc": history.eval_acc},
        "scales": [q.s for q in net.quant_layers],
        "max_residual": residual,
        "checkpoint": str(ckpt) if ckpt else None,
    }


def _run_cell_safe(args):
    cfg, seed, p, noise = args
    try:
        return run_cell(cfg, seed, p, noise)
    except Exception as exc:  # recorded per cell; the sweep continues
        return {"error": f"{type(exc).__name__}: {exc}"}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every sweep cell, then write ``results.csv`` and ``manifest.json``.

    Cells are ordered seed-major, then p, then noise flag; the CSV contains
    no timestamps, so identical configs give byte-identical files.
    """
    cells = [(s, p, na) for s in cfg.seeds for p in cfg.p_list for na in cfg.noise_adaptor]
    args = [(cfg, s, p, bool(na)) for s, p, na in cells]
    started = time.time()
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            outputs = list(pool.map(_run_cell_safe, args))
    else:
        outputs = [_run_cell_safe(a) for a in args]
    rows, cells_meta = [], []
    for (s, p, na), out in zip(cells, outputs):
        meta = {"seed": s, "p": p, "noise_adaptor": bool(na)}
        if "error" in out:
            meta["error"] = out["error"]
            for corr in cfg.corrections:
                for T in sorted(cfg.T_list):
                    rows.append({"seed": s, "p": p, "noise_adaptor": int(bool(na)), "correction": corr,
                                 "T": T, "ann_acc": math.nan, "snn_acc": math.nan,
                                 "spikes_per_sample": math.nan})
        else:
            rows.extend(out["rows"])
            meta.update({k: out[k] for k in ("history", "scales", "max_residual", "checkpoint")})
        cells_meta.append(meta)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"
    csv_path.write_text(rows_to_csv(rows))
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "versions": {"quantsnn": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "seeds": list(cfg.seeds),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "elapsed_s": round(time.time() - started, 3),
        "cells": cells_meta,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return {"rows": rows, "csv": csv_path, "manifest": manifest}


# -- reporting ---------------------------------------------------------------

@dataclass
class Report:
    T_values: list
    table: list        # dicts: p, noise_adaptor, correction, n_seeds, ann, then T -> mean snn acc
    deltas: list       # dicts: p, correction, ann, then T -> (w/ NA - w/o NA)
    text: str


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in RESULT_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"results CSV {path} is missing column(s): {', '.join(missing)}")
        rows = []
        for r in reader:
            rows.append({
                "seed": int(r["seed"]), "p": int(r["p"]), "noise_adaptor": int(r["noise_adaptor"]),
                "correction": r["correction"], "T": int(r["T"]),
                "ann_acc": float(r["ann_acc"]), "snn_acc": float(r["snn_acc"]),
                "spikes_per_sample": float(r["spikes_per_sample"]),
            })
    return rows


def pivot(rows: list[dict]) -> Report:
    T_values = sorted({r["T"] for r in rows})
    groups: dict = {}
    for r in rows:
        key = (r["p"], r["noise_adaptor"], r["correction"])
        g = groups.setdefault(key, {"ann": {}, "snn": {}})
        g["ann"][r["seed"]] = r["ann_acc"]
        g["snn"].setdefault(r["T"], []).append(r["snn_acc"])
    table = []
    for (p, na, corr), g in sorted(groups.items()):
        entry = {"p": p, "noise_adaptor": na, "correction": corr, "n_seeds": len(g["ann"]),
                 "ann": float(np.mean(list(g["ann"].values())))}
        for T in T_values:
            entry[T] = float(np.mean(g["snn"][T])) if T in g["snn"] else math.nan
        table.append(entry)
    by_key = {(e["p"], e["noise_adaptor"], e["correction"]): e for e in table}
    deltas = []
    for (p, na, corr), e in sorted(by_key.items()):
        if na != 1 or (p, 0, corr) not in by_key:
            continue
        base = by_key[(p, 0, corr)]
        d = {"p": p, "correction": corr, "ann": e["ann"] - base["ann"]}
        for T in T_values:
            d[T] = e[T] - base[T]
        deltas.append(d)
    return Report(T_values, table, deltas, _render(T_values, table, deltas))


def _render(T_values, table, deltas) -> str:
    head = ["p", "NA", "correction", "seeds", "ANN"] + [f"T={T}" for T in T_values]
    lines = [head]
    for e in table:
        lines.append([str(e["p"]), "w/" if e["noise_adaptor"] else "w/o", e["correction"],
                      str(e["n_seeds"]), f"{100 * e['ann']:.2f}"]
                     + [f"{100 * e[T]:.2f}" for T in T_values])
    for d in deltas:
        lines.append([str(d["p"]), "delta", d["correction"], "", f"{100 * d['ann']:+.2f}"]
                     + [f"{100 * d[T]:+.2f}" for T in T_values])
    widths = [max(len(row[i]) for row in lines) for i in range(len(head))]
    out = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in lines]
    out.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def report(results_csv, out_dir=None) -> Report:
    """Pivot a results CSV into accuracy-vs-T (percent) with w/ minus w/o NA deltas."""
    rep = pivot(read_results(results_csv))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cols = ["p", "noise_adaptor", "correction", "n_seeds", "ann"] + rep.T_values
        _write_table(out_dir / "table.csv", cols, rep.table)
        _write_table(out_dir / "deltas.csv", ["p", "correction", "ann"] + rep.T_values, rep.deltas)
        (out_dir / "summary.txt").write_text(rep.text)
    return rep


def _write_table(path, cols, entries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c if isinstance(c, str) else f"T={c}" for c in cols])
        for e in entries:
            w.writerow([_fmt(e[c]) for c in cols])
