"""Command-line entry point: ``quantsnn <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace

from .checkpoint import load_checkpoint, save_checkpoint
from .converter import convert, load_snn, save_snn
from .engine import CORRECTIONS, SimConfig, simulate, unevenness_demo, write_trace_csv
from .experiment import DataSpec, ExperimentConfig, report, resolve_data, run_experiment
from .network import QuantNet
from .selftest import selftest
from .trainer import TrainConfig, evaluate_ann, train


def _data_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("data")
    g.add_argument("--data", default="auto", choices=["auto", "mnist", "blobs", "spirals"],
                   help="auto uses MNIST when --mnist-dir holds the IDX files, else blobs")
    g.add_argument("--mnist-dir", default=None)
    g.add_argument("--n", type=int, default=8000, help="synthetic sample count")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--spread", type=float, default=0.07)
    g.add_argument("--data-seed", type=int, default=None)
    g.add_argument("--train-subset", type=int, default=None)
    g.add_argument("--test-subset", type=int, default=None)
    return p


def _data_spec(args) -> DataSpec:
    return DataSpec(source=args.data, path=args.mnist_dir, n=args.n, classes=args.classes,
                    dim=args.dim, spread=args.spread, seed=args.data_seed,
                    train_subset=args.train_subset, test_subset=args.test_subset)


def cmd_train(args) -> int:
    train_set, test_set = resolve_data(_data_spec(args), args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr_max=args.lr,
                      lr_min=args.lr_min, weight_decay=args.weight_decay, momentum=args.momentum,
                      seed=args.seed, p=args.p, noise_adaptor=args.noise_adaptor)
    if args.init_from:
        net = load_checkpoint(args.init_from)
        if args.activation == "quant":
            net = net.with_quantized_activations(args.p, args.noise_adaptor)
    else:
        sizes = [train_set.dim, *args.hidden, train_set.n_classes]
        net = QuantNet.mlp(sizes, p=args.p, noise=args.noise_adaptor, seed=args.seed,
                           activation=args.activation)
    net, hist = train(net, train_set, cfg, test_set)
    for epoch, (loss, acc) in enumerate(zip(hist.train_loss, hist.eval_acc)):
        print(f"epoch {epoch:3d}  loss {loss:.4f}  test acc {acc:.4f}")
    save_checkpoint(net, args.out, seed=args.seed,
                    meta={"epoch": cfg.epochs, "config": cfg.to_dict(), "config_hash": cfg.hash()})
    print(f"ANN accuracy {evaluate_ann(net, test_set):.4f}; checkpoint written to {args.out}")
    return 0


def cmd_convert(args) -> int:
    snn = convert(load_checkpoint(args.checkpoint))
    save_snn(snn, args.out)
    for i, th in enumerate(snn.thresholds):
        print(f"layer {i}: th = {th!r}")
    return 0


def cmd_simulate(args) -> int:
    snn = load_snn(args.snn)
    _, test_set = resolve_data(_data_spec(args), args.seed)
    cfg = SimConfig(T=args.T, correction=args.correction, readout=args.readout,
                    record_trace=bool(args.trace_csv), keep_logits=False)
    res = simulate(snn, test_set.x, cfg, test_set.y)
    rows = [(t + 1, float(res.accuracy[t]), res.spikes_per_sample_at(t + 1)) for t in range(args.T)]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["T", "snn_acc", "spikes_per_sample"])
            w.writerows([(t, repr(a), repr(s)) for t, a, s in rows])
    for t, a, s in rows:
        print(f"T={t:4d}  acc {a:.4f}  spikes/sample {s:.1f}")
    print("conservation residuals: " + ", ".join(f"{r:.1e}" for r in res.residuals))
    if args.trace_csv:
        trace = res.trace if res.stage1 is None else res.stage1.trace
        write_trace_csv(args.trace_csv, trace, snn.dt)
    return 0


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.workers:
        cfg = replace(cfg, workers=args.workers)
    out = run_experiment(cfg)
    failures = [c for c in out["manifest"]["cells"] if "error" in c]
    for c in failures:
        print(f"cell seed={c['seed']} p={c['p']} na={c['noise_adaptor']} failed: {c['error']}",
              file=sys.stderr)
    print(f"wrote {out['csv']} ({len(out['rows'])} rows)")
    print(report(out["csv"]).text, end="")
    return 1 if failures else 0


def cmd_report(args) -> int:
    rep = report(args.results, args.out)
    print(rep.text, end="")
    return 0


def cmd_demo(args) -> int:
    rows = unevenness_demo(th=args.th)
    for r in rows:
        sched = ", ".join(f"{c:+g}" for c in r["schedule"])
        trace = " ".join(f"u={u:+.2f}/z={z:.0f}" for u, z in zip(r["u"], r["z"]))
        print(f"schedule ({sched})  u0={r['u0']:.2f}  {trace}")
        print(f"    SNN count {r['snn_count']:.0f}  ANN state {r['ann_state']:.0f}  "
              f"negative-spikes {r['negative_spikes_count']:.0f}  two-stage {r['two_stage_count']:.0f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


def cmd_selftest(args) -> int:
    return 0 if selftest() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantsnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    data = _data_parent()

    p = sub.add_parser("train", parents=[data], help="train a quantized MLP and write a checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", type=int, nargs="+", default=[256])
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--noise-adaptor", action="store_true")
    p.add_argument("--activation", choices=["quant", "relu"], default="quant",
                   help="relu trains a full-precision model for later fine-tuning")
    p.add_argument("--init-from", default=None, help="checkpoint to fine-tune from")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--lr-min", type=float, default=0.0)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="convert a quantized checkpoint to an SNN file")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("simulate", parents=[data], help="simulate a converted SNN on the test split")
    p.add_argument("snn")
    p.add_argument("--T", type=int, default=64)
    p.add_argument("--correction", choices=CORRECTIONS, default="none")
    p.add_argument("--readout", choices=["accumulated", "instantaneous"], default="accumulated")
    p.add_argument("--seed", type=int, default=0, help="selects the synthetic draw when --data-seed is unset")
    p.add_argument("--out", default=None, help="per-step accuracy CSV")
    p.add_argument("--trace-csv", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run an experiment config (JSON)")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="override output_dir")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="pivot a results CSV into accuracy-vs-T tables")
    p.add_argument("results")
    p.add_argument("--out", default=None, help="directory for table.csv / deltas.csv / summary.txt")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo-unevenness", help="show occasional noise on hand-built schedules")
    p.add_argument("--th", type=float, default=1.0)
    p.add_argument("--json", default=None)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("selftest", help="run the fast invariant suite")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
