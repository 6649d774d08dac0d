"""Command line: ``ahr run``, ``ahr suite`` and ``ahr report``.

The config file is JSON with two sections, ``train`` (TrainConfig fields,
``rfa`` nested) and ``benchmark`` (data and suite settings); see README.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..memory import BudgetExceeded
from ..trainer import TrainConfig
from .data import load_mnist, make_synthetic, split_tasks, stratified_fraction
from .report import aggregate, emit_report, final_from_csv, summary_csv
from .runner import FTE_BUDGETS, STRATEGIES, InvariantViolation, run_strategy

log = logging.getLogger("ahr")

BENCHMARK_DEFAULTS = {
    "dataset": "mnist",
    "tasks": 5,
    "classes_per_task": 2,
    "fraction": 1.0,
    "shuffle_seed": None,
    "strategies": list(STRATEGIES),
    "seeds": [0, 1, 2],
    "fte_budget": "bytes",
    "synthetic": {"input_dim": 32, "samples_per_class": 100, "test_per_class": 50, "cluster_sep": 6.0},
}

EXIT_INVARIANT = 3


def load_config(path) -> tuple[TrainConfig, dict]:
    doc = json.loads(Path(path).read_text()) if path else {}
    unknown = set(doc) - {"train", "benchmark"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    bench = dict(BENCHMARK_DEFAULTS)
    extra = set(doc.get("benchmark", {})) - set(bench)
    if extra:
        raise ValueError(f"unknown benchmark fields: {sorted(extra)}")
    bench.update(doc.get("benchmark", {}))
    return TrainConfig.from_dict(doc.get("train", {})), bench


def build_stream(bench: dict, data_dir=None, seed: int = 0):
    T, C = int(bench["tasks"]), int(bench["classes_per_task"])
    if bench["dataset"] == "synthetic":
        s = bench["synthetic"]
        # the stream depends on the run seed so seeds are independent replicates
        return make_synthetic(seed, T, C, s["input_dim"], s["samples_per_class"], s["cluster_sep"],
                              s.get("test_per_class"))
    if bench["dataset"] != "mnist":
        raise ValueError(f"unknown dataset {bench['dataset']!r}")
    train, test = load_mnist(data_dir)
    if bench["fraction"] < 1.0:
        train = stratified_fraction(train, bench["fraction"], seed=0)
    return split_tasks(train, T, C, bench["shuffle_seed"], test=test, name="mnist")


def _write(report, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{report.strategy}_seed{report.seed}"
    emit_report(report, out_dir / f"{stem}.csv")
    emit_report(report, out_dir / f"{stem}.json")
    return out_dir / f"{stem}.csv"


def cmd_run(args, cfg, bench) -> int:
    stream = build_stream(bench, args.data_dir, cfg.seed)
    ckpt = Path(args.out_dir) / "checkpoints" / f"{args.strategy}_seed{cfg.seed}" if args.checkpoints else None
    report = run_strategy(args.strategy, stream, cfg, bench["fte_budget"], checkpoint_dir=ckpt)
    path = _write(report, Path(args.out_dir))
    print(f"{args.strategy} seed {cfg.seed}: final accuracy {100 * report.final_accuracy:.2f}% -> {path}")
    return 0


def cmd_suite(args, cfg, bench) -> int:
    seeds = [args.seed] if args.seed is not None else list(bench["seeds"])
    if len(seeds) < 3:
        log.warning("suite with %d seed(s); standard errors need at least 3", len(seeds))
    finals: dict[str, list[float]] = {}
    out = Path(args.out_dir)
    for seed in seeds:
        c = cfg.replace(seed=seed)
        stream = build_stream(bench, args.data_dir, seed)
        for strategy in bench["strategies"]:
            report = run_strategy(strategy, stream, c, bench["fte_budget"])
            _write(report, out)
            finals.setdefault(strategy, []).append(report.final_accuracy)
            print(f"{strategy} seed {seed}: {100 * report.final_accuracy:.2f}%", flush=True)
    text = summary_csv(aggregate(finals))
    (out / "summary.csv").write_text(text)
    print(text, end="")
    return 0


def cmd_report(args) -> int:
    finals: dict[str, list[float]] = {}
    files = sorted(Path(args.out_dir).glob("*_seed*.csv"))
    if not files:
        print(f"no run CSVs in {args.out_dir}", file=sys.stderr)
        return 1
    for f in files:
        strategy = f.stem.rsplit("_seed", 1)[0]
        finals.setdefault(strategy, []).append(final_from_csv(f))
    text = summary_csv(aggregate(finals))
    if args.output:
        Path(args.output).write_text(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ahr", description="Class-incremental replay benchmark")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file (train + benchmark sections)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out-dir", default="runs")
        sp.add_argument("--data-dir", default=None, help="MNIST IDX directory (default $AHR_DATA_DIR)")
        sp.add_argument("--dataset", choices=["mnist", "synthetic"], default=None)
        sp.add_argument("--fraction", type=float, default=None, help="stratified share of MNIST train data")
        sp.add_argument("--epochs", type=int, default=None)
        sp.add_argument("--fte-budget", choices=FTE_BUDGETS, default=None)

    r = sub.add_parser("run", help="train and evaluate one strategy")
    common(r)
    r.add_argument("--strategy", choices=STRATEGIES, default="AHR")
    r.add_argument("--checkpoints", action="store_true", help="save learner state after every task")
    s = sub.add_parser("suite", help="every configured strategy over every seed")
    common(s)
    a = sub.add_parser("report", help="aggregate run CSVs into mean and SEM per strategy")
    a.add_argument("--out-dir", default="runs")
    a.add_argument("--output", default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        return cmd_report(args)
    try:
        cfg, bench = load_config(args.config)
    except (OSError, ValueError, TypeError) as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    for key in ("dataset", "fraction", "fte_budget"):
        if getattr(args, key) is not None:
            bench[key] = getattr(args, key)
    try:
        return cmd_run(args, cfg, bench) if args.command == "run" else cmd_suite(args, cfg, bench)
    except (InvariantViolation, BudgetExceeded) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
