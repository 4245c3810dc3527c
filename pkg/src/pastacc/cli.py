"""Command-line entry point: ``pastacc {split,run,estimate,bench,report}``.

Exit codes: 0 success, 2 configuration, 3 input, 4 numeric, 5 no estimate,
6 file/cache integrity, 1 anything else from the package.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from filelock import FileLock

from . import harness
from .config import load_config
from .errors import NoEstimateError, PastAccError

EXIT_NO_ESTIMATE = NoEstimateError.exit_code
REPORT_COLUMNS = ["round", "k", "status", "ef", "predicted", "actual", "acc_before", "acc_after",
                  "r2", "pearson", "n_used", "n_removed"]


def _overrides(args) -> dict:
    over = {"seed": args.seed, "rounds": args.rounds, "minibatch_size": args.batch_size,
            "estimator": args.estimator}
    if args.batch_size is not None and args.estimator is None:
        over["estimator"] = "minibatch"
    return over


def _config(args):
    return load_config(args.config, _overrides(args))


def cmd_split(args) -> int:
    cfg = _config(args)
    ds, ds_id = harness.load_source(cfg)
    plan = harness.plan_splits(len(ds), cfg.rounds, cfg.ratio, cfg.seed, ids=ds.ids, dataset_id=ds_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_split(out / "splits.json", plan)
    sizes = [len(a) + len(b) for a, b in zip(plan.train, plan.test)]
    print(json.dumps({"splits": str(out / "splits.json"), "round0": sizes[0],
                      "increments": [min(sizes[1:]), max(sizes[1:])]}))
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    manifest = harness.run_incremental(cfg, args.out)
    print(json.dumps({"manifest": str(manifest.path), "rounds": manifest.rounds_done()}))
    return 0


def _open(args) -> harness.RunManifest:
    manifest = harness.RunManifest(args.out)
    manifest.header  # raises when the directory holds no run
    return manifest


def cmd_estimate(args) -> int:
    manifest = _open(args)
    classes = [args.k] if args.k is not None else range(manifest.n_classes)
    entries = [harness.estimate_round(manifest, args.round, k) for k in classes]
    for e in entries:
        print(json.dumps({"round": args.round, **e}, sort_keys=True))
    missing = [e for e in entries if e["status"] != "ok"]
    for e in missing:
        print(f"round {args.round} class {e['k']}: no estimate ({e.get('reason', e['status'])})",
              file=sys.stderr)
    return EXIT_NO_ESTIMATE if missing else 0


def cmd_bench(args) -> int:
    manifest = _open(args)
    sizes = [int(v) for v in args.sizes.split(",")] if args.sizes else [1000, 2000, 4000]
    rows = harness.benchmark(manifest, sizes, repeats=args.repeats)
    if args.table:
        harness.write_table(rows, args.table)
    harness.write_table(rows, sys.stdout)
    return 0


def cmd_report(args) -> int:
    manifest = _open(args)
    if args.summary:
        print(json.dumps(harness.summarize(manifest), indent=2, sort_keys=True))
        return 0
    rows = [r for r in harness.report_rows(manifest) if r["status"] == "ok" or args.all]
    w = csv.DictWriter(sys.stdout, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pastacc",
        description="Estimate the accuracy change of an incrementally trained network on its past data.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def config_flags(sp):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--rounds", type=int)
        sp.add_argument("--batch-size", type=int, help="mini-batch size of the estimator")
        sp.add_argument("--estimator", choices=["per-sample", "minibatch"])
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("split", help="write the split plan")
    config_flags(sp)
    sp.set_defaults(func=cmd_split, locked=True)

    sp = sub.add_parser("run", help="run or resume the incremental simulation")
    config_flags(sp)
    sp.set_defaults(func=cmd_run, locked=False)  # run_incremental takes the lock itself

    sp = sub.add_parser("estimate", help="re-run the timed estimate of one round")
    sp.add_argument("--out", required=True)
    sp.add_argument("--round", type=int, required=True)
    sp.add_argument("--class", dest="k", type=int)
    sp.set_defaults(func=cmd_estimate, locked=True)

    sp = sub.add_parser("bench", help="estimate vs full re-test timing table")
    sp.add_argument("--out", required=True)
    sp.add_argument("--sizes", help="comma-separated evaluation set sizes")
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--table", help="also write the CSV table here")
    sp.set_defaults(func=cmd_bench, locked=True)

    sp = sub.add_parser("report", help="predicted vs measured accuracy change per round and class")
    sp.add_argument("--out", required=True)
    sp.add_argument("--summary", action="store_true", help="per-class averages as JSON")
    sp.add_argument("--all", action="store_true", help="include rows without an estimate")
    sp.set_defaults(func=cmd_report, locked=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.locked:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            with FileLock(str(Path(args.out) / ".lock")):
                return args.func(args)
        return args.func(args)
    except PastAccError as exc:
        print(f"pastacc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"pastacc: {exc}", file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
