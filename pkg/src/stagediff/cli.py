"""``stagediff`` command line: train, eval, analyze-cka, export-ref, plot-data.

Exit status is 0 on success, 1 for configuration or usage errors and 2 for
runtime failures (divergence, unreadable inputs).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .diffusion import ConfigError
from .harness.checkpoint import CheckpointError, load_checkpoint
from .harness.config import load_config, write_config
from .harness.evaluate import evaluate
from .harness.train import DivergenceError, train
from .structure import ZeroNormError, offdiag_stats, similarity_matrix, write_similarity_csv

log = logging.getLogger("stagediff")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
PLOT_SERIES = {
    "steps.csv": {"diff_loss": "diff_loss", "gamma": "gamma", "beta_sp": "beta_sp", "sp_loss": "sp_loss"},
    "monitor.csv": {"ssl_loss": "ssl_loss", "g": "g", "mu": "mu"},
}


class UsageError(Exception):
    pass


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.cfg")
    try:
        runlog, _ = train(cfg, out)
    except DivergenceError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    print(f"trained {cfg.K_tot} steps, final diffusion loss {runlog.losses[-1]:.6g} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    task = args.task or ckpt.config.get("task", "class_cond")
    metrics = evaluate(ckpt, task, n_eval=args.n_eval, seed=args.seed)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_analyze_cka(args) -> int:
    out = Path(args.out)
    rows = []
    for path in args.checkpoints:
        try:
            ckpt = load_checkpoint(path)
            S = similarity_matrix(ckpt.params)
        except (CheckpointError, ZeroNormError, OSError) as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        stem = Path(path).stem
        write_similarity_csv(S, out / f"S_{stem}.csv")
        mean, std = offdiag_stats(S)
        rows.append((str(path), ckpt.step, mean, std))
    if not rows:
        log.error("no checkpoint could be analysed")
        return EXIT_RUNTIME
    out.mkdir(parents=True, exist_ok=True)
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("checkpoint", "step", "offdiag_mean", "offdiag_std"))
        for path, step, mean, std in rows:
            w.writerow((path, step, repr(mean), repr(std)))
    print(f"first->last off-diagonal std change: {rows[-1][3] - rows[0][3]:+.6g}")
    return EXIT_OK


def cmd_export_ref(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    try:
        S = similarity_matrix(ckpt.params)
    except ZeroNormError as exc:
        log.error("block %s: %s", exc.block, exc)
        return EXIT_RUNTIME
    write_similarity_csv(S, args.out)
    return EXIT_OK


def _read_rows(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _downsample(points: list[tuple[int, float]], cap: int) -> list[tuple[int, float]]:
    if len(points) <= cap:
        return points
    keep = np.unique(np.linspace(0, len(points) - 1, cap).round().astype(int))
    return [points[i] for i in keep]


def cmd_plot_data(args) -> int:
    run = Path(args.run_dir)
    missing = [n for n in PLOT_SERIES if not (run / n).is_file()]
    if missing:
        log.error("%s: missing %s", run, ", ".join(missing))
        return EXIT_RUNTIME
    series = []
    for name, cols in PLOT_SERIES.items():
        rows = _read_rows(run / name)
        for col, label in cols.items():
            pts = [(int(r["step"]), float(r[col])) for r in rows if r.get(col, "") != ""]
            if pts:
                series.append((label, pts))
    if not series:
        log.error("%s: run logs are empty", run)
        return EXIT_RUNTIME
    per = max(1, args.max_rows // len(series))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("series", "step", "value"))
        for label, pts in series:
            for step, value in _downsample(pts, per):
                w.writerow((label, step, repr(value)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stagediff", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one training job")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--task", choices=("class_cond", "super_res"))
    e.add_argument("--n-eval", type=int, default=128)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="write metrics JSON here")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze-cka", help="block similarity of checkpoints")
    a.add_argument("checkpoints", nargs="+")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze_cka)

    x = sub.add_parser("export-ref", help="write a reference similarity pattern")
    x.add_argument("checkpoint")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_ref)

    d = sub.add_parser("plot-data", help="merge run logs into long-format CSV")
    d.add_argument("run_dir")
    d.add_argument("--out", required=True)
    d.add_argument("--max-rows", type=int, default=2000)
    d.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    except (CheckpointError, ZeroNormError, OSError, ValueError, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
