"""Command-line driver.

Verbs: ``run``, ``sweep``, ``eval``, ``export-frontier`` and ``presets``.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiment as ex
from .errors import CheckpointError, ConfigError, NumericalError
from .losses import PRESETS, preset

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _resolve(args) -> ex.ExperimentConfig:
    raw = ex.load_raw(args.config)
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError("expected key.path=value", "--set")
        ex.set_path(raw, key, ex.parse_value(value))
    if args.preset:
        raw["loss"] = {"preset": args.preset}
    if args.seed is not None:
        raw.pop("seed", None)
        raw["seeds"] = [args.seed]
    if args.out:
        ex.set_path(raw, "output.dir", args.out)
    return ex.ExperimentConfig.from_dict(raw)


def _cmd_run(args) -> int:
    cfg = _resolve(args)
    rows = []
    for seed in cfg.seeds:
        run_dir, result = ex.run_single(cfg, seed)
        rows.append(ex.ledger_row(run_dir.name, cfg.method, cfg, seed, result, "ok", str(run_dir / "result.json")))
        print(f"{run_dir}: standard={result.standard_acc:.4f} fgsm={result.fgsm_acc:.4f} pgd={result.pgd_acc:.4f}")
    ex.append_ledger(cfg.ledger_path, rows)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _resolve(args)
    grid = ex.load_raw(args.grid) if args.grid else {}
    for item in args.axis or []:
        key, _, values = item.partition("=")
        grid[key] = ex.parse_value(f"[{values}]")
    ledger, summary = ex.sweep(cfg, grid, workers=args.workers)
    for s in summary:
        flag = " (single seed)" if s["single_seed"] else ""
        print(f"{s['cell']}: n={s['n_seeds']} failed={s['n_failed']} "
              f"standard={_fmt(s, 'standard_acc')} fgsm={_fmt(s, 'fgsm_acc')}{flag}")
    print(f"ledger: {ledger}")
    return EXIT_OK


def _fmt(s, k):
    m = s[f"{k}_mean"]
    return "n/a" if m is None else f"{m:.4f}±{s[f'{k}_std']:.4f}"


def _cmd_eval(args) -> int:
    cfg = _resolve(args)
    result = ex.evaluate_checkpoint(cfg, args.checkpoint, cfg.seeds[0])
    text = result.to_json(args.result)
    if args.result is None:
        print(text)
    return EXIT_OK


def _cmd_frontier(args) -> int:
    rows = ex.export_frontier(args.ledger, args.output)
    print(f"wrote {len(rows)} rows to {args.output}")
    return EXIT_OK


def _cmd_presets(args) -> int:
    print(f"{'preset':<18}{'family':<8}{'G1':<5}{'M':<4}{'lambda':<8}{'alpha':<7}{'G2':<5}weighting")
    for name in PRESETS:
        c = preset(name)
        g2 = c.G2.kind if c.alpha > 0 else "-"
        w = c.weighting if c.alpha > 0 else "-"
        lam = f"{c.lam}" if c.family == "MIXNCA" else "-"
        print(f"{name:<18}{c.family:<8}{c.G1.kind:<5}{c.M:<4}{lam:<8}{c.alpha:<7}{g2:<5}{w}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="YAML or JSON experiment config")
    p.add_argument("--seed", type=int, help="run a single seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--preset", choices=PRESETS, help="replace the loss section with a named preset")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. train.epochs=5")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intnacl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate one config")
    _add_common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="grid over M, lambda, alpha and preset")
    _add_common(p)
    p.add_argument("--grid", help="YAML/JSON mapping of axis -> list of values")
    p.add_argument("--axis", action="append", metavar="KEY=V1,V2", help="grid axis, e.g. M=1,2,3")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("eval", help="re-evaluate a saved encoder checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--result", help="write the result JSON here instead of stdout")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export-frontier", help="standard-vs-robust scatter data from a ledger")
    p.add_argument("ledger")
    p.add_argument("output")
    p.set_defaults(func=_cmd_frontier)

    p = sub.add_parser("presets", help="list the named loss presets")
    p.set_defaults(func=_cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
