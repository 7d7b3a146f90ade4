"""Command-line interface: run, diagnose, bench.

Configs are JSON files (or names of packaged presets).  Outputs are
CSV/JSON files plus rendered figures in the chosen output directory;
existing outputs are refused unless --force is given.

Exit codes: 0 success, 2 invalid configuration or usage, 3 the run
diverged (partial outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import diagnostics, reporting
from .errors import ConfigError, HyperdistillError
from .metaloop import STRATEGIES, MetaConfig, RunRecord, run_strategy

log = logging.getLogger("hyperdistill")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _setup_logging() -> None:
    level_name = os.environ.get("HYPERGRAD_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ConfigError(f"HYPERGRAD_LOG: expected one of {sorted(levels)}, got {level_name!r}")
    logging.basicConfig(
        level=levels[level_name],
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def list_presets() -> list[str]:
    root = resources.files("hyperdistill") / "presets"
    return sorted(p.name.removesuffix(".json") for p in root.iterdir() if p.name.endswith(".json"))


def load_config(spec: str) -> MetaConfig:
    """Load a config from a JSON path or a packaged preset name."""
    path = Path(spec)
    if path.exists():
        text = path.read_text()
        source = str(path)
    else:
        preset = resources.files("hyperdistill") / "presets" / f"{spec}.json"
        if not preset.is_file():
            raise ConfigError(
                f"{spec}: no such config file or preset (presets: {', '.join(list_presets())})"
            )
        text = preset.read_text()
        source = f"preset:{spec}"
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{source}:{err.lineno}:{err.colno}: {err.msg}") from err
    if not isinstance(payload, dict):
        raise ConfigError(f"{source}: top-level JSON value must be an object")
    try:
        return MetaConfig.from_dict(payload)
    except ConfigError as err:
        raise ConfigError(f"{source}: {err}") from err


def _apply_overrides(config: MetaConfig, args) -> MetaConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.workers is not None:
        updates["workers"] = args.workers
    return replace(config, **updates) if updates else config


def _refuse_existing(paths: list[Path], force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise ConfigError(
            f"refusing to overwrite existing outputs: {', '.join(existing)} (use --force)"
        )


def _write_run_outputs(record: RunRecord, out: Path) -> None:
    reporting.write_csv(out / "run.csv", list(RunRecord.CSV_FIELDS), record.to_rows())
    reporting.write_json(out / "summary.json", record.summary())
    if record.lam is not None:
        np.savez(out / "terminal_state.npz", lam=record.lam, phi=record.phi)
    reporting.render_run_figure(record, out / "run.png")


def cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    _refuse_existing([out / "run.csv", out / "summary.json"], args.force)
    out.mkdir(parents=True, exist_ok=True)
    record = run_strategy(config)
    _write_run_outputs(record, out)
    if record.diverged_at is not None:
        log.error("run diverged at inner-opt %d, step %d", *record.diverged_at)
        return EXIT_DIVERGED
    print(f"wrote {out / 'run.csv'} ({len(record.m)} inner-optimizations)")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = Path(args.out) / "diagnostics"
    if args.kind == "cossim":
        _refuse_existing([out / "cossim.csv"], args.force)
        rows = diagnostics.cossim_series(config)
        reporting.write_csv(out / "cossim.csv", ["t", "strategy", "cosine_total", "cosine_so"], rows)
        reporting.render_cossim_figure(rows, out / "cossim.png")
        print(f"wrote {out / 'cossim.csv'} ({len(rows)} rows)")
    elif args.kind == "estimator":
        _refuse_existing([out / "estimator_samples.csv", out / "estimator_theta.csv"], args.force)
        sample_rows, theta_rows = diagnostics.estimator_diagnostics(config)
        reporting.write_csv(out / "estimator_samples.csv", ["event", "m", "s", "x", "y"], sample_rows)
        reporting.write_csv(out / "estimator_theta.csv", ["event", "m", "theta", "error"], theta_rows)
        reporting.render_estimator_figure(sample_rows, theta_rows, out / "estimator.png")
        print(f"wrote {out / 'estimator_samples.csv'} and {out / 'estimator_theta.csv'}")
    else:  # gamma-sweep
        _refuse_existing([out / "gamma_sweep.csv"], args.force)
        gammas = [float(g) for g in args.gammas.split(",") if g.strip() != ""]
        if not gammas:
            raise ConfigError("--gammas: at least one value required")
        rows = diagnostics.gamma_sweep(config, gammas)
        reporting.write_csv(out / "gamma_sweep.csv", ["gamma", "m", "val_loss"], rows)
        reporting.render_gamma_figure(rows, out / "gamma_sweep.png")
        print(f"wrote {out / 'gamma_sweep.csv'} ({len(gammas)} gammas)")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    _refuse_existing([out / "bench.csv"], args.force)
    strategies = [s.strip().replace("-", "_") for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"--strategies: unknown strategy {s!r}")
    rows = []
    for strategy in strategies:
        metrics, wall, jvps_per, est_total, diverged = [], [], [], [], 0
        for i in range(args.seeds):
            cfg = replace(config, strategy=strategy, seed=config.seed + i)
            record = run_strategy(cfg)
            if record.diverged_at is not None:
                diverged += 1
                continue
            metrics.append(record.val_loss[-1])
            wall.append(sum(record.wall_time))
            jvps_per.append(record.jvps[-1])
            est_total.append(sum(record.est_jvps))
        n = len(metrics)
        mean = float(np.mean(metrics)) if n else float("nan")
        ci = float(1.96 * np.std(metrics, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        rows.append(
            {
                "strategy": strategy,
                "seeds": n,
                "metric_mean": mean,
                "metric_ci95": ci,
                "jvps_per_inner_opt": jvps_per[-1] if jvps_per else 0,
                "est_jvps_total": est_total[-1] if est_total else 0,
                "wall_time_s_mean": float(np.mean(wall)) if wall else float("nan"),
                "n_diverged": diverged,
            }
        )
        log.info("bench %s: %.6g +- %.2g over %d seeds", strategy, mean, ci, n)
    fields = [
        "strategy", "seeds", "metric_mean", "metric_ci95",
        "jvps_per_inner_opt", "est_jvps_total", "wall_time_s_mean", "n_diverged",
    ]
    reporting.write_csv(out / "bench.csv", fields, rows)
    reporting.render_bench_figure([r for r in rows if r["seeds"] > 0], out / "bench.png")
    print(f"wrote {out / 'bench.csv'} ({len(rows)} strategies)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperdistill",
        description="Online hyperparameter optimization by hypergradient distillation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config path or preset name")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--workers", type=int, default=None, help="cap meta-batch parallelism")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p_run = sub.add_parser("run", help="run meta-training and write run.csv/summary.json")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_diag = sub.add_parser("diagnose", help="write diagnostic CSVs and figures")
    common(p_diag)
    p_diag.add_argument("--kind", required=True, choices=["cossim", "estimator", "gamma-sweep"])
    p_diag.add_argument("--gammas", default="0,0.5,0.9,0.99", help="comma list for gamma-sweep")
    p_diag.set_defaults(fn=cmd_diagnose)

    p_bench = sub.add_parser("bench", help="compare strategies across seeds")
    common(p_bench)
    p_bench.add_argument("--seeds", type=int, default=5, help="number of seeds per strategy")
    p_bench.add_argument(
        "--strategies",
        default=",".join(STRATEGIES),
        help="comma list of strategies to bench",
    )
    p_bench.set_defaults(fn=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except HyperdistillError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
