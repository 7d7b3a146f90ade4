"""Diagnostics over frozen-hyperparameter probes and recorded runs.

Every function here is pure with respect to meta-training state: it
builds its own sampler and rollouts from the config and returns plain
row dictionaries for delimited output.  Rendering lives in the CLI
layer, not here.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .distill import (
    DistillState,
    EstimatorState,
    distill_forward_update,
    hyperdistill_hypergradient,
    linear_estimation,
)
from .errors import ConfigError
from .hypergrad import fo_hypergradient, neumann_ift, one_step, rmd_exact, so_geometric_reference
from .metaloop import MetaConfig, run_strategy
from .trajectory import run_inner
from .vecmath import cosine_similarity, l2

StrategySpec = tuple[str, dict]


def safe_cosine(a, b) -> float:
    """Cosine similarity, NaN when either vector vanishes."""
    if l2(a) == 0.0 or l2(b) == 0.0:
        return float("nan")
    return cosine_similarity(a, b)


def spec_label(name: str, params: dict) -> str:
    if not params:
        return name
    inner = ",".join(f"{k}={params[k]}" for k in sorted(params))
    return f"{name}[{inner}]"


def default_probe_strategies(config: MetaConfig) -> list[StrategySpec]:
    return [
        ("fo", {}),
        ("one_step", {}),
        ("hyperdistill", {"gamma": config.gamma}),
        ("so_geom", {"gamma": config.gamma}),
    ]


def cossim_series(config: MetaConfig, strategies: list[StrategySpec] | None = None) -> list[dict]:
    """Per-step cosine similarity of each strategy to exact reverse-mode.

    One probe inner optimization is rolled with lam frozen at its
    initialization; at every step t the exact hypergradient over the
    true prefix trajectory is compared with each strategy's output at
    that step.  Emits one row per (t, strategy) with cosines of the
    total and of the second-order part.
    """
    if strategies is None:
        strategies = default_probe_strategies(config)
    sampler = config.sampler()
    task = sampler.sample_task(0, "probe")
    rng_init = np.random.default_rng([config.seed, 21])
    lam = task.init_hyper(rng_init)
    phi = task.init_weight(rng_init)
    batches = sampler.batch_stream(task)
    val_batch = sampler.val_batch(task)
    traj = run_inner(task, lam, phi, batches, record=True)

    # per-strategy mutable probe state (distilled states and their RNGs)
    states: dict[int, DistillState] = {}
    rngs: dict[int, np.random.Generator] = {}
    ests: dict[int, EstimatorState] = {}
    for i, (name, params) in enumerate(strategies):
        if name == "hyperdistill":
            gamma = float(params.get("gamma", config.gamma))
            states[i] = DistillState(gamma, config.batch_size)
            rngs[i] = sampler.subsample_rng(task, nonce=1000 + i)
            if "theta" in params:
                ests[i] = EstimatorState(theta=float(params["theta"]), gamma=gamma)
            else:
                est_task = sampler.sample_task(0, "estimation")
                ests[i] = linear_estimation(est_task, gamma, lam, phi, sampler)

    rows: list[dict] = []
    for t in range(1, traj.T + 1):
        ref = rmd_exact(task, traj.prefix(t), val_batch)
        w_prev = traj.weight_at(t - 1)
        w_t = traj.weight_at(t)
        for i, (name, params) in enumerate(strategies):
            if name == "fo":
                hg = fo_hypergradient(task, w_t, lam, val_batch)
                total, so = hg.total, hg.g_so
            elif name == "one_step":
                hg = one_step(task, w_prev, lam, batches[t - 1], val_batch)
                total, so = hg.total, hg.g_so
            elif name == "neumann":
                hg = neumann_ift(task, w_t, lam, batches[t - 1], val_batch, int(params.get("n", 5)))
                total, so = hg.total, hg.g_so
            elif name == "hyperdistill":
                states[i] = distill_forward_update(states[i], w_prev, batches[t - 1], rngs[i])
                hg = hyperdistill_hypergradient(
                    task, states[i], ests[i], lam, w_t, val_batch, fix_pi=bool(params.get("fix_pi", False))
                )
                total, so = hg.total, hg.g_so
            elif name == "so_geom":
                so = so_geometric_reference(task, traj.prefix(t), val_batch, float(params.get("gamma", config.gamma)))
                total = ref.g_fo + so
            else:
                raise ConfigError(f"unknown probe strategy {name!r}")
            rows.append(
                {
                    "t": t,
                    "strategy": spec_label(name, params),
                    "cosine_total": safe_cosine(total, ref.total),
                    "cosine_so": safe_cosine(so, ref.g_so),
                }
            )
    return rows


def mean_cosine(rows: list[dict], label: str, field: str = "cosine_total", t_min: int = 1) -> float:
    vals = [r[field] for r in rows if r["strategy"] == label and r["t"] >= t_min]
    vals = [v for v in vals if not math.isnan(v)]
    if not vals:
        return float("nan")
    return float(np.mean(vals))


def estimator_diagnostics(config: MetaConfig) -> tuple[list[dict], list[dict]]:
    """Run meta-training and tabulate every estimation event.

    Returns (sample_rows, theta_rows): the (s, x, y) regression scatter
    per event and the fitted theta history.  Estimation failures appear
    as rows with an error message instead of crashing the run.
    """
    if config.strategy != "hyperdistill":
        config = replace(config, strategy="hyperdistill")
    if config.theta_mode != "estimate":
        config = replace(config, theta_mode="estimate")
    record = run_strategy(config)
    sample_rows: list[dict] = []
    theta_rows: list[dict] = []
    for event_idx, event in enumerate(record.estimation_events):
        theta_rows.append(
            {
                "event": event_idx,
                "m": event["m"],
                "theta": float("nan") if event["theta"] is None else event["theta"],
                "error": event["error"] or "",
            }
        )
        for s, (x, y) in enumerate(event["samples"], start=1):
            sample_rows.append({"event": event_idx, "m": event["m"], "s": s, "x": x, "y": y})
    return sample_rows, theta_rows


def gamma_sweep(config: MetaConfig, gammas: list[float]) -> list[dict]:
    """Validation-loss series of HyperDistill with theta pinned to 1 per gamma.

    With theta = 1 the scale pi* = ||v_t|| (1-gamma^t)/(1-gamma) is used
    as-is, so the gamma = 0 run reproduces the one_step strategy
    exactly and larger gammas isolate the effect of the horizon
    weighting alone.
    """
    rows: list[dict] = []
    for gamma in gammas:
        cfg = replace(
            config,
            strategy="hyperdistill",
            gamma=float(gamma),
            theta_mode="fixed",
            theta_fixed=1.0,
        )
        record = run_strategy(cfg)
        for m, loss in zip(record.m, record.val_loss):
            rows.append({"gamma": float(gamma), "m": m, "val_loss": loss})
    return rows
