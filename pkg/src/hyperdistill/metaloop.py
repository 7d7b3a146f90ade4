"""Meta-training: repeated inner optimizations driving hyperparameter updates.

One run executes M inner optimizations of T SGD steps each.  Online
strategies (fo, one_step, hyperdistill) update lam at every inner step,
neumann_ift on the last K steps only, and drmad once per completed
inner optimization.  A meta-batch of tasks advances in lockstep; their
hypergradients are averaged before each shared-lam update.  After each
inner optimization the initialization phi takes a Reptile step toward
the final weights.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .distill import (
    DistillState,
    EstimatorState,
    distill_forward_update,
    hyperdistill_hypergradient,
    linear_estimation,
)
from .engine import InnerProblem, sgd_step
from .errors import ConfigError, DivergenceError, DomainError, EstimationError
from .hypergrad import drmad, fo_hypergradient, neumann_ift, one_step
from .problems import TaskSampler
from .trajectory import run_inner
from .vecmath import Vector, l2

STRATEGIES = ("fo", "one_step", "drmad", "neumann_ift", "hyperdistill")

SCHEMA_VERSION = 1


@dataclass
class MetaConfig:
    family: str
    strategy: str
    T: int
    M: int
    batch_size: int
    eta_inner: float
    eta_hyper: float
    seed: int = 0
    meta_batch: int = 4
    gamma: float = 0.99
    estimation_period: int = 50
    eta_reptile: float = 1.0
    hyper_momentum: float = 0.9
    hyper_optimizer: str = "sgd"
    hyper_lr_decay: bool = True
    neumann_n: int = 5
    neumann_k: int = 5
    theta_mode: str = "estimate"
    theta_fixed: float = 1.0
    theta_ema: float = 0.0
    fix_pi: bool = False
    val_batch_size: int | None = None
    meta_test_tasks: int = 0
    workers: int | None = None
    problem: dict = field(default_factory=dict)

    def __post_init__(self):
        self.strategy = str(self.strategy).replace("-", "_")
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, fieldname: str, msg: str):
            if not cond:
                raise ConfigError(f"{fieldname}: {msg}")

        need(self.strategy in STRATEGIES, "strategy", f"expected one of {STRATEGIES}, got {self.strategy!r}")
        need(self.T >= 1, "T", f"must be >= 1, got {self.T}")
        need(self.M >= 1, "M", f"must be >= 1, got {self.M}")
        need(self.batch_size >= 1, "batch_size", f"must be >= 1, got {self.batch_size}")
        need(self.meta_batch >= 1, "meta_batch", f"must be >= 1, got {self.meta_batch}")
        need(0.0 <= self.gamma < 1.0, "gamma", f"must lie in [0, 1), got {self.gamma}")
        need(self.estimation_period >= 1, "estimation_period", f"must be >= 1, got {self.estimation_period}")
        need(self.eta_inner > 0.0, "eta_inner", f"must be positive, got {self.eta_inner}")
        need(self.eta_hyper >= 0.0, "eta_hyper", f"must be nonnegative, got {self.eta_hyper}")
        need(0.0 <= self.hyper_momentum < 1.0, "hyper_momentum", f"must lie in [0, 1), got {self.hyper_momentum}")
        need(self.hyper_optimizer in ("sgd", "adam"), "hyper_optimizer", f"expected sgd or adam, got {self.hyper_optimizer!r}")
        need(self.neumann_n >= 0, "neumann_n", f"must be >= 0, got {self.neumann_n}")
        need(self.neumann_k >= 1, "neumann_k", f"must be >= 1, got {self.neumann_k}")
        if self.strategy == "neumann_ift":
            need(self.neumann_k <= self.T, "neumann_k", f"must lie in [1, T], got {self.neumann_k}")
        need(self.theta_mode in ("estimate", "fixed"), "theta_mode", f"expected estimate or fixed, got {self.theta_mode!r}")
        need(0.0 <= self.theta_ema < 1.0, "theta_ema", f"must lie in [0, 1), got {self.theta_ema}")
        need(self.meta_test_tasks >= 0, "meta_test_tasks", f"must be >= 0, got {self.meta_test_tasks}")
        if self.workers is not None:
            need(self.workers >= 1, "workers", f"must be >= 1, got {self.workers}")

    def sampler(self) -> TaskSampler:
        kwargs = dict(self.problem)
        kwargs["inner_lr"] = self.eta_inner
        return TaskSampler(
            family=self.family,
            seed=self.seed,
            batch_size=self.batch_size,
            T=self.T,
            val_batch_size=self.val_batch_size,
            problem_kwargs=kwargs,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetaConfig":
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version}")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        missing = [f for f in ("family", "strategy", "T", "M", "batch_size", "eta_inner", "eta_hyper") if f not in d]
        if missing:
            raise ConfigError(f"missing required config fields: {missing}")
        return cls(**d)


@dataclass
class RunRecord:
    """Per-inner-optimization series plus terminal state.

    jvps counts one task's Jacobian products per inner optimization
    (meta-batch peers are identical); est_jvps is the shared estimation
    overhead, attributed to the inner optimization it precedes.
    wall_time is kept out of the CSV so re-runs are byte-identical.
    """

    strategy: str
    seed: int
    config: dict
    m: list[int] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    hypergrad_norm: list[float] = field(default_factory=list)
    jvps: list[int] = field(default_factory=list)
    est_jvps: list[int] = field(default_factory=list)
    theta: list[float] = field(default_factory=list)
    gamma: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    lam: Vector | None = None
    phi: Vector | None = None
    estimation_events: list[dict] = field(default_factory=list)
    diverged_at: tuple[int, int] | None = None
    meta_test_loss: float | None = None

    CSV_FIELDS = ("m", "val_loss", "hypergrad_norm", "jvps", "est_jvps", "theta", "gamma")

    def to_rows(self) -> list[dict]:
        return [
            {name: getattr(self, name)[i] for name in self.CSV_FIELDS}
            for i in range(len(self.m))
        ]

    def summary(self) -> dict:
        out = {
            "strategy": self.strategy,
            "seed": self.seed,
            "config": self.config,
            "inner_opts_completed": len(self.m),
            "terminal_val_loss": self.val_loss[-1] if self.val_loss else None,
            "terminal_theta": self.theta[-1] if self.theta else None,
            "total_jvps_per_task": int(sum(self.jvps)),
            "total_est_jvps": int(sum(self.est_jvps)),
            "total_wall_time_s": float(sum(self.wall_time)),
            "diverged_at": list(self.diverged_at) if self.diverged_at else None,
            "meta_test_loss": self.meta_test_loss,
        }
        if self.lam is not None:
            out["lam_norm"] = l2(self.lam)
        if self.phi is not None:
            out["phi_norm"] = l2(self.phi)
        return out


def hyper_lr_schedule(config: MetaConfig, m: int) -> float:
    """Linearly decayed outer learning rate eta_hyper * (1 - (m-1)/M)."""
    if not 1 <= m <= config.M:
        raise ConfigError(f"m: must lie in [1, {config.M}], got {m}")
    if not config.hyper_lr_decay:
        return config.eta_hyper
    return config.eta_hyper * (1.0 - (m - 1) / config.M)


def reptile_update(phi: Vector, w_final: Vector, eta: float) -> Vector:
    if phi.shape != w_final.shape:
        raise ConfigError(f"phi/w shape mismatch: {phi.shape} vs {w_final.shape}")
    return phi - eta * (phi - w_final)


class _SgdMomentum:
    def __init__(self, dim: int, momentum: float):
        self.u = np.zeros(dim)
        self.momentum = momentum

    def step(self, lam: Vector, grad: Vector, lr: float) -> Vector:
        self.u = self.momentum * self.u + grad
        return lam - lr * self.u


class _Adam:
    def __init__(self, dim: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.mean = np.zeros(dim)
        self.var = np.zeros(dim)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, lam: Vector, grad: Vector, lr: float) -> Vector:
        self.t += 1
        self.mean = self.beta1 * self.mean + (1.0 - self.beta1) * grad
        self.var = self.beta2 * self.var + (1.0 - self.beta2) * grad * grad
        mhat = self.mean / (1.0 - self.beta1**self.t)
        vhat = self.var / (1.0 - self.beta2**self.t)
        return lam - lr * mhat / (np.sqrt(vhat) + self.eps)


def _make_opt(config: MetaConfig, dim: int):
    if config.hyper_optimizer == "adam":
        return _Adam(dim)
    return _SgdMomentum(dim, config.hyper_momentum)


class _MetaRun:
    def __init__(self, config: MetaConfig):
        self.config = config
        self.sampler = config.sampler()
        template = self.sampler.sample_task(0, "probe")
        rng_init = np.random.default_rng([config.seed, 21])
        self.lam = template.init_hyper(rng_init)
        self.phi = template.init_weight(rng_init)
        self.opt = _make_opt(config, template.hyper_dim)
        self.est = EstimatorState(theta=config.theta_fixed, gamma=config.gamma)
        self.est_counter = 0
        self.record = RunRecord(strategy=config.strategy, seed=config.seed, config=config.to_dict())
        workers = config.workers if config.workers is not None else config.meta_batch
        self.pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _map(self, fn, items):
        if self.pool is None:
            return [fn(x) for x in items]
        return list(self.pool.map(fn, items))

    def _maybe_estimate(self, m: int) -> int:
        cfg = self.config
        if cfg.strategy != "hyperdistill" or cfg.theta_mode != "estimate" or cfg.fix_pi:
            return 0
        if (m - 1) % cfg.estimation_period != 0:
            return 0
        task = self.sampler.sample_task(self.est_counter, "estimation")
        self.est_counter += 1
        try:
            fresh = linear_estimation(task, cfg.gamma, self.lam, self.phi, self.sampler)
        except EstimationError as err:
            self.record.estimation_events.append(
                {"m": m, "theta": None, "error": str(err), "samples": [], "jvps": 0}
            )
            return 0
        theta = fresh.theta
        if cfg.theta_ema > 0.0 and self.record.estimation_events:
            theta = cfg.theta_ema * self.est.theta + (1.0 - cfg.theta_ema) * fresh.theta
        self.est = replace(fresh, theta=theta)
        self.record.estimation_events.append(
            {
                "m": m,
                "theta": theta,
                "error": None,
                "samples": [list(pair) for pair in fresh.samples],
                "jvps": fresh.jvp_count,
            }
        )
        return fresh.jvp_count

    def _inner_opt(self, m: int) -> None:
        cfg = self.config
        start = time.perf_counter()
        lr_m = hyper_lr_schedule(cfg, m)
        est_jvps = self._maybe_estimate(m)
        tasks = [
            self.sampler.sample_task((m - 1) * cfg.meta_batch + j)
            for j in range(cfg.meta_batch)
        ]
        streams = [self.sampler.batch_stream(tk) for tk in tasks]
        val_batches = [self.sampler.val_batch(tk, nonce=m) for tk in tasks]
        ws = [self.phi.copy() for _ in tasks]
        states = [DistillState(cfg.gamma, cfg.batch_size) for _ in tasks]
        rngs = [self.sampler.subsample_rng(tk, nonce=m) for tk in tasks]
        jvps = 0
        norms: list[float] = []

        # A DomainError under a validated config means the numbers blew up
        # (weights still finite but gradients overflowed); report it as a
        # divergence at the offending step instead of crashing the run.
        if cfg.strategy == "drmad":
            for t in range(1, cfg.T + 1):
                ws = self._map(
                    lambda j: self._advance(tasks[j], ws[j], streams[j][t - 1], t),
                    range(len(tasks)),
                )
            try:
                hgs = self._map(
                    lambda j: drmad(tasks[j], self.phi, ws[j], streams[j], self.lam, val_batches[j]),
                    range(len(tasks)),
                )
            except DomainError as err:
                raise DivergenceError(cfg.T, f"non-finite backward pass at inner-opt {m}: {err}") from err
            jvps = hgs[0].jvp_count
            norms.append(self._update_lam(hgs, lr_m, m, cfg.T))
        else:
            for t in range(1, cfg.T + 1):
                try:
                    results = self._map(
                        lambda j: self._online_step(tasks[j], ws[j], states[j], streams[j], val_batches[j], rngs[j], t),
                        range(len(tasks)),
                    )
                except DomainError as err:
                    raise DivergenceError(t, f"non-finite values at inner-opt {m}, step {t}: {err}") from err
                ws = [r[0] for r in results]
                states = [r[2] for r in results]
                hgs = [r[1] for r in results]
                if hgs[0] is not None:
                    jvps += hgs[0].jvp_count
                    norms.append(self._update_lam(hgs, lr_m, m, t))

        val_m = float(np.mean([tk.val_loss(w, self.lam, vb) for tk, w, vb in zip(tasks, ws, val_batches)]))
        mean_wT = np.mean(ws, axis=0)
        self.phi = reptile_update(self.phi, mean_wT, cfg.eta_reptile)

        rec = self.record
        rec.m.append(m)
        rec.val_loss.append(val_m)
        rec.hypergrad_norm.append(float(np.mean(norms)) if norms else 0.0)
        rec.jvps.append(jvps)
        rec.est_jvps.append(est_jvps)
        rec.theta.append(self.est.theta if cfg.strategy == "hyperdistill" else float("nan"))
        rec.gamma.append(cfg.gamma if cfg.strategy == "hyperdistill" else float("nan"))
        rec.wall_time.append(time.perf_counter() - start)

    def _advance(self, task: InnerProblem, w: Vector, batch, t: int) -> Vector:
        w_new = sgd_step(task, w, self.lam, batch)
        if not np.all(np.isfinite(w_new)):
            raise DivergenceError(t)
        return w_new

    def _online_step(self, task, w, state, stream, val_batch, rng, t):
        cfg = self.config
        batch = stream[t - 1]
        if cfg.strategy == "hyperdistill":
            state = distill_forward_update(state, w, batch, rng)
            w_new = self._advance(task, w, batch, t)
            hg = hyperdistill_hypergradient(
                task, state, self.est, self.lam, w_new, val_batch, fix_pi=cfg.fix_pi
            )
        elif cfg.strategy == "fo":
            w_new = self._advance(task, w, batch, t)
            hg = fo_hypergradient(task, w_new, self.lam, val_batch)
        elif cfg.strategy == "one_step":
            hg = one_step(task, w, self.lam, batch, val_batch)
            w_new = self._advance(task, w, batch, t)
        elif cfg.strategy == "neumann_ift":
            w_new = self._advance(task, w, batch, t)
            hg = None
            if t > cfg.T - cfg.neumann_k:
                hg = neumann_ift(task, w_new, self.lam, batch, val_batch, cfg.neumann_n)
        else:  # pragma: no cover
            raise ConfigError(f"strategy: unhandled {cfg.strategy!r}")
        return w_new, hg, state

    def _update_lam(self, hgs, lr_m: float, m: int, t: int) -> float:
        g = np.mean([hg.total for hg in hgs], axis=0)
        self.lam = self.opt.step(self.lam, g, lr_m)
        if not np.all(np.isfinite(self.lam)):
            raise DivergenceError(t, f"non-finite hyperparameters at inner-opt {m}, step {t}")
        return l2(g)

    def run(self) -> RunRecord:
        cfg = self.config
        try:
            for m in range(1, cfg.M + 1):
                try:
                    self._inner_opt(m)
                except DivergenceError as err:
                    self.record.diverged_at = (m, err.step)
                    break
            self.record.lam = self.lam
            self.record.phi = self.phi
            if cfg.meta_test_tasks > 0 and self.record.diverged_at is None:
                self.record.meta_test_loss = meta_test(cfg, self.lam, self.phi)
        finally:
            self.close()
        return self.record


def run_strategy(config: MetaConfig) -> RunRecord:
    """Run meta-training for whatever strategy the config names."""
    return _MetaRun(config).run()


def hyperdistill_run(config: MetaConfig) -> RunRecord:
    if config.strategy != "hyperdistill":
        raise ConfigError(f"strategy: hyperdistill_run needs 'hyperdistill', got {config.strategy!r}")
    return run_strategy(config)


def baseline_run(config: MetaConfig) -> RunRecord:
    if config.strategy == "hyperdistill":
        raise ConfigError("strategy: baseline_run cannot run 'hyperdistill'")
    return run_strategy(config)


def meta_test(config: MetaConfig, lam: Vector, phi: Vector, n_tasks: int | None = None) -> float:
    """Mean validation loss after a fresh T-step adaptation on held-out tasks."""
    sampler = config.sampler()
    n = config.meta_test_tasks if n_tasks is None else n_tasks
    if n < 1:
        raise ConfigError(f"meta_test_tasks: must be >= 1 to evaluate, got {n}")
    losses = []
    for i in range(n):
        task = sampler.sample_task(i, "meta_test")
        try:
            traj = run_inner(task, lam, phi, sampler.batch_stream(task))
            losses.append(task.val_loss(traj.wT, lam, sampler.val_batch(task)))
        except (DivergenceError, DomainError):
            # adaptation blew up on this task; an infinite loss keeps the
            # failure visible in the mean instead of aborting the sweep
            losses.append(float("inf"))
    return float(np.mean(losses))
