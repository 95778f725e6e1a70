"""Norm-constrained least squares on data drawn from a DAG target.

Networks trained here are plain dense ReLU stacks held as lists of numpy
arrays while training; the result is converted to a :class:`Network` with
the clipping layer attached.  Every optimizer step ends with the rescaling
projection of :func:`frobnet._kernels.project`, so the hidden layers are
unit-normalized and ``kappa <= K`` holds after every update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .dag_compiler import DagSpec, worst_effective_regularity
from .errors import RejectedInput, TrainingFailure
from .net_ir import Network, clip, evaluate

__all__ = [
    "Dataset",
    "OptimizerConfig",
    "ErmResult",
    "ExcessRisk",
    "RademacherResult",
    "generate_data",
    "schedule_exponent",
    "schedule_K",
    "scheduled_architecture",
    "erm_train",
    "excess_risk",
    "rademacher_check",
    "rademacher_bound",
    "erm_sweep",
]


# ------------------------------------------------------------------- data

@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    seed: int
    target: DagSpec
    noise: str = "none"
    eta: float = 0.0

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def samples(self):
        return list(zip(self.x, self.y))


def _ball(rng: np.random.Generator, n: int, d: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = rng.random(n) ** (1.0 / d)
    return g * (radius * r)[:, None]


def _check_target(spec: DagSpec) -> float:
    sup = float(spec.range_bounds[spec.root])
    if sup > 1.0:
        raise RejectedInput(f"target range bound {sup:g} exceeds 1; rescale the root node")
    return sup


def generate_data(spec: DagSpec, n: int, seed: int, noise: str = "none", eta: float = 0.0) -> Dataset:
    """``n`` samples with ``x`` uniform on the unit ball and ``y = f*(x) + noise``.

    ``noise`` is ``"none"`` or ``"uniform"`` (half-width ``eta``).  Noise
    that could push ``|y|`` above 1 is rejected up front.
    """
    if n < 1:
        raise RejectedInput("need at least one sample")
    sup = _check_target(spec)
    if noise not in ("none", "uniform"):
        raise RejectedInput(f"unknown noise model {noise!r}")
    if noise == "none":
        eta = 0.0
    elif not 0.0 <= eta <= 1.0 - sup:
        raise RejectedInput(f"noise half-width {eta:g} exceeds 1 - sup|f*| = {1.0 - sup:g}")
    rng = np.random.default_rng(seed)
    x = _ball(rng, n, spec.input_dim, min(1.0, spec.input_range))
    y = spec.reference(x)
    if noise == "uniform":
        y = y + rng.uniform(-eta, eta, n)
    return Dataset(x, np.asarray(y, dtype=float), int(seed), spec, noise, float(eta))


# -------------------------------------------------------------- schedule

def schedule_exponent(spec: DagSpec) -> float:
    """Largest ``(1/2) a / (a + 4 alpha*)`` with ``a = 2L + (D+L) d_in`` over all nodes."""
    star = worst_effective_regularity(spec)
    L, D = spec.L, spec.depth
    best = 0.0
    for v, a_star in star.items():
        a = 2 * L + (D + L) * spec.d_in(v)
        best = max(best, 0.5 * a / (a + 4.0 * a_star))
    return best


def schedule_K(spec: DagSpec, n: int, constant: float = 1.0) -> float:
    if n < 1:
        raise RejectedInput("n must be at least 1")
    return float(constant) * float(n) ** schedule_exponent(spec)


def scheduled_architecture(spec: DagSpec, K: float, min_width: int = 1) -> tuple[int, int]:
    """``(W, D)``: the DAG depth and the smallest width the estimation result allows."""
    L, D = spec.L, spec.depth
    w = 1.0
    for v in spec.nodes:
        e = (2 * spec.d_in(v) + spec.alpha(v)) / ((D + L) * spec.d_in(v) + 2 * L)
        w = max(w, max(K, 1.0) ** e)
    return max(int(math.ceil(w - 1e-12)), int(min_width)), D


# --------------------------------------------------------------- training

@dataclass(frozen=True)
class OptimizerConfig:
    batch: int = 32
    lr: float = 1e-2
    decay: float = 0.97
    epochs: int = 500
    seed: int = 0
    test_size: int = 2048
    mc_count: int = 4096
    divergence_factor: float = 10.0
    divergence_patience: int = 5

    def __post_init__(self):
        if self.batch < 1 or self.epochs < 0 or not self.lr > 0 or not 0 < self.decay <= 1:
            raise RejectedInput("invalid optimizer configuration")


@dataclass(frozen=True)
class ExcessRisk:
    estimate: float
    stderr: float
    count: int

    def __iter__(self):
        return iter((self.estimate, self.stderr))


@dataclass(frozen=True)
class ErmResult:
    trained: Network
    core: Network
    empirical_risk: float
    test_risk: float
    excess_risk_estimate: float
    excess_risk_stderr: float
    K_used: float
    optimizer_trace: tuple[dict, ...] = field(repr=False, default=())


def _init(rng, d, W, D, K):
    dims = [d] + [W] * D
    weights = [rng.standard_normal((dims[i + 1], dims[i])) / math.sqrt(dims[i]) for i in range(D)]
    weights.append(rng.standard_normal((1, dims[D])) / math.sqrt(dims[D]))
    biases = [rng.standard_normal(W) / math.sqrt(dims[i]) for i in range(D)]
    _kernels.project(weights, biases, K)
    return weights, biases


def _to_network(weights, biases) -> Network:
    return Network.from_dense(list(zip(weights[:-1], biases)), weights[-1])


def _dense_forward(weights, biases, x) -> np.ndarray:
    h = x.T
    for w, b in zip(weights[:-1], biases):
        h = np.maximum(w @ h + b[:, None], 0.0)
    return (weights[-1] @ h)[0]


def _dense_kappa(weights, biases) -> float:
    k = float(np.linalg.norm(weights[-1]))
    for w, b in zip(weights[:-1], biases):
        k *= math.sqrt(float(np.sum(w * w) + np.sum(b * b)) + 1.0)
    return k


def _risk(weights, biases, x, y) -> float:
    z = np.clip(_dense_forward(weights, biases, x), -1.0, 1.0)
    return float(np.mean((z - y) ** 2))


def erm_train(data: Dataset, W: int, D: int, K: float, config: OptimizerConfig | None = None) -> ErmResult:
    """Projected mini-batch SGD on the clipped squared loss over ``kappa <= K``."""
    cfg = config or OptimizerConfig()
    if W < 1 or D < 1:
        raise RejectedInput("width and depth must be positive")
    if K < 0:
        raise RejectedInput("budget K must be nonnegative")
    K = float(K)
    rng = np.random.default_rng([cfg.seed, data.seed])
    x = np.ascontiguousarray(data.x, dtype=float)
    y = np.ascontiguousarray(data.y, dtype=float)
    weights, biases = _init(rng, x.shape[1], int(W), int(D), K)
    initial = _risk(weights, biases, x, y)
    trace = [{"epoch": 0, "loss": initial, "kappa": _dense_kappa(weights, biases)}]
    lr = cfg.lr
    strikes = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(x.shape[0]).astype(np.int64)
        _kernels.sgd_epoch(weights, biases, x, y, order, int(cfg.batch), lr, K, 0)
        loss = _risk(weights, biases, x, y)
        kap = _dense_kappa(weights, biases)
        trace.append({"epoch": epoch, "loss": loss, "kappa": kap})
        if not math.isfinite(loss) or loss > cfg.divergence_factor * max(initial, 1e-300):
            strikes += 1
            if strikes >= cfg.divergence_patience or not math.isfinite(loss):
                raise TrainingFailure(f"training diverged at epoch {epoch}", tuple(trace))
        else:
            strikes = 0
        lr *= cfg.decay
    core = _to_network(weights, biases)
    trained = clip(core, 1.0)
    test = generate_data(data.target, cfg.test_size, _child_seed(data.seed, 1), data.noise, data.eta)
    test_risk = float(np.mean((evaluate(trained, test.x)[:, 0] - test.y) ** 2))
    ex = excess_risk(trained, data.target, cfg.mc_count, _child_seed(data.seed, 2))
    return ErmResult(trained, core, _risk(weights, biases, x, y), test_risk, ex.estimate, ex.stderr, K,
                     tuple(trace))


def _child_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), k]).generate_state(1)[0])


def excess_risk(trained, spec: DagSpec, mc_count: int = 4096, seed: int = 0, noise: str = "none",
                eta: float = 0.0) -> ExcessRisk:
    """Monte Carlo estimate of ``R(f_hat) - R(f*)`` with its standard error.

    Uses the per-sample differences ``(f_hat - y)^2 - (f* - y)^2`` on fresh
    draws; without noise these are the squared gaps to ``f*``.
    """
    data = generate_data(spec, mc_count, seed, noise, eta)
    pred = _predict(trained, data.x)
    truth = spec.reference(data.x)
    diff = (pred - data.y) ** 2 - (truth - data.y) ** 2
    se = float(np.std(diff, ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else 0.0
    return ExcessRisk(float(np.mean(diff)), se, int(diff.size))


def _predict(fn, x) -> np.ndarray:
    if isinstance(fn, Network):
        return evaluate(fn, x)[:, 0]
    return np.asarray(fn(x), dtype=float).reshape(-1)


# ------------------------------------------------------------ Rademacher

@dataclass(frozen=True)
class RademacherResult:
    estimate: float
    bound: float
    per_draw: tuple[float, ...]

    @property
    def ok(self) -> bool:
        return self.estimate <= self.bound

    def __iter__(self):
        return iter((self.estimate, self.bound))


def rademacher_bound(D: int, K: float, n: int) -> float:
    return (math.sqrt(2.0 * math.log(2.0) * D) + 1.0) * K / math.sqrt(n)


def rademacher_check(W: int, D: int, K: float, n: int, seed: int = 0, draws: int = 5, dim: int = 2,
                     epochs: int = 200, lr: float = 0.1) -> RademacherResult:
    """Projected ascent on ``(1/n) sum sigma_i f(x_i)`` averaged over sign draws.

    The class with budget ``K`` is ``K`` times the class with budget 1
    (scale the final matrix), so the ascent runs at ``K = 1`` and the
    value is multiplied by ``K``; the estimate is exactly linear in ``K``.
    """
    if K < 0:
        raise RejectedInput("budget K must be nonnegative")
    rng = np.random.default_rng(seed)
    x = _ball(rng, n, dim, 1.0)
    vals = []
    for _ in range(draws):
        sigma = rng.choice([-1.0, 1.0], size=n)
        weights, biases = _init(rng, dim, W, D, 1.0)
        order = np.arange(n, dtype=np.int64)
        best = float(np.mean(sigma * _dense_forward(weights, biases, x)))
        step = lr
        for _ in range(epochs):
            _kernels.sgd_epoch(weights, biases, x, sigma, order, n, step, 1.0, 1)
            best = max(best, float(np.mean(sigma * _dense_forward(weights, biases, x))))
            step *= 0.99
        vals.append(float(K) * best)
    return RademacherResult(float(np.mean(vals)), rademacher_bound(D, K, n), tuple(vals))


# ------------------------------------------------------------------ sweep

def erm_sweep(spec: DagSpec, ns: Sequence[int], seeds: Sequence[int], config: OptimizerConfig | None = None,
              width: int | None = None, depth: int | None = None, K_constant: float = 1.0) -> list[dict]:
    """One row per ``(n, seed)`` with the scheduled budget and the realized risks."""
    cfg = config or OptimizerConfig()
    rows = []
    for n in ns:
        K = schedule_K(spec, n, K_constant)
        W0, D0 = scheduled_architecture(spec, K)
        W = width or W0
        D = depth or D0
        for s in seeds:
            data = generate_data(spec, n, s)
            res = erm_train(data, W, D, K, cfg)
            rows.append({"n": int(n), "seed": int(s), "K": K, "W": W, "D": D,
                         "empirical_risk": res.empirical_risk, "test_risk": res.test_risk,
                         "excess": res.excess_risk_estimate, "stderr": res.excess_risk_stderr})
    return rows
