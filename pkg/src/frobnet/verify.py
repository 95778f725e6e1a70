"""Empirical checks of compiled networks against their certificates.

Every measurement here is a probe-set maximum and therefore a lower
estimate of the true supremum: a "measured <= certified" verdict can miss a
violation but never invent one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from . import _kernels
from .errors import BudgetInfeasible, RejectedInput
from .net_ir import FrobeniusCertificate, Network, evaluate, kappa

__all__ = [
    "ProbePlan",
    "SupError",
    "AuditReport",
    "SweepPoint",
    "SweepResult",
    "TraceResult",
    "sup_error",
    "audit_norms",
    "check_partition_of_unity",
    "fit_loglog_slope",
    "rate_sweep",
    "trace_critical_path",
]

_REL_TOL = 1e-12
_ZOOM_POINTS = 441


# ------------------------------------------------------------ probe plans

@dataclass(frozen=True)
class ProbePlan:
    """Deterministic probe set: ``uniform_grid`` or ``low_discrepancy`` (scrambled Sobol)."""

    kind: str
    count: int
    seed: int = 0
    box: tuple[tuple[float, float], ...] = ((0.0, 1.0),)

    def __post_init__(self):
        if self.kind not in ("uniform_grid", "low_discrepancy"):
            raise RejectedInput(f"unknown probe plan kind {self.kind!r}")
        if int(self.count) != self.count or self.count < 1:
            raise RejectedInput("probe count must be a positive integer")
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if not box or any(not hi > lo for lo, hi in box):
            raise RejectedInput("probe box needs at least one interval with lo < hi")
        object.__setattr__(self, "box", box)

    @classmethod
    def cube(cls, kind: str, count: int, dim: int, lo: float = 0.0, hi: float = 1.0, seed: int = 0):
        return cls(kind, count, seed, ((lo, hi),) * dim)

    @property
    def dim(self) -> int:
        return len(self.box)

    def per_axis(self) -> int:
        return max(2, int(round(self.count ** (1.0 / self.dim))))

    def points(self) -> np.ndarray:
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        if self.kind == "uniform_grid":
            m = self.per_axis()
            axes = [np.linspace(a, b, m) for a, b in self.box]
            grid = np.meshgrid(*axes, indexing="ij")
            return np.stack([g.reshape(-1) for g in grid], axis=1)
        m = max(0, math.ceil(math.log2(self.count)))
        u = qmc.Sobol(self.dim, scramble=True, seed=self.seed).random_base2(m)[: self.count]
        return lo + u * (hi - lo)

    def cell(self) -> np.ndarray:
        """Typical spacing between neighboring probes along each axis."""
        widths = np.array([b - a for a, b in self.box])
        if self.kind == "uniform_grid":
            return widths / (self.per_axis() - 1)
        return widths / self.count ** (1.0 / self.dim)

    def refined(self, factor: int = 4) -> "ProbePlan":
        return ProbePlan(self.kind, self.count * factor, self.seed, self.box)


# ------------------------------------------------------------- sup error

@dataclass(frozen=True)
class SupError:
    value: float
    argmax: np.ndarray
    n_probes: int

    def __iter__(self):
        return iter((self.value, self.argmax))


def _as_values(fn, x) -> np.ndarray:
    if isinstance(fn, Network):
        out = evaluate(fn, x)
        if out.shape[1] != 1:
            raise RejectedInput("sup_error compares scalar-valued functions")
        return out[:, 0]
    return np.asarray(fn(x), dtype=float).reshape(-1)


def sup_error(net, reference: Callable, plan: ProbePlan, zoom: bool = True) -> SupError:
    """Largest ``|net(x) - reference(x)|`` over the plan, refined once around the argmax.

    ``net`` is a :class:`Network` or any vectorized callable.  The zoom
    probes a grid 10x finer than the plan spacing within one cell of the
    worst probe (at most ~441 extra points, clipped to the box).
    """
    if isinstance(net, Network) and net.input_dim != plan.dim:
        raise RejectedInput(f"network has {net.input_dim} inputs, probe plan has {plan.dim}")
    x = plan.points()
    err = np.abs(_as_values(net, x) - _as_values(reference, x))
    i = int(np.argmax(err))
    best, arg = float(err[i]), x[i].copy()
    n = x.shape[0]
    if zoom:
        z = _zoom_points(arg, plan)
        ez = np.abs(_as_values(net, z) - _as_values(reference, z))
        j = int(np.argmax(ez))
        n += z.shape[0]
        if ez[j] > best:
            best, arg = float(ez[j]), z[j].copy()
    return SupError(best, arg, n)


def _zoom_points(center: np.ndarray, plan: ProbePlan) -> np.ndarray:
    d = plan.dim
    per = max(3, min(21, int(_ZOOM_POINTS ** (1.0 / d))))
    if per % 2 == 0:
        per -= 1
    cell = plan.cell()
    axes = []
    for i, (lo, hi) in enumerate(plan.box):
        a = np.linspace(center[i] - cell[i], center[i] + cell[i], per)
        axes.append(np.unique(np.clip(a, lo, hi)))
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in grid], axis=1)


# ------------------------------------------------------------ norm audit

@dataclass(frozen=True)
class AuditReport:
    """Recomputed norms next to the certificate's; violations are listed, not raised.

    Violation kinds: ``kappa`` (recomputed kappa differs from the certified
    value or exceeds the budget), ``layer_norm`` and ``final_norm``.
    """

    kappa: float
    certified_kappa: float
    budget: float
    layer_norms: tuple[float, ...]
    final_norm: float
    violations: tuple[dict, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, kind: str) -> int:
        return sum(1 for v in self.violations if v["kind"] == kind)


def _rel_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def audit_norms(net: Network, cert: FrobeniusCertificate) -> AuditReport:
    kap = kappa(net)
    norms = tuple(net.augmented_norms())
    fin = net.final_norm()
    out = []
    if _rel_gap(kap, cert.kappa) > _REL_TOL or kap > cert.budget * (1 + _REL_TOL):
        out.append({"kind": "kappa", "layer": None, "recomputed": kap, "certified": cert.kappa,
                    "budget": cert.budget})
    if len(norms) != len(cert.per_layer_augmented_norms):
        out.append({"kind": "layer_norm", "layer": None, "recomputed": len(norms),
                    "certified": len(cert.per_layer_augmented_norms)})
    else:
        for i, (a, b) in enumerate(zip(norms, cert.per_layer_augmented_norms)):
            if _rel_gap(a, b) > _REL_TOL:
                out.append({"kind": "layer_norm", "layer": i, "recomputed": a, "certified": b})
    if _rel_gap(fin, cert.final_norm) > _REL_TOL:
        out.append({"kind": "final_norm", "layer": len(norms), "recomputed": fin, "certified": cert.final_norm})
    return AuditReport(kap, cert.kappa, cert.budget, norms, fin, tuple(out))


# ----------------------------------------------------- partition of unity

def check_partition_of_unity(N: int, d: int, plan: ProbePlan | None = None) -> tuple[float, int]:
    """``(max |sum_n psi_n(x) - 1|, max number of nonzero hats)`` over the probes."""
    if N < 1 or d < 1:
        raise RejectedInput("need N >= 1 and d >= 1")
    plan = plan or ProbePlan.cube("low_discrepancy", 4096, d)
    if plan.dim != d:
        raise RejectedInput("probe plan dimension does not match d")
    return _kernels.pou_scan(plan.points(), int(N))


# ------------------------------------------------------------ rate sweep

@dataclass(frozen=True)
class SweepPoint:
    K: float
    k: object
    measured_error: float
    certified_bound: float
    kappa: float
    argmax: tuple[float, ...] = ()


@dataclass(frozen=True)
class SweepResult:
    points: tuple[SweepPoint, ...]
    fitted_slope: float
    theoretical_exponent: float
    notes: tuple[str, ...] = ()

    @property
    def monotone(self) -> bool:
        e = [p.measured_error for p in self.points]
        return all(b <= a for a, b in zip(e, e[1:]))

    @property
    def dominated(self) -> bool:
        return all(p.measured_error <= p.certified_bound for p in self.points)


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Ordinary least-squares slope of ``log y`` against ``log x``."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    if lx.size < 2:
        raise RejectedInput("a slope needs at least two points")
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)


def rate_sweep(target, budgets: Sequence[float], plan: ProbePlan | None = None,
               max_weights: int | None = None, min_points: int = 3,
               min_decades: float = 2.0) -> SweepResult:
    """Compile ``target`` at every budget, measure the sup error and fit the slope.

    ``target`` is a unit-cube :class:`~frobnet.oracles.FunctionOracle` or a
    :class:`~frobnet.dag_compiler.DagSpec`.  Budgets infeasible for the
    target are dropped with a note.
    """
    from .dag_compiler import DagSpec, compile_dag
    from .holder_compiler import DEFAULT_MAX_WEIGHTS, compile_holder_for_budget, rate_exponent

    Ks = sorted(float(K) for K in budgets)
    if len(Ks) < min_points:
        raise RejectedInput(f"a rate sweep needs at least {min_points} budgets, got {len(Ks)}")
    if math.log10(Ks[-1] / Ks[0]) < min_decades - 1e-12:
        raise RejectedInput(f"budgets must span at least {min_decades:g} decades")
    cap = max_weights or DEFAULT_MAX_WEIGHTS
    notes = []
    pts = []
    is_dag = isinstance(target, DagSpec)
    if is_dag:
        from .dag_compiler import rate_table

        theo = rate_table(target).worst_case_exponent
        plan = plan or ProbePlan.cube("low_discrepancy", 1024, target.input_dim, -target.input_range,
                                      target.input_range)
    else:
        theo = rate_exponent(target.dim, target.r, target.alpha)
        plan = plan or ProbePlan.cube("uniform_grid", 2001 if target.dim == 1 else 1681, target.dim)
    for K in Ks:
        try:
            if is_dag:
                res = compile_dag(target, K, max_weights=cap)
                net, bound, k = res.network, res.rate_certificate.total_error_bound, res.allocation.node_k
                ref = target.reference
            else:
                res = compile_holder_for_budget(target, K, max_weights=cap)
                net, bound, k = res.network, res.error_bound, res.chosen_k
                ref = target
        except BudgetInfeasible as exc:
            notes.append(f"K={K:.6g} dropped: {exc}")
            continue
        se = sup_error(net, ref, plan)
        pts.append(SweepPoint(K, k, se.value, bound, net.kappa, tuple(float(v) for v in se.argmax)))
    if len(pts) < 2:
        raise BudgetInfeasible("fewer than two feasible budgets in the sweep", None)
    slope = fit_loglog_slope([p.K for p in pts], [max(p.measured_error, 1e-300) for p in pts])
    return SweepResult(tuple(pts), slope, theo, tuple(notes))


# -------------------------------------------------------- critical path

@dataclass(frozen=True)
class TraceResult:
    path: tuple[str, ...]
    node_errors: dict[str, float]
    probe: np.ndarray
    global_error: float
    path_exponent: float


def trace_critical_path(result, plan: ProbePlan | None = None) -> TraceResult:
    """Follow the largest realized node error backward from the root.

    At the probe where the assembled network is worst, every node's
    discrepancy ``|G_v - Phi_v|`` (normalized coordinates, output units at
    the root) is computed from the retained level networks; starting at the
    root, the parent with the largest discrepancy is selected on every level
    (ties go to the parent listed first).
    """
    from .dag_compiler import effective_regularity, _path_rate_exponent

    spec = result.spec
    plan = plan or ProbePlan.cube("low_discrepancy", 1024, spec.input_dim, -spec.input_range, spec.input_range)
    se = sup_error(result.network, spec.reference, plan)
    x = se.argmax[None, :]
    exact = spec.evaluate_nodes(x)
    errs = {}
    h = x
    for li, lev in enumerate(spec.levels[1:], start=1):
        h = evaluate(result.level_networks[li - 1], h)
        for j, v in enumerate(lev):
            den = result.denormalizers[v]
            truth = exact[v] if v == spec.root else den.to_unit_output(exact[v])
            errs[v] = float(abs(h[0, j] - truth[0]))
    path = [spec.root]
    while spec.level_of(path[-1]) > 1:
        pa = spec.parents[path[-1]]
        best = max(range(len(pa)), key=lambda i: (errs[pa[i]], -i))
        path.append(pa[best])
    path = tuple(reversed(path))
    star = effective_regularity(spec, path)
    expo = min(_path_rate_exponent(star[v], spec.d_in(v), spec.L, spec.depth) for v in path)
    return TraceResult(path, errs, se.argmax, se.value, expo)
