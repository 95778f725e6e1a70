"""Compile a leveled compositional function into one ReLU network.

A :class:`DagSpec` describes ``f = g_L o ... o g_1`` where every node of
level ``l`` reads a few outputs of level ``l-1`` (level 0 is the input
vector).  Each node function is range-normalized to the unit cube, compiled
with :func:`~frobnet.holder_compiler.compile_holder`, wired to its parents
through a selection matrix folded into its first layer and padded to a
common depth.  Levels are concatenated and then composed.

All nodes are padded to the deepest node of the whole graph, so the depth
is ``L * (2 max ceil(log2(d_in + r)) + 2)``.  Node nets are built from
clamped factor nets: each computes its value at the projection of its
input onto the unit cube, which keeps downstream nodes in their domain
without spending an extra clipping layer.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.stats import qmc

from .errors import BudgetInfeasible, OracleInconsistency, ParseError, RejectedInput
from .holder_compiler import (
    DEFAULT_K_MAX,
    DEFAULT_MAX_WEIGHTS,
    HolderCompileResult,
    compile_holder,
    grid_resolution,
    predict_holder_bound,
    predict_weights,
    range_normalize,
)
from .net_algebra import (
    affine_factor,
    compose,
    compose_bound,
    concat_bound,
    concatenate,
    depth_pad,
    pad_bound,
    precompose_affine,
)
from .net_ir import FrobeniusCertificate, Network, certify, evaluate
from .oracles import FunctionOracle, builtin_oracle, order_from_alpha
from .primitives import patch_depth

__all__ = [
    "DagSpec",
    "NodeRate",
    "RateCertificate",
    "RateTable",
    "BudgetAllocation",
    "DagCompileResult",
    "effective_regularity",
    "worst_effective_regularity",
    "allocate_budgets",
    "compile_dag",
    "rate_table",
    "load_dag_spec",
]

_RANGE_TOL = 1e-9


# ------------------------------------------------------------------ spec

@dataclass(frozen=True)
class DagSpec:
    """Leveled DAG with one oracle per non-input node.

    ``levels[0]`` names the input coordinates (in order); the last level has
    exactly one node.  ``parents[v]`` lists nodes of the previous level.
    Each node oracle is defined on the box ``prod_p [-R_p, R_p]`` over its
    parents, where ``R_p`` is the parent's range bound (``input_range`` for
    inputs), and must satisfy ``|g_v| <= range_bounds[v]`` there.
    """

    levels: tuple[tuple[str, ...], ...]
    parents: Mapping[str, tuple[str, ...]]
    oracles: Mapping[str, FunctionOracle]
    range_bounds: Mapping[str, float]
    input_range: float = 1.0
    name: str = "dag"

    def __post_init__(self):
        levels = tuple(tuple(str(v) for v in lev) for lev in self.levels)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "parents", {str(k): tuple(str(p) for p in v) for k, v in self.parents.items()})
        object.__setattr__(self, "range_bounds", {str(k): float(v) for k, v in self.range_bounds.items()})
        self._validate()

    def _validate(self):
        if len(self.levels) < 2:
            raise RejectedInput("a DAG needs an input level and at least one node level")
        if len(self.levels[-1]) != 1:
            raise RejectedInput(f"the last level must hold exactly one node, got {len(self.levels[-1])}")
        if not self.input_range > 0:
            raise RejectedInput("input_range must be positive")
        seen: dict[str, int] = {}
        for li, lev in enumerate(self.levels):
            if not lev:
                raise RejectedInput(f"level {li} is empty")
            for v in lev:
                if v in seen:
                    raise RejectedInput(f"node {v!r} appears twice")
                seen[v] = li
        for li, lev in enumerate(self.levels[1:], start=1):
            prev = set(self.levels[li - 1])
            for v in lev:
                pa = self.parents.get(v)
                if not pa:
                    raise RejectedInput(f"node {v!r} has no parents")
                if len(set(pa)) != len(pa):
                    raise RejectedInput(f"node {v!r} lists a parent twice")
                bad = [p for p in pa if p not in prev]
                if bad:
                    raise RejectedInput(f"node {v!r}: parents {bad} are not on level {li - 1}")
                o = self.oracles.get(v)
                if o is None:
                    raise RejectedInput(f"node {v!r} has no oracle")
                if o.dim != len(pa):
                    raise RejectedInput(f"node {v!r}: oracle dimension {o.dim} != number of parents {len(pa)}")
                R = self.range_bounds.get(v)
                if R is None or not R > 0:
                    raise RejectedInput(f"node {v!r} needs a positive range bound")
        extra = set(self.parents) - set(seen)
        if extra:
            raise RejectedInput(f"edges mention unknown nodes {sorted(extra)}")
        for li, lev in enumerate(self.levels[1:-1], start=1):
            used = {p for w in self.levels[li + 1] for p in self.parents[w]}
            dead = [v for v in lev if v not in used]
            if dead:
                raise RejectedInput(f"nodes {dead} on level {li} do not feed the next level")

    # -- structure ---------------------------------------------------------
    @property
    def L(self) -> int:
        return len(self.levels) - 1

    @property
    def input_dim(self) -> int:
        return len(self.levels[0])

    @property
    def root(self) -> str:
        return self.levels[-1][0]

    @property
    def nodes(self) -> list[str]:
        return [v for lev in self.levels[1:] for v in lev]

    def level_of(self, v: str) -> int:
        for li, lev in enumerate(self.levels):
            if v in lev:
                return li
        raise RejectedInput(f"unknown node {v!r}")

    def d_in(self, v: str) -> int:
        return len(self.parents[v])

    def alpha(self, v: str) -> float:
        return self.oracles[v].alpha

    def r(self, v: str) -> int:
        return self.oracles[v].r

    def children(self, v: str) -> list[str]:
        li = self.level_of(v)
        if li >= self.L:
            return []
        return [w for w in self.levels[li + 1] if v in self.parents[w]]

    def parent_range(self, p: str) -> float:
        return self.input_range if self.level_of(p) == 0 else self.range_bounds[p]

    def node_depth(self, v: str) -> int:
        return patch_depth(self.d_in(v), self.r(v))

    @property
    def max_node_depth(self) -> int:
        return max(self.node_depth(v) for v in self.nodes)

    @property
    def depth(self) -> int:
        """``2 L max ceil(log2(d_in + r)) + 2 L``."""
        return self.L * self.max_node_depth

    def paths(self) -> list[tuple[str, ...]]:
        """All node sequences ``v1 -> ... -> root`` with one node per level >= 1."""
        out = []

        def walk(v, tail):
            if self.level_of(v) == 1:
                out.append((v,) + tail)
                return
            for p in self.parents[v]:
                walk(p, (v,) + tail)

        walk(self.root, ())
        return sorted(set(out))

    # -- evaluation --------------------------------------------------------
    def evaluate_nodes(self, x) -> dict[str, np.ndarray]:
        """Exact values of every node at the inputs ``x`` of shape (n, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.input_dim:
            raise RejectedInput(f"expected {self.input_dim} inputs, got shape {x.shape}")
        vals = {v: x[:, i] for i, v in enumerate(self.levels[0])}
        for v in self.nodes:
            u = np.stack([vals[p] for p in self.parents[v]], axis=1)
            vals[v] = np.asarray(self.oracles[v](u), dtype=float).reshape(-1)
        return vals

    def reference(self, x) -> np.ndarray:
        return self.evaluate_nodes(x)[self.root]

    # -- file format -------------------------------------------------------
    @classmethod
    def from_dict(cls, data: Mapping, name: str = "dag") -> "DagSpec":
        return _spec_from_dict(data, name)


_SPEC_KEYS = {"levels", "edges", "nodes", "input_range", "name"}
_NODE_KEYS = {"oracle", "params", "alpha", "r", "range_bound"}


def _spec_from_dict(data: Mapping, name: str) -> DagSpec:
    if not isinstance(data, Mapping):
        raise RejectedInput("DAG spec must be a JSON object")
    unknown = set(data) - _SPEC_KEYS
    if unknown:
        raise RejectedInput(f"unknown DAG spec keys {sorted(unknown)}")
    for key in ("levels", "edges", "nodes"):
        if key not in data:
            raise RejectedInput(f"DAG spec is missing {key!r}")
    levels = [[str(v) for v in lev] for lev in data["levels"]]
    parents = {}
    for e in data["edges"]:
        if set(e) != {"child", "parents"}:
            raise RejectedInput(f"edge entries need exactly 'child' and 'parents', got {sorted(e)}")
        if str(e["child"]) in parents:
            raise RejectedInput(f"node {e['child']!r} has two edge entries")
        parents[str(e["child"])] = tuple(str(p) for p in e["parents"])
    input_range = float(data.get("input_range", 1.0))
    ranges = {v: input_range for v in levels[0]} if levels else {}
    oracles, bounds = {}, {}
    for lev in levels[1:]:
        for v in lev:
            spec = data["nodes"].get(v)
            if spec is None:
                raise RejectedInput(f"node {v!r} has no entry under 'nodes'")
            unknown = set(spec) - _NODE_KEYS
            if unknown:
                raise RejectedInput(f"node {v!r}: unknown keys {sorted(unknown)}")
            alpha = float(spec["alpha"])
            r = order_from_alpha(alpha)
            if "r" in spec and int(spec["r"]) != r:
                raise RejectedInput(f"node {v!r}: r={spec['r']} is inconsistent with alpha={alpha} (expected {r})")
            pa = parents.get(v, ())
            box = [(-ranges[p], ranges[p]) for p in pa if p in ranges]
            if len(box) != len(pa):
                raise RejectedInput(f"node {v!r}: parents must be listed on earlier levels")
            o = builtin_oracle(spec["oracle"], len(pa), alpha, box, **spec.get("params", {}))
            oracles[v] = replace(o, name=v)
            bounds[v] = float(spec["range_bound"])
            ranges[v] = bounds[v]
    extra = set(data["nodes"]) - set(oracles)
    if extra:
        raise RejectedInput(f"'nodes' has entries for unknown nodes {sorted(extra)}")
    return DagSpec(levels, parents, oracles, bounds, input_range, str(data.get("name", name)))


def load_dag_spec(path) -> DagSpec:
    raw = open(path, "rb").read()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid DAG spec JSON: {exc.msg}", exc.pos) from None
    return _spec_from_dict(data, str(path))


# ------------------------------------------------------ effective regularity

def effective_regularity(spec: DagSpec, path: Sequence[str]) -> dict[str, float]:
    """``alpha*_v = alpha_v * prod_{m after v on path} min(alpha_m, 1)``."""
    path = [str(v) for v in path]
    if len(path) != spec.L:
        raise RejectedInput(f"a path must have one node per level (L={spec.L}), got {len(path)}")
    for li, v in enumerate(path, start=1):
        if spec.level_of(v) != li:
            raise RejectedInput(f"path node {v!r} is not on level {li}")
    for a, b in zip(path, path[1:]):
        if a not in spec.parents[b]:
            raise RejectedInput(f"{a!r} is not a parent of {b!r}")
    out = {}
    tail = 1.0
    for v in reversed(path):
        out[v] = spec.alpha(v) * tail
        tail *= min(spec.alpha(v), 1.0)
    return {v: out[v] for v in path}


def _downstream_factor(spec: DagSpec, exact: bool = False) -> dict:
    """Smallest ``prod min(alpha_m, 1)`` over the routes from each node to the root."""
    one = Fraction(1) if exact else 1.0

    def amin(v):
        a = Fraction(str(spec.alpha(v))) if exact else spec.alpha(v)
        return min(a, one)

    down = {spec.root: one}
    for li in range(spec.L - 1, 0, -1):
        for v in spec.levels[li]:
            down[v] = min(amin(c) * down[c] for c in spec.children(v))
    return down


def worst_effective_regularity(spec: DagSpec) -> dict[str, float]:
    """Per node, the smallest ``alpha*`` over all paths through it."""
    down = _downstream_factor(spec)
    return {v: spec.alpha(v) * down[v] for v in spec.nodes}


# ------------------------------------------------------------ rate table

@dataclass(frozen=True)
class RateTable:
    """Per-path exponents and the worst case, plus closed forms where they apply.

    ``closed_forms`` maps a model name to ``{"constant": C, "exponent": e, ...}``
    with exact :class:`fractions.Fraction` values.
    """

    paths: tuple[tuple[tuple[str, ...], dict[str, float], float], ...]
    worst_case_exponent: float
    proof_exponents: dict[str, float]
    closed_forms: dict[str, dict]


def _path_rate_exponent(alpha_star: float, d_in: int, L: int, D: int) -> float:
    return 2.0 * alpha_star / (2 * L + (D + L) * d_in)


def _proof_exponent(alpha_star: float, d_in: int, L: int, D_v: int) -> float:
    return 2.0 * alpha_star / (L * (2 + d_in * (D_v + 1)))


def _clog2(n: int) -> int:
    return (n - 1).bit_length()


def rate_table(spec: DagSpec) -> RateTable:
    """Enumerate root-to-input paths and their approximation-rate exponents.

    Per node the exponent is ``2 a* / (2L + (D + L) d_in)`` with ``D`` the
    compiled depth; a path's exponent is the minimum over its nodes and the
    worst case is the minimum over paths.
    """
    L, D = spec.L, spec.depth
    rows = []
    for path in spec.paths():
        star = effective_regularity(spec, path)
        ex = {v: _path_rate_exponent(star[v], spec.d_in(v), L, D) for v in path}
        rows.append((path, ex, min(ex.values())))
    worst = min(r[2] for r in rows)
    wstar = worst_effective_regularity(spec)
    proof = {v: _proof_exponent(wstar[v], spec.d_in(v), L, spec.node_depth(v)) for v in spec.nodes}
    return RateTable(tuple(rows), worst, proof, _closed_forms(spec))


def _closed_forms(spec: DagSpec) -> dict[str, dict]:
    L, d = spec.L, spec.input_dim
    down = _downstream_factor(spec, exact=True)
    star = {v: Fraction(str(spec.alpha(v))) * down[v] for v in spec.nodes}
    out = {}
    m = max(_clog2(spec.d_in(v) + spec.r(v)) for v in spec.nodes)
    C3 = L * m + Fraction(5, 2)
    e3 = min(star[v] / (C3 * spec.d_in(v)) for v in spec.nodes)
    out["constant-level"] = {"constant": C3, "exponent": e3, "c": L,
                             "formula": "C3 = c*max ceil(log2(d_in+r)) + 5/2; exponent = min a*/(C3 d_in)"}
    if d >= 2 and d & (d - 1) == 0 and L == _clog2(d) and all(spec.d_in(v) == 2 for v in spec.nodes):
        C2 = 2 * max(_clog2(2 + spec.r(v)) for v in spec.nodes) + 4
        e2 = min(star[v] for v in spec.nodes) / (C2 * L)
        out["binary-tree"] = {"constant": Fraction(C2), "exponent": e2,
                              "formula": "C2 = 2*max ceil(log2(2+r)) + 4; exponent = min a*/(C2 log2 d)"}
    if L == 2 and all(spec.d_in(v) == d for v in spec.levels[1]):
        s = spec.d_in(spec.root)
        if s < d:
            r = spec.r(spec.root)
            C1 = 2 * _clog2(s + r) + 5
            a = Fraction(str(spec.alpha(spec.root)))
            out["multi-index"] = {"constant": Fraction(C1), "exponent": a / (C1 * s), "s": s,
                                  "formula": "C1 = 2 ceil(log2(s+r)) + 5; exponent = a/(C1 s)"}
    return out


# ------------------------------------------------------------- preparation

@dataclass
class _Node:
    name: str
    level: int
    oracle: FunctionOracle          # normalized, on [0,1]^d_in
    denorm: object
    M: sp.csr_matrix
    c: np.ndarray
    route_factor: float
    depth: int
    pad_dim: int = 1


def _routing(spec: DagSpec, v: str):
    li = spec.level_of(v)
    prev = spec.levels[li - 1]
    pa = spec.parents[v]
    cols = [prev.index(p) for p in pa]
    rows = np.arange(len(pa))
    if li == 1:
        scale = 1.0 / (2.0 * spec.input_range)
        M = sp.csr_matrix((np.full(len(pa), scale), (rows, cols)), shape=(len(pa), len(prev)))
        c = np.full(len(pa), 0.5)
    else:
        M = sp.csr_matrix((np.ones(len(pa)), (rows, cols)), shape=(len(pa), len(prev)))
        c = np.zeros(len(pa))
    return M, c


def check_node_ranges(spec: DagSpec, n_probes: int = 1024, seed: int = 0):
    """Probe every node oracle on its box; raise if it leaves its declared range."""
    for v in spec.nodes:
        pa = spec.parents[v]
        R_in = np.array([spec.parent_range(p) for p in pa])
        m = int(math.ceil(math.log2(max(2, n_probes))))
        u = qmc.Sobol(len(pa), scramble=True, seed=seed).random_base2(m)
        corners = np.array(np.meshgrid(*[[0.0, 1.0]] * len(pa), indexing="ij")).reshape(len(pa), -1).T
        u = np.vstack([u, corners, np.full((1, len(pa)), 0.5)])
        vals = np.asarray(spec.oracles[v](2.0 * R_in * u - R_in), dtype=float)
        R = spec.range_bounds[v]
        worst = float(np.max(np.abs(vals))) if vals.size else 0.0
        if not np.all(np.isfinite(vals)) or worst > R * (1 + _RANGE_TOL) + _RANGE_TOL:
            raise OracleInconsistency(
                f"node {v!r}: oracle value {worst:.6g} exceeds its declared range bound {R:.6g}")


def _prepare(spec: DagSpec) -> dict[str, _Node]:
    nodes = {}
    for v in spec.nodes:
        R_in = [spec.parent_range(p) for p in spec.parents[v]]
        o = spec.oracles[v]
        norm, den = range_normalize(o, R_in, spec.range_bounds[v], shift_output=(v != spec.root))
        norm = replace(norm, name=v)
        M, c = _routing(spec, v)
        nodes[v] = _Node(v, spec.level_of(v), norm, den, M, c, affine_factor(M, c), spec.node_depth(v))
    return nodes


# --------------------------------------------------------------- budgets

@dataclass(frozen=True)
class BudgetAllocation:
    """Per-node resolution and certified bound, and the assembled global bound.

    ``ceiling`` is the common cap on every node's certified bound (after
    routing and depth padding); ``level_bounds`` are the bounds of the
    concatenated levels and ``global_bound`` the bound of their composition.
    """

    K: float
    ceiling: float
    node_k: dict[str, int]
    node_K: dict[str, float]
    level_bounds: tuple[float, ...]
    global_bound: float
    derivation: tuple[str, ...]


class _BoundTable:
    """Lazily computed certified node bounds for k = 1, 2, ..."""

    def __init__(self, spec, nodes, D_max, max_weights, k_max):
        self.spec, self.nodes, self.D_max = spec, nodes, D_max
        self.max_weights, self.k_max = max_weights, k_max
        self.cache: dict[tuple[str, int], float | None] = {}

    def bound(self, v: str, k: int) -> float | None:
        """Bound of node ``v`` at resolution ``k``; None if over the size cap."""
        key = (v, k)
        if key not in self.cache:
            nd = self.nodes[v]
            o = nd.oracle
            N = grid_resolution(k, o.alpha)
            if k > self.k_max or predict_weights(o.dim, o.r, N, k) > self.max_weights:
                self.cache[key] = None
            else:
                try:
                    b = predict_holder_bound(o, k) * nd.route_factor
                except OracleInconsistency as exc:
                    raise OracleInconsistency(f"node {v!r}: {exc}") from None
                self.cache[key] = pad_bound(nd.depth, nd.pad_dim, b, self.D_max - nd.depth)
        return self.cache[key]

    def best_k(self, v: str, ceiling: float) -> int:
        """Largest k reached by scanning upward while the bound stays <= ceiling."""
        best = 0
        k = 1
        while True:
            b = self.bound(v, k)
            if b is None or b > ceiling:
                return best
            best = k
            k += 1


def _level_bound(depth: int, bounds: Sequence[float]) -> float:
    return bounds[0] if len(bounds) == 1 else concat_bound(depth, bounds)


def _global_bound(spec: DagSpec, D_max: int, node_K: Mapping[str, float]) -> tuple[list[float], float]:
    levels = [_level_bound(D_max, [node_K[v] for v in lev]) for lev in spec.levels[1:]]
    total = levels[0]
    depth = D_max
    for b in levels[1:]:
        total = compose_bound(depth, b, total)
        depth += D_max
    return levels, total


def allocate_budgets(spec: DagSpec, K: float, k_overrides: Mapping[str, int] | None = None,
                     max_weights: int = DEFAULT_MAX_WEIGHTS, k_max: int = DEFAULT_K_MAX,
                     _nodes=None) -> BudgetAllocation:
    """Give every node the largest ``k`` under a common ceiling that keeps kappa <= K.

    The ceiling is the largest value among the candidate node bounds for
    which the assembled bound (level concatenation, then composition with
    the same formulas the network algebra certifies) stays within ``K``.
    Nodes in ``k_overrides`` keep their given ``k``.
    """
    if not K >= 1:
        raise RejectedInput("budget K must be >= 1")
    overrides = {str(v): int(k) for v, k in (k_overrides or {}).items()}
    unknown = set(overrides) - set(spec.nodes)
    if unknown:
        raise RejectedInput(f"k overrides name unknown nodes {sorted(unknown)}")
    nodes = _nodes or _prepare(spec)
    D_max = spec.max_node_depth
    table = _BoundTable(spec, nodes, D_max, max_weights, k_max)
    fixed = {}
    for v, k in overrides.items():
        if k < 1:
            raise RejectedInput(f"k override for {v!r} must be >= 1")
        b = table.bound(v, k)
        if b is None:
            raise RejectedInput(f"k override {k} for {v!r} exceeds the size cap")
        fixed[v] = b
    free = [v for v in spec.nodes if v not in overrides]

    def assemble(ceiling):
        ks = dict(overrides)
        Ks = dict(fixed)
        for v in free:
            k = table.best_k(v, ceiling)
            if k == 0:
                return None
            ks[v] = k
            Ks[v] = table.bound(v, k)
        levels, total = _global_bound(spec, D_max, Ks)
        return ks, Ks, levels, total

    floor_bounds = []
    for v in free:
        b = table.bound(v, 1)
        if b is None:
            raise RejectedInput(f"node {v!r} exceeds the size cap already at k=1")
        floor_bounds.append(b)
    lowest = max(floor_bounds, default=0.0)
    first = assemble(lowest)
    if first is None or first[3] > K * (1 + 1e-12):
        need = first[3] if first is not None else math.inf
        raise BudgetInfeasible(f"budget {K:.6g} is below the smallest assembled bound {need:.6g}", need)
    # candidate ceilings are node bounds at increasing k; feasibility is monotone
    best_ceiling, best = lowest, first
    candidates = set()
    for v in free:
        k = 1
        while True:
            b = table.bound(v, k)
            if b is None or b > K:
                break
            if b >= lowest:
                candidates.add(b)
            k += 1
    cands = sorted(candidates)
    lo, hi = 0, len(cands) - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        got = assemble(cands[mid])
        if got is not None and got[3] <= K * (1 + 1e-12):
            best_ceiling, best = cands[mid], got
            lo = mid + 1
        else:
            hi = mid - 1
    ks, Ks, levels, total = best
    deriv = [
        f"common node ceiling {best_ceiling:.6g} (routing factor and {D_max}-layer depth padding included)",
        *[f"level {i}: {'concatenation' if len(spec.levels[i]) > 1 else 'single node'} of "
          f"{len(spec.levels[i])} at depth {D_max} -> {b:.6g}" for i, b in enumerate(levels, start=1)],
        f"composition of {spec.L} levels -> {total:.6g} <= K = {K:.6g}",
    ]
    return BudgetAllocation(float(K), float(best_ceiling), ks, Ks, tuple(levels), float(total), tuple(deriv))


# ------------------------------------------------------------- compile

@dataclass(frozen=True)
class NodeRate:
    alpha: float
    d_in: int
    r: int
    effective_alpha_star: float
    node_k: int
    node_N: int
    node_K: float
    node_error_bound: float
    propagated_error_bound: float
    node_depth: int
    exponent: float
    proof_exponent: float


@dataclass(frozen=True)
class RateCertificate:
    """Rate and error accounting of a compiled DAG.

    ``total_error_bound`` is the forward recursion
    ``A_v = sqrt(d_l) max(1, H_v) max_p A_p ** min(alpha_v, 1) + B_v`` with
    ``B_v`` the node's compile error bound, all in normalized coordinates
    except at the root.  ``aggregate_error_bound`` is the coarser
    ``L * max_v B_v ** prod min(alpha, 1)`` aggregate without constants.
    """

    per_node: dict[str, NodeRate]
    worst_case_rate_exponent: float
    worst_case_proof_exponent: float
    total_error_bound: float
    aggregate_error_bound: float
    depth_D: int
    width_W: int
    global_K: float
    sqrt_d_factors: tuple[float, ...]
    derivation: tuple[str, ...] = ()

    def recompute_worst_exponent(self) -> float:
        return min(n.exponent for n in self.per_node.values())


@dataclass(frozen=True)
class DagCompileResult:
    network: Network
    certificate: FrobeniusCertificate
    rate_certificate: RateCertificate
    allocation: BudgetAllocation
    node_results: dict[str, HolderCompileResult]
    level_networks: tuple[Network, ...]
    spec: DagSpec
    routing: dict[str, tuple[sp.csr_matrix, np.ndarray]] = field(default_factory=dict)
    denormalizers: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.network, self.certificate, self.rate_certificate))

    def node_inputs(self, x) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Per node: (exact normalized parent values, network-propagated ones)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        spec = self.spec
        exact = spec.evaluate_nodes(x)
        out = {}
        h = x
        for li, lev in enumerate(spec.levels[1:], start=1):
            prev = spec.levels[li - 1]
            for v in lev:
                M, c = self.routing[v]
                if li == 1:
                    true_prev = x
                else:
                    true_prev = np.stack([self.denormalizers[p].to_unit_output(exact[p]) for p in prev], axis=1)
                u_true = np.asarray(true_prev @ M.T.toarray()) + c
                u_net = np.asarray(h @ M.T.toarray()) + c
                out[v] = (u_true, u_net)
            h = evaluate(self.level_networks[li - 1], h)
        return out


def compile_dag(spec: DagSpec, K: float, k_overrides: Mapping[str, int] | None = None,
                max_weights: int = DEFAULT_MAX_WEIGHTS, k_max: int = DEFAULT_K_MAX,
                check_ranges: bool = True) -> DagCompileResult:
    """Allocate budgets, compile every node and assemble the global network."""
    if check_ranges:
        check_node_ranges(spec)
    nodes = _prepare(spec)
    alloc = allocate_budgets(spec, K, k_overrides, max_weights, k_max, _nodes=nodes)
    D_max = spec.max_node_depth
    results: dict[str, HolderCompileResult] = {}
    level_nets = []
    for lev in spec.levels[1:]:
        subnets = []
        for v in lev:
            nd = nodes[v]
            try:
                res = compile_holder(nd.oracle, alloc.node_k[v], max_weights=max_weights, clamped=True)
            except OracleInconsistency as exc:
                raise OracleInconsistency(f"node {v!r}: {exc}") from None
            results[v] = res
            routed = precompose_affine(res.network, nd.M, nd.c)
            subnets.append(depth_pad(routed, D_max))
        level_nets.append(subnets[0] if len(subnets) == 1 else concatenate(subnets))
    net = level_nets[0]
    for ln in level_nets[1:]:
        net = compose(ln, net)
    if net.bound > K * (1 + 1e-12):
        raise AssertionError("assembled bound exceeds the allocated budget")
    cert = certify(net, budget=float(K), nominal_bound=_nominal_kappa(spec, D_max, alloc.node_K))
    rc = _rate_certificate(spec, nodes, results, alloc, net, K)
    routing = {v: (nodes[v].M, nodes[v].c) for v in spec.nodes}
    dens = {v: nodes[v].denorm for v in spec.nodes}
    return DagCompileResult(net, cert, rc, alloc, results, tuple(level_nets), spec, routing, dens)


def _nominal_kappa(spec: DagSpec, D_max: int, node_K: Mapping[str, float]) -> float:
    """``2^(D/2) prod_l ((|V_l|+1)^((D_l+1)/2) max K_v + 2)``."""
    out = 2.0 ** (spec.depth / 2)
    for lev in spec.levels[1:]:
        out *= (len(lev) + 1) ** ((D_max + 1) / 2) * max(node_K[v] for v in lev) + 2.0
    return out


def _rate_certificate(spec, nodes, results, alloc, net, K) -> RateCertificate:
    L, D = spec.L, spec.depth
    wstar = worst_effective_regularity(spec)
    down = _downstream_factor(spec)
    A: dict[str, float] = {}
    sqrt_d = []
    for li, lev in enumerate(spec.levels[1:], start=1):
        dl = max(spec.d_in(v) for v in lev)
        sqrt_d.append(math.sqrt(dl))
        for v in lev:
            B = results[v].error_bound
            if li == 1:
                A[v] = B
            else:
                delta = max(A[p] for p in spec.parents[v])
                H = max(1.0, nodes[v].oracle.holder_norm_bound)
                A[v] = math.sqrt(dl) * H * delta ** min(spec.alpha(v), 1.0) + B
    aggregate = L * max(results[v].error_bound ** down[v] for v in spec.nodes)
    per = {}
    for v in spec.nodes:
        per[v] = NodeRate(
            alpha=spec.alpha(v), d_in=spec.d_in(v), r=spec.r(v), effective_alpha_star=wstar[v],
            node_k=alloc.node_k[v], node_N=results[v].chosen_N, node_K=alloc.node_K[v],
            node_error_bound=results[v].error_bound, propagated_error_bound=A[v],
            node_depth=spec.node_depth(v),
            exponent=_path_rate_exponent(wstar[v], spec.d_in(v), L, D),
            proof_exponent=_proof_exponent(wstar[v], spec.d_in(v), L, spec.node_depth(v)),
        )
    deriv = alloc.derivation + (
        "error recursion in normalized coordinates: A_v = B_v on level 1, "
        "A_v = sqrt(d_l) max(1,H_v) (max_p A_p)^min(alpha_v,1) + B_v above, d_l = max fan-in of level l",
    )
    return RateCertificate(
        per_node=per,
        worst_case_rate_exponent=min(p.exponent for p in per.values()),
        worst_case_proof_exponent=min(p.proof_exponent for p in per.values()),
        total_error_bound=A[spec.root], aggregate_error_bound=aggregate,
        depth_D=net.depth, width_W=net.width, global_K=float(K), sqrt_d_factors=tuple(sqrt_d),
        derivation=deriv,
    )
