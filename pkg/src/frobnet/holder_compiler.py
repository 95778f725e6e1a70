"""Compile a Hölder-smooth function on the unit cube into a ReLU network.

The approximant is ``sum_{n,s} c_{n,s} * patch_{n,s}(x)``: a local Taylor
polynomial around every grid point ``n/N`` localized by tensor hats, with
each localized monomial realized by a product tree.  ``N = ceil(k**(2/alpha))``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import BudgetInfeasible, OracleInconsistency, RejectedInput, SizeLimitExceeded
from .net_algebra import combine_bound, linear_combine
from .net_ir import AlgebraStep, FrobeniusCertificate, Network, certify
from .oracles import FunctionOracle, multi_indices
from .primitives import (
    monomial_bound,
    patch_bound_from_mono,
    patch_depth,
    patch_nominal_bound,
    taylor_patch_net,
)

DEFAULT_MAX_WEIGHTS = 1_000_000
DEFAULT_K_MAX = 4096

__all__ = [
    "FunctionOracle",
    "HolderCompileResult",
    "Denormalizer",
    "range_normalize",
    "grid_resolution",
    "taylor_coefficients",
    "compile_holder",
    "compile_holder_for_budget",
    "predict_holder_bound",
    "holder_error_bound",
    "nominal_error_bound",
    "rate_exponent",
]


# ---------------------------------------------------------- normalization

@dataclass(frozen=True)
class Denormalizer:
    """Maps between original coordinates and the unit-cube problem.

    ``g(x) = out_scale * (h(u) - out_shift)`` with ``u = (x + R_in) / (2 R_in)``.
    """

    R_in: tuple[float, ...]
    out_scale: float
    out_shift: float

    def to_unit(self, x) -> np.ndarray:
        R = np.asarray(self.R_in)
        return (np.atleast_2d(x) + R) / (2.0 * R)

    def to_original(self, u) -> np.ndarray:
        R = np.asarray(self.R_in)
        return 2.0 * R * np.atleast_2d(u) - R

    def output(self, h_values) -> np.ndarray:
        return self.out_scale * (np.asarray(h_values) - self.out_shift)

    def to_unit_output(self, g_values) -> np.ndarray:
        return np.asarray(g_values) / self.out_scale + self.out_shift


def range_normalize(oracle: FunctionOracle, R_in, R_out: float, shift_output: bool = True
                    ) -> tuple[FunctionOracle, Denormalizer]:
    """Move a problem on ``[-R_in, R_in]^d`` with ``|g| <= R_out`` to the unit cube.

    With ``shift_output`` the result is ``h(u) = g(2 R_in u - R_in) / (2 R_out) + 1/2``
    (values in [0, 1]); without it the output is left unscaled, ``h(u) = g(2 R_in u - R_in)``.
    The Hölder-norm bound of ``h`` is derived from that of ``g`` by the chain rule.
    """
    d = oracle.dim
    R = np.broadcast_to(np.asarray(R_in, dtype=float), (d,)).copy()
    if np.any(R <= 0) or not R_out > 0:
        raise RejectedInput("range bounds must be positive")
    scale = 1.0 / (2.0 * R_out) if shift_output else 1.0
    shift = 0.5 if shift_output else 0.0

    def to_x(u):
        return 2.0 * R * np.atleast_2d(u) - R

    def make(s, fn):
        factor = scale * float(np.prod((2.0 * R) ** np.asarray(s)))
        add = shift if sum(s) == 0 else 0.0
        return lambda u: factor * np.asarray(fn(to_x(u)), dtype=float) + add

    partials = {s: make(s, fn) for s, fn in oracle.partials.items()}
    rho = float(np.max(2.0 * R))
    H = max(1.0, rho ** oracle.alpha) * oracle.holder_norm_bound * scale + shift
    zero = (0,) * d
    norm = FunctionOracle(
        eval=partials[zero], alpha=oracle.alpha, dim=d, holder_norm_bound=H, partials=partials,
        domain=((0.0, 1.0),) * d, range_bound=1.0 if shift_output else R_out,
        name=f"normalized({oracle.name})", fd_warning=oracle.fd_warning,
    )
    den = Denormalizer(tuple(float(v) for v in R), 1.0 / scale, shift)
    return norm, den


# ------------------------------------------------------------ parameters

def grid_resolution(k: int, alpha: float) -> int:
    """``N = ceil(k**(2/alpha))``, robust to rounding of exact powers."""
    v = k ** (2.0 / alpha)
    n = math.ceil(v - 1e-9 * v)
    return max(1, n)


def rate_exponent(d: int, r: int, alpha: float) -> float:
    D = patch_depth(d, r)
    return 2.0 * alpha / (2.0 + d * (D + 1))


def nominal_error_bound(d: int, r: int, alpha: float, N: int, k: int) -> float:
    """``2^d d^r N^-alpha + 6 2^d (d+r) d^r / k^2`` for a unit-norm target."""
    return 2 ** d * d ** r * N ** (-alpha) + 6 * 2 ** d * (d + r) * d ** r / k ** 2


def holder_error_bound(d: int, r: int, alpha: float, N: int, k: int, H: float) -> float:
    """Certified sup error for a target with Hölder-norm bound ``H``.

    Same shape as :func:`nominal_error_bound` but the network term counts all
    ``C(d+r, d)`` derivative orders per grid point, and both terms scale with
    ``max(1, H)``.
    """
    terms = math.comb(d + r, d)
    return max(1.0, H) * (2 ** d * d ** r * N ** (-alpha) + 6 * 2 ** d * (d + r) * terms / k ** 2)


def kappa_formula_bound(d: int, r: int, N: int) -> float:
    """Loose closed form ``((N+1)^d d^r + 1)^((D+1)/2)`` times the patch bound."""
    D = patch_depth(d, r)
    return ((N + 1) ** d * d ** r + 1) ** ((D + 1) / 2) * patch_nominal_bound(d, r, N)


# ---------------------------------------------------------- coefficients

def _grid(N: int, d: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(N + 1), repeat=d))


def taylor_coefficients(oracle: FunctionOracle, N: int, tol: float = 1e-9) -> dict:
    """``c_{n,s} = D^s h(n/N) / s!`` keyed by ``(n, s)`` in lexicographic order.

    Raises :class:`OracleInconsistency` if any coefficient exceeds the
    declared Hölder-norm bound by more than ``tol``.
    """
    d, r = oracle.dim, oracle.r
    grid = _grid(N, d)
    pts = np.asarray(grid, dtype=float) / N
    orders = multi_indices(d, r)
    vals = {}
    for s in orders:
        v = oracle.partial(s, pts) / math.prod(math.factorial(si) for si in s)
        if v.shape != (len(grid),) or not np.all(np.isfinite(v)):
            raise OracleInconsistency(f"oracle {oracle.name!r} returned invalid values for partial {s}")
        bad = np.abs(v) > oracle.holder_norm_bound + tol
        if np.any(bad):
            i = int(np.argmax(bad))
            raise OracleInconsistency(
                f"oracle {oracle.name!r}: coefficient {v[i]:.6g} for s={s} at n={grid[i]} exceeds "
                f"declared Hölder bound {oracle.holder_norm_bound:.6g}")
        vals[s] = v
    return {(n, s): float(vals[s][i]) for i, n in enumerate(grid) for s in orders}


# -------------------------------------------------------------- results

@dataclass(frozen=True)
class HolderCompileResult:
    network: Network
    certificate: FrobeniusCertificate
    error_bound: float
    nominal_error_bound: float
    chosen_N: int
    chosen_k: int
    rate_exponent: float
    d: int
    r: int
    alpha: float
    holder_norm_bound: float
    n_terms: int
    kappa_formula_bound: float
    fd_warning: str | None = None

    @property
    def depth(self) -> int:
        return self.network.depth


@lru_cache(maxsize=64)
def _patch_nnz(d: int, r: int, order: int, N: int, k: int) -> int:
    n = (min(1, N),) * d
    s = [0] * d
    s[0] = order
    return taylor_patch_net(n, tuple(s), N, k, d, r, clamped=True).nnz


def predict_weights(d: int, r: int, N: int, k: int) -> int:
    """Estimated nonzero weight count of the compiled network."""
    total = 0
    for s in multi_indices(d, r):
        total += (N + 1) ** d * _patch_nnz(d, r, sum(s), N, k)
    return total


def _patch_bounds(d: int, r: int, N: int, orders) -> list[float]:
    cache = {}
    out = []
    for s in orders:
        o = sum(s)
        if o not in cache:
            cache[o] = patch_bound_from_mono(d, r, o, N, monomial_bound(d + o, d + r))
        out.append(cache[o])
    return out


def predict_holder_bound(oracle: FunctionOracle, k: int) -> float:
    """Certified kappa bound that :func:`compile_holder` would produce for ``k``."""
    N = grid_resolution(k, oracle.alpha)
    coeffs = taylor_coefficients(oracle, N)
    bounds = _patch_bounds(oracle.dim, oracle.r, N, [s for _, s in coeffs])
    return combine_bound(patch_depth(oracle.dim, oracle.r), list(coeffs.values()), bounds)


def compile_holder(oracle: FunctionOracle, k: int, max_weights: int = DEFAULT_MAX_WEIGHTS,
                   clamped: bool = True) -> HolderCompileResult:
    """Build the patch network for resolution ``k`` on ``[0,1]^d``.

    ``clamped`` builds the boundary factors so that the network computes its
    value at the projection of the input onto the cube; on the cube itself
    nothing changes.
    """
    if int(k) != k or k < 1:
        raise RejectedInput(f"k must be a positive integer, got {k!r}")
    if not oracle.is_unit_cube():
        raise RejectedInput("compile_holder expects an oracle on [0,1]^d; apply range_normalize first")
    d, r, alpha = oracle.dim, oracle.r, oracle.alpha
    N = grid_resolution(k, alpha)
    predicted = predict_weights(d, r, N, k)
    if predicted > max_weights:
        raise SizeLimitExceeded(f"compiling d={d}, r={r}, k={k} (N={N})", predicted, max_weights)
    coeffs = taylor_coefficients(oracle, N)
    keys = list(coeffs)
    cvals = [coeffs[key] for key in keys]
    bounds = _patch_bounds(d, r, N, [s for _, s in keys])
    patches = []
    kept = []
    for (n, s), c in zip(keys, cvals):
        if c != 0.0:
            patches.append(taylor_patch_net(n, s, N, k, d, r, clamped))
            kept.append(c)
    D = patch_depth(d, r)
    net = _combine_with_dropped(patches, kept, bounds, cvals, D, d)
    H = oracle.holder_norm_bound
    cert = certify(net, nominal_bound=kappa_formula_bound(d, r, N))
    return HolderCompileResult(
        network=net, certificate=cert,
        error_bound=holder_error_bound(d, r, alpha, N, k, H),
        nominal_error_bound=nominal_error_bound(d, r, alpha, N, k),
        chosen_N=N, chosen_k=int(k), rate_exponent=rate_exponent(d, r, alpha), d=d, r=r, alpha=alpha,
        holder_norm_bound=H, n_terms=len(keys), kappa_formula_bound=kappa_formula_bound(d, r, N),
        fd_warning=oracle.fd_warning,
    )


def _combine_with_dropped(patches, kept, all_bounds, all_coeffs, depth, d) -> Network:
    """Linear combination of the nonzero patches, certified with the full term list."""
    bound = combine_bound(depth, all_coeffs, all_bounds)
    if patches:
        net = linear_combine(patches, kept)
    else:
        hidden = [(sp.csr_matrix((0, d if l == 0 else 0)), np.zeros(0)) for l in range(depth)]
        net = Network(hidden, sp.csr_matrix((1, 0)))
    step = net.trail[-1] if net.trail else None
    full = AlgebraStep("linear_combine", step.operand_kappas if step else (), bound, depth, depth,
                       coefficients=tuple(all_coeffs), operand_bounds=tuple(all_bounds),
                       note=f"{len(all_coeffs)} Taylor terms, {len(patches)} with nonzero coefficient")
    if net.kappa > bound * (1 + 1e-12):
        raise AssertionError("combined kappa exceeds its certified bound")
    return net.with_bound(bound, (full,))


def compile_holder_for_budget(oracle: FunctionOracle, K: float, max_weights: int = DEFAULT_MAX_WEIGHTS,
                              k_max: int = DEFAULT_K_MAX, clamped: bool = True) -> HolderCompileResult:
    """Compile with the largest ``k`` whose certified kappa bound is at most ``K``.

    ``k`` is also limited by the size guard; the search stops at the first
    ``k`` that is infeasible for either reason.
    """
    if not K >= 1:
        raise RejectedInput("budget K must be >= 1")
    k = choose_k(oracle, K, max_weights, k_max)
    res = compile_holder(oracle, k, max_weights, clamped)
    if res.network.bound > K * (1 + 1e-12):
        raise AssertionError("budget prediction disagrees with the compiled certificate")
    cert = replace(res.certificate, budget=float(K))
    return replace(res, certificate=cert)


def choose_k(oracle: FunctionOracle, K: float, max_weights: int = DEFAULT_MAX_WEIGHTS,
             k_max: int = DEFAULT_K_MAX) -> int:
    first = predict_holder_bound(oracle, 1)
    if first > K:
        raise BudgetInfeasible(f"budget {K:.6g} is below the bound for k=1", first)
    best = 1
    for k in range(2, k_max + 1):
        N = grid_resolution(k, oracle.alpha)
        if predict_weights(oracle.dim, oracle.r, N, k) > max_weights:
            break
        if predict_holder_bound(oracle, k) > K:
            break
        best = k
    return best
