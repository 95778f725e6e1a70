"""Explicit subnetworks: square, product, monomials, hats, shifts, Taylor patches.

Each ``*_net`` function returns a :class:`Network` whose ``bound`` is its
certified kappa bound; the ``build_*`` wrappers also return a certificate.
Closed-form bounds stated for a construction are used as the certified
bound after checking the exact kappa against them, so downstream budgets
are predictable without building anything.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CertificateViolation, RejectedInput
from .net_algebra import (
    AlgebraStep,
    compose,
    compose_bound,
    concat_bound,
    concatenate,
    fix_inputs,
    parallel,
    precompose_affine,
)
from .net_ir import FrobeniusCertificate, Network, certify, clip_network

SQRT15 = math.sqrt(15.0)
PRODUCT_CORE_BOUND = 48.0
PRODUCT_BOUND = 360.0


@dataclass(frozen=True)
class PrimitiveSpec:
    """Parameters of one primitive; validated on construction."""

    kind: str
    k: int = 1
    d: int = 1
    N: int = 1
    n: tuple[int, ...] = ()
    s: tuple[int, ...] = ()
    r: int = 0

    def __post_init__(self):
        if self.kind not in {"square", "product", "monomial", "hat", "shift", "taylor_patch"}:
            raise RejectedInput(f"unknown primitive kind {self.kind!r}")
        if self.k < 1:
            raise RejectedInput("k must be >= 1")
        if self.kind == "monomial" and self.d < 2:
            raise RejectedInput("monomial arity must be >= 2")
        if self.kind in {"hat", "shift", "taylor_patch"}:
            _check_grid(self.n, self.N)
        if self.kind == "taylor_patch":
            if len(self.s) != len(self.n) or any(v < 0 for v in self.s) or sum(self.s) > self.r:
                raise RejectedInput("derivative multi-index must match n and satisfy |s| <= r")

    def build(self):
        if self.kind == "square":
            return build_square(self.k)
        if self.kind == "product":
            return build_product(self.k)
        if self.kind == "monomial":
            return build_monomial(self.d, self.k)
        if self.kind == "hat":
            return build_hat_product(self.N, self.n)
        if self.kind == "shift":
            return build_shift(self.n[0], self.N)
        return build_taylor_patch(self.n, self.s, self.N, self.k, len(self.n), self.r)


def _check_k(k):
    if int(k) != k or k < 1:
        raise RejectedInput(f"k must be a positive integer, got {k!r}")


def _check_grid(n, N):
    if N < 1:
        raise RejectedInput("grid resolution N must be >= 1")
    for v in n:
        if not 0 <= v <= N:
            raise RejectedInput(f"grid index {v} outside [0, {N}]")


def _certified(net: Network, bound: float, kind: str, note: str = "") -> Network:
    """Attach a closed-form bound after checking it against the exact kappa."""
    if net.kappa > bound * (1 + 1e-12):
        raise CertificateViolation(f"{kind}: kappa {net.kappa} exceeds closed-form bound {bound}")
    step = AlgebraStep(kind, (net.kappa,), bound, net.depth, net.depth, note=note)
    return net.with_bound(bound, net.trail + (step,))


# ------------------------------------------------------------------ square

def square_kappa(k: int) -> float:
    """Exact kappa of the square net: ``(2/sqrt k) sqrt((16k^2+12k-1)/(12k))``."""
    return 2.0 / math.sqrt(k) * math.sqrt((16 * k * k + 12 * k - 1) / (12 * k))


def square_net(k: int) -> Network:
    """Midpoint Riemann sum ``(1/k) sum_i 2 relu(x - (2i-1)/(2k))``, approximating x^2 on [0,1]."""
    _check_k(k)
    i = np.arange(1, k + 1)
    net = Network([(np.ones((k, 1)), -(2 * i - 1) / (2 * k))], np.full((1, k), 2.0 / k))
    return _certified(net, 3.0, "square", "closed form, at most 3 for every k")


def build_square(k: int) -> tuple[Network, FrobeniusCertificate]:
    net = square_net(k)
    return net, certify(net, nominal_bound=3.0)


# ----------------------------------------------------------------- product

def clip_unit_net() -> Network:
    return _certified(clip_network(1.0), 2.0 * math.sqrt(7.0), "clip", "four-unit clip to [-1, 1]")


def product_core_net(k: int) -> Network:
    """Depth-1 net ``2(q((x+y)/2) - q(x/2) - q(y/2))`` with ``q`` the even square.

    Units are interleaved per Riemann node as (sum, x, y) triples, and their
    output weights are exact negatives, so that with sequential summation
    the output is exactly zero whenever x = 0 or y = 0.
    """
    _check_k(k)
    i = np.arange(1, k + 1)
    b = -(2 * i - 1) / (2 * k)
    signs = np.concatenate([np.ones(k), -np.ones(k)])
    bias_t = np.concatenate([b, b])
    rows = 6 * k
    W = np.zeros((rows, 2))
    bias = np.zeros(rows)
    out = np.zeros((1, rows))
    c = 2.0 * 2.0 / k
    for j in range(2 * k):
        sgn = signs[j]
        W[3 * j] = (0.5 * sgn, 0.5 * sgn)
        W[3 * j + 1] = (0.5 * sgn, 0.0)
        W[3 * j + 2] = (0.0, 0.5 * sgn)
        bias[3 * j: 3 * j + 3] = bias_t[j]
        out[0, 3 * j: 3 * j + 3] = (c, -c, -c)
    net = Network.from_dense([(W, bias)], out)
    return _certified(net, PRODUCT_CORE_BOUND, "linear_combine",
                      "three even-square terms realized directly with shared block structure")


def product_net(k: int) -> Network:
    """Clipped product approximant on [-1,1]^2; width 6k, depth 2."""
    return compose(clip_unit_net(), product_core_net(k))


def build_product(k: int) -> tuple[Network, FrobeniusCertificate]:
    net = product_net(k)
    return net, certify(net, nominal_bound=PRODUCT_BOUND)


# ---------------------------------------------------------------- monomial

def monomial_nominal_bound(d: int) -> float:
    s = math.ceil(math.log2(d))
    return 722.0 ** s * 2.0 ** (7 * s * (s - 1) / 4)


@lru_cache(maxsize=64)
def _product_tree(levels: int, k: int) -> Network:
    """Binary tree of product nets on ``2**levels`` inputs (no padding)."""
    psi = product_net(k)
    net = None
    for lev in range(levels):
        layer = parallel([psi] * (2 ** (levels - lev - 1)))
        net = layer if net is None else compose(layer, net)
    return net


@lru_cache(maxsize=256)
def monomial_net(d: int, k: int, leaves: int | None = None,
                 slots: tuple[int, ...] | None = None) -> Network:
    """Approximant of ``x_1 ... x_d`` on [-1,1]^d using a tree with ``leaves`` inputs.

    ``leaves`` defaults to ``2**ceil(log2 d)``; the unused leaves are fed the
    constant 1 through the first-layer bias.  Input ``j`` goes to leaf
    ``slots[j]`` (default: leaf ``j``).
    """
    _check_k(k)
    m = leaves if leaves is not None else 2 ** math.ceil(math.log2(max(d, 2)))
    if m < 2 or m & (m - 1) or d > m or d < 1:
        raise RejectedInput(f"cannot place {d} factors on a tree with {m} leaves")
    if slots is None:
        slots = tuple(range(d))
    if len(slots) != d or len(set(slots)) != d or not all(0 <= v < m for v in slots):
        raise RejectedInput(f"slots {slots} are not {d} distinct leaves out of {m}")
    tree = _product_tree(int(math.log2(m)), k)
    if slots == tuple(range(m)):
        return tree
    if sorted(slots) == list(slots):
        return fix_inputs(tree, {i: 1.0 for i in range(m) if i not in slots})
    M = sp.csr_matrix((np.ones(d), (list(slots), np.arange(d))), shape=(m, d))
    c = np.ones(m)
    c[list(slots)] = 0.0
    return precompose_affine(tree, M, c)


def _spread_slots(hats: int, others: int, leaves: int) -> tuple[int, ...]:
    """Leaf positions putting one hat in as many sibling pairs as possible.

    Hats vanish off their cell, so a pair holding a hat outputs an exact
    zero there and everything above it in the tree stays inactive.
    """
    pairs = leaves // 2
    hat_pos = [2 * i for i in range(min(hats, pairs))]
    hat_pos += [2 * i + 1 for i in range(hats - len(hat_pos))]
    rest = [v for v in range(leaves) if v not in hat_pos][:others]
    return tuple(hat_pos + rest)


def build_monomial(d: int, k: int) -> tuple[Network, FrobeniusCertificate]:
    if d < 2:
        raise RejectedInput("monomial arity must be >= 2 (a single factor is the identity)")
    net = monomial_net(d, k)
    return net, certify(net, nominal_bound=monomial_nominal_bound(d))


# ------------------------------------------------------------ hats, shifts

def hat_reference(t) -> np.ndarray:
    """Exact hat ``relu(1 - relu(t) - relu(-t))``."""
    t = np.asarray(t, dtype=float)
    return np.maximum(1.0 - np.maximum(t, 0.0) - np.maximum(-t, 0.0), 0.0)


def hat_product_reference(x, N: int, n: Sequence[int]) -> np.ndarray:
    """Exact tensor hat ``prod_i hat(N x_i - n_i)`` at points ``x`` of shape (m, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.ones(x.shape[0])
    for i, ni in enumerate(n):
        out = out * hat_reference(N * x[:, i] - ni)
    return out


def patch_reference(x, N: int, n: Sequence[int], s: Sequence[int]) -> np.ndarray:
    """Exact localized monomial ``hat_n(x) * prod_i (x_i - n_i/N)**s_i``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = hat_product_reference(x, N, n)
    for i, (ni, si) in enumerate(zip(n, s)):
        if si:
            out = out * (x[:, i] - ni / N) ** si
    return out


def hat_net(N: int, n: int, clamped: bool = False) -> Network:
    """One-dimensional hat ``x -> hat(N x - n)``, depth 2.

    With ``clamped=True`` the result equals the hat evaluated at
    ``min(max(x, 0), 1)``: the two boundary hats are built as
    ``relu(1 - N relu(x))`` and ``relu(1 - N relu(1 - x))`` so they stay at 1
    outside the unit interval.  Interior hats already vanish there.
    """
    _check_grid((n,), N)
    if clamped and n == 0:
        net = Network.from_dense([([[1.0]], [0.0]), ([[-float(N)]], [1.0])], [[1.0]])
    elif clamped and n == N:
        net = Network.from_dense([([[-1.0]], [1.0]), ([[-float(N)]], [1.0])], [[1.0]])
    else:
        net = Network.from_dense([([[N], [-N]], [-n, n]), ([[-1.0, -1.0]], [1.0])], [[1.0]])
    return _certified(net, 2.0 * SQRT15 * N, "hat", "clamped" if clamped else "")


def build_hat(N: int, n: int, clamped: bool = False) -> tuple[Network, FrobeniusCertificate]:
    net = hat_net(N, n, clamped)
    return net, certify(net, nominal_bound=2.0 * SQRT15 * N)


def build_hat_product(N: int, n: Sequence[int]) -> tuple[Network, FrobeniusCertificate]:
    """Concatenated one-dimensional hats ``x -> (hat(N x_i - n_i))_i``.

    The tensor product itself is only ever approximated inside Taylor
    patches; :func:`hat_product_reference` gives its exact values.
    """
    n = tuple(int(v) for v in n)
    _check_grid(n, N)
    d = len(n)
    facs = [_read_coord(hat_net(N, ni), i, d) for i, ni in enumerate(n)]
    net = concatenate(facs)
    return net, certify(net)


def shift_net(n: int, N: int, clamped: bool = False) -> Network:
    """Depth-2 realization of ``x -> x - n/N`` (on [0,1] when ``clamped``)."""
    _check_grid((n,), N)
    c = n / N
    if clamped:
        net = Network.from_dense([([[1.0], [1.0]], [0.0, -1.0]),
                                  ([[1.0, -1.0], [-1.0, 1.0]], [-c, c])], [[1.0, -1.0]])
    else:
        net = Network.from_dense([([[1.0], [-1.0]], [-c, c]),
                                  ([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])], [[1.0, -1.0]])
    return _certified(net, 2.0 * SQRT15, "shift", "clamped" if clamped else "")


def build_shift(n: int, N: int, clamped: bool = False) -> tuple[Network, FrobeniusCertificate]:
    net = shift_net(n, N, clamped)
    return net, certify(net, nominal_bound=2.0 * SQRT15)


def _read_coord(net: Network, i: int, d: int) -> Network:
    if d == 1:
        return net
    sel = sp.csr_matrix(([1.0], ([0], [i])), shape=(1, d))
    return precompose_affine(net, sel)


# ----------------------------------------------------------- Taylor patch

def patch_depth(d: int, r: int) -> int:
    t = d + r
    return 2 * math.ceil(math.log2(t)) + 2 if t > 1 else 2


def patch_nominal_bound(d: int, r: int, N: int) -> float:
    t = d + r
    c = math.ceil(math.log2(2 * t))
    return 8.0 * t * t * N * 722.0 ** c * 2.0 ** ((7 * c * c - 7 * c) / 4)


@lru_cache(maxsize=4096)
def _coord_hat(N: int, ni: int, i: int, d: int, clamped: bool) -> Network:
    return _read_coord(hat_net(N, ni, clamped), i, d)


@lru_cache(maxsize=4096)
def _coord_shift(N: int, ni: int, i: int, d: int, clamped: bool) -> Network:
    return _read_coord(shift_net(ni, N, clamped), i, d)


def _factor_net(n, s, N, d, clamped):
    facs = [_coord_hat(N, ni, i, d, clamped) for i, ni in enumerate(n)]
    for i, (ni, si) in enumerate(zip(n, s)):
        facs.extend([_coord_shift(N, ni, i, d, clamped)] * si)
    return concatenate(facs)


def taylor_patch_net(n: Sequence[int], s: Sequence[int], N: int, k: int, d: int, r: int,
                     clamped: bool = False) -> Network:
    """Approximant of ``hat_n(x) (x - n/N)**s`` on [0,1]^d.

    ``d`` hats and ``|s|`` shifts feed a product tree with
    ``2**ceil(log2(d+r))`` leaves; spare leaves receive the constant 1.
    """
    n = tuple(int(v) for v in n)
    s = tuple(int(v) for v in s)
    if len(n) != d or len(s) != d:
        raise RejectedInput(f"multi-indices must have length d={d}")
    if any(v < 0 for v in s) or sum(s) > r:
        raise RejectedInput(f"derivative order {s} exceeds r={r}")
    _check_grid(n, N)
    _check_k(k)
    facs = _factor_net(n, s, N, d, clamped)
    t = d + r
    if t == 1:
        return facs
    leaves = 2 ** math.ceil(math.log2(t))
    slots = _spread_slots(d, sum(s), leaves)
    return compose(monomial_net(d + sum(s), k, leaves, slots), facs)


def predict_patch_bound(d: int, r: int, s_order: int, N: int, k: int) -> float:
    """Certified kappa bound of :func:`taylor_patch_net` without building it."""
    return patch_bound_from_mono(d, r, s_order, N, monomial_bound(d + s_order, d + r))


def monomial_bound(active: int, t: int) -> float:
    """Certified bound of ``monomial_net(active, k, 2**ceil(log2 t))`` (independent of k)."""
    if t == 1:
        return 1.0
    leaves = 2 ** math.ceil(math.log2(t))
    levels = int(math.log2(leaves))
    kp = compose_bound(1, 2.0 * math.sqrt(7.0), PRODUCT_CORE_BOUND)
    b = None
    depth = 0
    for lev in range(levels):
        count = 2 ** (levels - lev - 1)
        lb = kp if count == 1 else concat_bound(2, [kp] * count)
        b = lb if b is None else compose_bound(depth, lb, b)
        depth += 2
    if active < leaves:
        b *= math.sqrt(leaves - active + 1.0)
    return b


def patch_bound_from_mono(d: int, r: int, s_order: int, N: int, mono: float) -> float:
    fac = concat_bound(2, [2 * SQRT15 * N] * d + [2 * SQRT15] * s_order)
    if d + s_order == 1:
        fac = 2 * SQRT15 * N
    if d + r == 1:
        return fac
    return compose_bound(2, mono, fac)


def build_taylor_patch(n, s, N, k, d, r, clamped: bool = False) -> tuple[Network, FrobeniusCertificate]:
    net = taylor_patch_net(n, s, N, k, d, r, clamped)
    return net, certify(net, nominal_bound=patch_nominal_bound(d, r, N))
