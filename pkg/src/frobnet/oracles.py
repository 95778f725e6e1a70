"""Function oracles with analytic partial derivatives.

A :class:`FunctionOracle` bundles a vectorized evaluator, evaluators for all
partial derivatives up to order ``r`` and Hölder metadata.  The builders in
this module (polynomials, scaled sines, absolute powers) also compute a
conservative upper bound on the Hölder norm over their domain box, using
coefficient-wise sup bounds, so no declared constant has to be trusted.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import RejectedInput

Evaluator = Callable[[np.ndarray], np.ndarray]


def order_from_alpha(alpha: float) -> int:
    """``r`` with ``alpha = r + beta`` and ``beta`` in (0, 1]."""
    if not alpha > 0:
        raise RejectedInput(f"smoothness must be positive, got {alpha}")
    return int(math.ceil(alpha)) - 1


def multi_indices(d: int, r: int) -> list[tuple[int, ...]]:
    """All ``s`` in N_0^d with ``|s| <= r`` in lexicographic order."""
    return [s for s in itertools.product(range(r + 1), repeat=d) if sum(s) <= r]


@dataclass(frozen=True)
class FunctionOracle:
    """Target function with partial derivatives and Hölder metadata.

    ``eval`` and every entry of ``partials`` take an array of shape (n, dim)
    and return shape (n,).  ``partials`` must contain every multi-index of
    order at most ``r``; the zero index may be omitted and defaults to
    ``eval``.
    """

    eval: Evaluator
    alpha: float
    dim: int
    holder_norm_bound: float
    partials: Mapping[tuple[int, ...], Evaluator] = field(default_factory=dict)
    domain: tuple[tuple[float, float], ...] | None = None
    range_bound: float | None = None
    name: str = ""
    fd_warning: str | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise RejectedInput("oracle dimension must be positive")
        if not self.holder_norm_bound > 0:
            raise RejectedInput("Hölder norm bound must be positive")
        parts = dict(self.partials)
        parts.setdefault((0,) * self.dim, self.eval)
        missing = [s for s in multi_indices(self.dim, self.r) if s not in parts]
        if missing:
            raise RejectedInput(f"oracle {self.name!r} lacks partial derivatives {missing}")
        object.__setattr__(self, "partials", parts)
        if self.domain is None:
            object.__setattr__(self, "domain", ((0.0, 1.0),) * self.dim)

    @property
    def r(self) -> int:
        return order_from_alpha(self.alpha)

    @property
    def beta(self) -> float:
        return self.alpha - self.r

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.eval(np.atleast_2d(np.asarray(x, dtype=float))), dtype=float)

    def partial(self, s: Sequence[int], x) -> np.ndarray:
        return np.asarray(self.partials[tuple(s)](np.atleast_2d(np.asarray(x, dtype=float))), dtype=float)

    def is_unit_cube(self) -> bool:
        return all(lo == 0.0 and hi == 1.0 for lo, hi in self.domain)


# ----------------------------------------------------------- polynomials

@dataclass(frozen=True)
class Polynomial:
    """Sum of ``coef * prod x_i**e_i`` terms."""

    terms: tuple[tuple[float, tuple[int, ...]], ...]
    dim: int

    @classmethod
    def from_terms(cls, terms, dim: int) -> "Polynomial":
        acc: dict[tuple[int, ...], float] = {}
        for coef, exps in terms:
            exps = tuple(int(e) for e in exps)
            if len(exps) != dim or any(e < 0 for e in exps):
                raise RejectedInput(f"bad exponent vector {exps} for dimension {dim}")
            acc[exps] = acc.get(exps, 0.0) + float(coef)
        return cls(tuple((c, e) for e, c in sorted(acc.items()) if c != 0.0), dim)

    def derivative(self, s: Sequence[int]) -> "Polynomial":
        out = []
        for coef, exps in self.terms:
            c = coef
            new = []
            for e, si in zip(exps, s):
                if si > e:
                    c = 0.0
                    break
                c *= math.perm(e, si)
                new.append(e - si)
            if c != 0.0:
                out.append((c, tuple(new)))
        return Polynomial.from_terms(out, self.dim)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros(x.shape[0])
        for coef, exps in self.terms:
            t = np.full(x.shape[0], coef)
            for i, e in enumerate(exps):
                if e:
                    t = t * x[:, i] ** e
            out = out + t
        return out

    def sup_bound(self, box) -> float:
        """Upper bound on ``sup |p|`` over the box via coefficient magnitudes."""
        amax = [max(abs(lo), abs(hi)) for lo, hi in box]
        return math.fsum(abs(c) * math.prod(a ** e for a, e in zip(amax, exps)) for c, exps in self.terms)

    @property
    def degree(self) -> int:
        return max((sum(e) for _, e in self.terms), default=0)


def _seminorm_from_gradients(grad_sups: Sequence[float], sup: float, beta: float, diam: float) -> float:
    """Bound on the beta-Hölder seminorm in the sup-norm metric."""
    lip = math.fsum(grad_sups)
    if beta >= 1.0:
        return lip
    # |f(x)-f(y)| <= min(lip |x-y|, 2 sup) <= lip^beta (2 sup)^(1-beta) |x-y|^beta
    return min(lip * diam ** (1.0 - beta), lip ** beta * (2.0 * sup) ** (1.0 - beta))


def polynomial_oracle(terms, dim: int, alpha: float, box=None, name: str = "polynomial") -> FunctionOracle:
    """Oracle for a polynomial given as ``[(coef, exponents), ...]``."""
    p = Polynomial.from_terms(terms, dim)
    box = tuple(tuple(map(float, b)) for b in (box or [(0.0, 1.0)] * dim))
    r = order_from_alpha(alpha)
    beta = alpha - r
    partials = {s: p.derivative(s) for s in multi_indices(dim, r)}
    total = math.fsum(q.sup_bound(box) for q in partials.values())
    diam = max(hi - lo for lo, hi in box)
    semi = 0.0
    for s, q in partials.items():
        if sum(s) == r:
            grads = [q.derivative(tuple(int(i == j) for j in range(dim))).sup_bound(box) for i in range(dim)]
            semi = max(semi, _seminorm_from_gradients(grads, q.sup_bound(box), beta, diam))
    H = max(total + semi, 1e-12)
    return FunctionOracle(eval=p, alpha=alpha, dim=dim, holder_norm_bound=H,
                          partials={s: q for s, q in partials.items()}, domain=box,
                          range_bound=p.sup_bound(box), name=name)


def affine_oracle(weights, bias: float = 0.0, alpha: float = 2.0, box=None) -> FunctionOracle:
    w = [float(v) for v in weights]
    d = len(w)
    terms = [(bias, (0,) * d)] + [(wi, tuple(int(j == i) for j in range(d))) for i, wi in enumerate(w)]
    return polynomial_oracle(terms, d, alpha, box, name="affine")


def mean_oracle(dim: int, alpha: float = 2.0, box=None) -> FunctionOracle:
    o = affine_oracle([1.0 / dim] * dim, 0.0, alpha, box)
    return replace(o, name="mean")


def product_oracle(dim: int, scale: float = 1.0, alpha: float = 2.0, box=None) -> FunctionOracle:
    o = polynomial_oracle([(scale, (1,) * dim)], dim, alpha, box)
    return replace(o, name="product")


# --------------------------------------------------------- scaled sine

def scaled_sine_oracle(amplitude: float, frequency: float, weights, phase: float = 0.0,
                       alpha: float = 2.0, box=None) -> FunctionOracle:
    """``amplitude * sin(frequency * <weights, x> + phase)``."""
    w = np.asarray(weights, dtype=float)
    d = w.size
    box = tuple(tuple(map(float, b)) for b in (box or [(0.0, 1.0)] * d))
    r = order_from_alpha(alpha)
    beta = alpha - r

    def make(s):
        order = sum(s)
        factor = amplitude * frequency ** order * float(np.prod(w ** np.asarray(s)))

        def f(x, factor=factor, order=order):
            arg = frequency * (np.atleast_2d(x) @ w) + phase
            return factor * np.sin(arg + order * math.pi / 2)

        return f

    partials = {s: make(s) for s in multi_indices(d, r)}
    l1 = float(np.abs(w).sum())
    sups = {s: abs(amplitude) * abs(frequency) ** sum(s) * float(np.prod(np.abs(w) ** np.asarray(s)))
            for s in partials}
    total = math.fsum(sups.values())
    diam = max(hi - lo for lo, hi in box)
    semi = max(_seminorm_from_gradients([sups[s] * abs(frequency) * l1], sups[s], beta, diam)
               for s in partials if sum(s) == r)
    return FunctionOracle(eval=partials[(0,) * d], alpha=alpha, dim=d, holder_norm_bound=total + semi,
                          partials=partials, domain=box, range_bound=abs(amplitude), name="scaled-sine")


# -------------------------------------------------------- absolute power

def abs_power_oracle(power: float, weights, bias: float = 0.0, amplitude: float = 1.0,
                     box=None) -> FunctionOracle:
    """``amplitude * |<weights, x> + bias|**power`` with ``0 < power <= 1`` (Hölder of order power)."""
    if not 0 < power <= 1:
        raise RejectedInput("abs-power requires 0 < power <= 1")
    w = np.asarray(weights, dtype=float)
    d = w.size
    box = tuple(tuple(map(float, b)) for b in (box or [(0.0, 1.0)] * d))

    def f(x):
        return amplitude * np.abs(np.atleast_2d(x) @ w + bias) ** power

    amax = sum(abs(wi) * max(abs(lo), abs(hi)) for wi, (lo, hi) in zip(w, box)) + abs(bias)
    sup = abs(amplitude) * amax ** power
    semi = abs(amplitude) * 2.0 ** (1.0 - power) * float(np.abs(w).sum()) ** power
    return FunctionOracle(eval=f, alpha=power, dim=d, holder_norm_bound=sup + semi, domain=box,
                          range_bound=sup, name="abs-power")


# ------------------------------------------------------ finite differences

def finite_difference_oracle(eval_fn: Evaluator, alpha: float, dim: int, holder_norm_bound: float,
                             step: float = 1e-5, domain=None, range_bound=None,
                             name: str = "fd") -> FunctionOracle:
    """Oracle whose partials come from nested central differences.

    The result carries ``fd_warning``; compiled certificates inherit it
    because finite-difference error is not covered by the certified bound.
    """
    r = order_from_alpha(alpha)

    def make(s):
        def f(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return _central(eval_fn, x, list(s), step)
        return f

    partials = {s: make(s) for s in multi_indices(dim, r) if sum(s) > 0}
    msg = f"partial derivatives approximated by central differences (step {step:g}); certified error excludes their error"
    warnings.warn(msg, stacklevel=2)
    return FunctionOracle(eval=eval_fn, alpha=alpha, dim=dim, holder_norm_bound=holder_norm_bound,
                          partials=partials, domain=domain, range_bound=range_bound, name=name,
                          fd_warning=msg)


def _central(fn, x, s, h):
    for i, si in enumerate(s):
        if si:
            s2 = list(s)
            s2[i] -= 1
            e = np.zeros(x.shape[1])
            e[i] = h
            return (_central(fn, x + e, s2, h) - _central(fn, x - e, s2, h)) / (2 * h)
    return np.asarray(fn(x), dtype=float)


# ------------------------------------------------------------- registry

def builtin_oracle(kind: str, dim: int, alpha: float, box=None, **params) -> FunctionOracle:
    """Build one of the named oracle families from keyword parameters."""
    kind = kind.replace("_", "-")
    if kind == "affine":
        return affine_oracle(params.get("weights", [1.0] * dim), params.get("bias", 0.0), alpha, box)
    if kind == "mean":
        return mean_oracle(dim, alpha, box)
    if kind == "product":
        return product_oracle(dim, params.get("scale", 1.0), alpha, box)
    if kind == "polynomial":
        return polynomial_oracle([(c, tuple(e)) for c, e in params["terms"]], dim, alpha, box)
    if kind == "scaled-sine":
        return scaled_sine_oracle(params.get("amplitude", 1.0), params.get("frequency", 1.0),
                                  params.get("weights", [1.0] * dim), params.get("phase", 0.0), alpha, box)
    if kind == "abs-power":
        return abs_power_oracle(alpha, params.get("weights", [1.0] * dim), params.get("bias", 0.0),
                                params.get("amplitude", 1.0), box)
    raise RejectedInput(f"unknown builtin oracle {kind!r}")


BUILTIN_KINDS = ("affine", "mean", "product", "polynomial", "scaled-sine", "abs-power")
