"""Norm-tracked closure operations on networks.

Every operation returns a new :class:`~frobnet.net_ir.Network` whose
``bound`` is the certified upper bound on its kappa, computed from the
operands' ``bound`` attributes with the formulas exposed below
(``combine_bound``, ``concat_bound``, ``compose_bound``).  The same formulas
are reused by the compilers to predict budgets before building anything.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import RejectedInput
from .net_ir import AlgebraStep, Network, as_csr

__all__ = [
    "AlgebraStep",
    "rescale",
    "unit_rescale",
    "linear_combine",
    "concatenate",
    "parallel",
    "compose",
    "compose_chain",
    "depth_pad",
    "identity_net",
    "precompose_affine",
    "fix_inputs",
    "combine_bound",
    "concat_bound",
    "compose_bound",
    "nary_compose_bound",
    "pad_bound",
    "affine_factor",
]

# nested derivations are kept only for small operand lists
_TRAIL_OPERANDS = 8


# ------------------------------------------------------------ bound formulas

def combine_bound(depth: int, coeffs: Sequence[float], bounds: Sequence[float]) -> float:
    """``(sqrt(N+1))**D * sqrt(sum (c_i K_i)**2)``; triangle bound for depth 0."""
    if depth == 0:
        return float(sum(abs(c) * k for c, k in zip(coeffs, bounds)))
    n = len(bounds)
    s = math.sqrt(math.fsum((c * k) ** 2 for c, k in zip(coeffs, bounds)))
    return math.sqrt(n + 1) ** depth * s


def concat_bound(depth: int, bounds: Sequence[float]) -> float:
    """``(sqrt(N+1))**D * sqrt(sum K_i**2)``."""
    n = len(bounds)
    return math.sqrt(n + 1) ** depth * math.sqrt(math.fsum(k * k for k in bounds))


def compose_bound(depth_inner: int, k_outer: float, k_inner: float) -> float:
    """``sqrt(2)**D_inner * K_outer * sqrt(K_inner**2 + 2)``."""
    return math.sqrt(2.0) ** depth_inner * k_outer * math.sqrt(k_inner * k_inner + 2.0)


def nary_compose_bound(depths: Sequence[int], bounds: Sequence[float]) -> float:
    """Closed form for ``f_N o ... o f_1``: ``sqrt2**(D_1+..+D_{N-1}) K_N prod_{i<N} sqrt(K_i**2+2)``.

    ``depths``/``bounds`` are listed innermost first.
    """
    out = bounds[-1] * math.sqrt(2.0) ** sum(depths[:-1])
    for k in bounds[:-1]:
        out *= math.sqrt(k * k + 2.0)
    return out


def identity_kappa(dim: int) -> float:
    return math.sqrt(2.0 * dim) * math.sqrt(2.0 * dim + 1.0)


def pad_bound(depth: int, dim: int, bound: float, layers: int) -> float:
    """Bound after ``layers`` identity-pair pads on a net of depth ``depth``."""
    b = bound
    kp = identity_kappa(dim)
    for i in range(layers):
        b = compose_bound(depth + i, kp, b)
    return b


def affine_factor(M, c=None) -> float:
    """Spectral norm of the augmented affine map ``[[M, c], [0, 1]]``."""
    M = np.atleast_2d(np.asarray(M.toarray() if sp.issparse(M) else M, dtype=float))
    c = np.zeros(M.shape[0]) if c is None else np.asarray(c, dtype=float).reshape(-1)
    aug = np.zeros((M.shape[0] + 1, M.shape[1] + 1))
    aug[:-1, :-1] = M
    aug[:-1, -1] = c
    aug[-1, -1] = 1.0
    return float(np.linalg.norm(aug, 2))


# ---------------------------------------------------------- block assembly

def _vstack(mats: Sequence[sp.csr_matrix]) -> sp.csr_matrix:
    cols = mats[0].shape[1]
    return _stack(mats, [0] * len(mats), cols)


def _block_diag(mats: Sequence[sp.csr_matrix]) -> sp.csr_matrix:
    offs = np.cumsum([0] + [m.shape[1] for m in mats])
    return _stack(mats, offs[:-1], int(offs[-1]))


def _stack(mats, col_offsets, ncols) -> sp.csr_matrix:
    nnz = np.cumsum([0] + [m.nnz for m in mats])
    indptr = [np.zeros(1, dtype=np.int64)]
    for m, off in zip(mats, nnz[:-1]):
        indptr.append(m.indptr[1:].astype(np.int64) + off)
    indices = [m.indices.astype(np.int64) + co for m, co in zip(mats, col_offsets)]
    data = [m.data for m in mats]
    rows = sum(m.shape[0] for m in mats)
    out = sp.csr_matrix((np.concatenate(data) if data else np.zeros(0),
                         np.concatenate(indices) if indices else np.zeros(0, np.int64),
                         np.concatenate(indptr)), shape=(rows, ncols))
    out.has_canonical_format = True
    return out


def _hstack(mats: Sequence[sp.csr_matrix]) -> sp.csr_matrix:
    return as_csr(_vstack([m.T.tocsr() for m in mats]).T)


def _scaled(m: sp.csr_matrix, divisor: float) -> sp.csr_matrix:
    out = sp.csr_matrix((m.data / divisor, m.indices, m.indptr), shape=m.shape)
    out.has_canonical_format = True
    return out


def _mult(m: sp.csr_matrix, factor: float) -> sp.csr_matrix:
    out = sp.csr_matrix((m.data * factor, m.indices, m.indptr), shape=m.shape)
    out.has_canonical_format = True
    return out


# ------------------------------------------------------------------ rescale

def _rescaled_parts(net: Network):
    """Hidden layers divided by ``s_l = sqrt(|A|^2+|b|^2+1)``, final times prod s_l.

    Biases are divided by the running product ``s_1 ... s_l`` because the
    activations entering layer ``l`` already carry the earlier factors.
    """
    norms = net.augmented_norms()
    ws, bs = [], []
    prod = 1.0
    for (w, b), s in zip(zip(net.weights[:-1], net.biases), norms):
        prod *= s
        ws.append(_scaled(w, s))
        bs.append(b / prod)
    final = _mult(net.final, prod) if net.depth else net.final
    return ws, bs, final


def rescale(net: Network) -> Network:
    """Function-preserving rescaling that moves all magnitude into the final matrix.

    Each hidden layer is divided by its augmented norm ``s_l`` and the final
    matrix is multiplied by their product, so ``||A_D||_F`` of the result
    equals ``kappa(net)``.  The +1 inside ``s_l`` keeps zero layers fixed.
    """
    ws, bs, final = _rescaled_parts(net)
    bound = math.sqrt(2.0) ** net.depth * net.bound
    step = AlgebraStep("rescale", (net.kappa,), bound, net.depth, net.depth,
                       operand_bounds=(net.bound,),
                       note="hidden augmented norms < sqrt(2); final norm = operand kappa")
    return Network(list(zip(ws, bs)), final, bound=bound, trail=net.trail + (step,), check=False)


def unit_rescale(net: Network) -> Network:
    """Divide hidden layers by ``sqrt(|A|^2+|b|^2)`` (no +1), preserving the function."""
    ws, bs = [], []
    prod = 1.0
    for w, b in zip(net.weights[:-1], net.biases):
        b = b / prod  # account for the scaling already applied upstream
        s = math.sqrt(float(np.dot(w.data, w.data)) + float(np.dot(b, b)))
        if s > 0.0:
            ws.append(_scaled(w, s))
            bs.append(b / s)
            prod *= s
        else:
            ws.append(w)
            bs.append(b)
    final = _mult(net.final, prod)
    return Network(list(zip(ws, bs)), final, check=False)


# ------------------------------------------------------- combine / concat

def _check_family(nets: Sequence[Network], shared_input: bool = True):
    if not nets:
        raise RejectedInput("need at least one operand")
    depths = {n.depth for n in nets}
    if len(depths) != 1:
        raise RejectedInput(f"operand depths differ {sorted(depths)}; depth_pad them first")
    if shared_input and len({n.input_dim for n in nets}) != 1:
        raise RejectedInput("operands must share the input dimension")


def _sub_trail(nets):
    if len(nets) <= _TRAIL_OPERANDS:
        out = ()
        for n in nets:
            out += n.trail
        return out
    return ()


def linear_combine(nets: Sequence[Network], coeffs: Sequence[float]) -> Network:
    """Network computing ``sum_i c_i net_i`` with block-diagonal hidden layers.

    Operands with a zero coefficient are dropped from the construction but
    still counted in the bound.
    """
    nets = list(nets)
    coeffs = [float(c) for c in coeffs]
    if len(coeffs) != len(nets):
        raise RejectedInput("one coefficient per operand required")
    _check_family(nets)
    if len({n.output_dim for n in nets}) != 1:
        raise RejectedInput("operands must share the output dimension")
    D = nets[0].depth
    d_in, d_out = nets[0].input_dim, nets[0].output_dim
    bounds = [n.bound for n in nets]
    bound = combine_bound(D, coeffs, bounds)
    step = AlgebraStep("linear_combine", tuple(n.kappa for n in nets), bound, D, D,
                       coefficients=tuple(coeffs), operand_bounds=tuple(bounds),
                       note="triangle inequality at depth 0" if D == 0 else "")
    trail = _sub_trail(nets) + (step,)
    keep = [i for i, c in enumerate(coeffs) if c != 0.0]
    if D == 0:
        final = sp.csr_matrix((d_out, d_in))
        for i in keep:
            final = final + coeffs[i] * nets[i].final
        return Network([], final, bound=bound, trail=trail, check=False)
    if not keep:
        hidden = [(sp.csr_matrix((0, d_in if l == 0 else 0)), np.zeros(0)) for l in range(D)]
        return Network(hidden, sp.csr_matrix((d_out, 0)), bound=bound, trail=trail, check=False)
    parts = [_rescaled_parts(nets[i]) for i in keep]
    hidden = []
    for l in range(D):
        mats = [p[0][l] for p in parts]
        w = _vstack(mats) if l == 0 else _block_diag(mats)
        hidden.append((w, np.concatenate([p[1][l] for p in parts])))
    final = _hstack([_mult(p[2], coeffs[i]) for p, i in zip(parts, keep)])
    return Network(hidden, final, bound=bound, trail=trail, check=False)


def _stacked(nets: Sequence[Network], shared_input: bool, kind: str) -> Network:
    nets = list(nets)
    _check_family(nets, shared_input)
    D = nets[0].depth
    bounds = [n.bound for n in nets]
    bound = concat_bound(D, bounds)
    step = AlgebraStep(kind, tuple(n.kappa for n in nets), bound, D, D, operand_bounds=tuple(bounds))
    trail = _sub_trail(nets) + (step,)
    if len(nets) == 1:
        return nets[0]
    parts = [_rescaled_parts(n) for n in nets]
    hidden = []
    for l in range(D):
        mats = [p[0][l] for p in parts]
        w = _vstack(mats) if (l == 0 and shared_input) else _block_diag(mats)
        hidden.append((w, np.concatenate([p[1][l] for p in parts])))
    finals = [p[2] for p in parts]
    if D == 0 and shared_input:
        final = _vstack(finals)
    else:
        final = _block_diag(finals)
    return Network(hidden, final, bound=bound, trail=trail, check=False)


def concatenate(nets: Sequence[Network]) -> Network:
    """Vector-valued network ``x -> (net_1(x), ..., net_N(x))`` on a shared input."""
    return _stacked(nets, True, "concatenate")


def parallel(nets: Sequence[Network]) -> Network:
    """Network ``(x_1, ..., x_N) -> (net_1(x_1), ..., net_N(x_N))`` on split inputs.

    Same block structure and bound as :func:`concatenate`, except that the
    first layer is block diagonal too.
    """
    return _stacked(nets, False, "parallel")


# ----------------------------------------------------------------- compose

def compose(outer: Network, inner: Network) -> Network:
    """Network computing ``outer(inner(x))`` of depth ``D_inner + D_outer``.

    The inner network is rescaled first; its final matrix is merged with
    the outer first layer into a single interface layer.
    """
    if inner.output_dim != outer.input_dim:
        raise RejectedInput(f"inner output dim {inner.output_dim} != outer input dim {outer.input_dim}")
    bound = compose_bound(inner.depth, outer.bound, inner.bound)
    step = AlgebraStep("compose", (outer.kappa, inner.kappa), bound, inner.depth,
                       inner.depth + outer.depth, operand_bounds=(outer.bound, inner.bound))
    trail = inner.trail + outer.trail + (step,)
    ws, bs, a_inner = _rescaled_parts(inner)
    hidden = list(zip(ws, bs))
    if outer.depth == 0:
        final = as_csr(outer.final @ a_inner)
        return Network(hidden, final, bound=bound, trail=trail, check=False)
    hidden.append((as_csr(outer.weights[0] @ a_inner), outer.biases[0]))
    hidden.extend(zip(outer.weights[1:-1], outer.biases[1:]))
    return Network(hidden, outer.final, bound=bound, trail=trail, check=False)


def compose_chain(nets: Sequence[Network]) -> Network:
    """Compose ``nets[-1] o ... o nets[0]`` (innermost first)."""
    out = nets[0]
    for n in nets[1:]:
        out = compose(n, out)
    return out


def identity_net(dim: int) -> Network:
    """Depth-1 net ``x -> relu(x) - relu(-x)``."""
    eye = sp.identity(dim, format="csr")
    return Network([(sp.vstack([eye, -eye]).tocsr(), np.zeros(2 * dim))], sp.hstack([eye, -eye]).tocsr())


def depth_pad(net: Network, target_depth: int) -> Network:
    """Append identity-pair layers until the depth reaches ``target_depth``."""
    if target_depth < net.depth:
        raise RejectedInput(f"target depth {target_depth} below current depth {net.depth}")
    out = net
    if target_depth == net.depth:
        return out
    ident = identity_net(net.output_dim)
    for _ in range(target_depth - net.depth):
        out = compose(ident, out)
    return out


# ----------------------------------------------------------- affine inputs

def precompose_affine(net: Network, M, c=None) -> Network:
    """Network computing ``net(M x + c)``, folded into the first layer.

    The kappa bound grows by the spectral norm of ``[[M, c], [0, 1]]``.
    """
    M = as_csr(M)
    if M.shape[0] != net.input_dim:
        raise RejectedInput(f"affine map has {M.shape[0]} outputs, network expects {net.input_dim}")
    c = np.zeros(M.shape[0]) if c is None else np.asarray(c, dtype=float).reshape(-1)
    factor = affine_factor(M, c)
    bound = net.bound * factor
    step = AlgebraStep("precompose_affine", (net.kappa,), bound, net.depth, net.depth,
                       operand_bounds=(net.bound,), note=f"spectral factor {factor!r}")
    trail = net.trail + (step,)
    if net.depth == 0:
        if np.any(c):
            raise RejectedInput("a depth-0 network cannot absorb an input offset")
        return Network([], as_csr(net.final @ M), bound=bound, trail=trail, check=False)
    w0 = net.weights[0]
    b0 = net.biases[0] + (w0 @ c if np.any(c) else 0.0)
    hidden = [(as_csr(w0 @ M), b0)] + list(zip(net.weights[1:-1], net.biases[1:]))
    return Network(hidden, net.final, bound=bound, trail=trail, check=False)


def fix_inputs(net: Network, values: dict[int, float]) -> Network:
    """Freeze some input coordinates to constants; the rest keep their order."""
    free = [i for i in range(net.input_dim) if i not in values]
    M = sp.csr_matrix((np.ones(len(free)), (free, np.arange(len(free)))), shape=(net.input_dim, len(free)))
    c = np.zeros(net.input_dim)
    for i, v in values.items():
        c[i] = v
    return precompose_affine(net, M, c)
