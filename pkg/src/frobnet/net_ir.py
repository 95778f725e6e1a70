"""Explicit ReLU networks, their norm accounting and file format.

A :class:`Network` computes ``A_D relu(... relu(A_0 x + b_0) ...)``: ``depth``
hidden layers with biases followed by a bias-free final matrix.  Matrices
are kept as canonical CSR (sorted indices, no duplicates, float64) because
the compiled approximants are extremely sparse.  Networks are treated as
immutable once built; operations never modify their operands.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import ParseError, RejectedInput

FORMAT_VERSION = 1
# budget in bytes for one chunk of activations during evaluation
_ACTIVATION_BYTES = 1 << 27


def as_csr(mat) -> sp.csr_matrix:
    """Canonical float64 CSR copy-free when already canonical."""
    if sp.issparse(mat):
        m = sp.csr_matrix(mat, dtype=np.float64)
    else:
        arr = np.asarray(mat, dtype=np.float64)
        if arr.ndim != 2:
            raise RejectedInput(f"matrix must be 2-D, got shape {arr.shape}")
        m = sp.csr_matrix(arr)
    if not m.has_canonical_format:
        m = m.copy()
        m.sum_duplicates()
        m.sort_indices()
    if m.nnz and not np.all(m.data):
        m = m.copy()
        m.eliminate_zeros()
    return m


@dataclass(frozen=True)
class AlgebraStep:
    """One certified step in the construction of a network's norm bound."""

    kind: str
    operand_kappas: tuple[float, ...]
    bound_applied: float
    depth_in: int
    depth_out: int
    coefficients: tuple[float, ...] | None = None
    operand_bounds: tuple[float, ...] = ()
    note: str = ""

    def as_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "operand_kappas": list(self.operand_kappas),
            "operand_bounds": list(self.operand_bounds),
            "bound_applied": self.bound_applied,
            "depth_in": self.depth_in,
            "depth_out": self.depth_out,
            "note": self.note,
        }
        if self.coefficients is not None:
            out["coefficients"] = list(self.coefficients)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AlgebraStep":
        coeffs = d.get("coefficients")
        return cls(
            kind=d["kind"],
            operand_kappas=tuple(float(v) for v in d["operand_kappas"]),
            bound_applied=float(d["bound_applied"]),
            depth_in=int(d["depth_in"]),
            depth_out=int(d["depth_out"]),
            coefficients=None if coeffs is None else tuple(float(c) for c in coeffs),
            operand_bounds=tuple(float(v) for v in d.get("operand_bounds", ())),
            note=d.get("note", ""),
        )


class Network:
    """ReLU network with hidden layers ``(W_l, b_l)`` and final matrix ``A_D``.

    ``bound`` is a certified upper bound on ``kappa`` carried along by the
    algebra; ``trail`` records how it was obtained.
    """

    __slots__ = ("weights", "biases", "bound", "trail", "_kappa", "_plan")

    def __init__(self, hidden: Sequence[tuple], final, *, bound: float | None = None,
                 trail: Iterable[AlgebraStep] = (), check: bool = True):
        ws = [as_csr(w) for w, _ in hidden] + [as_csr(final)]
        bs = [np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1)) for _, b in hidden]
        self.weights: tuple[sp.csr_matrix, ...] = tuple(ws)
        self.biases: tuple[np.ndarray, ...] = tuple(bs)
        self.trail: tuple[AlgebraStep, ...] = tuple(trail)
        self._kappa = None
        self._plan = None
        if check:
            self._validate()
        self.bound = float(bound) if bound is not None else self.kappa

    def _validate(self):
        prev = self.weights[0].shape[1]
        for i, w in enumerate(self.weights):
            if w.shape[1] != prev:
                raise RejectedInput(f"layer {i} expects {w.shape[1]} inputs, previous layer gives {prev}")
            if not np.all(np.isfinite(w.data)):
                raise RejectedInput(f"layer {i} has non-finite weights")
            if i < len(self.biases):
                b = self.biases[i]
                if b.shape[0] != w.shape[0]:
                    raise RejectedInput(f"layer {i} bias has length {b.shape[0]}, expected {w.shape[0]}")
                if not np.all(np.isfinite(b)):
                    raise RejectedInput(f"layer {i} has non-finite bias")
            prev = w.shape[0]

    # -- shape -----------------------------------------------------------
    @property
    def depth(self) -> int:
        return len(self.biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def final(self) -> sp.csr_matrix:
        return self.weights[-1]

    @property
    def hidden_layers(self) -> list[tuple[sp.csr_matrix, np.ndarray]]:
        return list(zip(self.weights[:-1], self.biases))

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    @property
    def width(self) -> int:
        return max(self.layer_dims)

    @property
    def nnz(self) -> int:
        return int(sum(w.nnz for w in self.weights) + sum(np.count_nonzero(b) for b in self.biases))

    # -- norms -----------------------------------------------------------
    def augmented_norms(self) -> list[float]:
        return [math.sqrt(_sumsq(w.data) + _sumsq(b) + 1.0) for w, b in zip(self.weights, self.biases)]

    def final_norm(self) -> float:
        return math.sqrt(_sumsq(self.final.data))

    @property
    def kappa(self) -> float:
        if self._kappa is None:
            k = self.final_norm()
            for s in self.augmented_norms():
                k *= s
            self._kappa = k
        return self._kappa

    def forward_plan(self) -> "_kernels.ForwardPlan":
        """Evaluation layout of the weights, built once on demand."""
        if self._plan is None:
            self._plan = _kernels.ForwardPlan(self.weights, self.biases)
        return self._plan

    def with_bound(self, bound: float, trail: Iterable[AlgebraStep]) -> "Network":
        out = object.__new__(Network)
        out.weights, out.biases = self.weights, self.biases
        out._kappa = self._kappa
        out._plan = self._plan
        out.bound = float(bound)
        out.trail = tuple(trail)
        return out

    def __repr__(self) -> str:
        return (f"Network(dims={self.layer_dims}, depth={self.depth}, nnz={self.nnz}, "
                f"kappa={self.kappa:.6g}, bound={self.bound:.6g})")

    # -- construction helpers -------------------------------------------
    @classmethod
    def from_dense(cls, hidden: Sequence[tuple], final, **kw) -> "Network":
        return cls([(np.atleast_2d(np.asarray(w, float)), np.atleast_1d(np.asarray(b, float)))
                    for w, b in hidden], np.atleast_2d(np.asarray(final, float)), **kw)

    @classmethod
    def zero(cls, input_dim: int, output_dim: int = 1) -> "Network":
        return cls([], sp.csr_matrix((output_dim, input_dim)))

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)


def _sumsq(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.dot(a, a))


def kappa(net: Network) -> float:
    """``||A_D||_F * prod_l sqrt(||A_l||_F^2 + ||b_l||^2 + 1)`` from raw weights."""
    k = math.sqrt(_sumsq(net.final.data))
    for w, b in zip(net.weights, net.biases):
        k *= math.sqrt(_sumsq(w.data) + _sumsq(b) + 1.0)
    return k


# ------------------------------------------------------------- evaluation

def evaluate(net: Network, x) -> np.ndarray:
    """Evaluate at one point (shape ``(d,)``) or a batch (shape ``(n, d)``).

    Returns shape ``(output_dim,)`` for a single point and
    ``(n, output_dim)`` for a batch.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != net.input_dim:
        raise RejectedInput(f"expected input of dimension {net.input_dim}, got shape {np.shape(x)}")
    n = arr.shape[0]
    widest = max(net.layer_dims)
    chunk = max(1, min(n, _ACTIVATION_BYTES // (16 * widest)))
    out = np.empty((n, net.output_dim))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        out[start:stop] = _kernels.forward(net.forward_plan(), arr[start:stop])
    return out[0] if single else out


def evaluate_scalar(net: Network, x) -> np.ndarray:
    """Batch evaluation of a scalar-output network, returned as shape ``(n,)``."""
    if net.output_dim != 1:
        raise RejectedInput("network is not scalar-valued")
    return evaluate(net, np.atleast_2d(x))[:, 0]


def hidden_activations(net: Network, x) -> list[np.ndarray]:
    """Post-activation outputs of every hidden layer, each of shape (n, width)."""
    h = np.atleast_2d(np.asarray(x, float))
    outs = []
    for w, b in zip(net.weights[:-1], net.biases):
        h = _kernels.affine(w, None, b, h, True)
        outs.append(h)
    return outs


# ---------------------------------------------------------- augmented form

@dataclass(frozen=True)
class AugmentedNetwork:
    """Bias-free network on the homogeneous input ``(x, 1)``.

    Hidden matrices have the block form ``[[A, b], [0, 1]]``; the final matrix
    is ``(A_D, 0)``.  The trailing unit passes through every ReLU unchanged.
    """

    augmented_matrices: tuple[sp.csr_matrix, ...]

    @property
    def depth(self) -> int:
        return len(self.augmented_matrices) - 1

    def frobenius_norms(self) -> list[float]:
        return [math.sqrt(_sumsq(m.data)) for m in self.augmented_matrices]

    def norm_product(self) -> float:
        return float(np.prod(self.frobenius_norms()))


def to_augmented(net: Network) -> AugmentedNetwork:
    mats = []
    for w, b in zip(net.weights[:-1], net.biases):
        top = sp.hstack([w, sp.csr_matrix(b.reshape(-1, 1))])
        unit = sp.csr_matrix(([1.0], ([0], [w.shape[1]])), shape=(1, w.shape[1] + 1))
        mats.append(as_csr(sp.vstack([top, unit])))
    f = net.final
    mats.append(as_csr(sp.hstack([f, sp.csr_matrix((f.shape[0], 1))])))
    return AugmentedNetwork(tuple(mats))


def evaluate_augmented(aug: AugmentedNetwork, x_tilde) -> np.ndarray:
    """Evaluate on homogeneous inputs ``(x, 1)`` of shape (n, d+1) or (d+1,)."""
    arr = np.asarray(x_tilde, dtype=np.float64)
    single = arr.ndim == 1
    h = np.atleast_2d(arr)
    mats = aug.augmented_matrices
    for m in mats[:-1]:
        h = _kernels.affine(m, None, np.zeros(m.shape[0]), h, True)
    m = mats[-1]
    out = _kernels.affine(m, None, np.zeros(m.shape[0]), h, False)
    return out[0] if single else out


# ------------------------------------------------------------- clipping

CLIP_KAPPA_UNIT = 2.0 * math.sqrt(7.0)


def clip_network(B: float = 1.0) -> Network:
    """Four-unit net computing ``relu(x) - relu(-x) - relu(x-B) + relu(-x-B)``."""
    if not B > 0:
        raise RejectedInput("clip level must be positive")
    return Network.from_dense([([[1.0], [-1.0], [1.0], [-1.0]], [0.0, 0.0, -B, -B])],
                              [[1.0, -1.0, -1.0, 1.0]])


def clip(net: Network, B: float = 1.0) -> Network:
    """Truncate a scalar network's output to ``[-B, B]`` (one extra layer)."""
    if net.output_dim != 1:
        raise RejectedInput("clip is defined for scalar-output networks; clip each output and concatenate")
    from .net_algebra import compose  # local import: net_algebra builds on this module

    return compose(clip_network(B), net)


# ------------------------------------------------------------ certificate

@dataclass(frozen=True)
class FrobeniusCertificate:
    """Exact kappa of a network together with its certified budget."""

    kappa: float
    budget: float
    per_layer_augmented_norms: tuple[float, ...]
    final_norm: float
    derivation: tuple[AlgebraStep, ...] = ()
    nominal_bound: float | None = None

    @property
    def satisfied(self) -> bool:
        return self.kappa <= self.budget * (1.0 + 1e-12)

    def recompute_gap(self, net: Network) -> float:
        """Relative difference between stored and recomputed kappa."""
        k = kappa(net)
        return abs(k - self.kappa) / max(abs(k), 1e-300)


def certify(net: Network, budget: float | None = None, nominal_bound: float | None = None) -> FrobeniusCertificate:
    return FrobeniusCertificate(
        kappa=kappa(net),
        budget=float(net.bound if budget is None else budget),
        per_layer_augmented_norms=tuple(net.augmented_norms()),
        final_norm=net.final_norm(),
        derivation=net.trail,
        nominal_bound=nominal_bound,
    )


# ---------------------------------------------------------- serialization

_DENSE_LIMIT = 4096  # store matrices with at most this many cells densely


def _fmt(v: float) -> str:
    v = float(v)
    if v == 0.0:
        return "0"
    return "%.17g" % v


class _Raw(str):
    pass


def _matrix_doc(m: sp.csr_matrix) -> dict:
    rows, cols = m.shape
    if rows * cols <= _DENSE_LIMIT:
        return {"rows": rows, "cols": cols, "weights": _Raw("[" + ",".join(_fmt(v) for v in m.toarray().ravel()) + "]")}
    return {
        "rows": rows,
        "cols": cols,
        "format": "csr",
        "indptr": _Raw("[" + ",".join(str(int(v)) for v in m.indptr) + "]"),
        "indices": _Raw("[" + ",".join(str(int(v)) for v in m.indices) + "]"),
        "data": _Raw("[" + ",".join(_fmt(v) for v in m.data) + "]"),
    }


def _dump(obj, indent=0) -> str:
    pad = "  " * indent
    if isinstance(obj, _Raw):
        return str(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(k)}: {_dump(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ",".join(_fmt(v) if isinstance(v, float) else str(v) for v in obj) + "]"
        items = [f"{pad}  {_dump(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return json.dumps(str(obj))
        return _fmt(obj)
    return json.dumps(obj)


def serialize(net: Network, certificate: FrobeniusCertificate | None = None, meta: dict | None = None) -> bytes:
    """Encode a network and its certificate as a JSON document."""
    cert = certificate if certificate is not None else certify(net)
    doc = {
        "version": FORMAT_VERSION,
        "input_dim": net.input_dim,
        "output_dim": net.output_dim,
        "layers": [dict(_matrix_doc(w), bias=_Raw("[" + ",".join(_fmt(v) for v in b) + "]"))
                   for w, b in zip(net.weights[:-1], net.biases)],
        "final": _matrix_doc(net.final),
        "certificate": {
            "kappa": float(cert.kappa),
            "budget": float(cert.budget),
            "per_layer_norms": [float(v) for v in cert.per_layer_augmented_norms],
            "final_norm": float(cert.final_norm),
            "nominal_bound": None if cert.nominal_bound is None else float(cert.nominal_bound),
            "derivation": [s.as_dict() for s in cert.derivation],
        },
    }
    if meta:
        doc["meta"] = meta
    return (_dump(doc) + "\n").encode("utf-8")


def _load_matrix(d: dict, where: str) -> sp.csr_matrix:
    rows, cols = int(d["rows"]), int(d["cols"])
    if d.get("format", "dense") == "csr":
        indptr = np.asarray(d["indptr"], dtype=np.int64)
        indices = np.asarray(d["indices"], dtype=np.int64)
        data = np.asarray(d["data"], dtype=np.float64)
        if indptr.shape != (rows + 1,) or indices.shape != data.shape or indptr[-1] != data.size:
            raise ParseError(f"{where}: inconsistent CSR arrays")
        if data.size and (indices.min() < 0 or indices.max() >= cols):
            raise ParseError(f"{where}: column index out of range")
        return sp.csr_matrix((data, indices, indptr), shape=(rows, cols))
    w = np.asarray(d["weights"], dtype=np.float64)
    if w.size != rows * cols:
        raise ParseError(f"{where}: expected {rows * cols} weights, found {w.size}")
    return sp.csr_matrix(w.reshape(rows, cols))


def deserialize(data: bytes | str) -> tuple[Network, FrobeniusCertificate, dict]:
    """Decode a network file; returns ``(network, certificate, meta)``."""
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(f"malformed network file: {exc.msg}", offset) from None
    try:
        if doc.get("version") != FORMAT_VERSION:
            raise ParseError(f"unsupported format version {doc.get('version')!r}")
        hidden = []
        for i, layer in enumerate(doc["layers"]):
            w = _load_matrix(layer, f"layer {i}")
            hidden.append((w, np.asarray(layer["bias"], dtype=np.float64)))
        final = _load_matrix(doc["final"], "final")
        c = doc["certificate"]
        net = Network(hidden, final)
        if net.input_dim != int(doc["input_dim"]) or net.output_dim != int(doc["output_dim"]):
            raise ParseError("declared dimensions do not match the matrices")
        cert = FrobeniusCertificate(
            kappa=float(c["kappa"]),
            budget=float(c["budget"]),
            per_layer_augmented_norms=tuple(float(v) for v in c["per_layer_norms"]),
            final_norm=float(c.get("final_norm", net.final_norm())),
            derivation=tuple(AlgebraStep.from_dict(s) for s in c.get("derivation", [])),
            nominal_bound=None if c.get("nominal_bound") is None else float(c["nominal_bound"]),
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError, RejectedInput) as exc:
        raise ParseError(f"invalid network document: {exc}") from None
    net = net.with_bound(cert.budget, cert.derivation)
    return net, cert, doc.get("meta", {})
