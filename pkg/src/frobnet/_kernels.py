"""Hot loops with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and the environment
variable ``FROBNET_DISABLE_NUMBA`` is unset or ``0``.  The forward and
partition-of-unity kernels perform the same floating point operations in
the same order on both paths, so their results are bitwise identical.
The training epoch shares its arithmetic but not its BLAS calls, so the
two paths agree only to rounding.

Every sparse row is accumulated sequentially starting from ``0.0`` with
the bias added after the sum.  Several constructions rely on this order
to produce exact zeros.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

_DISABLED = os.environ.get("FROBNET_DISABLE_NUMBA", "0") not in ("", "0")

try:  # pragma: no cover - exercised indirectly
    if _DISABLED:
        raise ImportError
    import numba as _nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _nb = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def _maybe_jit(fn):
    if HAVE_NUMBA:
        return _nb.njit(cache=True, nogil=True)(fn)
    return fn


# ---------------------------------------------------------------- forward

def _csr_affine_py(indptr, indices, data, bias, h, relu):
    """Feature-major affine layer: ``h`` has shape (cols, n), result (rows, n)."""
    rows = indptr.shape[0] - 1
    a = sp.csr_matrix((data, indices, indptr), shape=(rows, h.shape[0]))
    out = a @ h
    out += bias[:, None]
    if relu:
        np.maximum(out, 0.0, out=out)
        out += 0.0  # turn -0.0 into +0.0 like the compiled path
    return np.ascontiguousarray(out)


def _csc_affine_nb(colptr, rowidx, data, bias, h, relu):
    # Sample-major, column-ordered accumulation.  Every output row still sums
    # its terms in increasing column order, i.e. the CSR order, so the result
    # matches the CSR path bit for bit.  Zero inputs contribute +-0.0 to an
    # accumulator that is never -0.0, so skipping them changes nothing.
    n, cols = h.shape
    m = bias.shape[0]
    out = np.empty((n, m))
    acc = np.empty(m)
    for s in range(n):
        acc[:] = 0.0
        for c in range(cols):
            v = h[s, c]
            if v == 0.0:
                continue
            for p in range(colptr[c], colptr[c + 1]):
                acc[rowidx[p]] += data[p] * v
        for i in range(m):
            t = acc[i] + bias[i]
            if relu:
                out[s, i] = t if t > 0.0 else 0.0
            else:
                out[s, i] = t
    return out


csr_affine_numpy = _csr_affine_py
csc_affine_numba = _maybe_jit(_csc_affine_nb) if HAVE_NUMBA else None


def _sparse_forward_nb(x, colptrs, rowidxs, datas, biases, widest, block):
    # Whole-network pass over blocks of ``block`` samples, carrying only the
    # columns that are nonzero for some sample of the block (sorted by index)
    # from layer to layer.  Each output row still sums its terms in
    # increasing column order, exactly like the CSR kernel; a zero input
    # adds +-0.0 to an accumulator that is never -0.0 and so changes nothing.
    n = x.shape[0]
    depth = len(colptrs) - 1
    m = biases[depth].shape[0]
    out = np.empty((n, m))
    B = block
    idx_a = np.empty(widest, np.int64)
    val_a = np.empty(widest * B)
    idx_b = np.empty(widest, np.int64)
    val_b = np.empty(widest * B)
    acc = np.empty(widest * B)
    t = np.empty(B)
    mark = np.zeros(widest, np.uint8)
    for s0 in range(0, n, B):
        nbk = min(B, n - s0)
        na = x.shape[1]
        for j in range(na):
            idx_a[j] = j
            for s in range(B):
                val_a[j * B + s] = x[s0 + s, j] if s < nbk else 0.0
        for layer in range(depth + 1):
            cp = colptrs[layer]
            ri = rowidxs[layer]
            da = datas[layer]
            b = biases[layer]
            for q in range(na):
                c = idx_a[q]
                for p in range(cp[c], cp[c + 1]):
                    r = ri[p]
                    w = da[p]
                    if mark[r] == 0:
                        mark[r] = 1
                        for s in range(B):
                            acc[r * B + s] = 0.0
                    for s in range(B):
                        acc[r * B + s] += w * val_a[q * B + s]
            rows = b.shape[0]
            if layer == depth:
                for i in range(rows):
                    for s in range(nbk):
                        if mark[i] == 1:
                            out[s0 + s, i] = acc[i * B + s] + b[i]
                        else:
                            out[s0 + s, i] = b[i]
                    mark[i] = 0
                break
            nb = 0
            for i in range(rows):
                if mark[i] == 0 and not b[i] > 0.0:
                    continue
                live = False
                for s in range(B):
                    v = acc[i * B + s] + b[i] if mark[i] == 1 else b[i]
                    v = v if v > 0.0 else 0.0
                    t[s] = v
                    if v != 0.0:
                        live = True
                mark[i] = 0
                if live:
                    idx_b[nb] = i
                    for s in range(B):
                        val_b[nb * B + s] = t[s]
                    nb += 1
            idx_a, idx_b = idx_b, idx_a
            val_a, val_b = val_b, val_a
            na = nb
    return out


sparse_forward_numba = _maybe_jit(_sparse_forward_nb) if HAVE_NUMBA else None


_BLOCK = 16
_SCRATCH_BYTES = 1 << 29


class ForwardPlan:
    """Layer data laid out for :func:`forward`; build once per network."""

    def __init__(self, weights, biases):
        self.weights = tuple(weights)
        self.biases = tuple(biases) + (np.zeros(self.weights[-1].shape[0]),)
        self.widest = max([w.shape[0] for w in self.weights] + [self.weights[0].shape[1], 1])
        self._lists = None

    def _typed(self):
        if self._lists is None:
            from numba.typed import List

            cp, ri, da, bs = List(), List(), List(), List()
            for w, b in zip(self.weights, self.biases):
                c = w.tocsc()
                c.sort_indices()
                cp.append(c.indptr.astype(np.int64))
                ri.append(c.indices.astype(np.int32))
                da.append(np.ascontiguousarray(c.data, dtype=np.float64))
                bs.append(np.ascontiguousarray(b, dtype=np.float64))
            self._lists = (cp, ri, da, bs)
        return self._lists


def forward(plan: ForwardPlan, x, backend=None):
    """Network output for the sample-major batch ``x`` of shape (n, d)."""
    use = backend or BACKEND
    x = np.ascontiguousarray(x, dtype=np.float64)
    if use == "numba":
        cp, ri, da, bs = plan._typed()
        block = int(max(1, min(_BLOCK, _SCRATCH_BYTES // (24 * plan.widest), x.shape[0])))
        return sparse_forward_numba(x, cp, ri, da, bs, plan.widest, block)
    h = np.ascontiguousarray(x.T)
    last = len(plan.weights) - 1
    for i, (w, b) in enumerate(zip(plan.weights, plan.biases)):
        h = _csr_affine_py(w.indptr, w.indices, w.data, b, h, i < last)
    return np.ascontiguousarray(h.T)


def affine(csr, csc, bias, h, relu, backend=None):
    """``relu?(W h_s + b)`` for every row ``h_s`` of the sample-major batch ``h``.

    ``csc`` is the same matrix in CSC form; only the compiled path reads it.
    """
    use = backend or BACKEND
    if use == "numba":
        if csc is None:
            csc = csr.tocsc()
        return csc_affine_numba(csc.indptr, csc.indices, csc.data, bias,
                                np.ascontiguousarray(h), relu)
    out = _csr_affine_py(csr.indptr, csr.indices, csr.data, bias,
                         np.ascontiguousarray(h.T), relu)
    return np.ascontiguousarray(out.T)


# ------------------------------------------------------- partition of unity

def _pou_scan_py(x, N):
    """Residual of the summed tensor hats and max number of active hats."""
    n_pts, d = x.shape
    grid = np.arange(N + 1, dtype=np.float64)
    # one-dimensional hat values, shape (n_pts, d, N+1)
    t = N * x[:, :, None] - grid[None, None, :]
    hats = np.maximum(1.0 - np.maximum(t, 0.0) - np.maximum(-t, 0.0), 0.0)
    total = np.zeros(n_pts)
    active = np.zeros(n_pts, dtype=np.int64)
    for flat in range((N + 1) ** d):
        prod = np.ones(n_pts)
        rem = flat
        for i in range(d - 1, -1, -1):
            prod = prod * hats[:, i, rem % (N + 1)]
            rem //= N + 1
        total += prod
        active += prod > 0.0
    return float(np.max(np.abs(total - 1.0))), int(active.max())


def _pou_scan_nb(x, N):
    n_pts, d = x.shape
    worst = 0.0
    most = 0
    m = N + 1
    count = 1
    for _ in range(d):
        count *= m
    hats = np.empty((d, m))
    for p in range(n_pts):
        for i in range(d):
            for j in range(m):
                t = N * x[p, i] - j
                v = 1.0 - max(t, 0.0) - max(-t, 0.0)
                hats[i, j] = v if v > 0.0 else 0.0
        total = 0.0
        active = 0
        for flat in range(count):
            prod = 1.0
            rem = flat
            for i in range(d - 1, -1, -1):
                prod = prod * hats[i, rem % m]
                rem //= m
            total += prod
            if prod > 0.0:
                active += 1
        r = abs(total - 1.0)
        if r > worst:
            worst = r
        if active > most:
            most = active
    return worst, most


pou_scan_numpy = _pou_scan_py
pou_scan_numba = _maybe_jit(_pou_scan_nb) if HAVE_NUMBA else None


def pou_scan(x, N):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if HAVE_NUMBA:
        r, a = pou_scan_numba(x, int(N))
        return float(r), int(a)
    return pou_scan_numpy(x, int(N))


# ------------------------------------------------------------ dense MLP SGD

def _project_py(weights, biases, K):
    """Unit-normalize hidden layers, then shrink the final matrix to kappa <= K.

    Dividing layer l by s_l and its bias by the running product of the
    earlier factors keeps the function up to the overall factor prod(s),
    which is moved into the final matrix before it is shrunk.
    """
    depth = len(biases)
    prod = 1.0
    cap = 1.0
    for layer in range(depth):
        w = weights[layer]
        b = biases[layer]
        b /= prod
        s = np.sqrt(np.sum(w * w) + np.sum(b * b))
        if s > 0.0:
            w /= s
            b /= s
            prod *= s
        cap *= np.sqrt(np.sum(w * w) + np.sum(b * b) + 1.0)
    wf = weights[depth]
    wf *= prod
    kap = np.sqrt(np.sum(wf * wf)) * cap
    if kap > K:
        if K <= 0.0:
            wf[:] = 0.0
        else:
            wf *= K / kap


def _sgd_epoch_py(weights, biases, x, y, order, batch, lr, K, mode):
    """One epoch of projected mini-batch SGD on a dense ReLU net.

    ``x`` has shape (n, d); ``y`` shape (n,).  ``mode`` 0 minimizes the mean
    squared loss of the clipped output; mode 1 maximizes the mean of
    ``y * f(x)`` (signed correlation, no clipping).  Returns the mean
    objective over the epoch's batches.
    """
    depth = len(biases)
    n = x.shape[0]
    total = 0.0
    nb = 0
    start = 0
    while start < n:
        stop = min(start + batch, n)
        idx = order[start:stop]
        m = stop - start
        acts = [np.ascontiguousarray(x[idx].T)]
        for layer in range(depth):
            pre = weights[layer] @ acts[layer] + biases[layer].reshape(-1, 1)
            acts.append(np.maximum(pre, 0.0))
        z = (weights[depth] @ acts[depth])[0]
        yb = y[idx]
        g = np.empty(m)
        if mode == 0:
            for i in range(m):
                zi = z[i]
                c = min(max(zi, -1.0), 1.0)
                diff = c - yb[i]
                total += diff * diff / m
                inside = 1.0 if -1.0 < zi < 1.0 else 0.0
                g[i] = 2.0 * diff * inside / m
        else:
            for i in range(m):
                total -= yb[i] * z[i] / m
                g[i] = -yb[i] / m
        delta = g.reshape(1, -1)
        grads_w = [np.zeros_like(w) for w in weights]
        grads_b = [np.zeros_like(b) for b in biases]
        grads_w[depth] = delta @ acts[depth].T
        back = weights[depth].T @ delta
        for layer in range(depth - 1, -1, -1):
            back = back * (acts[layer + 1] > 0.0)
            grads_w[layer] = back @ acts[layer].T
            grads_b[layer] = back.sum(axis=1)
            if layer > 0:
                back = weights[layer].T @ back
        for layer in range(depth + 1):
            weights[layer] -= lr * grads_w[layer]
        for layer in range(depth):
            biases[layer] -= lr * grads_b[layer]
        _project_py(weights, biases, K)
        nb += 1
        start = stop
    return total / nb


sgd_epoch_numpy = _sgd_epoch_py
project_numpy = _project_py

if HAVE_NUMBA:
    from numba.typed import List as _TypedList

    project_numba = _nb.njit(cache=True)(_project_py)

    def _sgd_epoch_nb_src(weights, biases, x, y, order, batch, lr, K, mode):
        depth = len(biases)
        n = x.shape[0]
        total = 0.0
        nb = 0
        start = 0
        while start < n:
            stop = min(start + batch, n)
            m = stop - start
            xb = np.empty((x.shape[1], m))
            for i in range(m):
                for j in range(x.shape[1]):
                    xb[j, i] = x[order[start + i], j]
            acts = [xb]
            for layer in range(depth):
                pre = weights[layer] @ acts[layer]
                for r in range(pre.shape[0]):
                    for c in range(m):
                        v = pre[r, c] + biases[layer][r]
                        pre[r, c] = v if v > 0.0 else 0.0
                acts.append(pre)
            z = (weights[depth] @ acts[depth])[0]
            g = np.empty(m)
            if mode == 0:
                for i in range(m):
                    zi = z[i]
                    c = min(max(zi, -1.0), 1.0)
                    diff = c - y[order[start + i]]
                    total += diff * diff / m
                    inside = 1.0 if -1.0 < zi < 1.0 else 0.0
                    g[i] = 2.0 * diff * inside / m
            else:
                for i in range(m):
                    yi = y[order[start + i]]
                    total -= yi * z[i] / m
                    g[i] = -yi / m
            delta = g.reshape(1, -1)
            gw_last = delta @ acts[depth].T
            back = weights[depth].T @ delta
            gws = [gw_last]
            gbs = [np.zeros(1)]
            for layer in range(depth - 1, -1, -1):
                a = acts[layer + 1]
                for r in range(back.shape[0]):
                    for c in range(m):
                        if not a[r, c] > 0.0:
                            back[r, c] = 0.0
                gws.append(back @ acts[layer].T)
                gbs.append(back.sum(axis=1))
                if layer > 0:
                    back = weights[layer].T @ back
            weights[depth] -= lr * gws[0]
            for q in range(1, depth + 1):
                layer = depth - q
                weights[layer] -= lr * gws[q]
                biases[layer] -= lr * gbs[q]
            _proj(weights, biases, K)
            nb += 1
            start = stop
        return total / nb

    _proj = project_numba
    sgd_epoch_numba = _nb.njit(cache=True)(_sgd_epoch_nb_src)
else:  # pragma: no cover
    project_numba = None
    sgd_epoch_numba = None


def sgd_epoch(weights, biases, x, y, order, batch, lr, K, mode, backend=None):
    """Dispatch one training epoch; weights/biases are updated in place."""
    use = backend or BACKEND
    if use == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend unavailable")
        tw = _TypedList(weights)
        tb = _TypedList(biases)
        return float(sgd_epoch_numba(tw, tb, x, y, order, batch, lr, float(K), mode))
    return float(sgd_epoch_numpy(weights, biases, x, y, order, batch, lr, float(K), mode))


def project(weights, biases, K, backend=None):
    use = backend or BACKEND
    if use == "numba":
        project_numba(_TypedList(weights), _TypedList(biases), float(K))
    else:
        project_numpy(weights, biases, float(K))
