"""Hot kernels: confluent divided differences, Kubo tuple enumeration,
and Monte-Carlo trace-product chains.

The enumeration and the MC chain dominate runtime (d^n tuples, 1e6-1e7
samples); both exist as numba @njit loops and as vectorised numpy fallbacks,
selected per call through qimlab.backend.  The divided-difference table is
built once per call in plain Python (its size is the number of index
multisets, C(d+n-1, n), which is tiny next to d^n) and looked up by
combinatorial rank inside the kernels.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import expm

from .backend import HAS_NUMBA, use_numba
from .errors import InputError

CONFLUENCE_RTOL = 1e-6
PRUNE_RTOL = 1e-16


# -- divided differences -------------------------------------------------------


def divdiff_exp(nodes) -> float:
    """Confluent divided difference exp[x_1, ..., x_n].

    Symmetric in its arguments (nodes are sorted first, so permutation
    invariance is exact) and continuous at coincident nodes.  Well-separated
    nodes go through the standard recursive table; once any adjacent gap
    falls below CONFLUENCE_RTOL * (1 + max|x|) the whole tuple is routed
    through the matrix-of-exp form on a bidiagonal block, which has no
    cancellation at confluence.
    """
    x = np.sort(np.asarray(nodes, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise InputError("divided difference needs at least one node")
    if not np.all(np.isfinite(x)):
        raise InputError("divided-difference nodes must be finite")
    if n == 1:
        return float(np.exp(x[0]))
    tau = CONFLUENCE_RTOL * (1.0 + float(np.abs(x).max()))
    if float(np.min(np.diff(x))) < tau:
        return _matrix_exp_corner(x)
    f = np.exp(x)
    for k in range(1, n):
        f = (f[1:] - f[:-1]) / (x[k:] - x[:-k])
    return float(f[0])


def _matrix_exp_corner(x: np.ndarray) -> float:
    # exp[x_1..x_n] is the (1, n) entry of expm of the bidiagonal matrix with
    # the nodes on the diagonal and ones above it; shift by the mean first so
    # the exponential is well scaled.
    n = x.size
    mu = float(x.mean())
    block = np.diag(x - mu) + np.diag(np.ones(n - 1), 1)
    return float(np.exp(mu) * expm(block)[0, n - 1])


# -- multiset ranking ----------------------------------------------------------


def binomial_table(rows: int, cols: int) -> np.ndarray:
    t = np.zeros((rows, cols), dtype=np.int64)
    t[:, 0] = 1
    for i in range(1, rows):
        for k in range(1, cols):
            t[i, k] = t[i - 1, k - 1] + t[i - 1, k]
    return t


def multiset_count(d: int, n: int) -> int:
    from math import comb

    return comb(d + n - 1, n)


def _rank(combo, binom: np.ndarray) -> int:
    # colex rank of the sorted multiset c_0 <= ... <= c_{n-1}:
    # map to the strictly increasing combination b_k = c_k + k, then
    # rank = sum C(b_k, k+1)
    r = 0
    for k, c in enumerate(combo):
        r += int(binom[c + k, k + 1])
    return r


def divdiff_table(logp: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Divided differences of exp over every sorted index multiset of logp.

    Returns (table, binom) where table[rank(multiset)] holds the value and
    binom is the table the kernels use to rank tuples on the fly.
    """
    d = logp.size
    binom = binomial_table(d + n + 1, n + 2)
    table = np.empty(multiset_count(d, n), dtype=np.float64)
    for combo in itertools.combinations_with_replacement(range(d), n):
        table[_rank(combo, binom)] = divdiff_exp(logp[list(combo)])
    return table, binom


# -- Kubo tuple enumeration ----------------------------------------------------


def _kubo_enum_py(v, dd, binom, prune_rel):
    n, d, _ = v.shape
    vmax = np.empty(n)
    for k in range(n):
        m = 0.0
        for i in range(d):
            for j in range(d):
                a = abs(v[k, i, j])
                if a > m:
                    m = a
        vmax[k] = m
    suffix = np.empty(n + 1)
    suffix[n] = 1.0
    for k in range(n - 1, -1, -1):
        suffix[k] = suffix[k + 1] * vmax[k]
    ddmax = 0.0
    for r in range(dd.size):
        a = abs(dd[r])
        if a > ddmax:
            ddmax = a

    idx = np.zeros(n, np.int64)
    srt = np.zeros(n, np.int64)
    pref = np.ones(n, np.complex128)
    total = 0.0 + 0.0j
    scale = 0.0
    level = 0
    idx[0] = -1
    while level >= 0:
        idx[level] += 1
        if idx[level] >= d:
            level -= 1
            continue
        if level == 0:
            pref[0] = 1.0 + 0.0j
        else:
            pref[level] = pref[level - 1] * v[level - 1, idx[level - 1], idx[level]]
        # largest magnitude any completion of this prefix can reach
        if abs(pref[level]) * suffix[level] * ddmax < prune_rel * scale:
            continue
        if level == n - 1:
            w = pref[level] * v[n - 1, idx[n - 1], idx[0]]
            if w != 0:
                for t in range(n):
                    srt[t] = idx[t]
                for a_i in range(1, n):
                    key = srt[a_i]
                    b_i = a_i - 1
                    while b_i >= 0 and srt[b_i] > key:
                        srt[b_i + 1] = srt[b_i]
                        b_i -= 1
                    srt[b_i + 1] = key
                r = 0
                for t in range(n):
                    r += binom[srt[t] + t, t + 1]
                total += w * dd[r]
                a = abs(total)
                if a > scale:
                    scale = a
        else:
            level += 1
            idx[level] = -1
    return total


def _kubo_enum_numpy(v, dd, binom):
    n, d, _ = v.shape
    weights = _weight_tensor(dd, binom, d, n)
    letters = "abcdefghijkl"[:n]
    subs = [letters[k] + letters[(k + 1) % n] for k in range(n)]
    spec = ",".join(subs) + "," + letters + "->"
    return complex(np.einsum(spec, *[v[k] for k in range(n)], weights, optimize=True))


def _weight_tensor(dd, binom, d, n, chunk=1 << 16):
    total = d**n
    flat = np.empty(total, dtype=np.float64)
    powers = d ** np.arange(n - 1, -1, -1, dtype=np.int64)
    ks = np.arange(n, dtype=np.int64)
    for start in range(0, total, chunk):
        stop = min(total, start + chunk)
        lin = np.arange(start, stop, dtype=np.int64)
        digits = (lin[:, None] // powers[None, :]) % d
        digits.sort(axis=1)
        ranks = binom[digits + ks[None, :], ks[None, :] + 1].sum(axis=1)
        flat[start:stop] = dd[ranks]
    return flat.reshape((d,) * n)


# -- Monte-Carlo trace chains ----------------------------------------------------


def _mc_chain_py(p, alphas, v, out):
    s_count, n = alphas.shape
    d = p.size
    t = np.empty((d, d), np.complex128)
    t2 = np.empty((d, d), np.complex128)
    b = np.empty((d, d), np.complex128)
    for s in range(s_count):
        for i in range(d):
            w = p[i] ** alphas[s, 0]
            for j in range(d):
                t[i, j] = w * v[0, i, j]
        for k in range(1, n - 1):
            for i in range(d):
                w = p[i] ** alphas[s, k]
                for j in range(d):
                    b[i, j] = w * v[k, i, j]
            for i in range(d):
                for j in range(d):
                    acc = 0.0 + 0.0j
                    for q in range(d):
                        acc += t[i, q] * b[q, j]
                    t2[i, j] = acc
            t, t2 = t2, t
        acc = 0.0 + 0.0j
        for i in range(d):
            for j in range(d):
                acc += t[i, j] * (p[j] ** alphas[s, n - 1]) * v[n - 1, j, i]
        out[s] = acc
    return out


def _mc_chain_numpy(p, alphas, v, out):
    s_count, n = alphas.shape
    pw = p[None, :] ** alphas[:, 0][:, None]            # (S, d)
    t = pw[:, :, None] * v[0][None, :, :]               # diag(p^a0) @ V0, batched
    for k in range(1, n - 1):
        pw = p[None, :] ** alphas[:, k][:, None]
        t = t @ (pw[:, :, None] * v[k][None, :, :])
    pw = p[None, :] ** alphas[:, n - 1][:, None]
    last = pw[:, :, None] * v[n - 1][None, :, :]
    out[:] = np.einsum("sij,sji->s", t, last)
    return out


# -- numba wrappers ---------------------------------------------------------------

if HAS_NUMBA:
    from numba import njit

    _kubo_enum_numba = njit(cache=True, nogil=True)(_kubo_enum_py)
    _mc_chain_numba = njit(cache=True, nogil=True)(_mc_chain_py)


def kubo_enum(v: np.ndarray, dd: np.ndarray, binom: np.ndarray,
              prune_rel: float = PRUNE_RTOL, backend: str | None = None) -> complex:
    """Sum over index tuples of the V-element cycle times the divided-difference
    weight.  The numba path prunes subtrees whose best possible term magnitude
    falls below prune_rel of the running sum scale; the numpy path contracts
    the full weight tensor through einsum (no pruning)."""
    v = np.ascontiguousarray(v, dtype=np.complex128)
    dd = np.ascontiguousarray(dd, dtype=np.float64)
    use = use_numba() if backend is None else (backend == "numba")
    if use:
        return complex(_kubo_enum_numba(v, dd, binom, prune_rel))
    return _kubo_enum_numpy(v, dd, binom)


def mc_chain(p: np.ndarray, alphas: np.ndarray, v: np.ndarray,
             backend: str | None = None) -> np.ndarray:
    """Tr[rho^a1 V1 ... rho^an Vn] for each row of simplex weights in alphas,
    everything expressed in the rho eigenbasis (p are rho's eigenvalues)."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    alphas = np.ascontiguousarray(alphas, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.complex128)
    out = np.empty(alphas.shape[0], dtype=np.complex128)
    use = use_numba() if backend is None else (backend == "numba")
    if use:
        return _mc_chain_numba(p, alphas, v, out)
    return _mc_chain_numpy(p, alphas, v, out)
