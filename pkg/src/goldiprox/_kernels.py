"""Inner-loop kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``GOLDIPROX_DISABLE_NUMBA`` is unset (or ``0``). Both paths are
always importable as ``<name>_numpy`` / ``<name>_numba`` so tests and the
benchmark can compare them directly.
"""

import os

import numpy as np

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)
_MASK64 = (1 << 64) - 1

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = HAVE_NUMBA and os.environ.get("GOLDIPROX_DISABLE_NUMBA", "0") in ("", "0")
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- FNV-1a 64


def fnv1a64_numpy(buf):
    h = 0xCBF29CE484222325
    for b in bytes(buf):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


@njit(cache=True)
def _fnv1a64_nb(data):
    h = FNV_OFFSET
    for i in range(data.shape[0]):
        h = (h ^ np.uint64(data[i])) * FNV_PRIME
    return h


def fnv1a64_numba(buf):
    data = np.frombuffer(buf, dtype=np.uint8)
    return int(_fnv1a64_nb(data))


# ------------------------------------------------- softmax cross-entropy


def xent_numpy(logits, labels):
    n = logits.shape[0]
    rows = np.arange(n)
    top = np.argmax(logits, axis=1)
    mx = logits[rows, top]
    e = np.exp(logits - mx[:, None])
    # sum of exp over the non-argmax entries; log1p keeps tiny losses exact
    e[rows, top] = 0.0
    rest = e.sum(axis=1)
    e[rows, top] = 1.0
    lse = mx + np.log1p(rest)
    loss = lse - logits[rows, labels]
    probs = e / (1.0 + rest)[:, None]
    return loss, probs


@njit(cache=True)
def _xent_nb(logits, labels):
    n, k = logits.shape
    loss = np.empty(n)
    probs = np.empty((n, k))
    for i in range(n):
        top = 0
        for j in range(1, k):
            if logits[i, j] > logits[i, top]:
                top = j
        mx = logits[i, top]
        rest = 0.0
        for j in range(k):
            e = np.exp(logits[i, j] - mx)
            probs[i, j] = e
            if j != top:
                rest += e
        denom = 1.0 + rest
        for j in range(k):
            probs[i, j] /= denom
        loss[i] = mx + np.log1p(rest) - logits[i, labels[i]]
    return loss, probs


def xent_numba(logits, labels):
    return _xent_nb(np.ascontiguousarray(logits, dtype=np.float64), np.ascontiguousarray(labels, dtype=np.int64))


# ----------------------------------------------------------- row entropy


def entropy_rows_numpy(p):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0.0, p * np.log(p), 0.0)
    return -t.sum(axis=-1)


@njit(cache=True)
def _entropy_rows_nb(p):
    n, k = p.shape
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for j in range(k):
            if p[i, j] > 0.0:
                s -= p[i, j] * np.log(p[i, j])
        out[i] = s
    return out


def entropy_rows_numba(p):
    p = np.ascontiguousarray(p, dtype=np.float64)
    shape = p.shape
    return _entropy_rows_nb(p.reshape(-1, shape[-1])).reshape(shape[:-1])


# ------------------------------------------------------- average ranks


def average_ranks_numpy(x):
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = x.size
    ranks = np.empty(n)
    # boundaries of tie groups in the sorted array
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    avg = (starts + ends - 1) / 2.0 + 1.0
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


@njit(cache=True)
def _average_ranks_nb(x, order):
    n = x.shape[0]
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        r = (i + j) / 2.0 + 1.0
        for m in range(i, j + 1):
            ranks[order[m]] = r
        i = j + 1
    return ranks


def average_ranks_numba(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _average_ranks_nb(x, np.argsort(x, kind="mergesort"))


if USE_NUMBA:
    fnv1a64 = fnv1a64_numba
    xent = xent_numba
    entropy_rows = entropy_rows_numba
    average_ranks = average_ranks_numba
else:
    fnv1a64 = fnv1a64_numpy
    xent = xent_numpy
    entropy_rows = entropy_rows_numpy
    average_ranks = average_ranks_numpy
