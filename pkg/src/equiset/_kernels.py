"""Numeric inner loops, in numba and pure-numpy flavors.

Public entry points dispatch on :mod:`equiset.backend`.  Both flavors stay
importable regardless of backend so the benchmark can compare them head to
head.
"""

import numpy as np

from .backend import HAS_NUMBA

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None


# ---------------------------------------------------------------- pair orbits

def pair_orbit_labels_numpy(gens: np.ndarray) -> np.ndarray:
    """Orbit labels of the simultaneous action (s,t) -> (g(s), g(t)).

    gens: (k, l) int64 in one-line image form.  Returns (l*l,) labels where
    each label is the smallest row-major pair index in its orbit.
    """
    k, l = gens.shape
    n = l * l
    # edge maps on the pair set; both generator directions so min-label
    # propagation converges to per-orbit minima
    maps = []
    s, t = np.divmod(np.arange(n, dtype=np.int64), l)
    for gi in range(k):
        g = gens[gi]
        ginv = np.argsort(g)
        maps.append(g[s] * l + g[t])
        maps.append(ginv[s] * l + ginv[t])
    labels = np.arange(n, dtype=np.int64)
    while True:
        prev = labels
        for m in maps:
            labels = np.minimum(labels, labels[m])
        if np.array_equal(labels, prev):
            return labels


if njit is not None:

    @njit(cache=True)
    def _pair_orbit_fill(gens, labels, stack):
        k, l = gens.shape
        n = l * l
        for start in range(n):
            if labels[start] >= 0:
                continue
            labels[start] = start
            top = 0
            stack[top] = start
            top += 1
            while top > 0:
                top -= 1
                p = stack[top]
                s = p // l
                t = p % l
                for gi in range(k):
                    q = gens[gi, s] * l + gens[gi, t]
                    if labels[q] < 0:
                        labels[q] = start
                        stack[top] = q
                        top += 1

    def pair_orbit_labels_numba(gens: np.ndarray) -> np.ndarray:
        l = gens.shape[1]
        labels = np.full(l * l, -1, dtype=np.int64)
        stack = np.empty(l * l, dtype=np.int64)
        _pair_orbit_fill(np.ascontiguousarray(gens), labels, stack)
        return labels

else:  # pragma: no cover
    pair_orbit_labels_numba = pair_orbit_labels_numpy


def pair_orbit_labels(gens: np.ndarray) -> np.ndarray:
    if HAS_NUMBA:
        return pair_orbit_labels_numba(gens)
    return pair_orbit_labels_numpy(gens)


# ------------------------------------------------------- circular convolution
#
# out[b, g, t] = sum_{f, j} kern[g, f, j] * x[b, f, (t + j - center) mod d]

def circ_conv_fwd_numpy(x, kern, center):
    B, f, d = x.shape
    g, _, m = kern.shape
    out = np.zeros((B, g, d), dtype=np.float64)
    for j in range(m):
        # roll(x, center - j)[..., t] == x[..., (t + j - center) mod d]
        out += np.einsum(
            "gf,bfd->bgd", kern[:, :, j], np.roll(x, center - j, axis=-1)
        )
    return out


def circ_conv_grad_kern_numpy(dout, x, m, center):
    B, g, d = dout.shape
    f = x.shape[1]
    dk = np.empty((g, f, m), dtype=np.float64)
    for j in range(m):
        dk[:, :, j] = np.einsum(
            "bgd,bfd->gf", dout, np.roll(x, center - j, axis=-1)
        )
    return dk


if njit is not None:

    @njit(cache=True)
    def _im2col_circ(x, m, center):
        B, f, d = x.shape
        cols = np.empty((f * m, B * d), dtype=np.float64)
        for fi in range(f):
            for j in range(m):
                r = fi * m + j
                off = j - center
                for b in range(B):
                    base = b * d
                    for t in range(d):
                        s = t + off
                        if s >= d:
                            s -= d
                        elif s < 0:
                            s += d
                        cols[r, base + t] = x[b, fi, s]
        return cols

    @njit(cache=True)
    def _conv_fwd_jit(x, kern, center):
        B, f, d = x.shape
        g = kern.shape[0]
        m = kern.shape[2]
        cols = _im2col_circ(x, m, center)
        k2 = np.ascontiguousarray(kern).reshape(g, f * m)
        out2 = np.dot(k2, cols)
        out = np.empty((B, g, d), dtype=np.float64)
        for b in range(B):
            for gi in range(g):
                for t in range(d):
                    out[b, gi, t] = out2[gi, b * d + t]
        return out

    @njit(cache=True)
    def _conv_grad_kern_jit(dout, x, m, center):
        B, g, d = dout.shape
        f = x.shape[1]
        cols = _im2col_circ(x, m, center)
        d2 = np.empty((g, B * d), dtype=np.float64)
        for b in range(B):
            for gi in range(g):
                for t in range(d):
                    d2[gi, b * d + t] = dout[b, gi, t]
        dk2 = np.dot(d2, cols.T)
        return dk2.reshape(g, f, m)

    def circ_conv_fwd_numba(x, kern, center):
        return _conv_fwd_jit(
            np.ascontiguousarray(x), np.ascontiguousarray(kern), center
        )

    def circ_conv_grad_kern_numba(dout, x, m, center):
        return _conv_grad_kern_jit(
            np.ascontiguousarray(dout), np.ascontiguousarray(x), m, center
        )

else:  # pragma: no cover
    circ_conv_fwd_numba = circ_conv_fwd_numpy
    circ_conv_grad_kern_numba = circ_conv_grad_kern_numpy


def circ_conv_fwd(x, kern, center):
    if HAS_NUMBA:
        return circ_conv_fwd_numba(x, kern, center)
    return circ_conv_fwd_numpy(x, kern, center)


def circ_conv_grad_kern(dout, x, m, center):
    if HAS_NUMBA:
        return circ_conv_grad_kern_numba(dout, x, m, center)
    return circ_conv_grad_kern_numpy(dout, x, m, center)
