"""Numba-compiled numerical kernels (pool-adjacent-violators, local fits).

Every kernel is deterministic: parallel loops only ever write disjoint
outputs, so thread scheduling cannot change results.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_DET_EPS = 1e-12


@njit(cache=True)
def pava(y, w):
    """Pool-adjacent-violators on points already sorted by the predictor.

    Returns (block_values, block_last_index); block values are strictly
    increasing because pooling also merges equal adjacent means.
    """
    m = y.shape[0]
    block_w = np.empty(m)
    block_wy = np.empty(m)
    block_end = np.empty(m, dtype=np.int64)
    top = -1
    for i in range(m):
        top += 1
        block_w[top] = w[i]
        block_wy[top] = w[i] * y[i]
        block_end[top] = i
        while (
            top > 0
            and block_wy[top - 1] / block_w[top - 1] >= block_wy[top] / block_w[top]
        ):
            block_w[top - 1] += block_w[top]
            block_wy[top - 1] += block_wy[top]
            block_end[top - 1] = block_end[top]
            top -= 1
    values = block_wy[: top + 1] / block_w[: top + 1]
    return values, block_end[: top + 1]


@njit(inline="always")
def _tied_minimum_mean(d, y, w, n):
    """Exposure-weighted mean of y over the points at minimal distance."""
    dmin = np.inf
    for i in range(n):
        if d[i] < dmin:
            dmin = d[i]
    sw = 0.0
    sy = 0.0
    for i in range(n):
        if d[i] == dmin:
            sw += w[i]
            sy += w[i] * y[i]
    return sy / sw


@njit(parallel=True, fastmath=True, cache=True)
def local_fit_1d(x, y, w, q, k, linear):
    """Tricube kNN-bandwidth local regression evaluated at the points q.

    Bandwidth at each eval point is the distance to its k-th nearest
    training point.  ``linear`` selects the local-linear intercept; the fit
    degrades to the weighted mean when the design is degenerate, and to the
    nearest points' weighted mean when every kernel weight vanishes.
    """
    m = q.shape[0]
    n = x.shape[0]
    out = np.empty(m)
    for j in prange(m):
        p = q[j]
        d = np.abs(x - p)
        r = np.partition(d, k - 1)[k - 1]
        if r == 0.0:
            out[j] = _tied_minimum_mean(d, y, w, n)
            continue
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        b0 = 0.0
        b1 = 0.0
        for i in range(n):
            if d[i] < r:
                t = d[i] / r
                u = 1.0 - t * t * t
                u = u * u * u * w[i]
                dx = x[i] - p
                s0 += u
                s1 += u * dx
                s2 += u * dx * dx
                b0 += u * y[i]
                b1 += u * y[i] * dx
        if s0 == 0.0:
            out[j] = _tied_minimum_mean(d, y, w, n)
            continue
        if linear:
            det = s0 * s2 - s1 * s1
            if det > _DET_EPS * s0 * s2:
                out[j] = (b0 * s2 - b1 * s1) / det
                continue
        out[j] = b0 / s0
    return out


@njit(parallel=True, fastmath=True, cache=True)
def local_fit_2d(xp, xs, xp32, xs32, y, w, qp, qs, k, linear):
    """Bivariate analogue of :func:`local_fit_1d` on standardized coordinates.

    Distances and the k-th neighbor radius are computed in float32 (the
    selection dominates runtime); all moments and solves stay in float64.
    """
    m = qp.shape[0]
    n = xp.shape[0]
    out = np.empty(m)
    for j in prange(m):
        a32 = np.float32(qp[j])
        b32 = np.float32(qs[j])
        d2 = (xp32 - a32) ** 2 + (xs32 - b32) ** 2
        r2 = np.partition(d2, k - 1)[k - 1]
        if r2 == np.float32(0.0):
            out[j] = _tied_minimum_mean(d2, y, w, n)
            continue
        r = np.sqrt(np.float64(r2))
        s0 = 0.0
        sp = 0.0
        ss = 0.0
        spp = 0.0
        sps = 0.0
        sss = 0.0
        b0 = 0.0
        bp = 0.0
        bs = 0.0
        for i in range(n):
            if d2[i] < r2:
                t = np.sqrt(np.float64(d2[i])) / r
                u = 1.0 - t * t * t
                u = u * u * u * w[i]
                dp = xp[i] - qp[j]
                ds = xs[i] - qs[j]
                s0 += u
                sp += u * dp
                ss += u * ds
                spp += u * dp * dp
                sps += u * dp * ds
                sss += u * ds * ds
                b0 += u * y[i]
                bp += u * y[i] * dp
                bs += u * y[i] * ds
        if s0 == 0.0:
            out[j] = _tied_minimum_mean(d2, y, w, n)
            continue
        if linear:
            det = (
                s0 * (spp * sss - sps * sps)
                - sp * (sp * sss - sps * ss)
                + ss * (sp * sps - spp * ss)
            )
            if det > _DET_EPS * s0 * spp * sss:
                det0 = (
                    b0 * (spp * sss - sps * sps)
                    - sp * (bp * sss - sps * bs)
                    + ss * (bp * sps - spp * bs)
                )
                out[j] = det0 / det
                continue
            det2 = s0 * spp - sp * sp
            if det2 > _DET_EPS * s0 * spp:
                out[j] = (b0 * spp - bp * sp) / det2
                continue
        out[j] = b0 / s0
    return out


@njit(parallel=True, cache=True)
def knn_exposure_brute(xp, xs, w, qp, qs, k):
    """Sum of exposures of the k nearest points to each query.

    Exact index-ascending tie-breaking at the k-th distance boundary; meant
    for moderate problem sizes (the tree-based path handles large ones).
    """
    m = qp.shape[0]
    n = xp.shape[0]
    out = np.empty(m)
    for j in prange(m):
        d2 = (xp - qp[j]) ** 2 + (xs - qs[j]) ** 2
        boundary = np.partition(d2, k - 1)[k - 1]
        total = 0.0
        taken = 0
        for i in range(n):
            if d2[i] < boundary:
                total += w[i]
                taken += 1
        for i in range(n):
            if taken == k:
                break
            if d2[i] == boundary:
                total += w[i]
                taken += 1
        out[j] = total
    return out
