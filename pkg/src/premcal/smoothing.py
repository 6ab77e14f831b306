"""Kernel-weighted local regression and kNN local effective exposure.

All smoothers share the same locality rule: a tricube kernel whose bandwidth
at each evaluation point is the distance to its ceil(alpha*n)-th nearest
training point.  Two-dimensional fits measure distance in standardized
coordinates (each axis divided by its exposure-weighted standard deviation).
Fitted surfaces are stored on tensor grids so they can be serialized and
applied out-of-sample by interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._kernels import knn_exposure_brute, local_fit_1d, local_fit_2d
from .errors import ConfigError, DataValidationError

DEGREE_CONSTANT = "constant"
DEGREE_LINEAR = "linear"

# below this many query points the exact brute-force kNN path is cheapest
_KNN_BRUTE_LIMIT = 2048


@dataclass(frozen=True)
class SmoothConfig:
    """Locality settings shared by the 1-d and 2-d smoothers.

    ``alpha`` is the nearest-neighbor fraction defining the adaptive
    bandwidth; ``scale_p``/``scale_s`` override the per-dimension
    standardization factors (exposure-weighted standard deviations when
    unset).  The kernel is fixed to tricube.
    """

    alpha: float = 0.5
    degree: str = DEGREE_LINEAR
    scale_p: float | None = None
    scale_s: float | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError("alpha must lie in (0, 1]")
        if self.degree not in (DEGREE_CONSTANT, DEGREE_LINEAR):
            raise ConfigError(f"unknown degree {self.degree!r}")
        for scale in (self.scale_p, self.scale_s):
            if scale is not None and not scale > 0:
                raise ConfigError("scale factors must be > 0")


def weighted_std(x, w) -> float:
    """Exposure-weighted standard deviation, floored away from zero."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    mean = np.average(x, weights=w)
    var = np.average((x - mean) ** 2, weights=w)
    sd = math.sqrt(var)
    if sd <= 0.0:
        # degenerate axis: any positive scale yields zero distances anyway
        return 1.0
    return sd


def _neighbor_count(alpha: float, n: int) -> int:
    return min(n, max(2, math.ceil(alpha * n)))


def _validate_inputs(arrays, names):
    n = None
    out = []
    for arr, name in zip(arrays, names):
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if arr.ndim != 1:
            raise DataValidationError(f"{name} must be one-dimensional")
        if n is None:
            n = arr.size
        elif arr.size != n:
            raise DataValidationError(f"{name} length differs")
        if not np.all(np.isfinite(arr)):
            raise DataValidationError(f"non-finite value in {name}")
        out.append(arr)
    if n < 2:
        raise DataValidationError("local regression needs at least 2 points")
    return out


def local_mean_1d(x, y, w, eval_at, cfg: SmoothConfig) -> np.ndarray:
    """Local regression of y on x at the requested evaluation points."""
    x, y, w = _validate_inputs((x, y, w), ("x", "y", "w"))
    if np.any(w <= 0):
        raise DataValidationError("weights must be strictly positive")
    eval_at = np.ascontiguousarray(eval_at, dtype=np.float64)
    k = _neighbor_count(cfg.alpha, x.size)
    return local_fit_1d(x, y, w, eval_at, k, cfg.degree == DEGREE_LINEAR)


def local_mean_2d(p, s, y, w, eval_p, eval_s, cfg: SmoothConfig) -> np.ndarray:
    """Local regression of y on (p, s) with standardized Euclidean distances."""
    p, s, y, w = _validate_inputs((p, s, y, w), ("p", "s", "y", "w"))
    if np.any(w <= 0):
        raise DataValidationError("weights must be strictly positive")
    eval_p = np.ascontiguousarray(eval_p, dtype=np.float64)
    eval_s = np.ascontiguousarray(eval_s, dtype=np.float64)
    if eval_p.shape != eval_s.shape:
        raise DataValidationError("eval_p and eval_s shapes differ")

    scale_p = cfg.scale_p if cfg.scale_p is not None else weighted_std(p, w)
    scale_s = cfg.scale_s if cfg.scale_s is not None else weighted_std(s, w)
    zp = p / scale_p
    zs = s / scale_s
    k = _neighbor_count(cfg.alpha, p.size)
    return local_fit_2d(
        zp,
        zs,
        zp.astype(np.float32),
        zs.astype(np.float32),
        y,
        w,
        eval_p / scale_p,
        eval_s / scale_s,
        k,
        cfg.degree == DEGREE_LINEAR,
    )


def knn_local_exposure(p, s, w, k, query_p=None, query_s=None,
                       scale_p=None, scale_s=None) -> np.ndarray:
    """Summed exposure of the k nearest records around each query point.

    Distances are Euclidean in standardized (p, s) coordinates.  Queries
    default to the records themselves (each record then counts itself).
    Distance ties at the k-th neighbor are broken by ascending record index.
    """
    p, s, w = _validate_inputs((p, s, w), ("p", "s", "w"))
    n = p.size
    if k < 1:
        raise ConfigError("k must be >= 1")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of records ({n})")

    scale_p = scale_p if scale_p is not None else weighted_std(p, w)
    scale_s = scale_s if scale_s is not None else weighted_std(s, w)
    zp = p / scale_p
    zs = s / scale_s
    if query_p is None:
        qp, qs = zp, zs
    else:
        qp = np.ascontiguousarray(query_p, dtype=np.float64) / scale_p
        qs = np.ascontiguousarray(query_s, dtype=np.float64) / scale_s
        if qp.shape != qs.shape:
            raise DataValidationError("query shapes differ")

    if qp.size * n <= _KNN_BRUTE_LIMIT * _KNN_BRUTE_LIMIT:
        return knn_exposure_brute(zp, zs, w, qp, qs, k)
    return _knn_exposure_tree(zp, zs, w, qp, qs, k)


def _knn_exposure_tree(zp, zs, w, qp, qs, k):
    """Tree-accelerated kNN exposure sums with exact boundary tie handling."""
    n = zp.size
    points = np.column_stack((zp, zs))
    tree = cKDTree(points)
    queries = np.column_stack((qp, qs))
    pad = min(n - k, 16)
    out = np.empty(qp.size)

    chunk = max(1, int(4e6 // max(k + pad, 1)))
    for start in range(0, qp.size, chunk):
        q = queries[start:start + chunk]
        dist, idx = tree.query(q, k=k + pad, workers=-1)
        if k + pad == 1:
            dist = dist[:, None]
            idx = idx[:, None]
        boundary = dist[:, k - 1]
        strict = dist < boundary[:, None]
        inner = np.where(strict[:, :k + pad], w[idx], 0.0).sum(axis=1)
        counts = strict.sum(axis=1)
        for row in range(q.shape[0]):
            need = k - counts[row]
            tied = idx[row][dist[row] == boundary[row]]
            if dist[row][-1] == boundary[row] and pad > 0:
                # padding window may not contain every tied point: fall back
                # to exact distances for this query
                d2 = (zp - q[row, 0]) ** 2 + (zs - q[row, 1]) ** 2
                b2 = d2[tied[0]]
                tied = np.flatnonzero(d2 == b2)
            tied = np.sort(tied)
            out[start + row] = inner[row] + w[tied[:need]].sum()
    return out


@dataclass(frozen=True)
class LocalSurface:
    """Fitted local-regression values on a tensor grid.

    Evaluation interpolates (linear in 1-d, bilinear in 2-d) and clamps
    query points to the training ranges, so grid nodes reproduce their
    stored values exactly and interpolated values stay inside the convex
    hull of the surrounding node values.
    """

    grid_p: np.ndarray
    values: np.ndarray
    grid_s: np.ndarray | None = None
    scale_p: float | None = None
    scale_s: float | None = None

    def __post_init__(self):
        grid_p = np.asarray(self.grid_p, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "grid_p", grid_p)
        object.__setattr__(self, "values", values)
        if not np.all(np.isfinite(values)):
            raise DataValidationError("non-finite surface value")
        if self.grid_s is not None:
            grid_s = np.asarray(self.grid_s, dtype=np.float64)
            object.__setattr__(self, "grid_s", grid_s)
            if values.shape != (grid_p.size, grid_s.size):
                raise DataValidationError("surface values shape mismatch")
        elif values.shape != grid_p.shape:
            raise DataValidationError("surface values shape mismatch")
        self.grid_p.setflags(write=False)
        self.values.setflags(write=False)
        if self.grid_s is not None:
            self.grid_s.setflags(write=False)

    @property
    def range_p(self):
        return float(self.grid_p[0]), float(self.grid_p[-1])

    @property
    def range_s(self):
        if self.grid_s is None:
            return None
        return float(self.grid_s[0]), float(self.grid_s[-1])

    def evaluate(self, p, s=None) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        if self.grid_s is None:
            if self.grid_p.size == 1:
                return np.full(p.shape, self.values[0])
            return np.interp(p, self.grid_p, self.values)
        if s is None:
            raise DataValidationError("surface is bivariate; s values required")
        s = np.asarray(s, dtype=np.float64)
        return _bilinear(self.grid_p, self.grid_s, self.values, p, s)

    def to_dict(self):
        payload = {
            "grid_p": self.grid_p.tolist(),
            "values": self.values.tolist(),
            "scales": [self.scale_p, self.scale_s],
            "range_p": list(self.range_p),
        }
        if self.grid_s is not None:
            payload["grid_s"] = self.grid_s.tolist()
            payload["range_s"] = list(self.range_s)
        return payload

    @classmethod
    def from_dict(cls, payload):
        scales = payload.get("scales") or (None, None)
        return cls(
            grid_p=np.asarray(payload["grid_p"], dtype=np.float64),
            values=np.asarray(payload["values"], dtype=np.float64),
            grid_s=(
                np.asarray(payload["grid_s"], dtype=np.float64)
                if "grid_s" in payload else None
            ),
            scale_p=scales[0],
            scale_s=scales[1],
        )


def _axis_locate(grid, q):
    """Clamped segment index and interpolation weight along one grid axis."""
    q = np.clip(q, grid[0], grid[-1])
    idx = np.searchsorted(grid, q, side="right") - 1
    idx = np.clip(idx, 0, grid.size - 2)
    width = grid[idx + 1] - grid[idx]
    t = (q - grid[idx]) / width
    return idx, t


def _bilinear(grid_p, grid_s, values, p, s):
    if grid_p.size == 1 and grid_s.size == 1:
        return np.full(np.broadcast(p, s).shape, values[0, 0])
    if grid_p.size == 1:
        idx, t = _axis_locate(grid_s, s)
        return (1 - t) * values[0, idx] + t * values[0, idx + 1]
    if grid_s.size == 1:
        idx, t = _axis_locate(grid_p, p)
        return (1 - t) * values[idx, 0] + t * values[idx + 1, 0]
    ip, tp = _axis_locate(grid_p, p)
    isx, ts = _axis_locate(grid_s, s)
    v00 = values[ip, isx]
    v01 = values[ip, isx + 1]
    v10 = values[ip + 1, isx]
    v11 = values[ip + 1, isx + 1]
    return (
        (1 - tp) * (1 - ts) * v00
        + (1 - tp) * ts * v01
        + tp * (1 - ts) * v10
        + tp * ts * v11
    )


def surface_grid(lo: float, hi: float, n_nodes: int) -> np.ndarray:
    """Uniform grid over [lo, hi]; collapses to one node on a degenerate range."""
    if n_nodes < 1:
        raise ConfigError("n_nodes must be >= 1")
    if hi <= lo:
        return np.asarray([lo], dtype=np.float64)
    return np.linspace(lo, hi, n_nodes)


def fit_surface_1d(x, y, w, cfg: SmoothConfig, n_nodes: int) -> LocalSurface:
    """Fit a 1-d local regression and freeze it on a uniform grid."""
    x = np.asarray(x, dtype=np.float64)
    grid = surface_grid(float(x.min()), float(x.max()), n_nodes)
    if grid.size == 1:
        w_arr = np.asarray(w, dtype=np.float64)
        value = float(np.average(np.asarray(y, dtype=np.float64), weights=w_arr))
        return LocalSurface(grid_p=grid, values=np.asarray([value]))
    values = local_mean_1d(x, y, w, grid, cfg)
    return LocalSurface(grid_p=grid, values=values)


def fit_surface_2d(p, s, y, w, cfg: SmoothConfig, n_nodes_p: int,
                   n_nodes_s: int) -> LocalSurface:
    """Fit a 2-d local regression and freeze it on a tensor grid."""
    p = np.asarray(p, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    w_arr = np.asarray(w, dtype=np.float64)
    scale_p = cfg.scale_p if cfg.scale_p is not None else weighted_std(p, w_arr)
    scale_s = cfg.scale_s if cfg.scale_s is not None else weighted_std(s, w_arr)
    grid_p = surface_grid(float(p.min()), float(p.max()), n_nodes_p)
    grid_s = surface_grid(float(s.min()), float(s.max()), n_nodes_s)
    if grid_p.size == 1 and grid_s.size == 1:
        value = float(np.average(np.asarray(y, dtype=np.float64), weights=w_arr))
        return LocalSurface(
            grid_p=grid_p, grid_s=grid_s, values=np.asarray([[value]]),
            scale_p=scale_p, scale_s=scale_s,
        )
    mesh_p, mesh_s = np.meshgrid(grid_p, grid_s, indexing="ij")
    fit_cfg = SmoothConfig(
        alpha=cfg.alpha, degree=cfg.degree, scale_p=scale_p, scale_s=scale_s
    )
    values = local_mean_2d(
        p, s, y, w, mesh_p.ravel(), mesh_s.ravel(), fit_cfg
    ).reshape(grid_p.size, grid_s.size)
    return LocalSurface(
        grid_p=grid_p, grid_s=grid_s, values=values,
        scale_p=scale_p, scale_s=scale_s,
    )
