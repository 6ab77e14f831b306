"""Weighted isotonic regression and evaluable step functions.

The fit minimizes the exposure-weighted squared error over non-decreasing
functions of the predictor, using pool-adjacent-violators.  Observations
sharing a predictor value are merged beforehand (weights summed, responses
weight-averaged) so the result is a well-defined function of the predictor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import pava
from .errors import DataValidationError


@dataclass(frozen=True)
class StepFunction:
    """Non-decreasing piecewise-constant function.

    ``knots`` are the right-closed upper boundaries of the constant blocks in
    the predictor axis; ``values`` are the fitted block means.  Evaluation
    clamps to the first/last value outside [domain_min, domain_max].
    """

    knots: np.ndarray
    values: np.ndarray
    domain_min: float
    domain_max: float

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if knots.shape != values.shape or knots.ndim != 1 or knots.size == 0:
            raise DataValidationError("knots and values must be equal-length 1-d arrays")
        if np.any(np.diff(knots) <= 0):
            raise DataValidationError("knots must be strictly ascending")
        if np.any(np.diff(values) < 0):
            raise DataValidationError("values must be non-decreasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        self.knots.setflags(write=False)
        self.values.setflags(write=False)

    def __call__(self, p):
        return step_eval(self, p)

    def to_dict(self) -> dict:
        return {
            "knots": self.knots.tolist(),
            "values": self.values.tolist(),
            "domain_min": self.domain_min,
            "domain_max": self.domain_max,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "StepFunction":
        return cls(
            knots=np.asarray(payload["knots"], dtype=np.float64),
            values=np.asarray(payload["values"], dtype=np.float64),
            domain_min=float(payload["domain_min"]),
            domain_max=float(payload["domain_max"]),
        )


def _merge_ties(x, y, w):
    """Collapse equal predictor values into single weighted points."""
    ux, inverse = np.unique(x, return_inverse=True)
    if ux.size == x.size:
        order = np.argsort(x, kind="stable")
        return x[order], y[order], w[order]
    sw = np.bincount(inverse, weights=w, minlength=ux.size)
    swy = np.bincount(inverse, weights=w * y, minlength=ux.size)
    return ux, swy / sw, sw


def weighted_isotonic_fit(x, y, w) -> StepFunction:
    """Exposure-weighted isotonic (non-decreasing) least-squares fit.

    Returns the step function whose block values are the pooled weighted
    means produced by pool-adjacent-violators.  The exposure-weighted mean of
    the fitted values equals the exposure-weighted mean of ``y`` exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.size == 0:
        raise DataValidationError("empty input")
    if not (x.shape == y.shape == w.shape):
        raise DataValidationError("x, y, w must have equal lengths")
    if np.isnan(x).any() or np.isnan(y).any() or np.isnan(w).any():
        raise DataValidationError("NaN in isotonic regression input")
    if np.any(w <= 0):
        raise DataValidationError("weights must be strictly positive")

    x, y, w = _merge_ties(x, y, w)
    values, block_end = pava(y, w)
    return StepFunction(
        knots=x[block_end],
        values=values,
        domain_min=float(x[0]),
        domain_max=float(x[-1]),
    )


def step_eval(f: StepFunction, p):
    """Evaluate a step function, clamping outside its training domain."""
    p = np.asarray(p, dtype=np.float64)
    idx = np.searchsorted(f.knots, p, side="left")
    idx = np.minimum(idx, f.knots.size - 1)
    out = f.values[idx]
    if p.ndim == 0:
        return float(out)
    return out
