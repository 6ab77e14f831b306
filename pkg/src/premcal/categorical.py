"""Calibration corrections for categorical sensitive features.

Two families of operations:

* one-shot corrections via weighted isotonic regression — globally
  (``balance_correct``) or separately within each sensitive level
  (``multibalance_correct``);
* an iterative bias-correction scheme on premium-quantile bins crossed with
  sensitive levels, where cell biases are shrunk toward the pooled bin bias
  with credibility weights z = w/(w+c) before each damped update.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .data import Portfolio
from .errors import ConfigError, DataValidationError
from .isotonic import StepFunction, step_eval, weighted_isotonic_fit

log = logging.getLogger(__name__)

DEFAULT_MIN_GROUP_SIZE = 30
CREDIBILITY_GRID = (1.0, 10.0, 100.0, 1000.0, 10000.0)


@dataclass(frozen=True)
class BinScheme:
    """Partition of the premium axis into right-closed interval bins.

    ``edges`` are the interior boundaries: values at or below the first edge
    fall into bin 0, values above the last edge into the top bin.  An empty
    edge array is the single-bin scheme.
    """

    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        if edges.ndim != 1:
            raise ConfigError("bin edges must be one-dimensional")
        if edges.size and np.any(np.diff(edges) <= 0):
            raise ConfigError("bin edges must be strictly ascending")
        object.__setattr__(self, "edges", edges)
        self.edges.setflags(write=False)

    @property
    def n_bins(self) -> int:
        return self.edges.size + 1

    def assign(self, premium) -> np.ndarray:
        """Bin index per premium; out-of-range values land in the edge bins."""
        return np.searchsorted(self.edges, np.asarray(premium, dtype=np.float64),
                               side="left")

    def bounds(self):
        """(lo, hi) per bin, with infinite outer bounds."""
        lo = np.concatenate(([-np.inf], self.edges))
        hi = np.concatenate((self.edges, [np.inf]))
        return lo, hi

    def to_dict(self):
        return {"edges": self.edges.tolist()}

    @classmethod
    def from_dict(cls, payload):
        return cls(edges=np.asarray(payload["edges"], dtype=np.float64))


def quantile_bins(premium, exposure, n_bins: int) -> BinScheme:
    """Exposure-weighted quantile bins of the premium vector.

    Duplicate quantile edges collapse, so the effective bin count may shrink
    below ``n_bins``; no bin is ever empty.
    """
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    premium = np.asarray(premium, dtype=np.float64)
    exposure = np.asarray(exposure, dtype=np.float64)
    if premium.size == 0:
        raise DataValidationError("empty premium vector")
    if n_bins == 1:
        return BinScheme(edges=np.empty(0))

    order = np.argsort(premium, kind="stable")
    sorted_premium = premium[order]
    cumw = np.cumsum(exposure[order])
    total = cumw[-1]
    targets = total * np.arange(1, n_bins) / n_bins
    idx = np.searchsorted(cumw, targets, side="left")
    edges = np.unique(sorted_premium[np.minimum(idx, premium.size - 1)])
    # an edge at (or beyond) the maximum would leave the top bin empty
    edges = edges[edges < sorted_premium[-1]]
    if edges.size + 1 < n_bins:
        warnings.warn(
            f"only {edges.size + 1} distinct premium bins available "
            f"(requested {n_bins})",
            stacklevel=2,
        )
    return BinScheme(edges=edges)


@dataclass(frozen=True)
class CellBiasTable:
    """Exposure-weighted residual biases on (premium bin x sensitive level) cells.

    ``cell_bias[k, l]`` is the weighted mean of Y - premium over the cell;
    ``pooled_bias[k]`` the weighted mean over the whole bin.  Cells without
    exposure are flagged in ``occupied`` and carry a zero placeholder bias.
    ``shrunk_bias``/``credibility`` are filled by :func:`shrink`.
    """

    bins: BinScheme
    levels: tuple
    cell_bias: np.ndarray
    cell_exposure: np.ndarray
    pooled_bias: np.ndarray
    bin_exposure: np.ndarray
    occupied: np.ndarray
    mean_premium: np.ndarray
    shrunk_bias: np.ndarray | None = None
    credibility: np.ndarray | None = None


def _aggregate_cells(bin_idx, level_idx, n_bins, n_levels, exposure, values):
    """Per-cell exposure totals and exposure-weighted means of ``values``."""
    cell = bin_idx * n_levels + level_idx
    size = n_bins * n_levels
    w = np.bincount(cell, weights=exposure, minlength=size)
    wv = np.bincount(cell, weights=exposure * values, minlength=size)
    w = w.reshape(n_bins, n_levels)
    wv = wv.reshape(n_bins, n_levels)
    mean = np.divide(wv, w, out=np.zeros_like(wv), where=w > 0)
    return w, mean


def _level_index(labels, levels):
    """Index of each label in the sorted level tuple; -1 when unseen."""
    levels_arr = np.asarray(levels, dtype=object)
    try:
        pos = np.minimum(np.searchsorted(levels_arr, labels), len(levels) - 1)
        known = levels_arr[pos] == labels
        return np.where(known, pos, -1).astype(np.int64)
    except TypeError:  # labels not mutually orderable
        lookup = {level: i for i, level in enumerate(levels)}
        return np.fromiter(
            (lookup.get(lab, -1) for lab in labels), dtype=np.int64, count=len(labels)
        )


def _resolve_group(portfolio: Portfolio, group):
    if group is None:
        if portfolio.sensitive is None or portfolio.sensitive_kind != "categorical":
            raise DataValidationError(
                "portfolio carries no categorical sensitive attribute; "
                "pass group labels explicitly"
            )
        return portfolio.sensitive
    group = np.asarray(group, dtype=object)
    if group.shape[0] != len(portfolio):
        raise DataValidationError("group labels not aligned with portfolio")
    return group


def _check_premium(portfolio: Portfolio, premium) -> np.ndarray:
    premium = np.asarray(premium, dtype=np.float64)
    if premium.shape[0] != len(portfolio):
        raise DataValidationError("premium vector not aligned with portfolio")
    if not np.all(premium > 0):
        raise DataValidationError("premiums must be strictly positive")
    return premium


def cell_biases(portfolio: Portfolio, premium, bins: BinScheme, group=None) -> CellBiasTable:
    """Residual bias table of a premium vector at the given bin resolution."""
    premium = _check_premium(portfolio, premium)
    labels = _resolve_group(portfolio, group)
    levels = tuple(sorted(set(labels.tolist())))
    return _cell_table(portfolio, premium, bins, levels, _level_index(labels, levels))


def _cell_table(portfolio, premium, bins, levels, level_idx) -> CellBiasTable:
    w = portfolio.exposure
    resid = portfolio.frequency - premium
    bin_idx = bins.assign(premium)
    K, L = bins.n_bins, len(levels)

    cell_w, cell_bias = _aggregate_cells(bin_idx, level_idx, K, L, w, resid)
    _, cell_premium = _aggregate_cells(bin_idx, level_idx, K, L, w, premium)
    bin_w = cell_w.sum(axis=1)
    pooled = np.divide(
        (cell_w * cell_bias).sum(axis=1), bin_w,
        out=np.zeros(K), where=bin_w > 0,
    )
    return CellBiasTable(
        bins=bins,
        levels=levels,
        cell_bias=cell_bias,
        cell_exposure=cell_w,
        pooled_bias=pooled,
        bin_exposure=bin_w,
        occupied=cell_w > 0,
        mean_premium=cell_premium,
    )


def shrink(table: CellBiasTable, c: float) -> CellBiasTable:
    """Credibility-shrink cell biases toward their pooled bin bias.

    z = w/(w+c) per cell; empty cells get z = 0, i.e. the pooled bias.
    """
    if not c > 0:
        raise ConfigError("credibility constant c must be > 0")
    z = table.cell_exposure / (table.cell_exposure + c)
    shrunk = z * table.cell_bias + (1.0 - z) * table.pooled_bias[:, None]
    return replace(table, shrunk_bias=shrunk, credibility=z)


# -- one-shot isotonic corrections -------------------------------------------


def balance_correct(portfolio: Portfolio, premium, premium_floor: float = 1e-6):
    """Replace premiums by the isotonic fit of observed frequency on premium.

    Returns the corrected premium vector and the fitted step function.  The
    exposure-weighted corrected total matches total claims exactly (up to the
    floor applied to all-zero blocks).
    """
    premium = _check_premium(portfolio, premium)
    fit = weighted_isotonic_fit(premium, portfolio.frequency, portfolio.exposure)
    fit = _floor_step(fit, premium_floor)
    return step_eval(fit, premium), fit


def multibalance_correct(
    portfolio: Portfolio,
    premium,
    group=None,
    min_group_size: int = DEFAULT_MIN_GROUP_SIZE,
    premium_floor: float = 1e-6,
):
    """Isotonic recalibration performed separately within each sensitive level.

    Restores balance conditionally on the sensitive attribute: within every
    level, corrected premiums and claims match on the fitting data.
    """
    premium = _check_premium(portfolio, premium)
    labels = _resolve_group(portfolio, group)
    levels = sorted(set(labels.tolist()))

    corrected = np.empty_like(premium)
    fits = {}
    for level in levels:
        mask = labels == level
        count = int(mask.sum())
        if count < min_group_size:
            raise DataValidationError(
                f"sensitive level {level!r} has only {count} records "
                f"(< {min_group_size}); group-wise isotonic fits may be unstable "
                "there - use the iterative procedure instead"
            )
        fit = weighted_isotonic_fit(
            premium[mask], portfolio.frequency[mask], portfolio.exposure[mask]
        )
        fit = _floor_step(fit, premium_floor)
        fits[level] = fit
        corrected[mask] = step_eval(fit, premium[mask])
    return corrected, fits


def _floor_step(fit: StepFunction, floor: float) -> StepFunction:
    if fit.values[0] >= floor:
        return fit
    return StepFunction(
        knots=fit.knots,
        values=np.maximum(fit.values, floor),
        domain_min=fit.domain_min,
        domain_max=fit.domain_max,
    )


# -- iterative bias correction ------------------------------------------------


@dataclass(frozen=True)
class CalibrationConfig:
    """Parameters of the iterative categorical procedure."""

    n_bins: int = 10
    eta: float = 0.2
    c: float | None = None
    delta: float = 0.01
    max_iterations: int = 500
    premium_floor: float = 1e-6
    fixed_bins: bool = False

    def __post_init__(self):
        if self.n_bins < 1:
            raise ConfigError("n_bins must be >= 1")
        if not (0.0 < self.eta <= 1.0):
            raise ConfigError("eta must lie in (0, 1]")
        if self.c is not None and not self.c > 0:
            raise ConfigError("credibility constant c must be > 0")
        if not self.delta > 0:
            raise ConfigError("delta must be > 0")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not self.premium_floor > 0:
            raise ConfigError("premium_floor must be > 0")


@dataclass(frozen=True)
class IterationStep:
    """One stored update: bin scheme plus per-cell and pooled corrections."""

    bins: BinScheme
    cell_correction: np.ndarray   # eta * shrunk bias, (n_bins, n_levels)
    pooled_correction: np.ndarray  # eta * pooled bias, (n_bins,)

    def to_dict(self):
        return {
            "bins": self.bins.to_dict(),
            "cell_correction": self.cell_correction.tolist(),
            "pooled_correction": self.pooled_correction.tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            bins=BinScheme.from_dict(payload["bins"]),
            cell_correction=np.asarray(payload["cell_correction"], dtype=np.float64),
            pooled_correction=np.asarray(payload["pooled_correction"], dtype=np.float64),
        )


@dataclass(frozen=True)
class IterativeModel:
    """Replayable sequence of binned bias corrections."""

    levels: tuple
    iterations: tuple
    config: CalibrationConfig
    converged: bool
    trace: tuple  # max relative correction per evaluated iteration

    def to_dict(self):
        return {
            "levels": [str(level) for level in self.levels],
            "iterations": [step.to_dict() for step in self.iterations],
            "config": {
                "n_bins": self.config.n_bins,
                "eta": self.config.eta,
                "c": self.config.c,
                "delta": self.config.delta,
                "max_iterations": self.config.max_iterations,
                "premium_floor": self.config.premium_floor,
                "fixed_bins": self.config.fixed_bins,
            },
            "converged": self.converged,
            "trace": list(self.trace),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            levels=tuple(payload["levels"]),
            iterations=tuple(
                IterationStep.from_dict(p) for p in payload["iterations"]
            ),
            config=CalibrationConfig(**payload["config"]),
            converged=bool(payload["converged"]),
            trace=tuple(payload["trace"]),
        )


def _apply_step(step: IterationStep, premium, level_idx, floor):
    bin_idx = step.bins.assign(premium)
    correction = np.where(
        level_idx >= 0,
        step.cell_correction[bin_idx, np.maximum(level_idx, 0)],
        step.pooled_correction[bin_idx],
    )
    return np.maximum(premium + correction, floor)


def iterate_multical_categorical(
    portfolio: Portfolio,
    premium0,
    group=None,
    config: CalibrationConfig | None = None,
):
    """Iteratively remove (premium bin x level) residual biases.

    Each iteration rebuilds exposure-weighted quantile bins on the current
    premium (unless ``config.fixed_bins``), shrinks cell biases toward the
    pooled bin bias with z = w/(w+c), and applies the damped update
    ``premium + eta * shrunk_bias``.  Iterations stop once the largest
    exposure-weighted relative correction over occupied cells drops to
    ``delta``, retaining the premium from before that negligible update.
    """
    config = config or CalibrationConfig()
    if config.c is None:
        raise ConfigError(
            "config.c is unset; pass an explicit credibility constant or use "
            "select_credibility()"
        )
    premium = _check_premium(portfolio, premium0).copy()
    labels = _resolve_group(portfolio, group)
    levels = tuple(sorted(set(labels.tolist())))
    level_idx = _level_index(labels, levels)

    bins0 = quantile_bins(premium, portfolio.exposure, config.n_bins)
    iterations = []
    trace = []
    converged = False
    while True:
        bins = bins0 if config.fixed_bins else quantile_bins(
            premium, portfolio.exposure, config.n_bins
        )
        table = shrink(
            _cell_table(portfolio, premium, bins, levels, level_idx), config.c
        )
        rel = np.zeros_like(table.shrunk_bias)
        np.divide(
            np.abs(config.eta * table.shrunk_bias), table.mean_premium,
            out=rel, where=table.occupied,
        )
        criterion = float(rel.max()) if table.occupied.any() else 0.0
        trace.append(criterion)
        if criterion <= config.delta:
            converged = True
            break
        if len(iterations) >= config.max_iterations:
            log.warning(
                "iterative calibration stopped at max_iterations=%d with "
                "criterion %.3g > delta=%.3g",
                config.max_iterations, criterion, config.delta,
            )
            break
        step = IterationStep(
            bins=bins,
            cell_correction=config.eta * table.shrunk_bias,
            pooled_correction=config.eta * table.pooled_bias,
        )
        iterations.append(step)
        premium = _apply_step(step, premium, level_idx, config.premium_floor)

    model = IterativeModel(
        levels=levels,
        iterations=tuple(iterations),
        config=config,
        converged=converged,
        trace=tuple(trace),
    )
    return premium, model


def apply_iterative(model: IterativeModel, premium, group, allow_unconverged=False):
    """Replay a fitted iterative model on new premiums and group labels.

    Premiums outside a stored bin scheme's range fall into the nearest edge
    bin; unknown sensitive levels take the pooled (z = 0) correction path.
    """
    if not model.converged and not allow_unconverged:
        raise ConfigError(
            "model did not converge; pass allow_unconverged=True to apply anyway"
        )
    premium = np.asarray(premium, dtype=np.float64).copy()
    labels = np.asarray(group, dtype=object)
    if labels.shape[0] != premium.shape[0]:
        raise DataValidationError("group labels not aligned with premiums")
    level_idx = _level_index(labels, model.levels)
    unknown = int((level_idx < 0).sum())
    if unknown:
        log.warning(
            "%d records carry sensitive levels unseen in fitting; using the "
            "pooled bin correction for them", unknown,
        )
    for step in model.iterations:
        premium = _apply_step(step, premium, level_idx, model.config.premium_floor)
    return premium


def select_credibility(
    train: Portfolio,
    validation: Portfolio,
    premium_train,
    premium_validation,
    group_train=None,
    group_validation=None,
    config: CalibrationConfig | None = None,
    grid=CREDIBILITY_GRID,
):
    """Pick the credibility constant by validation-fold Poisson deviance."""
    from .metrics import poisson_deviance

    config = config or CalibrationConfig()
    labels_train = _resolve_group(train, group_train)
    labels_val = _resolve_group(validation, group_validation)

    best = None
    for c in grid:
        cfg = replace(config, c=float(c))
        _, model = iterate_multical_categorical(train, premium_train, labels_train, cfg)
        fitted_val = apply_iterative(
            model, premium_validation, labels_val, allow_unconverged=True
        )
        deviance = poisson_deviance(
            validation.claim_count, validation.exposure, fitted_val
        )
        log.info("credibility grid: c=%g -> validation deviance %.6g", c, deviance)
        if best is None or deviance < best[1]:
            best = (float(c), deviance)
    return best[0]
