"""Calibration corrections for a continuous sensitive feature.

The direct route estimates the conditional mean in the joint (premium, S)
space with a bivariate local regression and re-centers it so the average
correction at each premium level matches the marginal (premium-only)
correction.  The iterative route removes residual bias sequentially with
damped updates, shrinking the conditional correction by fixed credibility
weights z = w_loc/(w_loc + c) built once from kNN local effective exposure.

All fitted smoothers are frozen on interpolation grids, which makes models
serializable and replayable: applying a stored model to its training inputs
reproduces the fitted premiums bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .categorical import quantile_bins
from .data import Portfolio
from .errors import ConfigError, DataValidationError
from .smoothing import (
    DEGREE_CONSTANT,
    DEGREE_LINEAR,
    LocalSurface,
    SmoothConfig,
    fit_surface_1d,
    fit_surface_2d,
    knn_local_exposure,
    weighted_std,
)

log = logging.getLogger(__name__)

MODE_LOCAL_BC = "local-bc"
MODE_LOCAL_MBC = "local-mbc"
MODE_MULTI_ITER = "multi-iter-cont"


def default_knn_k(n: int) -> int:
    return min(n, max(50, math.ceil(0.01 * n)))


@dataclass(frozen=True)
class ContinuousConfig:
    """Parameters shared by the continuous-S procedures."""

    alpha: float = 0.5
    eta: float = 0.2
    c: float | None = None
    delta: float = 0.01
    max_iterations: int = 500
    premium_floor: float = 1e-6
    grid_1d: int = 256
    grid_2d: int = 64
    knn_k: int | None = None
    stop_bins_p: int = 10
    stop_bins_s: int = 10

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError("alpha must lie in (0, 1]")
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
        if self.grid_1d < 2 or self.grid_2d < 2:
            raise ConfigError("grid sizes must be >= 2")
        if self.knn_k is not None and self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if self.stop_bins_p < 1 or self.stop_bins_s < 1:
            raise ConfigError("stopping bin counts must be >= 1")


@dataclass(frozen=True)
class IterationSurfaces:
    """Frozen smoothers of one iterative update."""

    marginal: LocalSurface    # bias vs premium
    joint: LocalSurface       # bias vs (premium, S)
    centering: LocalSurface   # E[credibility-weighted conditional bias | premium]

    def to_dict(self):
        return {
            "marginal": self.marginal.to_dict(),
            "joint": self.joint.to_dict(),
            "centering": self.centering.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            marginal=LocalSurface.from_dict(payload["marginal"]),
            joint=LocalSurface.from_dict(payload["joint"]),
            centering=LocalSurface.from_dict(payload["centering"]),
        )


@dataclass(frozen=True)
class ContinuousModel:
    """Replayable continuous-S calibration model."""

    mode: str
    config: ContinuousConfig
    surfaces: dict
    iterations: tuple = ()
    credibility_surface: LocalSurface | None = None
    converged: bool = True
    trace: tuple = ()

    def to_dict(self):
        payload = {
            "mode": self.mode,
            "config": {
                "alpha": self.config.alpha,
                "eta": self.config.eta,
                "c": self.config.c,
                "delta": self.config.delta,
                "max_iterations": self.config.max_iterations,
                "premium_floor": self.config.premium_floor,
                "grid_1d": self.config.grid_1d,
                "grid_2d": self.config.grid_2d,
                "knn_k": self.config.knn_k,
                "stop_bins_p": self.config.stop_bins_p,
                "stop_bins_s": self.config.stop_bins_s,
            },
            "surfaces": {name: surf.to_dict() for name, surf in self.surfaces.items()},
            "iterations": [step.to_dict() for step in self.iterations],
            "converged": self.converged,
            "trace": list(self.trace),
        }
        if self.credibility_surface is not None:
            payload["credibility_surface"] = self.credibility_surface.to_dict()
        return payload

    @classmethod
    def from_dict(cls, payload):
        return cls(
            mode=payload["mode"],
            config=ContinuousConfig(**payload["config"]),
            surfaces={
                name: LocalSurface.from_dict(p)
                for name, p in payload["surfaces"].items()
            },
            iterations=tuple(
                IterationSurfaces.from_dict(p) for p in payload["iterations"]
            ),
            credibility_surface=(
                LocalSurface.from_dict(payload["credibility_surface"])
                if "credibility_surface" in payload else None
            ),
            converged=bool(payload["converged"]),
            trace=tuple(payload["trace"]),
        )


def _resolve_s(portfolio: Portfolio, s):
    if s is None:
        if portfolio.sensitive is None or portfolio.sensitive_kind != "continuous":
            raise DataValidationError(
                "portfolio carries no continuous sensitive attribute; "
                "pass s values explicitly"
            )
        return portfolio.sensitive
    s = np.asarray(s, dtype=np.float64)
    if s.shape[0] != len(portfolio):
        raise DataValidationError("s values not aligned with portfolio")
    if not np.all(np.isfinite(s)):
        raise DataValidationError("non-finite sensitive value")
    return s


def _check_premium(portfolio: Portfolio, premium):
    premium = np.asarray(premium, dtype=np.float64)
    if premium.shape[0] != len(portfolio):
        raise DataValidationError("premium vector not aligned with portfolio")
    if not np.all(premium > 0):
        raise DataValidationError("premiums must be strictly positive")
    return premium


def local_balance_correct(portfolio: Portfolio, premium,
                          cfg: ContinuousConfig | None = None):
    """Marginal recalibration: replace premiums by the local mean of Y given premium."""
    cfg = cfg or ContinuousConfig()
    premium = _check_premium(portfolio, premium)
    smooth = SmoothConfig(alpha=cfg.alpha, degree=DEGREE_CONSTANT)
    marginal = fit_surface_1d(
        premium, portfolio.frequency, portfolio.exposure, smooth, cfg.grid_1d
    )
    marginal = _floor_surface(marginal, cfg.premium_floor)
    model = ContinuousModel(
        mode=MODE_LOCAL_BC, config=cfg, surfaces={"marginal": marginal}
    )
    return marginal.evaluate(premium), model


def mbc_bivariate_centered(portfolio: Portfolio, premium, s=None,
                           cfg: ContinuousConfig | None = None):
    """Centered bivariate correction toward E[Y | premium, S].

    The centering step subtracts the local mean of the conditional lift at
    each premium level, so marginal calibration in the premium dimension is
    preserved while residual bias is redistributed across S.
    """
    cfg = cfg or ContinuousConfig()
    premium = _check_premium(portfolio, premium)
    s = _resolve_s(portfolio, s)
    y = portfolio.frequency
    w = portfolio.exposure

    smooth = SmoothConfig(alpha=cfg.alpha, degree=DEGREE_CONSTANT)
    marginal = fit_surface_1d(premium, y, w, smooth, cfg.grid_1d)
    joint = fit_surface_2d(premium, s, y, w, smooth, cfg.grid_2d, cfg.grid_2d)

    lift = joint.evaluate(premium, s) - marginal.evaluate(premium)
    centering = fit_surface_1d(premium, lift, w, smooth, cfg.grid_1d)

    model = ContinuousModel(
        mode=MODE_LOCAL_MBC,
        config=cfg,
        surfaces={"marginal": marginal, "joint": joint, "centering": centering},
    )
    return _eval_local_mbc(model, premium, s), model


def _eval_local_mbc(model: ContinuousModel, premium, s):
    marginal = model.surfaces["marginal"].evaluate(premium)
    lift = model.surfaces["joint"].evaluate(premium, s) - marginal
    centered = lift - model.surfaces["centering"].evaluate(premium)
    return np.maximum(marginal + centered, model.config.premium_floor)


def _floor_surface(surface: LocalSurface, floor: float) -> LocalSurface:
    if surface.values.min() >= floor:
        return surface
    return LocalSurface(
        grid_p=surface.grid_p,
        values=np.maximum(surface.values, floor),
        grid_s=surface.grid_s,
        scale_p=surface.scale_p,
        scale_s=surface.scale_s,
    )


def _correction_terms(step: IterationSurfaces, z_surface: LocalSurface,
                      premium, s):
    """Per-record damped-update correction of one stored iteration."""
    b1 = step.marginal.evaluate(premium)
    b2 = step.joint.evaluate(premium, s)
    z = z_surface.evaluate(premium, s)
    lift = z * (b2 - b1)
    return b1 + lift - step.centering.evaluate(premium)


def credibility_surface(portfolio: Portfolio, premium, s,
                        cfg: ContinuousConfig) -> LocalSurface:
    """Fixed z(p, s) grid from kNN local effective exposure around each node."""
    if cfg.c is None:
        raise ConfigError("config.c is unset")
    premium = np.asarray(premium, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    w = portfolio.exposure
    scale_p = weighted_std(premium, w)
    scale_s = weighted_std(s, w)
    grid_p = np.linspace(premium.min(), premium.max(), cfg.grid_2d)
    grid_s = np.linspace(s.min(), s.max(), cfg.grid_2d)
    if premium.min() == premium.max():
        grid_p = np.asarray([premium.min()])
    if s.min() == s.max():
        grid_s = np.asarray([s.min()])
    mesh_p, mesh_s = np.meshgrid(grid_p, grid_s, indexing="ij")
    k = cfg.knn_k if cfg.knn_k is not None else default_knn_k(len(portfolio))
    w_loc = knn_local_exposure(
        premium, s, w, k,
        query_p=mesh_p.ravel(), query_s=mesh_s.ravel(),
        scale_p=scale_p, scale_s=scale_s,
    )
    z = (w_loc / (w_loc + cfg.c)).reshape(grid_p.size, grid_s.size)
    return LocalSurface(
        grid_p=grid_p, grid_s=grid_s, values=z, scale_p=scale_p, scale_s=scale_s
    )


def iterate_multical_continuous(portfolio: Portfolio, premium0, s=None,
                                cfg: ContinuousConfig | None = None):
    """Iterative bias removal in the joint (premium, S) space.

    Credibility weights are computed once from the initial premium space and
    stay fixed; each iteration smooths residuals marginally and jointly in
    the current premium space, shrinks and re-centers the conditional
    correction, and applies a damped update.  Convergence is judged on a
    fixed grid of initial-premium and S quantile cells.
    """
    cfg = cfg or ContinuousConfig()
    if cfg.c is None:
        raise ConfigError(
            "config.c is unset; pass an explicit credibility constant or use "
            "select_credibility_continuous()"
        )
    premium = _check_premium(portfolio, premium0).copy()
    s = _resolve_s(portfolio, s)
    y = portfolio.frequency
    w = portfolio.exposure

    z_surface = credibility_surface(portfolio, premium, s, cfg)

    # fixed convergence grid: quantile cells of the initial premium and of S
    p_bins = quantile_bins(premium, w, cfg.stop_bins_p)
    s_bins = quantile_bins(s, w, cfg.stop_bins_s)
    cell = p_bins.assign(premium) * s_bins.n_bins + s_bins.assign(s)
    n_cells = p_bins.n_bins * s_bins.n_bins
    cell_w = np.bincount(cell, weights=w, minlength=n_cells)
    occupied = cell_w > 0

    smooth = SmoothConfig(alpha=cfg.alpha, degree=DEGREE_LINEAR)
    iterations = []
    trace = []
    converged = False
    while True:
        resid = y - premium
        marginal = fit_surface_1d(premium, resid, w, smooth, cfg.grid_1d)
        joint = fit_surface_2d(premium, s, resid, w, smooth,
                               cfg.grid_2d, cfg.grid_2d)
        lift = z_surface.evaluate(premium, s) * (
            joint.evaluate(premium, s) - marginal.evaluate(premium)
        )
        centering = fit_surface_1d(premium, lift, w, smooth, cfg.grid_1d)
        step = IterationSurfaces(marginal=marginal, joint=joint,
                                 centering=centering)

        btilde = _correction_terms(step, z_surface, premium, s)
        cell_b = np.bincount(cell, weights=w * btilde, minlength=n_cells)
        cell_p = np.bincount(cell, weights=w * premium, minlength=n_cells)
        rel = np.zeros(n_cells)
        np.divide(np.abs(cfg.eta * cell_b), cell_p, out=rel, where=occupied)
        criterion = float(rel.max()) if occupied.any() else 0.0
        trace.append(criterion)
        if criterion <= cfg.delta:
            converged = True
            break
        if len(iterations) >= cfg.max_iterations:
            log.warning(
                "continuous calibration stopped at max_iterations=%d with "
                "criterion %.3g > delta=%.3g",
                cfg.max_iterations, criterion, cfg.delta,
            )
            break
        iterations.append(step)
        premium = np.maximum(premium + cfg.eta * btilde, cfg.premium_floor)

    model = ContinuousModel(
        mode=MODE_MULTI_ITER,
        config=cfg,
        surfaces={},
        iterations=tuple(iterations),
        credibility_surface=z_surface,
        converged=converged,
        trace=tuple(trace),
    )
    return premium, model


def apply_continuous(model: ContinuousModel, premium, s=None,
                     allow_unconverged: bool = False):
    """Replay a fitted continuous model on new premiums (and S values).

    Queries outside the training ranges evaluate at the clamped boundary;
    the clamp count is logged.
    """
    if not model.converged and not allow_unconverged:
        raise ConfigError(
            "model did not converge; pass allow_unconverged=True to apply anyway"
        )
    premium = np.asarray(premium, dtype=np.float64).copy()

    if model.mode == MODE_LOCAL_BC:
        _warn_clamped(model.surfaces["marginal"], premium)
        return model.surfaces["marginal"].evaluate(premium)

    if s is None:
        raise DataValidationError(f"mode {model.mode!r} requires s values")
    s = np.asarray(s, dtype=np.float64)

    if model.mode == MODE_LOCAL_MBC:
        _warn_clamped(model.surfaces["joint"], premium, s)
        return _eval_local_mbc(model, premium, s)

    if model.mode != MODE_MULTI_ITER:
        raise ConfigError(f"unknown model mode {model.mode!r}")
    if model.iterations:
        _warn_clamped(model.iterations[0].joint, premium, s)
    for step in model.iterations:
        correction = _correction_terms(step, model.credibility_surface, premium, s)
        premium = np.maximum(
            premium + model.config.eta * correction, model.config.premium_floor
        )
    return premium


def _warn_clamped(surface: LocalSurface, premium, s=None):
    lo, hi = surface.range_p
    clamped = int(((premium < lo) | (premium > hi)).sum())
    if s is not None and surface.grid_s is not None:
        slo, shi = surface.range_s
        clamped += int(((s < slo) | (s > shi)).sum())
    if clamped:
        log.info("%d query coordinates outside the training range were clamped",
                 clamped)


def select_credibility_continuous(
    train: Portfolio,
    validation: Portfolio,
    premium_train,
    premium_validation,
    s_train=None,
    s_validation=None,
    cfg: ContinuousConfig | None = None,
    grid=(1.0, 10.0, 100.0, 1000.0, 10000.0),
):
    """Pick the credibility constant by validation-fold Poisson deviance."""
    from .metrics import poisson_deviance

    cfg = cfg or ContinuousConfig()
    s_train = _resolve_s(train, s_train)
    s_val = _resolve_s(validation, s_validation)

    best = None
    for c in grid:
        run_cfg = replace(cfg, c=float(c))
        _, model = iterate_multical_continuous(train, premium_train, s_train, run_cfg)
        fitted_val = apply_continuous(
            model, premium_validation, s_val, allow_unconverged=True
        )
        deviance = poisson_deviance(
            validation.claim_count, validation.exposure, fitted_val
        )
        log.info("credibility grid: c=%g -> validation deviance %.6g", c, deviance)
        if best is None or deviance < best[1]:
            best = (float(c), deviance)
    return best[0]
