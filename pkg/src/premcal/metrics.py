"""Evaluation and diagnostics: deviance, Gini, Bregman losses, bias tables.

The diagnostics mirror what the calibration procedures enforce: residual
bias tables on (premium bin x group) cells, the multicalibration error
summary built from them, and empirical convex-order comparisons via weighted
means, variances and stop-loss transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .categorical import BinScheme, CellBiasTable, cell_biases, quantile_bins
from .data import CATEGORICAL, CONTINUOUS, Portfolio, bin_categorical
from .errors import ConfigError, DataValidationError

POOLED_LABEL = "_pooled"
ENVELOPE_MIN_LABEL = "_envelope_min"
ENVELOPE_MAX_LABEL = "_envelope_max"


def poisson_deviance(claims, exposure, premium) -> float:
    """Poisson deviance of frequency premiums with exposure offsets.

    D = 2 sum_i [ N_i ln(N_i / (w_i pi_i)) - N_i + w_i pi_i ], with the
    0 ln 0 := 0 convention at N = 0.
    """
    claims = np.asarray(claims, dtype=np.float64)
    exposure = np.asarray(exposure, dtype=np.float64)
    premium = np.asarray(premium, dtype=np.float64)
    if not np.all(premium > 0):
        raise DataValidationError("premiums must be strictly positive")
    if not np.all(exposure > 0):
        raise DataValidationError("exposures must be strictly positive")
    fitted = exposure * premium
    terms = xlogy(claims, claims / fitted) - claims + fitted
    return float(2.0 * terms.sum())


def bregman_loss(y, m, family: str = "poisson"):
    """Bregman divergence L(y, m) for the Poisson or Gaussian generator."""
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if family == "poisson":
        if not np.all(m > 0):
            raise DataValidationError("poisson Bregman loss needs m > 0")
        out = xlogy(y, y / m) - y + m
    elif family == "gaussian":
        out = (y - m) ** 2
    else:
        raise ConfigError(f"unknown Bregman family {family!r}")
    if out.ndim == 0:
        return float(out)
    return out


def gini_coefficient(premium, claims, exposure) -> float:
    """Gini lift coefficient from the claims concentration curve.

    Records are pooled at equal premiums (the ordering carries no
    information inside a tie), then the concentration curve of cumulative
    claim share against cumulative exposure share is integrated with the
    trapezoidal rule: Gini = 1 - 2 * area.  Constant premiums give 0.
    """
    premium = np.asarray(premium, dtype=np.float64)
    claims = np.asarray(claims, dtype=np.float64)
    exposure = np.asarray(exposure, dtype=np.float64)
    total_claims = claims.sum()
    if total_claims <= 0:
        raise DataValidationError("gini coefficient undefined: total claims are zero")

    distinct, inverse = np.unique(premium, return_inverse=True)
    claim_per = np.bincount(inverse, weights=claims, minlength=distinct.size)
    expo_per = np.bincount(inverse, weights=exposure, minlength=distinct.size)

    claim_share = np.concatenate(([0.0], np.cumsum(claim_per) / total_claims))
    expo_share = np.concatenate(([0.0], np.cumsum(expo_per) / exposure.sum()))
    area = float(np.trapezoid(claim_share, expo_share))
    return 1.0 - 2.0 * area


@dataclass(frozen=True)
class DiagnosticsReport:
    """Summary metrics plus the per-cell residual bias table."""

    deviance: float
    gini: float
    bias_table: CellBiasTable
    multical_error_max: float
    multical_error_mean: float
    global_balance_gap: float
    envelope: np.ndarray  # (n_bins, 2): min/max cell bias across groups

    def to_json_dict(self) -> dict:
        return {
            "deviance": self.deviance,
            "gini": self.gini,
            "multical_error": {
                "max": self.multical_error_max,
                "weighted_mean": self.multical_error_mean,
            },
            "global_balance_gap": self.global_balance_gap,
        }

    def bias_rows(self):
        """Bias-table rows: per-cell, pooled, and min/max envelope lines."""
        table = self.bias_table
        lo, hi = table.bins.bounds()
        rows = []
        for k in range(table.bins.n_bins):
            for l, level in enumerate(table.levels):
                rows.append({
                    "bin_index": k,
                    "bin_lo": lo[k],
                    "bin_hi": hi[k],
                    "group": str(level),
                    "exposure": table.cell_exposure[k, l],
                    "mean_bias": (
                        table.cell_bias[k, l] if table.occupied[k, l] else None
                    ),
                })
            rows.append({
                "bin_index": k,
                "bin_lo": lo[k],
                "bin_hi": hi[k],
                "group": POOLED_LABEL,
                "exposure": table.bin_exposure[k],
                "mean_bias": self.bias_table.pooled_bias[k],
            })
            for label, column in (
                (ENVELOPE_MIN_LABEL, 0), (ENVELOPE_MAX_LABEL, 1),
            ):
                rows.append({
                    "bin_index": k,
                    "bin_lo": lo[k],
                    "bin_hi": hi[k],
                    "group": label,
                    "exposure": table.bin_exposure[k],
                    "mean_bias": self.envelope[k, column],
                })
        return rows


def grouping_labels(portfolio: Portfolio, s_bins: int = 10):
    """Group labels for diagnostics: levels, or quantile-bin labels of a
    continuous sensitive attribute."""
    if portfolio.sensitive is None:
        raise DataValidationError("portfolio carries no sensitive attribute")
    if portfolio.sensitive_kind == CATEGORICAL:
        return portfolio.sensitive
    scheme = quantile_bins(portfolio.sensitive, portfolio.exposure, s_bins)
    if scheme.edges.size == 0:
        return np.full(len(portfolio), "(all)", dtype=object)
    return bin_categorical(portfolio.sensitive, scheme.edges)


def residual_bias_table(portfolio: Portfolio, premium, bins: BinScheme,
                        group=None, s_bins: int = 10) -> CellBiasTable:
    """Exposure-weighted mean residual per (premium bin, group) cell.

    ``group`` may be explicit labels; otherwise the portfolio's sensitive
    attribute is used, quantile-binned into ``s_bins`` groups when
    continuous.
    """
    if group is None:
        group = grouping_labels(portfolio, s_bins=s_bins)
    return cell_biases(portfolio, premium, bins, group)


def diagnostics_report(portfolio: Portfolio, premium, n_bins: int = 10,
                       group=None, s_bins: int = 10) -> DiagnosticsReport:
    """Assemble the full diagnostics for one premium vector."""
    premium = np.asarray(premium, dtype=np.float64)
    bins = quantile_bins(premium, portfolio.exposure, n_bins)
    table = residual_bias_table(portfolio, premium, bins, group=group, s_bins=s_bins)

    occupied = table.occupied
    abs_bias = np.abs(table.cell_bias)
    weight = table.cell_exposure
    multical_max = float(abs_bias[occupied].max()) if occupied.any() else 0.0
    multical_mean = (
        float((abs_bias * weight).sum() / weight.sum()) if weight.sum() > 0 else 0.0
    )

    envelope = np.zeros((table.bins.n_bins, 2))
    for k in range(table.bins.n_bins):
        row = table.cell_bias[k][occupied[k]]
        if row.size:
            envelope[k, 0] = row.min()
            envelope[k, 1] = row.max()

    total_claims = portfolio.claim_count.sum()
    balance_gap = float(
        ((portfolio.exposure * premium).sum() - total_claims) / total_claims
    )
    return DiagnosticsReport(
        deviance=poisson_deviance(portfolio.claim_count, portfolio.exposure, premium),
        gini=gini_coefficient(premium, portfolio.claim_count, portfolio.exposure),
        bias_table=table,
        multical_error_max=multical_max,
        multical_error_mean=multical_mean,
        global_balance_gap=balance_gap,
        envelope=envelope,
    )


@dataclass(frozen=True)
class ConvexOrderReport:
    """Empirical convex-order comparison of two weighted samples."""

    mean_a: float
    mean_b: float
    var_a: float
    var_b: float
    grid: np.ndarray
    stop_loss_a: np.ndarray
    stop_loss_b: np.ndarray
    violations: np.ndarray  # grid points where stop_loss_a > stop_loss_b + tol
    tolerance: float

    @property
    def means_equal(self) -> bool:
        scale = max(abs(self.mean_a), abs(self.mean_b), 1.0)
        return abs(self.mean_a - self.mean_b) <= self.tolerance * scale

    @property
    def ordered(self) -> bool:
        return self.violations.size == 0


def _weighted_stop_loss(values, weights, grid):
    excess = np.maximum(values[None, :] - grid[:, None], 0.0)
    return excess @ weights / weights.sum()


def convex_order_check(a, weights_a, b, weights_b, grid_size: int = 100,
                       tolerance: float = 1e-9) -> ConvexOrderReport:
    """Test a <=_cx b empirically: means, variances and stop-loss transforms.

    The stop-loss grid spans the pooled range of both samples; violations
    are grid points where the stop-loss of ``a`` exceeds that of ``b`` by
    more than the tolerance.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    wa = np.asarray(weights_a, dtype=np.float64)
    wb = np.asarray(weights_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise DataValidationError("convex order check needs non-empty samples")
    if grid_size < 2:
        raise ConfigError("grid_size must be >= 2")

    mean_a = float(np.average(a, weights=wa))
    mean_b = float(np.average(b, weights=wb))
    var_a = float(np.average((a - mean_a) ** 2, weights=wa))
    var_b = float(np.average((b - mean_b) ** 2, weights=wb))

    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    grid = np.linspace(lo, hi, grid_size)
    sl_a = _weighted_stop_loss(a, wa, grid)
    sl_b = _weighted_stop_loss(b, wb, grid)
    violations = grid[sl_a > sl_b + tolerance]
    return ConvexOrderReport(
        mean_a=mean_a,
        mean_b=mean_b,
        var_a=var_a,
        var_b=var_b,
        grid=grid,
        stop_loss_a=sl_a,
        stop_loss_b=sl_b,
        violations=violations,
        tolerance=tolerance,
    )
