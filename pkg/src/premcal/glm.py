"""Poisson frequency GLM baseline: log link, exposure offset, IRLS fit.

Continuous rating features are encoded as exposure-weighted quantile bins
(then one-hot), categorical features as one-hot; the reference level of each
feature is its most-exposed level, so the intercept carries the bulk of the
portfolio frequency.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr
from scipy.special import xlogy

from .categorical import quantile_bins
from .data import CATEGORICAL, CONTINUOUS, Portfolio, bin_categorical
from .errors import ConfigError, ConvergenceError, DataValidationError

log = logging.getLogger(__name__)

RIDGE = 1e-8
MAX_ITERATIONS = 100
TOLERANCE = 1e-10


@dataclass(frozen=True)
class FeatureEncoder:
    """Encoding of one rating feature into dummy columns."""

    name: str
    kind: str
    levels: tuple        # non-reference levels, in column order
    reference: str
    edges: tuple = ()    # bin edges for continuous features

    def labels(self, values) -> np.ndarray:
        if self.kind == CONTINUOUS:
            if not self.edges:
                return np.full(len(values), self.reference, dtype=object)
            return bin_categorical(np.asarray(values, dtype=np.float64),
                                   np.asarray(self.edges))
        return np.asarray(values, dtype=object)

    def to_dict(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "levels": [str(level) for level in self.levels],
            "reference": str(self.reference),
            "edges": list(self.edges),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            name=payload["name"],
            kind=payload["kind"],
            levels=tuple(payload["levels"]),
            reference=payload["reference"],
            edges=tuple(payload["edges"]),
        )


@dataclass(frozen=True)
class GlmModel:
    """Fitted Poisson GLM; predictions are strictly positive frequencies."""

    coefficients: np.ndarray  # intercept first
    column_names: tuple
    encoders: tuple
    iterations: int
    log_likelihood: float

    def to_dict(self):
        return {
            "coefficients": self.coefficients.tolist(),
            "column_names": list(self.column_names),
            "encoders": [enc.to_dict() for enc in self.encoders],
            "iterations": self.iterations,
            "log_likelihood": self.log_likelihood,
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            coefficients=np.asarray(payload["coefficients"], dtype=np.float64),
            column_names=tuple(payload["column_names"]),
            encoders=tuple(FeatureEncoder.from_dict(p) for p in payload["encoders"]),
            iterations=int(payload["iterations"]),
            log_likelihood=float(payload["log_likelihood"]),
        )


def _build_encoders(portfolio: Portfolio, features, feature_bins: int):
    encoders = []
    for name in features:
        if name not in portfolio.features:
            raise ConfigError(f"unknown feature {name!r}")
        kind = portfolio.feature_kinds[name]
        values = portfolio.features[name]
        if kind == CONTINUOUS:
            scheme = quantile_bins(values, portfolio.exposure, feature_bins)
            labels = (
                bin_categorical(values, scheme.edges)
                if scheme.edges.size else np.full(len(values), "(all)", dtype=object)
            )
            edges = tuple(scheme.edges.tolist())
        else:
            labels = values
            edges = ()
        levels, inverse = np.unique(labels, return_inverse=True)
        exposure_per = np.bincount(inverse, weights=portfolio.exposure,
                                   minlength=levels.size)
        reference = levels[int(np.argmax(exposure_per))]
        rest = tuple(level for level in levels.tolist() if level != reference)
        encoders.append(FeatureEncoder(
            name=name, kind=kind, levels=rest, reference=reference, edges=edges,
        ))
    return tuple(encoders)


def _design_matrix(encoders, portfolio: Portfolio, strict: bool):
    """Dummy design matrix with intercept; returns (matrix, unseen count)."""
    n = len(portfolio)
    columns = [np.ones(n)]
    names = ["intercept"]
    unseen = 0
    for enc in encoders:
        labels = enc.labels(portfolio.features[enc.name])
        known = set(enc.levels) | {enc.reference}
        mask_unknown = np.asarray([lab not in known for lab in labels])
        if mask_unknown.any():
            if strict:
                raise DataValidationError(
                    f"feature {enc.name!r}: unexpected level "
                    f"{labels[mask_unknown][0]!r} during fitting"
                )
            unseen += int(mask_unknown.sum())
        for level in enc.levels:
            columns.append(np.asarray(labels == level, dtype=np.float64))
            names.append(f"{enc.name}={level}")
    return np.column_stack(columns), tuple(names), unseen


def _check_rank(design, names):
    _, r, pivots = qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    threshold = diag[0] * max(design.shape) * np.finfo(np.float64).eps
    deficient = pivots[diag <= threshold]
    if deficient.size:
        bad = ", ".join(names[i] for i in sorted(deficient))
        raise DataValidationError(
            f"design matrix is rank deficient; collinear columns: {bad}"
        )


def _log_likelihood(claims, fitted):
    # Poisson log-likelihood up to the ln(N!) constant
    return float((xlogy(claims, fitted) - fitted).sum())


def fit_baseline(portfolio: Portfolio, features, feature_bins: int = 10) -> GlmModel:
    """Fit the Poisson baseline on the given portfolio (typically the train fold)."""
    if len(portfolio) == 0:
        raise DataValidationError("cannot fit on an empty portfolio")
    encoders = _build_encoders(portfolio, features, feature_bins)
    design, names, _ = _design_matrix(encoders, portfolio, strict=True)
    _check_rank(design, names)

    claims = portfolio.claim_count
    offset = np.log(portfolio.exposure)
    beta = np.zeros(design.shape[1])
    beta[0] = np.log(claims.sum() / portfolio.exposure.sum())

    eta = design @ beta + offset
    fitted = np.exp(eta)
    loglik = _log_likelihood(claims, fitted)
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        working = (eta - offset) + (claims - fitted) / fitted
        weighted = design * fitted[:, None]
        normal = design.T @ weighted
        normal[np.diag_indices_from(normal)] += RIDGE
        beta = np.linalg.solve(normal, weighted.T @ working)
        eta = design @ beta + offset
        fitted = np.exp(eta)
        new_loglik = _log_likelihood(claims, fitted)
        if abs(new_loglik - loglik) <= TOLERANCE * (abs(loglik) + 1.0):
            loglik = new_loglik
            break
        loglik = new_loglik
    else:
        raise ConvergenceError(
            f"IRLS did not converge in {MAX_ITERATIONS} iterations "
            f"(last log-likelihood {loglik:.10g})"
        )

    return GlmModel(
        coefficients=beta,
        column_names=names,
        encoders=encoders,
        iterations=iterations,
        log_likelihood=loglik,
    )


def predict(model: GlmModel, portfolio: Portfolio) -> np.ndarray:
    """Frequency premiums for new records.

    Unseen categorical levels fall back to the reference level of their
    feature; the occurrence count is logged.
    """
    design, _, unseen = _design_matrix(model.encoders, portfolio, strict=False)
    if unseen:
        log.warning(
            "%d feature values unseen during fitting were mapped to their "
            "reference level", unseen,
        )
    return np.exp(design @ model.coefficients)
