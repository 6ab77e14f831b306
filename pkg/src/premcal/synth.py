"""Synthetic portfolios with a known true frequency surface.

The generator draws independent rating features, an optional sensitive
attribute with a controllable effect on the true mean, exposures in
(0.05, 1], and Poisson claim counts.  Because the true mean is returned
alongside, every calibration property can be tested against an exact oracle.
``distorted_baseline`` produces miscalibrated starting premiums: a scale and
power distortion of the true mean, optionally recomputed without the
sensitive effect ("drop-S") to create group-dependent residual bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CATEGORICAL, CONTINUOUS, Portfolio
from .errors import ConfigError

FEATURE_NAMES = ("x1", "x2", "x3")
CAT_LEVELS = ("a", "b", "c")


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; the linear predictor is
    intercept + beta_x1*x1 + beta_x2*x2 + effect[x3] + beta_s*score(S)."""

    n: int
    seed: int
    group_kind: str = CATEGORICAL
    n_levels: int = 3
    beta_s: float = 0.0
    intercept: float = float(np.log(0.1))
    beta_x1: float = 0.35
    beta_x2: float = -0.25
    cat_effects: tuple = (0.0, 0.2, -0.15)
    exposure_min: float = 0.05

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.group_kind not in (CATEGORICAL, CONTINUOUS):
            raise ConfigError("group_kind must be 'categorical' or 'continuous'")
        if self.n_levels < 1:
            raise ConfigError("n_levels must be >= 1")
        if len(self.cat_effects) != len(CAT_LEVELS):
            raise ConfigError(f"cat_effects must have {len(CAT_LEVELS)} entries")
        if not (0.0 < self.exposure_min < 1.0):
            raise ConfigError("exposure_min must lie in (0, 1)")


@dataclass(frozen=True)
class SynthData:
    """Generated portfolio plus the exact mean surfaces behind it."""

    portfolio: Portfolio
    true_mu: np.ndarray
    mu_no_s: np.ndarray  # true mean with the sensitive effect removed


def _sensitive_score(cfg: SynthConfig, sensitive):
    if cfg.group_kind == CATEGORICAL:
        idx = np.asarray([int(level[1:]) for level in sensitive], dtype=np.float64)
        return idx - (cfg.n_levels - 1) / 2.0
    return np.asarray(sensitive, dtype=np.float64) - 0.5


def generate(cfg: SynthConfig) -> SynthData:
    """Draw a portfolio from the configured model, deterministically per seed."""
    # Philox is counter-based, so the stream is reproducible and could be
    # partitioned across workers without changing the draws
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    n = cfg.n

    exposure = 1.0 - rng.uniform(0.0, 1.0 - cfg.exposure_min, size=n)
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    x3 = np.asarray(CAT_LEVELS, dtype=object)[rng.integers(0, len(CAT_LEVELS), size=n)]

    if cfg.group_kind == CATEGORICAL:
        level_idx = rng.integers(0, cfg.n_levels, size=n)
        sensitive = np.asarray([f"g{i}" for i in range(cfg.n_levels)],
                               dtype=object)[level_idx]
        score = level_idx.astype(np.float64) - (cfg.n_levels - 1) / 2.0
    else:
        sensitive = rng.uniform(0.0, 1.0, size=n)
        score = sensitive - 0.5

    x3_idx = {level: i for i, level in enumerate(CAT_LEVELS)}
    effects = np.asarray(cfg.cat_effects)[[x3_idx[lev] for lev in x3]]
    linear = cfg.intercept + cfg.beta_x1 * x1 + cfg.beta_x2 * x2 + effects
    mu_no_s = np.exp(linear)
    mu = np.exp(linear + cfg.beta_s * score)

    claims = rng.poisson(exposure * mu).astype(np.float64)

    portfolio = Portfolio(
        claim_count=claims,
        exposure=exposure,
        sensitive=sensitive,
        sensitive_kind=cfg.group_kind,
        features={"x1": x1, "x2": x2, "x3": x3},
        feature_kinds={"x1": CONTINUOUS, "x2": CONTINUOUS, "x3": CATEGORICAL},
    )
    return SynthData(portfolio=portfolio, true_mu=mu, mu_no_s=mu_no_s)


def distorted_baseline(data: SynthData, scale: float = 1.0, power: float = 1.0,
                       drop_s: bool = False) -> np.ndarray:
    """Miscalibrated baseline premium: scale * mu^power, optionally without
    the sensitive effect."""
    if not scale > 0:
        raise ConfigError("scale must be > 0")
    base = data.mu_no_s if drop_s else data.true_mu
    return scale * base ** power
