"""Columnar portfolio data model, CSV ingestion and deterministic splitting.

A portfolio holds one row per policy: claim count, exposure in policy-years,
optional baseline frequency premium, an optional sensitive attribute
(categorical label or continuous scalar) and an ordered set of rating
features.  All numeric columns are float64; claim counts are stored as reals
so aggregated or capped datasets load unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import ConfigError, DataValidationError, SchemaError

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"

SPLIT_LABELS = ("train", "validation", "test")


@dataclass(frozen=True)
class PolicyRecord:
    """One policy, as a plain row view of the columnar portfolio."""

    claim_count: float
    exposure: float
    baseline_premium: float | None
    sensitive: object
    features: dict

    @property
    def frequency(self) -> float:
        return self.claim_count / self.exposure


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping used by :func:`load_csv`.

    ``feature_kinds`` maps feature column names to ``"categorical"`` or
    ``"continuous"``; unlisted features default to continuous when the column
    parses as numeric and categorical otherwise.
    """

    id_column: str = "IDpol"
    claims_column: str = "ClaimNb"
    exposure_column: str = "Exposure"
    feature_columns: tuple = ()
    feature_kinds: dict = field(default_factory=dict)
    sensitive_column: str | None = None
    sensitive_kind: str | None = None
    premium_column: str | None = None
    split_column: str | None = None


class Portfolio:
    """Immutable columnar collection of policies.

    Construction validates the core invariants (positive exposure,
    non-negative claim counts, positive baseline premiums).  All arrays are
    copied and frozen so a portfolio can be shared freely.
    """

    def __init__(
        self,
        claim_count,
        exposure,
        ids=None,
        baseline_premium=None,
        sensitive=None,
        sensitive_kind=None,
        features=None,
        feature_kinds=None,
        split_tag=None,
    ):
        self.claim_count = _as_float_column(claim_count, "claim_count")
        self.exposure = _as_float_column(exposure, "exposure")
        n = self.claim_count.shape[0]
        if self.exposure.shape[0] != n:
            raise DataValidationError("claim_count and exposure lengths differ")

        bad = np.flatnonzero(~(self.exposure > 0.0))
        if bad.size:
            raise DataValidationError(
                f"non-positive exposure at row {bad[0]} (value {self.exposure[bad[0]]!r})"
            )
        bad = np.flatnonzero(self.claim_count < 0.0)
        if bad.size:
            raise DataValidationError(f"negative claim count at row {bad[0]}")

        if ids is None:
            ids = np.arange(1, n + 1)
        self.ids = np.asarray(ids)
        if self.ids.shape[0] != n:
            raise DataValidationError("ids length differs from claim_count")

        if baseline_premium is not None:
            baseline_premium = _as_float_column(baseline_premium, "baseline_premium")
            if baseline_premium.shape[0] != n:
                raise DataValidationError("baseline_premium length differs")
            bad = np.flatnonzero(~(baseline_premium > 0.0))
            if bad.size:
                raise DataValidationError(
                    f"non-positive baseline premium at row {bad[0]}"
                )
        self.baseline_premium = baseline_premium

        if sensitive is not None:
            if sensitive_kind not in (CATEGORICAL, CONTINUOUS):
                raise ConfigError(
                    "sensitive_kind must be 'categorical' or 'continuous'"
                )
            if sensitive_kind == CONTINUOUS:
                sensitive = _as_float_column(sensitive, "sensitive")
                if not np.all(np.isfinite(sensitive)):
                    raise DataValidationError("non-finite continuous sensitive value")
            else:
                sensitive = np.asarray(sensitive, dtype=object)
            if sensitive.shape[0] != n:
                raise DataValidationError("sensitive length differs")
        else:
            sensitive_kind = None
        self.sensitive = sensitive
        self.sensitive_kind = sensitive_kind

        self.features = {}
        self.feature_kinds = {}
        for name, col in (features or {}).items():
            kind = (feature_kinds or {}).get(name, CONTINUOUS)
            if kind == CONTINUOUS:
                col = _as_float_column(col, name)
            else:
                col = np.asarray(col, dtype=object)
            if col.shape[0] != n:
                raise DataValidationError(f"feature {name!r} length differs")
            self.features[name] = col
            self.feature_kinds[name] = kind

        if split_tag is not None:
            split_tag = np.asarray(split_tag, dtype=object)
            if split_tag.shape[0] != n:
                raise DataValidationError("split_tag length differs")
            unknown = set(split_tag.tolist()) - set(SPLIT_LABELS)
            if unknown:
                raise DataValidationError(f"unknown split tags: {sorted(unknown)}")
        self.split_tag = split_tag

        for arr in self._columns():
            arr.setflags(write=False)

    # -- basic introspection ------------------------------------------------

    def _columns(self):
        cols = [self.claim_count, self.exposure, self.ids]
        if self.baseline_premium is not None:
            cols.append(self.baseline_premium)
        if self.sensitive is not None:
            cols.append(self.sensitive)
        cols.extend(self.features.values())
        if self.split_tag is not None:
            cols.append(self.split_tag)
        return cols

    def __len__(self):
        return self.claim_count.shape[0]

    @property
    def n(self) -> int:
        return len(self)

    @property
    def frequency(self) -> np.ndarray:
        """Observed claim frequency Y = claim_count / exposure."""
        return self.claim_count / self.exposure

    @property
    def schema(self):
        """Ordered (name, kind) pairs for every stored field."""
        fields = [("id", "id"), ("claim_count", "claims"), ("exposure", "exposure")]
        fields += [(name, kind) for name, kind in self.feature_kinds.items()]
        if self.sensitive is not None:
            fields.append(("sensitive", self.sensitive_kind))
        if self.baseline_premium is not None:
            fields.append(("baseline_premium", CONTINUOUS))
        return tuple(fields)

    def record(self, i: int) -> PolicyRecord:
        return PolicyRecord(
            claim_count=float(self.claim_count[i]),
            exposure=float(self.exposure[i]),
            baseline_premium=(
                None if self.baseline_premium is None else float(self.baseline_premium[i])
            ),
            sensitive=None if self.sensitive is None else self.sensitive[i],
            features={name: col[i] for name, col in self.features.items()},
        )

    # -- derived portfolios -------------------------------------------------

    def subset(self, mask) -> "Portfolio":
        mask = np.asarray(mask)
        return Portfolio(
            claim_count=self.claim_count[mask],
            exposure=self.exposure[mask],
            ids=self.ids[mask],
            baseline_premium=(
                None if self.baseline_premium is None else self.baseline_premium[mask]
            ),
            sensitive=None if self.sensitive is None else self.sensitive[mask],
            sensitive_kind=self.sensitive_kind,
            features={name: col[mask] for name, col in self.features.items()},
            feature_kinds=dict(self.feature_kinds),
            split_tag=None if self.split_tag is None else self.split_tag[mask],
        )

    def fold(self, tag: str) -> "Portfolio":
        if self.split_tag is None:
            raise DataValidationError("portfolio has no split tags; call split() first")
        if tag not in SPLIT_LABELS:
            raise ConfigError(f"unknown fold {tag!r}")
        return self.subset(self.split_tag == tag)

    def fold_mask(self, tag: str) -> np.ndarray:
        if self.split_tag is None:
            raise DataValidationError("portfolio has no split tags; call split() first")
        return np.asarray(self.split_tag == tag)

    def with_split_tag(self, split_tag) -> "Portfolio":
        return Portfolio(
            claim_count=self.claim_count,
            exposure=self.exposure,
            ids=self.ids,
            baseline_premium=self.baseline_premium,
            sensitive=self.sensitive,
            sensitive_kind=self.sensitive_kind,
            features=self.features,
            feature_kinds=self.feature_kinds,
            split_tag=split_tag,
        )


def _as_float_column(values, name):
    arr = np.asarray(values, dtype=np.float64).copy()
    if arr.ndim != 1:
        raise DataValidationError(f"{name} must be one-dimensional")
    return arr


def _parse_numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
    raw = frame[column]
    parsed = pd.to_numeric(raw, errors="coerce")
    bad = parsed.isna() & ~raw.isna()
    bad |= raw.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataValidationError(
            f"column {column!r}: unparseable numeric value {raw.iloc[row]!r} at row {row}"
        )
    return parsed.to_numpy(dtype=np.float64)


def _is_numeric(frame: pd.DataFrame, column: str) -> bool:
    parsed = pd.to_numeric(frame[column], errors="coerce")
    return bool(parsed.notna().all() and len(parsed))


def load_csv(path, schema: CsvSchema) -> Portfolio:
    """Read a portfolio from a CSV file.

    The file must carry a header row; comma separator, decimal point and
    UTF-8 encoding are assumed.  Row order is preserved.
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=True, encoding="utf-8")

    required = [schema.id_column, schema.claims_column, schema.exposure_column]
    required += list(schema.feature_columns)
    if schema.sensitive_column:
        required.append(schema.sensitive_column)
    if schema.premium_column:
        required.append(schema.premium_column)
    if schema.split_column:
        required.append(schema.split_column)
    for column in required:
        if column not in frame.columns:
            raise SchemaError(f"missing column {column!r} in {path}")

    claim_count = _parse_numeric(frame, schema.claims_column)
    exposure = _parse_numeric(frame, schema.exposure_column)

    features = {}
    feature_kinds = {}
    for name in schema.feature_columns:
        kind = schema.feature_kinds.get(name)
        if kind is None:
            kind = CONTINUOUS if _is_numeric(frame, name) else CATEGORICAL
        if kind == CONTINUOUS:
            features[name] = _parse_numeric(frame, name)
        else:
            features[name] = frame[name].to_numpy(dtype=object)
        feature_kinds[name] = kind

    sensitive = None
    sensitive_kind = None
    if schema.sensitive_column:
        sensitive_kind = schema.sensitive_kind
        if sensitive_kind is None:
            sensitive_kind = (
                CONTINUOUS if _is_numeric(frame, schema.sensitive_column) else CATEGORICAL
            )
        if sensitive_kind == CONTINUOUS:
            sensitive = _parse_numeric(frame, schema.sensitive_column)
        else:
            sensitive = frame[schema.sensitive_column].to_numpy(dtype=object)

    premium = None
    if schema.premium_column:
        premium = _parse_numeric(frame, schema.premium_column)

    split_tag = None
    if schema.split_column:
        split_tag = frame[schema.split_column].to_numpy(dtype=object)

    ids = frame[schema.id_column].to_numpy(dtype=object)
    numeric_ids = pd.to_numeric(frame[schema.id_column], errors="coerce")
    if numeric_ids.notna().all():
        ids = numeric_ids.to_numpy(dtype=np.int64)

    return Portfolio(
        claim_count=claim_count,
        exposure=exposure,
        ids=ids,
        baseline_premium=premium,
        sensitive=sensitive,
        sensitive_kind=sensitive_kind,
        features=features,
        feature_kinds=feature_kinds,
        split_tag=split_tag,
    )


def _format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(portfolio: Portfolio, path, schema: CsvSchema | None = None,
              extra_columns: dict | None = None) -> None:
    """Write a portfolio back to CSV with round-trip float formatting."""
    schema = schema or CsvSchema(
        feature_columns=tuple(portfolio.features),
        premium_column="Premium" if portfolio.baseline_premium is not None else None,
        sensitive_column="Sensitive" if portfolio.sensitive is not None else None,
        split_column="Split" if portfolio.split_tag is not None else None,
    )
    columns = {
        schema.id_column: portfolio.ids,
        schema.claims_column: portfolio.claim_count,
        schema.exposure_column: portfolio.exposure,
    }
    for name in portfolio.features:
        columns[name] = portfolio.features[name]
    if portfolio.sensitive is not None and schema.sensitive_column:
        columns[schema.sensitive_column] = portfolio.sensitive
    if portfolio.baseline_premium is not None and schema.premium_column:
        columns[schema.premium_column] = portfolio.baseline_premium
    if portfolio.split_tag is not None and schema.split_column:
        columns[schema.split_column] = portfolio.split_tag
    for name, col in (extra_columns or {}).items():
        columns[name] = col

    header = ",".join(columns)
    rows = []
    n = len(portfolio)
    cols = list(columns.values())
    for i in range(n):
        rows.append(",".join(_format_value(col[i]) for col in cols))
    text = header + "\n" + "\n".join(rows) + "\n"
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text)


def _apportion(n: int, fractions) -> list:
    """Largest-remainder apportionment of n items to the three folds."""
    raw = [f * n for f in fractions]
    counts = [math.floor(r) for r in raw]
    remainder = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def split(portfolio: Portfolio, fractions, seed: int) -> Portfolio:
    """Tag every record with train/validation/test, deterministically.

    When the portfolio carries a categorical sensitive attribute the split is
    stratified by its levels so small groups stay represented in every fold.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ConfigError("expected three split fractions")
    if any(f < 0 for f in fractions):
        raise ConfigError("split fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-12:
        raise ConfigError(f"split fractions sum to {sum(fractions)!r}, not 1")

    rng = np.random.default_rng(seed)
    n = len(portfolio)
    tags = np.empty(n, dtype=object)

    if portfolio.sensitive_kind == CATEGORICAL:
        levels = sorted(set(portfolio.sensitive.tolist()))
        strata = [np.flatnonzero(portfolio.sensitive == level) for level in levels]
    else:
        strata = [np.arange(n)]

    for idx in strata:
        perm = idx[rng.permutation(idx.size)]
        counts = _apportion(idx.size, fractions)
        start = 0
        for label, count in zip(SPLIT_LABELS, counts):
            tags[perm[start:start + count]] = label
            start += count

    return portfolio.with_split_tag(tags)


def _format_edge(e: float) -> str:
    return format(float(e), "g")


def bin_categorical(values, edges) -> np.ndarray:
    """Map real values to right-closed interval labels.

    Values at or below the first edge fall into the first bin, values above
    the last edge into the overflow bin.  Labels follow the
    ``(lo,hi]`` / ``>hi`` convention, with 0 as the displayed lower bound of
    the first bin for non-negative data.
    """
    values = np.asarray(values, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size == 0:
        raise ConfigError("edges must be a non-empty 1-d sequence")
    if np.any(np.diff(edges) <= 0):
        raise ConfigError("edges must be strictly ascending")

    lo = "0" if values.size and values.min() >= 0 else "-inf"
    labels = [f"({lo},{_format_edge(edges[0])}]"]
    for a, b in zip(edges[:-1], edges[1:]):
        labels.append(f"({_format_edge(a)},{_format_edge(b)}]")
    labels.append(f">{_format_edge(edges[-1])}")
    labels = np.asarray(labels, dtype=object)

    idx = np.searchsorted(edges, values, side="left")
    return labels[idx]
