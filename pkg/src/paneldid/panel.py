"""Long-format panel container and delimited-text ingestion.

The dataset is immutable: transformations return new instances. Observations
are stored sorted by (unit, period) so that every downstream computation is
independent of input row order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .periods import Period

# Canonical field names. Any further mapped column is carried as a covariate.
REQUIRED_FIELDS = ("unit", "year", "quarter", "outcome", "weight")
CLUSTER_FIELD = "cluster"


class IngestError(ValueError):
    """A delimited input failed validation."""


@dataclass(frozen=True)
class Observation:
    """One (unit, period) cell: outcome, estimation weight, covariate values."""

    unit: str
    period: Period
    outcome: float
    weight: float
    covariates: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.unit:
            raise ValueError("unit id must be a non-empty string")
        if not math.isfinite(self.outcome):
            raise ValueError(f"outcome must be finite, got {self.outcome!r}")
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ValueError(f"weight must be positive, got {self.weight!r}")
        for v in self.covariates:
            if not math.isfinite(v):
                raise ValueError(f"covariate values must be finite, got {v!r}")


@dataclass(frozen=True)
class BalanceReport:
    """Missing (unit, period) pairs relative to the full units x periods grid."""

    n_units: int
    n_periods: int
    n_observations: int
    missing: tuple[tuple[str, Period], ...]

    @property
    def is_balanced(self) -> bool:
        return not self.missing


@dataclass(frozen=True)
class PanelArrays:
    """Dense array view of a dataset, shared by the estimation code."""

    unit_codes: np.ndarray
    period_codes: np.ndarray
    cluster_codes: np.ndarray
    outcome: np.ndarray
    weight: np.ndarray
    covariates: np.ndarray  # (n, n_covariates), empty second axis when none
    units: tuple[str, ...]
    periods: tuple[Period, ...]
    clusters: tuple[str, ...]


@dataclass(frozen=True)
class PanelDataset:
    """Immutable long-format panel with at most one observation per (unit, period)."""

    observations: tuple[Observation, ...]
    covariate_names: tuple[str, ...] = ()
    cluster: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.observations:
            raise ValueError("a panel needs at least one observation")
        n_cov = len(self.covariate_names)
        if len(set(self.covariate_names)) != n_cov:
            raise ValueError("covariate names must be unique")
        seen: set[tuple[str, Period]] = set()
        for obs in self.observations:
            key = (obs.unit, obs.period)
            if key in seen:
                raise ValueError(
                    f"duplicate observation for unit {obs.unit!r} period {obs.period}"
                )
            seen.add(key)
            if len(obs.covariates) != n_cov:
                raise ValueError(
                    f"unit {obs.unit!r} period {obs.period}: expected {n_cov} "
                    f"covariate values, got {len(obs.covariates)}"
                )
        ordered = tuple(sorted(self.observations, key=lambda o: (o.unit, o.period)))
        object.__setattr__(self, "observations", ordered)
        cluster = dict(self.cluster) if self.cluster else {}
        for unit in {o.unit for o in ordered}:
            cluster.setdefault(unit, unit)
        object.__setattr__(self, "cluster", cluster)

    @cached_property
    def units(self) -> tuple[str, ...]:
        return tuple(sorted({o.unit for o in self.observations}))

    @cached_property
    def periods(self) -> tuple[Period, ...]:
        return tuple(sorted({o.period for o in self.observations}))

    @property
    def n_obs(self) -> int:
        return len(self.observations)

    @cached_property
    def arrays(self) -> PanelArrays:
        units = self.units
        periods = self.periods
        unit_ix = {u: i for i, u in enumerate(units)}
        period_ix = {p: i for i, p in enumerate(periods)}
        clusters = tuple(sorted({self.cluster[u] for u in units}))
        cluster_ix = {c: i for i, c in enumerate(clusters)}
        n = self.n_obs
        unit_codes = np.empty(n, dtype=np.intp)
        period_codes = np.empty(n, dtype=np.intp)
        cluster_codes = np.empty(n, dtype=np.intp)
        outcome = np.empty(n)
        weight = np.empty(n)
        covariates = np.empty((n, len(self.covariate_names)))
        for i, obs in enumerate(self.observations):
            unit_codes[i] = unit_ix[obs.unit]
            period_codes[i] = period_ix[obs.period]
            cluster_codes[i] = cluster_ix[self.cluster[obs.unit]]
            outcome[i] = obs.outcome
            weight[i] = obs.weight
            covariates[i] = obs.covariates
        return PanelArrays(
            unit_codes=unit_codes,
            period_codes=period_codes,
            cluster_codes=cluster_codes,
            outcome=outcome,
            weight=weight,
            covariates=covariates,
            units=units,
            periods=periods,
            clusters=clusters,
        )

    def covariate_column(self, name: str) -> np.ndarray:
        if name not in self.covariate_names:
            raise KeyError(f"unknown covariate {name!r}; have {list(self.covariate_names)}")
        j = self.covariate_names.index(name)
        return self.arrays.covariates[:, j].copy()

    def region_constant(self, name: str) -> dict[str, float]:
        """Per-unit value of a covariate that must not vary within unit."""
        col = self.covariate_column(name)
        out: dict[str, float] = {}
        for obs, v in zip(self.observations, col):
            prev = out.setdefault(obs.unit, float(v))
            if prev != v:
                raise ValueError(
                    f"covariate {name!r} varies within unit {obs.unit!r} "
                    f"({prev!r} vs {float(v)!r}); a per-region constant is required"
                )
        return out

    def with_outcome(self, outcome: Sequence[float]) -> PanelDataset:
        if len(outcome) != self.n_obs:
            raise ValueError("replacement outcome length does not match the panel")
        obs = tuple(
            Observation(o.unit, o.period, float(y), o.weight, o.covariates)
            for o, y in zip(self.observations, outcome)
        )
        return PanelDataset(obs, self.covariate_names, self.cluster)

    def drop_covariates(self) -> PanelDataset:
        obs = tuple(
            Observation(o.unit, o.period, o.outcome, o.weight, ())
            for o in self.observations
        )
        return PanelDataset(obs, (), self.cluster)


def _as_text_stream(source: IO[str] | str | Path):
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline=""), True
    return source, False


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise IngestError(
            f"row {row}: column {column!r}: could not parse {text!r} as a number"
        ) from None
    if not math.isfinite(value):
        raise IngestError(f"row {row}: column {column!r}: non-finite value {text!r}")
    return value


def _parse_int(text: str, row: int, column: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise IngestError(
            f"row {row}: column {column!r}: could not parse {text!r} as an integer"
        ) from None


def ingest_panel(
    source: IO[str] | str | Path,
    schema: Mapping[str, str] | None = None,
    *,
    require_positive_outcome: bool = True,
) -> PanelDataset:
    """Read a comma-separated panel with a header row.

    Parameters
    ----------
    source
        Text stream or path. Must be UTF-8 with columns named by `schema`.
    schema
        Map from canonical field names (unit, year, quarter, outcome, weight,
        optionally cluster, plus one entry per covariate) to column names in
        the file. When omitted, the required columns are looked up under their
        canonical names and every remaining column becomes a covariate named
        by its header.
    require_positive_outcome
        Reject non-positive outcomes (the default; levels are logged later).
        Pass False for panels whose outcome is already on a transformed scale.

    Covariates are attached in header order. Any malformed cell raises
    IngestError naming the offending row and column.
    """
    stream, owned = _as_text_stream(source)
    try:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty input: expected a header row") from None
        header = [h.strip() for h in header]
        if header and header[0].startswith("﻿"):
            header[0] = header[0].lstrip("﻿")
        position = {name: i for i, name in enumerate(header)}
        if len(position) != len(header):
            raise IngestError("duplicate column names in header")

        if schema is None:
            mapping = {f: f for f in REQUIRED_FIELDS}
            if CLUSTER_FIELD in position:
                mapping[CLUSTER_FIELD] = CLUSTER_FIELD
            extra = [
                h for h in header
                if h not in REQUIRED_FIELDS and h != CLUSTER_FIELD
            ]
            for name in extra:
                mapping[name] = name
        else:
            mapping = dict(schema)
            for f in REQUIRED_FIELDS:
                if f not in mapping:
                    raise IngestError(f"schema is missing required field {f!r}")

        for canonical, column in mapping.items():
            if column not in position:
                raise IngestError(f"missing column {column!r} (mapped to {canonical!r})")

        # Covariates keep the order their columns appear in the header.
        covariate_fields = [
            (canonical, column)
            for canonical, column in mapping.items()
            if canonical not in REQUIRED_FIELDS and canonical != CLUSTER_FIELD
        ]
        covariate_fields.sort(key=lambda pair: position[pair[1]])
        covariate_names = tuple(canonical for canonical, _ in covariate_fields)

        col = {canonical: position[column] for canonical, column in mapping.items()}
        colname = dict(mapping)

        observations: list[Observation] = []
        seen: dict[tuple[str, Period], int] = {}
        cluster: dict[str, str] = {}
        for row_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"row {row_number}: expected {len(header)} fields, got {len(row)}"
                )
            unit = row[col["unit"]].strip()
            if not unit:
                raise IngestError(f"row {row_number}: empty unit id")
            year = _parse_int(row[col["year"]], row_number, colname["year"])
            quarter = _parse_int(row[col["quarter"]], row_number, colname["quarter"])
            try:
                period = Period(year, quarter)
            except ValueError as exc:
                raise IngestError(f"row {row_number}: {exc}") from None
            outcome = _parse_float(row[col["outcome"]], row_number, colname["outcome"])
            if require_positive_outcome and outcome <= 0:
                raise IngestError(
                    f"row {row_number}: column {colname['outcome']!r} must be "
                    f"positive, got {outcome!r}"
                )
            weight = _parse_float(row[col["weight"]], row_number, colname["weight"])
            if weight <= 0:
                raise IngestError(
                    f"row {row_number}: column {colname['weight']!r} must be "
                    f"positive, got {weight!r}"
                )
            values = []
            for canonical, column in covariate_fields:
                cell = row[position[column]].strip()
                if not cell:
                    raise IngestError(
                        f"row {row_number}: column {column!r}: missing covariate value"
                    )
                values.append(_parse_float(cell, row_number, column))
            key = (unit, period)
            if key in seen:
                raise IngestError(
                    f"row {row_number}: duplicate observation for unit {unit!r} "
                    f"period {period} (first seen at row {seen[key]})"
                )
            seen[key] = row_number
            if CLUSTER_FIELD in col:
                label = row[col[CLUSTER_FIELD]].strip()
                if not label:
                    raise IngestError(f"row {row_number}: empty cluster label")
                prev = cluster.setdefault(unit, label)
                if prev != label:
                    raise IngestError(
                        f"row {row_number}: unit {unit!r} has conflicting cluster "
                        f"labels {prev!r} and {label!r}"
                    )
            observations.append(
                Observation(unit, period, outcome, weight, tuple(values))
            )
        if not observations:
            raise IngestError("no data rows after the header")
        return PanelDataset(tuple(observations), covariate_names, cluster)
    finally:
        if owned:
            stream.close()


def _fmt(value: float) -> str:
    # repr round-trips doubles exactly, so serialize/ingest is lossless.
    return repr(float(value))


def serialize_panel(
    data: PanelDataset,
    sink: IO[str] | str | Path,
    schema: Mapping[str, str] | None = None,
) -> None:
    """Write the panel back as CSV with the same schema ingest accepts."""
    mapping = dict(schema) if schema is not None else {}
    def name(canonical: str) -> str:
        return mapping.get(canonical, canonical)

    nondefault_cluster = any(data.cluster[u] != u for u in data.units)
    header = [name(f) for f in REQUIRED_FIELDS]
    if nondefault_cluster:
        header.append(name(CLUSTER_FIELD))
    header.extend(name(c) for c in data.covariate_names)

    stream, owned = (
        (open(sink, "w", encoding="utf-8", newline=""), True)
        if isinstance(sink, (str, Path))
        else (sink, False)
    )
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for obs in data.observations:
            row = [
                obs.unit,
                str(obs.period.year),
                str(obs.period.quarter),
                _fmt(obs.outcome),
                _fmt(obs.weight),
            ]
            if nondefault_cluster:
                row.append(data.cluster[obs.unit])
            row.extend(_fmt(v) for v in obs.covariates)
            writer.writerow(row)
    finally:
        if owned:
            stream.close()


def log_outcome(data: PanelDataset) -> PanelDataset:
    """Replace outcomes with their natural logs. Outcomes must be positive."""
    for obs in data.observations:
        if obs.outcome <= 0:
            raise ValueError(
                f"cannot log non-positive outcome {obs.outcome!r} for unit "
                f"{obs.unit!r} period {obs.period}"
            )
    logged = np.log([o.outcome for o in data.observations])
    return data.with_outcome(logged)


def balance_report(data: PanelDataset) -> BalanceReport:
    """List the (unit, period) cells absent from the full grid."""
    present = {(o.unit, o.period) for o in data.observations}
    missing = tuple(
        (u, p)
        for u in data.units
        for p in data.periods
        if (u, p) not in present
    )
    return BalanceReport(
        n_units=len(data.units),
        n_periods=len(data.periods),
        n_observations=data.n_obs,
        missing=missing,
    )
