"""Design-matrix builders for the regional exposure regressions.

Every builder turns a panel plus a treatment design into a DesignMatrix for
the engine: indicator treatment columns first, then any planned covariate
columns. Fixed effects are never built here; the engine absorbs them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Mapping, Sequence

import numpy as np

from .bite import SwitcherGroup, TreatmentDesign
from .engine import DesignMatrix
from .panel import PanelDataset, _as_text_stream
from .periods import Period

DEFAULT_CUTOFF = Period(2014, 2)
FULL_INCREASE_YEARS = (2016, 2018, 2019, 2020, 2021)
SHORT_INCREASE_YEARS = (2016, 2018)


class DesignKind(enum.Enum):
    BASELINE = "baseline"
    EVENT_STUDY = "event_study"
    GROWTH_INTERACTION = "growth_interaction"
    INCREASES = "increases"
    MULTI_GROUP = "multi_group"
    STAGGERED_TWFE = "staggered_twfe"


@dataclass(frozen=True)
class CovariateTerm:
    """One planned covariate block.

    `characteristic` names a per-region constant carried by the panel. With
    `by_time` the block expands into one column per period (the first period
    omitted); `by_flag` further multiplies by a second region constant.
    """

    characteristic: str
    by_time: bool = True
    by_flag: str | None = None

    def __str__(self) -> str:
        parts = [self.characteristic]
        if self.by_time:
            parts.append("time")
        if self.by_flag:
            parts.append(self.by_flag)
        return "*".join(parts)

    @classmethod
    def parse(cls, text: str) -> CovariateTerm:
        tokens = [t.strip() for t in text.split("*") if t.strip()]
        if not tokens:
            raise ValueError(f"empty covariate term in {text!r}")
        characteristic, by_time, by_flag = tokens[0], False, None
        for tok in tokens[1:]:
            if tok == "time":
                by_time = True
            elif by_flag is None:
                by_flag = tok
            else:
                raise ValueError(f"covariate term {text!r} names two flags")
        return cls(characteristic, by_time=by_time, by_flag=by_flag)


@dataclass(frozen=True)
class DidSpec:
    """Estimation recipe: which design to build and with what settings."""

    kind: DesignKind
    cutoff: Period = DEFAULT_CUTOFF
    baseline: Period = DEFAULT_CUTOFF
    increase_years: tuple[int, ...] = FULL_INCREASE_YEARS
    placebo: bool = False
    covariates: tuple[CovariateTerm, ...] = ()

    def __post_init__(self) -> None:
        years = tuple(self.increase_years)
        if len(set(years)) != len(years):
            raise ValueError(f"increase years contain duplicates: {years}")
        if any(years[i] >= years[i + 1] for i in range(len(years) - 1)):
            raise ValueError(f"increase years must be strictly increasing: {years}")
        object.__setattr__(self, "increase_years", years)


_SPEC_KEYS = ("kind", "cutoff", "baseline", "increase_years", "placebo", "covariates")


def load_spec(source: IO[str] | str | Path) -> DidSpec:
    """Parse a flat `key = value` spec file.

    Recognized keys: kind, cutoff, baseline, increase_years, placebo,
    covariates. Lines starting with '#' are comments. `covariates` is a
    comma-separated list of terms like `east*time` or `popshare*time*east`.
    """
    stream, owned = _as_text_stream(source)
    try:
        raw: dict[str, str] = {}
        for line_number, line in enumerate(stream, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ValueError(f"line {line_number}: expected 'key = value', got {text!r}")
            key, _, value = text.partition("=")
            key = key.strip()
            if key not in _SPEC_KEYS:
                raise ValueError(
                    f"line {line_number}: unknown key {key!r}; valid keys: {', '.join(_SPEC_KEYS)}"
                )
            if key in raw:
                raise ValueError(f"line {line_number}: duplicate key {key!r}")
            raw[key] = value.strip()
    finally:
        if owned:
            stream.close()
    if "kind" not in raw:
        raise ValueError("spec file must set 'kind'")
    try:
        kind = DesignKind(raw["kind"])
    except ValueError:
        valid = ", ".join(k.value for k in DesignKind)
        raise ValueError(f"unknown design kind {raw['kind']!r}; valid kinds: {valid}") from None
    kwargs: dict = {"kind": kind}
    if "cutoff" in raw:
        kwargs["cutoff"] = Period.parse(raw["cutoff"])
    if "baseline" in raw:
        kwargs["baseline"] = Period.parse(raw["baseline"])
    if "increase_years" in raw:
        kwargs["increase_years"] = tuple(
            int(tok.strip()) for tok in raw["increase_years"].split(",") if tok.strip()
        )
    if "placebo" in raw:
        value = raw["placebo"].lower()
        if value not in ("true", "false"):
            raise ValueError(f"placebo must be 'true' or 'false', got {raw['placebo']!r}")
        kwargs["placebo"] = value == "true"
    if "covariates" in raw and raw["covariates"]:
        kwargs["covariates"] = tuple(
            CovariateTerm.parse(tok) for tok in raw["covariates"].split(",") if tok.strip()
        )
    return DidSpec(**kwargs)


def dump_spec(spec: DidSpec) -> str:
    lines = [f"kind = {spec.kind.value}"]
    lines.append(f"cutoff = {spec.cutoff}")
    lines.append(f"baseline = {spec.baseline}")
    if spec.increase_years:
        lines.append("increase_years = " + ", ".join(str(y) for y in spec.increase_years))
    lines.append(f"placebo = {'true' if spec.placebo else 'false'}")
    if spec.covariates:
        lines.append("covariates = " + ", ".join(str(t) for t in spec.covariates))
    return "\n".join(lines) + "\n"


def _unit_lookup(data: PanelDataset, values: Mapping[str, object], what: str) -> list:
    missing = [u for u in data.units if u not in values]
    if missing:
        raise ValueError(f"{what} missing for unit(s) {missing[:5]}" +
                         (" ..." if len(missing) > 5 else ""))
    return [values[u] for u in data.units]


def expand_covariates(
    data: PanelDataset,
    plan: Sequence[CovariateTerm],
) -> tuple[list[str], np.ndarray]:
    """Expand planned covariate blocks into design columns.

    Time-interacted blocks emit one column per period except the first, so a
    panel with T periods contributes T-1 columns per block. Characteristics
    and flags must be per-region constants already carried by the panel.
    """
    a = data.arrays
    names: list[str] = []
    cols: list[np.ndarray] = []
    for term in plan:
        char = np.asarray(
            _unit_lookup(data, data.region_constant(term.characteristic),
                         f"characteristic {term.characteristic!r}")
        )[a.unit_codes]
        if term.by_flag is not None:
            flag = np.asarray(
                _unit_lookup(data, data.region_constant(term.by_flag),
                             f"flag {term.by_flag!r}")
            )[a.unit_codes]
            char = char * flag
        if not term.by_time:
            names.append(str(term))
            cols.append(char.astype(float))
            continue
        for j, period in enumerate(a.periods):
            if j == 0:
                continue
            names.append(f"{term}@{period}")
            cols.append(char * (a.period_codes == j).astype(float))
    matrix = np.column_stack(cols) if cols else np.empty((data.n_obs, 0))
    return names, matrix


def _assemble(
    data: PanelDataset,
    names: Sequence[str],
    cols: Sequence[np.ndarray],
    spec: DidSpec,
) -> DesignMatrix:
    cov_names, cov_matrix = expand_covariates(data, spec.covariates)
    x = np.column_stack(list(cols) + ([cov_matrix] if cov_matrix.size else []))
    if not cols and cov_matrix.size:
        x = cov_matrix
    return DesignMatrix.from_panel(data, list(names) + cov_names, x)


def _high_first_by_row(data: PanelDataset, design: TreatmentDesign) -> np.ndarray:
    flags = design.high_first_map()
    per_unit = np.asarray(_unit_lookup(data, flags, "first-wave exposure flag"), dtype=float)
    return per_unit[data.arrays.unit_codes]


def _period_index_by_row(data: PanelDataset) -> np.ndarray:
    a = data.arrays
    return np.asarray([p.index for p in a.periods])[a.period_codes]


def build_baseline(
    data: PanelDataset,
    design: TreatmentDesign,
    spec: DidSpec,
) -> DesignMatrix:
    """High-exposure x post-cutoff indicator, optional pre-cutoff placebo.

    The cutoff period itself loads on neither column, so anticipation around
    the adoption quarter stays out of both estimates.
    """
    high = _high_first_by_row(data, design)
    t = _period_index_by_row(data)
    cut = spec.cutoff.index
    names = ["treated_post"]
    cols = [high * (t > cut)]
    if spec.placebo:
        names.append("treated_pre")
        cols.append(high * (t < cut))
    return _assemble(data, names, cols, spec)


def build_event_study(
    data: PanelDataset,
    design: TreatmentDesign,
    spec: DidSpec,
) -> DesignMatrix:
    """One high-exposure x period indicator per period except the baseline."""
    high = _high_first_by_row(data, design)
    a = data.arrays
    names, cols = [], []
    for j, period in enumerate(a.periods):
        if period == spec.baseline:
            continue
        names.append(f"treated@{period}")
        cols.append(high * (a.period_codes == j).astype(float))
    if not names:
        raise ValueError("event study needs at least one non-baseline period")
    return _assemble(data, names, cols, spec)


def build_growth_interaction(
    data: PanelDataset,
    design: TreatmentDesign,
    growth_flags: Mapping[str, bool],
    spec: DidSpec,
) -> DesignMatrix:
    """Baseline effect plus its extra shift in low-growth regions.

    Alongside the interaction column, low-growth status enters as a full
    time-interacted covariate block so the level response of slack regions is
    controlled for separately from the exposure response.
    """
    high = _high_first_by_row(data, design)
    t = _period_index_by_row(data)
    low = np.asarray(_unit_lookup(data, growth_flags, "low-growth flag"), dtype=float)
    low_row = low[data.arrays.unit_codes]
    post = (t > spec.cutoff.index).astype(float)
    names = ["treated_post", "treated_post_lowgrowth"]
    cols = [high * post, high * post * low_row]
    a = data.arrays
    for j, period in enumerate(a.periods):
        if j == 0:
            continue
        names.append(f"low_growth@{period}")
        cols.append(low_row * (a.period_codes == j).astype(float))
    return _assemble(data, names, cols, spec)


def build_increases(
    data: PanelDataset,
    design: TreatmentDesign,
    spec: DidSpec,
) -> DesignMatrix:
    """Baseline effect plus one step per later statutory raise.

    Each raise year tau adds a high-exposure x (t > Q4 of tau) column named
    for the year the raise takes effect, so the coefficients read as
    incremental shifts after each increase.
    """
    if not spec.increase_years:
        raise ValueError("increases design needs at least one raise year")
    high = _high_first_by_row(data, design)
    t = _period_index_by_row(data)
    names = ["treated_post"]
    cols = [high * (t > spec.cutoff.index)]
    for tau in spec.increase_years:
        threshold = Period(tau, 4).index
        names.append(f"raise_{tau + 1}")
        cols.append(high * (t > threshold))
    return _assemble(data, names, cols, spec)


def build_multi_group(
    data: PanelDataset,
    design: TreatmentDesign,
    spec: DidSpec,
) -> DesignMatrix:
    """Separate post-cutoff effects for the three exposed switcher groups.

    The never-high group is the omitted category. With `placebo`, matching
    pre-cutoff columns are added for all three groups.
    """
    groups = design.group_map()
    t = _period_index_by_row(data)
    a = data.arrays
    post = (t > spec.cutoff.index).astype(float)
    pre = (t < spec.cutoff.index).astype(float)
    tracked = (
        ("low_high", SwitcherGroup.LOW_HIGH),
        ("high_low", SwitcherGroup.HIGH_LOW),
        ("high_high", SwitcherGroup.HIGH_HIGH),
    )
    per_unit = {
        label: np.asarray(
            [float(groups[u] is member) for u in data.units]
        )
        for label, member in tracked
    }
    missing = [u for u in data.units if u not in groups]
    if missing:
        raise ValueError(f"switcher group missing for unit(s) {missing[:5]}")
    names, cols = [], []
    for label, _ in tracked:
        names.append(f"{label}_post")
        cols.append(per_unit[label][a.unit_codes] * post)
    if spec.placebo:
        for label, _ in tracked:
            names.append(f"{label}_pre")
            cols.append(per_unit[label][a.unit_codes] * pre)
    return _assemble(data, names, cols, spec)


def build_staggered_twfe(
    data: PanelDataset,
    design: TreatmentDesign,
    spec: DidSpec,
) -> DesignMatrix:
    """Single absorbing-treatment indicator, switched on from each cohort start."""
    cohorts = design.cohort_map()
    missing = [u for u in data.units if u not in cohorts]
    if missing:
        raise ValueError(f"cohort missing for unit(s) {missing[:5]}")
    start = np.asarray(
        [math.inf if cohorts[u] is None else cohorts[u].index for u in data.units]
    )
    t = _period_index_by_row(data)
    treated = (t >= start[data.arrays.unit_codes]).astype(float)
    return _assemble(data, ["post_adoption"], [treated], spec)


_BUILDERS = {
    DesignKind.BASELINE: build_baseline,
    DesignKind.EVENT_STUDY: build_event_study,
    DesignKind.INCREASES: build_increases,
    DesignKind.MULTI_GROUP: build_multi_group,
    DesignKind.STAGGERED_TWFE: build_staggered_twfe,
}


def build_design(
    data: PanelDataset,
    design: TreatmentDesign,
    spec: DidSpec,
    *,
    growth_flags: Mapping[str, bool] | None = None,
) -> DesignMatrix:
    """Dispatch to the builder for `spec.kind`."""
    if spec.kind is DesignKind.GROWTH_INTERACTION:
        if growth_flags is None:
            raise ValueError("growth_interaction design needs per-region low-growth flags")
        return build_growth_interaction(data, design, growth_flags, spec)
    return _BUILDERS[spec.kind](data, design, spec)
