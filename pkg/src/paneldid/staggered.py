"""Heterogeneity-robust estimators for staggered adoption.

Three estimators, all anchored to each cohort's last untreated period:

* group-time ATTs from long differences against a clean control pool,
  aggregated with treated-share weights;
* an interaction-weighted event study that saturates cohort x relative
  period cells and averages them with cohort-share weights;
* an imputation estimator that fits unit and period effects on untreated
  observations only and reads effects off the treated residuals.

Group-time and imputation standard errors come from a cluster bootstrap over
units; duplicated units re-enter as multiplicity weights, which leaves every
within-unit mean unchanged and keeps draws cheap. The event study inherits
the engine's analytic covariance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .designs import CovariateTerm, expand_covariates
from .engine import DesignMatrix, RegressionFit, wls_fit
from .panel import Observation, PanelDataset
from .periods import Period

NEVER = -1
_Z95 = float(stats.norm.ppf(0.975))


def _dense(codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Re-index integer codes to 0..k-1, returning (dense_codes, old_for_new)."""
    old, dense = np.unique(codes, return_inverse=True)
    return dense.astype(np.intp), old


@dataclass(frozen=True)
class _Grid:
    """Per-unit view of a panel: outcome and weight laid out unit x period."""

    y: np.ndarray       # (U, T), nan where missing
    w: np.ndarray       # (U, T), 0 where missing
    mask: np.ndarray    # (U, T) bool
    units: tuple[str, ...]
    periods: tuple[Period, ...]
    unit_weight: np.ndarray   # (U,) scalar weight used for group means
    start: np.ndarray         # (U,) cohort start period index, math.inf if never
    cohort_starts: tuple[Period, ...]  # distinct in-window cohorts, sorted

    @property
    def never(self) -> np.ndarray:
        return ~np.isfinite(self.start)


def _build_grid(
    data: PanelDataset,
    cohorts: Mapping[str, Period | None],
    weights: Mapping[str, float] | None,
) -> _Grid:
    a = data.arrays
    u_count, t_count = len(a.units), len(a.periods)
    missing = [u for u in a.units if u not in cohorts]
    if missing:
        raise ValueError(f"cohort missing for unit(s) {missing[:5]}")
    y = np.full((u_count, t_count), np.nan)
    w = np.zeros((u_count, t_count))
    y[a.unit_codes, a.period_codes] = a.outcome
    w[a.unit_codes, a.period_codes] = a.weight
    mask = w > 0
    if weights is None:
        unit_weight = w.sum(axis=1) / mask.sum(axis=1)
    else:
        missing_w = [u for u in a.units if u not in weights]
        if missing_w:
            raise ValueError(f"unit weight missing for unit(s) {missing_w[:5]}")
        unit_weight = np.asarray([float(weights[u]) for u in a.units])
        if np.any(unit_weight <= 0):
            raise ValueError("unit weights must be positive")
    last = a.periods[-1]
    start = np.asarray(
        [
            math.inf
            if cohorts[u] is None or cohorts[u] > last
            else float(cohorts[u].index)
            for u in a.units
        ]
    )
    cohort_starts = tuple(sorted({
        cohorts[u] for u in a.units
        if cohorts[u] is not None and cohorts[u] <= last
    }))
    return _Grid(y, w, mask, a.units, a.periods, unit_weight, start, cohort_starts)


def _region_constant_matrix(
    data: PanelDataset, names: Sequence[str]
) -> np.ndarray:
    cols = []
    for name in names:
        values = data.region_constant(name)
        cols.append([values[u] for u in data.units])
    return np.asarray(cols, dtype=float).T if cols else np.empty((len(data.units), 0))


# ---------------------------------------------------------------------------
# group-time ATTs


@dataclass(frozen=True)
class GroupTimeCell:
    cohort: Period
    period: Period
    att: float
    se: float
    treated_weight: float

    @property
    def event_time(self) -> int:
        return self.period.index - self.cohort.index

    def conf_int(self) -> tuple[float, float]:
        return self.att - _Z95 * self.se, self.att + _Z95 * self.se


@dataclass(frozen=True)
class GroupTimeATT:
    """Group-time effects plus the bootstrap draws behind their uncertainty."""

    entries: tuple[GroupTimeCell, ...]
    control_rule: str
    seed: int | None
    bootstrap_draws: int
    boot: np.ndarray | None  # (draws, n_entries), aligned with entries

    estimator = "cs_att"

    def entry(self, cohort: Period, period: Period) -> GroupTimeCell:
        for cell in self.entries:
            if cell.cohort == cohort and cell.period == period:
                return cell
        raise KeyError(f"no entry for cohort {cohort} period {period}")

    def to_json_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "control_rule": self.control_rule,
            "seed": self.seed,
            "bootstrap_draws": self.bootstrap_draws,
            "entries": [
                {
                    "cohort": str(c.cohort),
                    "period": str(c.period),
                    "event_time": c.event_time,
                    "att": c.att,
                    "se": c.se,
                    "conf_low": c.conf_int()[0],
                    "conf_high": c.conf_int()[1],
                }
                for c in self.entries
            ],
        }


CONTROL_RULES = ("never_treated", "not_yet_treated")


def cs_att(
    data: PanelDataset,
    cohorts: Mapping[str, Period | None],
    control_rule: str = "never_treated",
    weights: Mapping[str, float] | None = None,
    *,
    covariates: Sequence[str] = (),
    include_pre: bool = False,
    bootstrap_draws: int = 999,
    seed: int | None = None,
) -> GroupTimeATT:
    """Group-time average treatment effects by long differences.

    ATT(g, t) compares the outcome change from g's last pre-period to t
    between cohort g and a control pool: units never treated in the window,
    or (under `not_yet_treated`) units still untreated at the later of t and
    the base period. With `covariates`, the control change is first adjusted
    by a weighted linear fit on the named region-constant covariates.

    Cohorts whose base period is not in the panel are skipped with a warning,
    as are cells with an empty treated or control set. Standard errors come
    from a multinomial cluster bootstrap over units; `seed` is required
    whenever `bootstrap_draws` is positive.
    """
    if control_rule not in CONTROL_RULES:
        raise ValueError(
            f"unknown control rule {control_rule!r}; valid rules: {CONTROL_RULES}"
        )
    if bootstrap_draws < 0:
        raise ValueError("bootstrap_draws must be non-negative")
    if bootstrap_draws > 0 and seed is None:
        raise ValueError("a seed is required when bootstrap draws are requested")
    grid = _build_grid(data, cohorts, weights)
    z = _region_constant_matrix(data, covariates)
    period_ix = {p: j for j, p in enumerate(grid.periods)}
    period_index = np.asarray([p.index for p in grid.periods])

    specs = []  # (cohort, period, delta, treated_sel, control_sel)
    for g in grid.cohort_starts:
        base = g.prev()
        if base not in period_ix:
            warnings.warn(
                f"cohort {g}: base period {base} is not in the panel; cohort skipped"
            )
            continue
        b_col = period_ix[base]
        in_cohort = grid.start == g.index
        for j, t in enumerate(grid.periods):
            if t == base:
                continue
            if not include_pre and t < g:
                continue
            valid = grid.mask[:, j] & grid.mask[:, b_col]
            treated_sel = in_cohort & valid
            horizon = max(period_index[j], base.index)
            if control_rule == "never_treated":
                control_sel = grid.never & valid
            else:
                control_sel = (grid.start > horizon) & ~in_cohort & valid
            if not treated_sel.any():
                warnings.warn(f"ATT({g}, {t}): no treated units observed; entry omitted")
                continue
            if not control_sel.any():
                warnings.warn(f"ATT({g}, {t}): control set is empty; entry omitted")
                continue
            delta = grid.y[:, j] - grid.y[:, b_col]
            specs.append((g, t, delta, treated_sel, control_sel))

    def cell_att(delta, tsel, csel, uw) -> float:
        tw, cw = uw[tsel], uw[csel]
        if tw.sum() <= 0 or cw.sum() <= 0:
            return np.nan
        if z.shape[1] == 0:
            return float(
                np.average(delta[tsel], weights=tw) - np.average(delta[csel], weights=cw)
            )
        design = np.column_stack([np.ones(csel.sum()), z[csel]])
        root = np.sqrt(cw)
        beta, *_ = np.linalg.lstsq(design * root[:, None], delta[csel] * root, rcond=None)
        predicted = np.column_stack([np.ones(tsel.sum()), z[tsel]]) @ beta
        return float(np.average(delta[tsel] - predicted, weights=tw))

    atts = np.asarray([cell_att(d, t, c, grid.unit_weight) for _, _, d, t, c in specs])

    boot = None
    if bootstrap_draws > 0 and specs:
        rng = np.random.Generator(np.random.Philox(key=_philox_key(seed, 0)))
        u_count = len(grid.units)
        m = rng.multinomial(u_count, np.full(u_count, 1.0 / u_count), size=bootstrap_draws)
        boot = np.empty((bootstrap_draws, len(specs)))
        if z.shape[1] == 0:
            for e, (_, _, delta, tsel, csel) in enumerate(specs):
                d0 = np.where(np.isnan(delta), 0.0, delta)
                tn = m @ (grid.unit_weight * d0 * tsel)
                td = m @ (grid.unit_weight * tsel)
                cn = m @ (grid.unit_weight * d0 * csel)
                cd = m @ (grid.unit_weight * csel)
                with np.errstate(invalid="ignore", divide="ignore"):
                    col = tn / td - cn / cd
                col[(td <= 0) | (cd <= 0)] = np.nan
                boot[:, e] = col
        else:
            for b in range(bootstrap_draws):
                uw = grid.unit_weight * m[b]
                for e, (_, _, delta, tsel, csel) in enumerate(specs):
                    boot[b, e] = cell_att(delta, tsel & (m[b] > 0), csel & (m[b] > 0), uw)

    entries = []
    for e, (g, t, _, tsel, _) in enumerate(specs):
        if boot is not None:
            col = boot[:, e]
            finite = col[np.isfinite(col)]
            se = float(np.std(finite, ddof=1)) if len(finite) > 1 else math.nan
        else:
            se = math.nan
        entries.append(
            GroupTimeCell(
                cohort=g,
                period=t,
                att=float(atts[e]),
                se=se,
                treated_weight=float(grid.unit_weight[tsel].sum()),
            )
        )
    return GroupTimeATT(
        entries=tuple(entries),
        control_rule=control_rule,
        seed=seed,
        bootstrap_draws=bootstrap_draws if boot is not None else 0,
        boot=boot,
    )


@dataclass(frozen=True)
class AggregateValue:
    estimate: float
    se: float

    def conf_int(self) -> tuple[float, float]:
        return self.estimate - _Z95 * self.se, self.estimate + _Z95 * self.se


@dataclass(frozen=True)
class Aggregation:
    """Treated-share-weighted summaries of group-time effects."""

    kind: str
    values: Mapping[object, AggregateValue]

    def to_json_dict(self) -> dict:
        out = {}
        for key, v in self.values.items():
            low, high = v.conf_int()
            out[str(key)] = {
                "estimate": v.estimate, "se": v.se,
                "conf_low": low, "conf_high": high,
            }
        return {"kind": self.kind, "values": out}


AGGREGATION_KINDS = ("overall", "by_event_time", "by_cohort")


def cs_aggregate(result: GroupTimeATT, kind: str = "overall") -> Aggregation:
    """Aggregate group-time effects with weights proportional to treated weight.

    `overall` averages every post-treatment entry into one number;
    `by_event_time` groups entries by t - g (pre-treatment entries appear at
    negative keys when present); `by_cohort` averages each cohort's
    post-treatment entries. Weights are renormalized within each reported
    key, so they sum to one per value.
    """
    if kind not in AGGREGATION_KINDS:
        raise ValueError(f"unknown aggregation {kind!r}; valid kinds: {AGGREGATION_KINDS}")
    post = [
        (i, cell) for i, cell in enumerate(result.entries)
        if cell.period >= cell.cohort
    ]
    if kind == "by_event_time":
        pool = list(enumerate(result.entries))
        keyed: dict[object, list[tuple[int, GroupTimeCell]]] = {}
        for i, cell in pool:
            keyed.setdefault(cell.event_time, []).append((i, cell))
    elif kind == "by_cohort":
        keyed = {}
        for i, cell in post:
            keyed.setdefault(cell.cohort, []).append((i, cell))
    else:
        keyed = {"overall": post}
    if not any(keyed.values()):
        raise ValueError("no entries to aggregate")
    values: dict[object, AggregateValue] = {}
    for key in sorted(keyed, key=str):
        members = keyed[key]
        if not members:
            continue
        w = np.asarray([cell.treated_weight for _, cell in members])
        w = w / w.sum()
        estimate = float(np.dot(w, [cell.att for _, cell in members]))
        if result.boot is not None:
            cols = result.boot[:, [i for i, _ in members]]
            combined = cols @ w
            valid = np.isfinite(combined)
            se = float(np.std(combined[valid], ddof=1)) if valid.sum() > 1 else math.nan
        else:
            se = math.nan
        values[key] = AggregateValue(estimate, se)
    return Aggregation(kind=kind, values=values)


# ---------------------------------------------------------------------------
# interaction-weighted event study


@dataclass(frozen=True)
class EventTimeValue:
    estimate: float
    se: float
    df: int

    def conf_int(self) -> tuple[float, float]:
        crit = float(stats.t.ppf(0.975, self.df))
        return self.estimate - crit * self.se, self.estimate + crit * self.se


@dataclass(frozen=True)
class EventStudyResult:
    """Cohort-share-weighted event-time path and the saturated fit behind it."""

    entries: Mapping[int, EventTimeValue]
    cohort_shares: Mapping[int, Mapping[Period, float]]
    fit: RegressionFit

    estimator = "sa_event_study"

    def overall(self) -> tuple[float, float]:
        """Post-treatment average weighted by treated share at each horizon."""
        weights: dict[str, float] = {}
        total = 0.0
        for e, shares in self.cohort_shares.items():
            if e < 0:
                continue
            horizon_weight = sum(shares.values())
            total += horizon_weight
            for cohort, share in shares.items():
                name = _sa_name(cohort, e)
                weights[name] = weights.get(name, 0.0) + share
        if total <= 0:
            raise ValueError("no post-treatment horizons to average")
        weights = {k: v / total for k, v in weights.items()}
        return self.fit.linear_combination(weights)

    def to_json_dict(self) -> dict:
        out = {}
        for e in sorted(self.entries):
            v = self.entries[e]
            low, high = v.conf_int()
            out[str(e)] = {
                "estimate": v.estimate, "se": v.se,
                "conf_low": low, "conf_high": high,
            }
        return {"estimator": self.estimator, "entries": out}


def _sa_name(cohort: Period, event: int) -> str:
    return f"e{event}@{cohort}"


def sa_event_study(
    data: PanelDataset,
    cohorts: Mapping[str, Period | None],
    covariates: Sequence[CovariateTerm] = (),
    weights: Mapping[str, float] | None = None,
) -> EventStudyResult:
    """Event study from saturated cohort x relative-period interactions.

    Each cohort gets its own indicator for every relative period except -1;
    never-treated units carry no interactions and act as the comparison. When
    no never-treated units exist, the last cohort serves as the control and
    periods from its start onward are dropped (with a warning). Event-time
    estimates average cohort coefficients with weights proportional to each
    contributing cohort's total unit weight; covariance comes from the
    engine's cluster-robust fit via the same linear combination.
    """
    grid = _build_grid(data, cohorts, weights)
    if not grid.cohort_starts:
        raise ValueError("no treated cohorts in the panel window")
    interacted = list(grid.cohort_starts)
    sample = data
    if not grid.never.any():
        if len(interacted) < 2:
            raise ValueError(
                "need never-treated units or at least two cohorts to identify the event study"
            )
        control_cohort = interacted.pop()
        warnings.warn(
            f"no never-treated units: cohort {control_cohort} serves as the "
            f"control and periods from {control_cohort} on are dropped"
        )
        keep = {p for p in data.periods if p < control_cohort}
        sample = _restrict_periods(data, keep)
        grid = _build_grid(sample, cohorts, weights)

    a = sample.arrays
    unit_start = grid.start[:]
    names: list[str] = []
    cols: list[np.ndarray] = []
    events_of: dict[str, tuple[Period, int]] = {}
    for g in interacted:
        in_cohort = (unit_start == g.index)[a.unit_codes]
        for j, t in enumerate(a.periods):
            e = t.index - g.index
            if e == -1:
                continue
            name = _sa_name(g, e)
            names.append(name)
            cols.append(in_cohort * (a.period_codes == j).astype(float))
            events_of[name] = (g, e)
    if not names:
        raise ValueError("no cohort x period cells to estimate")
    cov_names, cov_matrix = expand_covariates(sample, tuple(covariates))
    x = np.column_stack(cols + ([cov_matrix] if cov_matrix.size else []))
    row_weight = None
    if weights is not None:
        per_unit = np.asarray([float(weights[u]) for u in a.units])
        row_weight = per_unit[a.unit_codes]
    design = DesignMatrix.from_panel(sample, names + cov_names, x, weight=row_weight)
    fit = wls_fit(design)

    cohort_weight = {
        g: float(grid.unit_weight[unit_start == g.index].sum()) for g in interacted
    }
    by_event: dict[int, dict[Period, float]] = {}
    for name in fit.columns:
        if name not in events_of:
            continue
        g, e = events_of[name]
        by_event.setdefault(e, {})[g] = cohort_weight[g]
    entries: dict[int, EventTimeValue] = {}
    shares: dict[int, dict[Period, float]] = {}
    for e, contrib in sorted(by_event.items()):
        total = sum(contrib.values())
        share = {g: w / total for g, w in contrib.items()}
        est, se = fit.linear_combination(
            {_sa_name(g, e): s for g, s in share.items()}
        )
        entries[e] = EventTimeValue(est, se, fit.df_inference)
        shares[e] = {g: contrib[g] for g in contrib}
    return EventStudyResult(entries=entries, cohort_shares=shares, fit=fit)


def _restrict_periods(data: PanelDataset, keep: set[Period]) -> PanelDataset:
    obs = tuple(o for o in data.observations if o.period in keep)
    if not obs:
        raise ValueError("restriction removed every observation")
    return PanelDataset(obs, data.covariate_names, data.cluster)


# ---------------------------------------------------------------------------
# imputation


@dataclass(frozen=True)
class ImputedCell:
    unit: str
    period: Period
    effect: float
    weight: float


@dataclass(frozen=True)
class ImputationResult:
    """Treated-cell effects measured against an untreated-sample prediction."""

    aggregate: float
    se: float
    effects: tuple[ImputedCell, ...]
    n_treated: int
    n_untreated: int
    dropped_collinear: tuple[str, ...]
    seed: int | None
    bootstrap_draws: int

    estimator = "impute_att"

    def conf_int(self) -> tuple[float, float]:
        return self.aggregate - _Z95 * self.se, self.aggregate + _Z95 * self.se

    def to_json_dict(self) -> dict:
        low, high = self.conf_int()
        return {
            "estimator": self.estimator,
            "aggregate": self.aggregate,
            "se": self.se,
            "conf_low": low,
            "conf_high": high,
            "n_treated": self.n_treated,
            "n_untreated": self.n_untreated,
            "seed": self.seed,
            "bootstrap_draws": self.bootstrap_draws,
        }


def _solve_two_way_means(
    y: np.ndarray,
    w: np.ndarray,
    unit_codes: np.ndarray,
    period_codes: np.ndarray,
    n_units: int,
    n_periods: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact weighted solve of y ~ alpha_unit + lambda_period.

    The period effect of the first period is anchored at zero; predictions
    alpha + lambda are invariant to the anchor. Raises when the observation
    pattern does not tie all units and periods together.
    """
    wsum_u = np.bincount(unit_codes, weights=w, minlength=n_units)
    wsum_t = np.bincount(period_codes, weights=w, minlength=n_periods)
    if np.any(wsum_t <= 0):
        raise ValueError(
            "untreated observations do not cover every period; "
            "the period effects are not identified"
        )
    wy_u = np.bincount(unit_codes, weights=w * y, minlength=n_units)
    wy_t = np.bincount(period_codes, weights=w * y, minlength=n_periods)
    # Units that carry no weight here get nan effects instead of poisoning
    # the period system; callers never predict where such a unit has mass.
    active = wsum_u > 0
    inv_u = np.where(active, 1.0, 0.0) / np.where(active, wsum_u, 1.0)
    a = np.zeros((n_units, n_periods))
    np.add.at(a, (unit_codes, period_codes), w)
    b = np.diag(wsum_t) - a.T @ (a * inv_u[:, None])
    c = wy_t - a.T @ (wy_u * inv_u)
    lam = np.zeros(n_periods)
    try:
        lam[1:] = np.linalg.solve(b[1:, 1:], c[1:])
    except np.linalg.LinAlgError:
        raise ValueError(
            "untreated observations do not connect all units and periods; "
            "the fixed effects are not identified"
        ) from None
    alpha = np.where(active, (wy_u - a @ lam) * inv_u, np.nan)
    return alpha, lam


def impute_att(
    data: PanelDataset,
    cohorts: Mapping[str, Period | None],
    covariates: Sequence[CovariateTerm] = (),
    weights: Mapping[str, float] | None = None,
    *,
    bootstrap_draws: int = 999,
    seed: int | None = None,
) -> ImputationResult:
    """Impute untreated outcomes for treated cells and average the gaps.

    Stage one fits unit effects, period effects, and any planned covariate
    columns on untreated observations only. Stage two predicts each treated
    cell's untreated outcome and records the difference; the aggregate is the
    treated-weight-weighted mean of those differences. Standard errors use a
    multinomial cluster bootstrap over units.
    """
    if bootstrap_draws > 0 and seed is None:
        raise ValueError("a seed is required when bootstrap draws are requested")
    a = data.arrays
    u_count, t_count = len(a.units), len(a.periods)
    period_index = np.asarray([p.index for p in a.periods])
    last = a.periods[-1]
    start = np.asarray(
        [
            math.inf
            if cohorts.get(u) is None or cohorts[u] > last
            else float(cohorts[u].index)
            for u in a.units
        ]
    )
    missing = [u for u in a.units if u not in cohorts]
    if missing:
        raise ValueError(f"cohort missing for unit(s) {missing[:5]}")
    treated_rows = period_index[a.period_codes] >= start[a.unit_codes]
    if not treated_rows.any():
        raise ValueError("no treated observations; nothing to impute")
    if treated_rows.all():
        raise ValueError(
            "every observation is treated; the untreated sample is empty"
        )

    untr = ~treated_rows
    treated_units_without_pre = sorted(
        {a.units[c] for c in np.unique(a.unit_codes[treated_rows])}
        - {a.units[c] for c in np.unique(a.unit_codes[untr])}
    )
    if treated_units_without_pre:
        raise ValueError(
            f"treated unit(s) {treated_units_without_pre[:5]} have no untreated "
            "observations; their unit effects cannot be estimated"
        )
    periods_without_untreated = sorted(
        {str(a.periods[c]) for c in np.unique(a.period_codes[treated_rows])}
        - {str(a.periods[c]) for c in np.unique(a.period_codes[untr])}
    )
    if periods_without_untreated:
        raise ValueError(
            f"period(s) {periods_without_untreated[:5]} have treated observations "
            "but no untreated ones; their period effects cannot be estimated"
        )

    if weights is None:
        row_weight = a.weight.copy()
    else:
        missing_w = [u for u in a.units if u not in weights]
        if missing_w:
            raise ValueError(f"unit weight missing for unit(s) {missing_w[:5]}")
        per_unit = np.asarray([float(weights[u]) for u in a.units])
        if np.any(per_unit <= 0):
            raise ValueError("unit weights must be positive")
        row_weight = per_unit[a.unit_codes]

    gamma_resid = a.outcome.copy()
    dropped: tuple[str, ...] = ()
    if covariates:
        cov_names, cov_matrix = expand_covariates(data, tuple(covariates))
        fit = _fit_untreated(data, cov_names, cov_matrix, row_weight, untr)
        dropped = fit.dropped_collinear
        kept_ix = [cov_names.index(c) for c in fit.columns]
        gamma_resid = a.outcome - cov_matrix[:, kept_ix] @ fit.coef_vector()

    alpha, lam = _solve_two_way_means(
        gamma_resid[untr],
        row_weight[untr],
        a.unit_codes[untr],
        a.period_codes[untr],
        u_count,
        t_count,
    )
    effect_rows = gamma_resid - alpha[a.unit_codes] - lam[a.period_codes]
    t_ix = np.flatnonzero(treated_rows)
    observations = data.observations
    effects = tuple(
        ImputedCell(
            unit=observations[i].unit,
            period=observations[i].period,
            effect=float(effect_rows[i]),
            weight=float(row_weight[i]),
        )
        for i in t_ix
    )
    w_treated = row_weight[t_ix]
    aggregate = float(np.average(effect_rows[t_ix], weights=w_treated))

    se = math.nan
    if bootstrap_draws > 0:
        if covariates:
            se = _impute_bootstrap_slow(
                data, cohorts, tuple(covariates), weights,
                bootstrap_draws, seed, untr, treated_rows, row_weight,
            )
        else:
            se = _impute_bootstrap_grid(
                gamma_resid, row_weight, a.unit_codes, a.period_codes,
                u_count, t_count, untr, treated_rows, bootstrap_draws, seed,
            )
    return ImputationResult(
        aggregate=aggregate,
        se=se,
        effects=effects,
        n_treated=int(treated_rows.sum()),
        n_untreated=int(untr.sum()),
        dropped_collinear=dropped,
        seed=seed,
        bootstrap_draws=bootstrap_draws,
    )


def _fit_untreated(
    data: PanelDataset,
    cov_names: Sequence[str],
    cov_matrix: np.ndarray,
    row_weight: np.ndarray,
    untr: np.ndarray,
) -> RegressionFit:
    a = data.arrays
    unit_codes, unit_old = _dense(a.unit_codes[untr])
    period_codes, period_old = _dense(a.period_codes[untr])
    cluster_codes, cluster_old = _dense(a.cluster_codes[untr])
    design = DesignMatrix(
        columns=tuple(cov_names),
        x=cov_matrix[untr],
        y=a.outcome[untr],
        weight=row_weight[untr],
        unit_codes=unit_codes,
        period_codes=period_codes,
        cluster_codes=cluster_codes,
        units=tuple(a.units[i] for i in unit_old),
        periods=tuple(a.periods[i] for i in period_old),
        clusters=tuple(a.clusters[i] for i in cluster_old),
    )
    return wls_fit(design)


def _philox_key(seed: int, stream: int) -> np.ndarray:
    return np.array([np.uint64(seed), np.uint64(stream)], dtype=np.uint64)


def _impute_bootstrap_grid(
    y: np.ndarray,
    w: np.ndarray,
    unit_codes: np.ndarray,
    period_codes: np.ndarray,
    u_count: int,
    t_count: int,
    untr: np.ndarray,
    treated_rows: np.ndarray,
    draws: int,
    seed: int,
) -> float:
    """Batched bootstrap of the no-covariate imputation aggregate.

    Resampled units enter as multinomial multiplicities. Within-unit weighted
    means are multiplicity-invariant, so only the period-effect system
    changes per draw, and it is linear in the per-unit multiplicity. All
    draws solve in one batched call.
    """
    uu = unit_codes[untr]
    tt = period_codes[untr]
    wu = w[untr]
    yy = y[untr]
    wsum_u = np.bincount(uu, weights=wu, minlength=u_count)
    wy_u = np.bincount(uu, weights=wu * yy, minlength=u_count)
    a_grid = np.zeros((u_count, t_count))
    np.add.at(a_grid, (uu, tt), wu)
    wy_grid = np.zeros((u_count, t_count))
    np.add.at(wy_grid, (uu, tt), wu * yy)
    active = wsum_u > 0
    ratio_u = np.where(active, wy_u / np.where(active, wsum_u, 1.0), 0.0)
    # Per-unit contributions to the period-effect normal equations.
    inv = np.where(active, 1.0 / np.where(active, wsum_u, 1.0), 0.0)
    p_tensor = a_grid[:, :, None] * a_grid[:, None, :] * inv[:, None, None]
    c_unit = wy_grid - a_grid * ratio_u[:, None]

    tw_grid = np.zeros((u_count, t_count))
    ty_sum = np.zeros(u_count)
    tw_sum = np.zeros(u_count)
    ut = unit_codes[treated_rows]
    pt = period_codes[treated_rows]
    wt = w[treated_rows]
    np.add.at(tw_grid, (ut, pt), wt)
    np.add.at(ty_sum, ut, wt * y[treated_rows])
    np.add.at(tw_sum, ut, wt)

    rng = np.random.Generator(np.random.Philox(key=_philox_key(seed, 0)))
    m = rng.multinomial(u_count, np.full(u_count, 1.0 / u_count), size=draws).astype(float)

    d_t = m @ a_grid                                  # (draws, T)
    b_all = -np.einsum("bu,uts->bts", m, p_tensor)
    b_all[:, np.arange(t_count), np.arange(t_count)] += d_t
    c_all = m @ c_unit                                # (draws, T)
    lam = np.zeros((draws, t_count))  # first period anchored at zero
    ok = d_t.min(axis=1) > 0
    if ok.any():
        try:
            solved = np.linalg.solve(b_all[ok][:, 1:, 1:], c_all[ok][:, 1:, None])
            lam[ok, 1:] = solved[:, :, 0]
        except np.linalg.LinAlgError:
            for i in np.flatnonzero(ok):
                try:
                    lam[i, 1:] = np.linalg.solve(b_all[i, 1:, 1:], c_all[i, 1:])
                except np.linalg.LinAlgError:
                    lam[i] = np.nan
    lam[~ok] = np.nan
    # alpha per draw: within-unit means are multiplicity-invariant.
    alpha = (wy_u[None, :] - lam @ a_grid.T) * inv[None, :]   # (draws, U)
    contrib = ty_sum[None, :] - alpha * tw_sum[None, :] - lam @ tw_grid.T
    num = (m * contrib).sum(axis=1)
    den = (m * tw_sum[None, :]).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        draws_att = num / den
    draws_att[den <= 0] = np.nan
    valid = np.isfinite(draws_att)
    if valid.sum() < 2:
        return math.nan
    return float(np.std(draws_att[valid], ddof=1))


def _impute_bootstrap_slow(
    data: PanelDataset,
    cohorts: Mapping[str, Period | None],
    covariates: tuple[CovariateTerm, ...],
    weights: Mapping[str, float] | None,
    draws: int,
    seed: int,
    untr: np.ndarray,
    treated_rows: np.ndarray,
    row_weight: np.ndarray,
) -> float:
    """Per-draw bootstrap for the covariate-adjusted imputation estimator."""
    a = data.arrays
    u_count, t_count = len(a.units), len(a.periods)
    cov_names, cov_matrix = expand_covariates(data, covariates)
    rng = np.random.Generator(np.random.Philox(key=_philox_key(seed, 0)))
    m = rng.multinomial(u_count, np.full(u_count, 1.0 / u_count), size=draws).astype(float)
    out = np.full(draws, np.nan)
    t_ix = np.flatnonzero(treated_rows)
    for b in range(draws):
        mult = m[b][a.unit_codes]
        wb = row_weight * mult
        keep = wb > 0
        try:
            fit = _fit_untreated(
                data, cov_names, cov_matrix, np.where(keep, wb, 1.0), untr & keep
            )
            kept_ix = [cov_names.index(c) for c in fit.columns]
            resid = a.outcome - cov_matrix[:, kept_ix] @ fit.coef_vector()
            sel = untr & keep
            alpha, lam = _solve_two_way_means(
                resid[sel], wb[sel], a.unit_codes[sel], a.period_codes[sel],
                u_count, t_count,
            )
            eff = resid - alpha[a.unit_codes] - lam[a.period_codes]
            wt = wb[t_ix]
            if wt.sum() <= 0 or not np.all(np.isfinite(eff[t_ix][wt > 0])):
                continue
            out[b] = np.average(eff[t_ix][wt > 0], weights=wt[wt > 0])
        except (ValueError, np.linalg.LinAlgError):
            continue
    valid = np.isfinite(out)
    if valid.sum() < 2:
        return math.nan
    return float(np.std(out[valid], ddof=1))
