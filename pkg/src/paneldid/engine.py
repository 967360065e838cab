"""Weighted least squares with absorbed two-way fixed effects.

Unit and period effects are never materialized as dummy columns. Instead the
outcome and every regressor are demeaned by alternating weighted group
projections (unit means, then period means, repeated to convergence), and the
slope coefficients of the demeaned system coincide with the ones a full
dummy-variable regression would produce. Inference is cluster-robust:

    V = c * (X'WX)^(-1) (sum_g s_g s_g') (X'WX)^(-1),
    s_g = sum_{i in g} w_i * x_i * e_i,
    c = G/(G-1) * (N-1)/(N-K),

with X the demeaned retained regressors, G the number of clusters and K the
number of retained slope parameters. Test statistics use a t reference
distribution with G-1 degrees of freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .panel import PanelDataset
from .periods import Period

DEMEAN_TOL = 1e-10
DEMEAN_MAX_ITER = 10_000
PIVOT_RTOL = 1e-9


class ConvergenceError(RuntimeError):
    """Alternating demeaning failed to reach tolerance within the iteration cap."""

    def __init__(self, message: str, last_delta: float):
        super().__init__(message)
        self.last_delta = last_delta


@dataclass(frozen=True)
class DesignMatrix:
    """Regression-ready view of a panel: outcome, regressors, group labels.

    Rows follow the dataset's (unit, period) ordering. `x` has one column per
    name in `columns`; group labels are integer codes into the label tuples.
    """

    columns: tuple[str, ...]
    x: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    unit_codes: np.ndarray
    period_codes: np.ndarray
    cluster_codes: np.ndarray
    units: tuple[str, ...]
    periods: tuple[Period, ...]
    clusters: tuple[str, ...]

    def __post_init__(self) -> None:
        n = len(self.y)
        if self.x.shape != (n, len(self.columns)):
            raise ValueError(
                f"x has shape {self.x.shape}, expected ({n}, {len(self.columns)})"
            )
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("design matrix column names must be unique")
        for arr, label in (
            (self.weight, "weight"),
            (self.unit_codes, "unit_codes"),
            (self.period_codes, "period_codes"),
            (self.cluster_codes, "cluster_codes"),
        ):
            if len(arr) != n:
                raise ValueError(f"{label} length {len(arr)} does not match {n} rows")
        if np.any(self.weight <= 0):
            raise ValueError("all weights must be positive")

    @property
    def n(self) -> int:
        return len(self.y)

    @classmethod
    def from_panel(
        cls,
        data: PanelDataset,
        columns: Sequence[str],
        x: np.ndarray,
        *,
        weight: np.ndarray | None = None,
    ) -> DesignMatrix:
        a = data.arrays
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        return cls(
            columns=tuple(columns),
            x=x,
            y=a.outcome.copy(),
            weight=a.weight.copy() if weight is None else np.asarray(weight, float),
            unit_codes=a.unit_codes,
            period_codes=a.period_codes,
            cluster_codes=a.cluster_codes,
            units=a.units,
            periods=a.periods,
            clusters=a.clusters,
        )


def _group_weighted_demean(
    m: np.ndarray, w: np.ndarray, codes: np.ndarray, n_groups: int
) -> None:
    """Subtract weighted group means from every column of m, in place."""
    wsum = np.bincount(codes, weights=w, minlength=n_groups)
    means = np.empty((n_groups, m.shape[1]))
    for j in range(m.shape[1]):
        means[:, j] = np.bincount(codes, weights=w * m[:, j], minlength=n_groups)
    means /= wsum[:, None]
    m -= means[codes]


def demean_two_way(
    design: DesignMatrix,
    *,
    tol: float = DEMEAN_TOL,
    max_iter: int = DEMEAN_MAX_ITER,
) -> DesignMatrix:
    """Sweep out weighted unit and period means from the outcome and regressors.

    Alternates unit and period demeaning until no cell moves by more than
    `tol` in one sweep. On a balanced panel with equal weights this reaches
    the classical x - mean_i - mean_t + mean transform.
    """
    n_units = len(design.units)
    n_periods = len(design.periods)
    m = np.column_stack([design.y, design.x]) if design.x.size else design.y.reshape(-1, 1).copy()
    m = np.ascontiguousarray(m, dtype=float)
    w = design.weight
    delta = math.inf
    for _ in range(max_iter):
        before = m.copy()
        _group_weighted_demean(m, w, design.unit_codes, n_units)
        _group_weighted_demean(m, w, design.period_codes, n_periods)
        delta = float(np.max(np.abs(m - before))) if m.size else 0.0
        if delta <= tol:
            break
    else:
        raise ConvergenceError(
            f"two-way demeaning did not converge within {max_iter} sweeps "
            f"(last max cell change {delta:.3e})",
            last_delta=delta,
        )
    y = m[:, 0].copy()
    x = m[:, 1:].copy() if design.x.size else design.x.copy()
    return replace(design, y=y, x=x)


def _greedy_pivots(a: np.ndarray, threshold: float) -> tuple[list[int], list[float]]:
    """Left-to-right Gram-Schmidt column selection.

    Returns the kept column indices and their pivot magnitudes (the norm of
    each column after projecting out previously kept ones). Columns whose
    pivot does not exceed `threshold` are skipped, so of two collinear
    columns the later one is dropped.
    """
    n, k = a.shape
    q = np.empty((n, 0))
    kept: list[int] = []
    pivots: list[float] = []
    for j in range(k):
        v = a[:, j].astype(float, copy=True)
        # Project twice for numerical stability.
        for _ in range(2):
            if kept:
                v -= q @ (q.T @ v)
        pivot = float(np.linalg.norm(v))
        if pivot <= threshold or pivot == 0.0:
            continue
        kept.append(j)
        pivots.append(pivot)
        q = np.column_stack([q, v / pivot])
    return kept, pivots


def _select_columns(a: np.ndarray, rtol: float = PIVOT_RTOL) -> tuple[list[int], list[int]]:
    """Split column indices into (kept, dropped) by relative pivot size."""
    _, probe = _greedy_pivots(a, threshold=0.0)
    largest = max(probe, default=0.0)
    if largest == 0.0:
        return [], list(range(a.shape[1]))
    kept, _ = _greedy_pivots(a, threshold=rtol * largest)
    dropped = [j for j in range(a.shape[1]) if j not in set(kept)]
    return kept, dropped


def cluster_vcov(
    x_demeaned: np.ndarray,
    weight: np.ndarray,
    residuals: np.ndarray,
    cluster_codes: np.ndarray,
) -> np.ndarray:
    """Cluster-robust sandwich covariance with the small-sample factor.

    `x_demeaned` must contain only retained columns. Raises if the bread
    matrix X'WX is singular.
    """
    n, k = x_demeaned.shape
    codes = np.asarray(cluster_codes)
    n_clusters = int(codes.max()) + 1 if len(codes) else 0
    g = len(np.unique(codes))
    if g < 2:
        raise ValueError(f"cluster-robust covariance needs at least 2 clusters, got {g}")
    xtwx = x_demeaned.T @ (x_demeaned * weight[:, None])
    try:
        bread = np.linalg.inv(xtwx)
    except np.linalg.LinAlgError:
        raise ValueError(
            "X'WX is singular; drop collinear columns before computing the covariance"
        ) from None
    scores = np.zeros((n_clusters, k))
    np.add.at(scores, codes, x_demeaned * (weight * residuals)[:, None])
    meat = scores.T @ scores
    factor = (g / (g - 1)) * ((n - 1) / (n - k))
    v = factor * bread @ meat @ bread
    return (v + v.T) / 2.0


@dataclass(frozen=True)
class RegressionFit:
    """Slope estimates from a two-way fixed-effects weighted regression."""

    columns: tuple[str, ...]
    coefficients: Mapping[str, float]
    vcov: np.ndarray
    residuals: np.ndarray
    n_obs: int
    n_clusters: int
    dropped_collinear: tuple[str, ...]

    @property
    def df_inference(self) -> int:
        return self.n_clusters - 1

    def coef_vector(self) -> np.ndarray:
        return np.array([self.coefficients[c] for c in self.columns])

    def se(self, name: str) -> float:
        i = self.columns.index(name)
        return float(np.sqrt(self.vcov[i, i]))

    def tstat(self, name: str) -> float:
        return self.coefficients[name] / self.se(name)

    def pvalue(self, name: str) -> float:
        return float(2.0 * stats.t.sf(abs(self.tstat(name)), self.df_inference))

    def conf_int(self, name: str, level: float = 0.95) -> tuple[float, float]:
        crit = float(stats.t.ppf(0.5 + level / 2.0, self.df_inference))
        est, se = self.coefficients[name], self.se(name)
        return est - crit * se, est + crit * se

    def stars(self, name: str) -> str:
        p = self.pvalue(name)
        return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.10 else ""

    def linear_combination(self, weights: Mapping[str, float]) -> tuple[float, float]:
        """Estimate and standard error of sum_j weights[j] * coefficient[j]."""
        vec = np.zeros(len(self.columns))
        for name, w in weights.items():
            vec[self.columns.index(name)] = w
        est = float(vec @ self.coef_vector())
        var = float(vec @ self.vcov @ vec)
        return est, math.sqrt(max(var, 0.0))

    def to_json_dict(self, level: float = 0.95) -> dict:
        ci = {c: self.conf_int(c, level) for c in self.columns}
        return {
            "coefficients": {c: self.coefficients[c] for c in self.columns},
            "se": {c: self.se(c) for c in self.columns},
            "t": {c: self.tstat(c) for c in self.columns},
            "p": {c: self.pvalue(c) for c in self.columns},
            "conf_low": {c: ci[c][0] for c in self.columns},
            "conf_high": {c: ci[c][1] for c in self.columns},
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "dropped": list(self.dropped_collinear),
        }


def wls_fit(
    design: DesignMatrix,
    *,
    tol: float = DEMEAN_TOL,
    max_iter: int = DEMEAN_MAX_ITER,
) -> RegressionFit:
    """Demean, drop collinear columns, and solve the weighted normal equations.

    Residuals are reported on the demeaned scale, which matches the residuals
    of the equivalent dummy-variable regression. Dropped columns are recorded
    by name and excluded from the covariance.
    """
    if design.x.shape[1] == 0:
        raise ValueError("design matrix has no regressor columns")
    g = len(np.unique(design.cluster_codes))
    if g < 2:
        raise ValueError(f"need at least 2 clusters for inference, got {g}")
    dm = demean_two_way(design, tol=tol, max_iter=max_iter)
    root_w = np.sqrt(dm.weight)
    a = dm.x * root_w[:, None]
    kept, dropped_ix = _select_columns(a)
    if not kept:
        raise ValueError(
            "every regressor column is collinear with the fixed effects; nothing to estimate"
        )
    if design.n < len(kept) + 2:
        raise ValueError(
            f"{design.n} rows cannot support {len(kept)} retained parameters; "
            "need at least two more rows than parameters"
        )
    b = dm.y * root_w
    beta, *_ = np.linalg.lstsq(a[:, kept], b, rcond=None)
    x_kept = dm.x[:, kept]
    residuals = dm.y - x_kept @ beta
    vcov = cluster_vcov(x_kept, dm.weight, residuals, dm.cluster_codes)
    columns = tuple(design.columns[j] for j in kept)
    return RegressionFit(
        columns=columns,
        coefficients={c: float(v) for c, v in zip(columns, beta)},
        vcov=vcov,
        residuals=residuals,
        n_obs=design.n,
        n_clusters=g,
        dropped_collinear=tuple(design.columns[j] for j in dropped_ix),
    )
