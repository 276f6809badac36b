"""Model-agnostic interpretation: partial dependence, ICE curves and H-statistics.

Every function accepts either a :class:`~interpreg.models.FittedModel` or any
callable mapping an ``(m, p)`` matrix to ``m`` predictions.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .data import BINARY, Dataset, DataError
from .models import FittedModel, fit, predict

log = logging.getLogger(__name__)

DEFAULT_GRID = 50
H_ATOL = 1e-8  # H below this is numerically indistinguishable from an additive model
_CHUNK = 500_000  # rows per batched prediction call


class UndefinedHError(ArithmeticError):
    """The two-dimensional partial dependence is constant, so H has no meaning."""


@dataclass(frozen=True)
class Grid:
    column: str
    points: np.ndarray
    kind: str  # "continuous" | "binary" | "ohe-level"
    levels: tuple = ()  # member column names for ohe-level grids

    def __len__(self):
        return len(self.points)

    @property
    def labels(self) -> list:
        return list(self.levels) if self.kind == "ohe-level" else [float(v) for v in self.points]


@dataclass(frozen=True)
class IceResult:
    grid: Grid
    curves: np.ndarray  # n x g


@dataclass(frozen=True)
class PdResult:
    grid: Grid
    pd: np.ndarray
    n_used: int
    sd: Optional[np.ndarray] = None  # across-instance spread of the ICE values


@dataclass
class HReport:
    pairs: list  # (var_j, var_k, h) sorted by h descending
    null_quantiles: dict = field(default_factory=dict)  # (j, k) -> {"q50","q95","q99"}
    exceeds_null_95: dict = field(default_factory=dict)

    def h(self, j: str, k: str) -> float:
        for a, b, v in self.pairs:
            if {a, b} == {j, k}:
                return v
        raise KeyError((j, k))


def _predictor(m) -> Callable:
    if isinstance(m, FittedModel):
        return lambda X: predict(m, X)
    if callable(m):
        return lambda X: np.asarray(m(X), dtype=float)
    raise TypeError("model must be a FittedModel or a callable")


def _check(m, d: Dataset):
    if d.has_missing():
        raise DataError("interpretation requires complete data; impute first")
    if isinstance(m, FittedModel) and m.p != d.p:
        raise ValueError(f"model expects {m.p} features, dataset has {d.p}")


def _rows(d: Dataset, rows) -> np.ndarray:
    return np.arange(d.n) if rows is None else np.asarray(rows)


# ------------------------------------------------------------------- grids

def make_grid(d: Dataset, column: str, g: int = DEFAULT_GRID, rows=None) -> Grid:
    """Evaluation grid for a column or a one-hot group.

    Continuous grids are ``g`` evenly spaced points between the observed
    minimum and maximum of ``rows`` (all rows by default).
    """
    groups = d.ohe_groups()
    if column in groups:
        members = tuple(d.names[c] for c in groups[column])
        return Grid(column, np.arange(len(members), dtype=float), "ohe-level", members)
    s = d.spec(column)
    if s.kind == BINARY:
        return Grid(column, np.array([0.0, 1.0]), "binary")
    if g < 2:
        raise ValueError("continuous grids need g >= 2")
    x = d.features[_rows(d, rows), d.col(column)]
    x = x[~np.isnan(x)]
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        raise DataError(f"column {column!r} is constant; no grid can be built")
    pts = np.linspace(lo, hi, g)
    pts[0], pts[-1] = lo, hi
    return Grid(column, pts, "continuous")


def _grid_settings(d: Dataset, grid: Grid):
    """Yield (column indices, values) pairs that realise each grid point."""
    if grid.kind == "ohe-level":
        groups = d.ohe_groups()
        if grid.column not in groups:
            raise DataError(f"one-hot group {grid.column!r} not found")
        cols = groups[grid.column]
        for lvl in range(len(cols)):
            vals = np.zeros(len(cols))
            vals[lvl] = 1.0
            yield cols, vals
    else:
        j = d.col(grid.column)
        for v in grid.points:
            yield [j], np.array([v])


# ------------------------------------------------------------------- ICE / PD

def compute_ice(m, d: Dataset, grid: Grid, rows=None) -> IceResult:
    _check(m, d)
    f = _predictor(m)
    X = d.features[_rows(d, rows)]
    n = len(X)
    curves = np.empty((n, len(grid)))
    for gi, (cols, vals) in enumerate(_grid_settings(d, grid)):
        Xv = np.array(X)
        Xv[:, cols] = vals
        curves[:, gi] = f(Xv)
    return IceResult(grid, curves)


def compute_pd(m, d: Dataset, grid: Grid, rows=None) -> PdResult:
    """Average of the ICE curves; no centering is applied."""
    ice = compute_ice(m, d, grid, rows)
    return PdResult(grid, ice.curves.mean(axis=0), ice.curves.shape[0], ice.curves.std(axis=0))


def compute_pd_ohe(m, d: Dataset, group: str, rows=None) -> PdResult:
    """PD over the levels of a one-hot group; siblings of the active level are zeroed."""
    if group not in d.ohe_groups():
        raise DataError(f"one-hot group {group!r} not found")
    return compute_pd(m, d, make_grid(d, group), rows)


def pd_gradient(pd: PdResult) -> np.ndarray:
    if pd.grid.kind != "continuous":
        raise ValueError("gradients are only defined on continuous grids")
    if len(pd.grid) < 3:
        raise ValueError("gradient needs a grid of at least 3 points")
    return np.gradient(pd.pd, pd.grid.points, edge_order=1)


def align_offset(pd: PdResult, reference: PdResult) -> PdResult:
    """Shift ``pd`` so its mean matches ``reference`` (presentation only)."""
    return replace(pd, pd=pd.pd - pd.pd.mean() + reference.pd.mean())


# ------------------------------------------------------------------- H statistic

def _variable_columns(d: Dataset, var: str) -> list:
    groups = d.ohe_groups()
    if var in groups:
        return list(groups[var])
    return [d.col(var)]


def pd_at_points(f, X: np.ndarray, cols: Sequence[int]) -> np.ndarray:
    """PD of the variables ``cols`` evaluated at every row's own values.

    Entry ``i`` is the mean over rows ``l`` of ``f`` at row ``l`` with the
    ``cols`` entries replaced by those of row ``i``.
    """
    n = len(X)
    cols = list(cols)
    out = np.empty(n)
    per = max(1, _CHUNK // n)
    for s in range(0, n, per):
        block = range(s, min(n, s + per))
        Xb = np.tile(X, (len(block), 1))
        Xb[:, cols] = np.repeat(X[list(block)][:, cols], n, axis=0)
        out[s:s + len(block)] = f(Xb).reshape(len(block), n).mean(axis=1)
    return out


def _eval_rows(d: Dataset, rows, max_points, seed) -> np.ndarray:
    r = _rows(d, rows)
    if max_points is not None and len(r) > max_points:
        r = np.sort(np.random.default_rng(seed).choice(r, size=max_points, replace=False))
    return r


def _h_parts(f, X, cj, ck):
    pj = pd_at_points(f, X, cj)
    pk = pd_at_points(f, X, ck)
    pjk = pd_at_points(f, X, cj + ck)
    return pj - pj.mean(), pk - pk.mean(), pjk - pjk.mean()


def _h_from_parts(pj, pk, pjk, scale) -> float:
    den = float(pjk @ pjk)
    if not den > 1e-24 * max(scale, 1e-300):
        raise UndefinedHError("two-dimensional partial dependence is constant; H is undefined")
    inter = pjk - pj - pk
    h2 = float(inter @ inter) / den
    if h2 < 0:
        log.debug("clamping negative H^2 %.3e to 0", h2)
        h2 = 0.0
    return float(np.sqrt(h2))


def compute_h_pairwise(m, d: Dataset, j: str, k: str, max_points: Optional[int] = None,
                       rows=None, seed: int = 0) -> float:
    """Pairwise interaction strength H between variables ``j`` and ``k``.

    One- and two-dimensional PDs are evaluated at the data points themselves
    and mean-centered before forming the ratio of the squared interaction
    residual to the squared joint PD. ``j`` and ``k`` may name one-hot groups.
    ``max_points`` caps the number of evaluation rows (seeded subsample).
    """
    if j == k:
        raise ValueError("H needs two distinct variables")
    _check(m, d)
    cj, ck = _variable_columns(d, j), _variable_columns(d, k)
    if set(cj) & set(ck):
        raise ValueError(f"variables {j!r} and {k!r} share columns")
    if min(cj) > min(ck):  # canonical order makes H(j, k) == H(k, j) bitwise
        cj, ck = ck, cj
    f = _predictor(m)
    X = d.features[_eval_rows(d, rows, max_points, seed)]
    pj, pk, pjk = _h_parts(f, X, cj, ck)
    scale = float(np.sum(f(X) ** 2))
    return _h_from_parts(pj, pk, pjk, scale)


def h_null_distribution(m, d: Dataset, j: str, k: str, n_null: int = 20, seed: int = 0,
                        max_points: Optional[int] = None, rows=None, return_values: bool = False):
    """Quantiles of H under a refitted no-interaction reference.

    The reference removes the j-k interaction component from the model's
    predictions, ``F_add = f - (PD_jk - PD_j - PD_k)`` (centered PDs). Each
    replicate bootstrap-resamples rows, sets the target to ``F_add`` plus
    permuted model residuals, refits the same family and configuration, and
    records H. Replicate ``r`` draws from its own child of ``SeedSequence(seed)``.
    """
    if n_null < 20:
        raise ValueError("n_null must be at least 20")
    if not isinstance(m, FittedModel) or m.config is None:
        raise ValueError("null distribution needs a FittedModel carrying its fit configuration")
    _check(m, d)
    r = _rows(d, rows)
    sub = d.subset(r)
    cj, ck = _variable_columns(sub, j), _variable_columns(sub, k)
    if min(cj) > min(ck):
        cj, ck = ck, cj
    f = _predictor(m)
    X, y = sub.features, sub.target
    fx = f(X)
    pj, pk, pjk = _h_parts(f, X, cj, ck)
    f_add = fx - (pjk - pj - pk)
    resid = y - fx

    values = np.empty(n_null)
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_null)):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, len(y), size=len(y))
        y_star = f_add[boot] + rng.permutation(resid)
        d_star = replace(sub, features=X[boot], target=y_star, missing_mask=sub.missing_mask[boot])
        m_star = fit(d_star, None, m.config)
        values[i] = compute_h_pairwise(m_star, d_star, j, k, max_points=max_points, seed=seed + i)
    q = {"q50": float(np.quantile(values, 0.50)), "q95": float(np.quantile(values, 0.95)),
         "q99": float(np.quantile(values, 0.99))}
    return (q, values) if return_values else q


def exceeds(h: float, threshold: float) -> bool:
    return bool(h > threshold + H_ATOL)


def h_matrix(m, d: Dataset, columns: Sequence[str], max_points: Optional[int] = None,
             n_null: int = 0, seed: int = 0, rows=None) -> HReport:
    columns = list(columns)
    if len(columns) < 2:
        raise ValueError("h_matrix needs at least two columns")
    report = HReport([])
    for a in range(len(columns)):
        for b in range(a + 1, len(columns)):
            j, k = columns[a], columns[b]
            h = compute_h_pairwise(m, d, j, k, max_points=max_points, rows=rows, seed=seed)
            report.pairs.append((j, k, h))
            if n_null:
                q = h_null_distribution(m, d, j, k, n_null, seed, max_points=max_points, rows=rows)
                report.null_quantiles[(j, k)] = q
                report.exceeds_null_95[(j, k)] = exceeds(h, q["q95"])
    report.pairs.sort(key=lambda t: -t[2])
    return report


# ------------------------------------------------------------------- CSV output

def _fmt(v: float) -> str:
    return repr(float(v))


def write_pd_csv(pd: PdResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grid_value", "pd", "pd_sd"])
        sd = pd.sd if pd.sd is not None else np.full(len(pd.pd), np.nan)
        for lab, v, s in zip(pd.grid.labels, pd.pd, sd):
            w.writerow([lab if isinstance(lab, str) else _fmt(lab), _fmt(v), _fmt(s)])


def write_ice_csv(ice: IceResult, path, instance_ids=None) -> None:
    ids = range(ice.curves.shape[0]) if instance_ids is None else instance_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "grid_value", "value"])
        labels = ice.grid.labels
        for i, row in zip(ids, ice.curves):
            for lab, v in zip(labels, row):
                w.writerow([int(i), lab if isinstance(lab, str) else _fmt(lab), _fmt(v)])


def write_h_csv(report: HReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["var_j", "var_k", "h", "null_q50", "null_q95", "null_q99", "exceeds_95"])
        for j, k, h in report.pairs:
            q = report.null_quantiles.get((j, k))
            if q is None:
                w.writerow([j, k, _fmt(h), "", "", "", ""])
            else:
                w.writerow([j, k, _fmt(h), _fmt(q["q50"]), _fmt(q["q95"]), _fmt(q["q99"]),
                            str(report.exceeds_null_95[(j, k)]).lower()])
