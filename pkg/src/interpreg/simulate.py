"""Seeded data generators and ablation sweeps comparing model families.

The simulated response is

    y = beta0*x0 + beta1*x1 + alpha*x0*x1 + gamma*x0**2 + eps,   eps ~ N(noise_mean, s)

with x0, x1 independent standard normals. Each sweep point is replicated over
seeds; replicate ``r`` uses the same child of ``SeedSequence([seed, r])`` at
every sweep point (common random numbers), so sweeps are reproducible and
points share their sampling noise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .data import (BINARY, CONTINUOUS, Dataset, VariableSpec, bin_continuous, impute_mean,
                   split, standardize)
from .models import evaluate, fit_krr, fit_lasso, fit_ols, predict

LAMBDA_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
LASSO_GRID = (3e-1, 1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4)
BASES = "ACGU"


@dataclass(frozen=True)
class SimConfig:
    n: int = 2000
    beta0: float = 1.0
    beta1: float = 1.0
    alpha: float = 0.0
    gamma: float = 0.5
    noise_mean: float = 0.5
    noise_sd: float = 0.1
    noise_param: str = "sd"  # read noise_sd as a variance when "variance"
    seed: int = 0

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("SimConfig.n must be at least 10")
        if not self.noise_sd > 0:
            raise ValueError("noise_sd must be positive")
        if self.noise_param not in ("sd", "variance"):
            raise ValueError("noise_param must be 'sd' or 'variance'")

    @property
    def noise_scale(self) -> float:
        return math.sqrt(self.noise_sd) if self.noise_param == "variance" else self.noise_sd


@dataclass
class SweepPoint:
    value: object
    maes: dict  # family -> per-seed test MAE list

    @property
    def n_seeds(self) -> int:
        return len(next(iter(self.maes.values())))

    def mean(self, family: str) -> float:
        return float(np.mean(self.maes[family]))

    def sd(self, family: str) -> float:
        return float(np.std(self.maes[family], ddof=1))


@dataclass
class SweepResult:
    axis: str
    families: tuple
    points: list = field(default_factory=list)
    seeds: tuple = ()
    base: Optional[SimConfig] = None

    def point(self, value) -> SweepPoint:
        for p in self.points:
            if p.value == value:
                return p
        raise KeyError(value)

    def gap(self, value, a: str = "ols", b: str = "krr") -> float:
        """Mean test MAE of family ``a`` minus that of ``b`` at a sweep value."""
        p = self.point(value)
        return p.mean(a) - p.mean(b)

    def gap_sd(self, value, a: str = "ols", b: str = "krr") -> float:
        p = self.point(value)
        return pooled_sd(p.sd(a), p.sd(b))


def pooled_sd(*sds: float) -> float:
    """Root mean square of equal-size group standard deviations."""
    return float(np.sqrt(np.mean(np.square(sds))))


# ------------------------------------------------------------------- generators

def _dataset(X, y, names) -> Dataset:
    return Dataset(X, y, tuple(VariableSpec(nm, CONTINUOUS) for nm in names))


def deterministic_part(cfg: SimConfig, X) -> np.ndarray:
    x0, x1 = X[:, 0], X[:, 1]
    return cfg.beta0 * x0 + cfg.beta1 * x1 + cfg.alpha * x0 * x1 + cfg.gamma * x0 ** 2


def generate(cfg: SimConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    X = rng.standard_normal((cfg.n, 2))
    eps = rng.normal(cfg.noise_mean, cfg.noise_scale, size=cfg.n)
    return _dataset(X, deterministic_part(cfg, X) + eps, ["x0", "x1"])


def add_nuisance(d: Dataset, count: int, rho: float, seed: int) -> Dataset:
    """Append ``count`` columns correlated (rho) with x0 and x1 alternately; they do not affect y."""
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must lie in (-1, 1)")
    if count == 0:
        return d
    rng = np.random.default_rng(seed)
    base = d.features[:, :2]
    extra = np.column_stack([
        rho * base[:, i % 2] + math.sqrt(1 - rho * rho) * rng.standard_normal(d.n)
        for i in range(count)
    ])
    names = d.names + [f"z{i}" for i in range(count)]
    return _dataset(np.column_stack([d.features, extra]), d.target, names)


def mask_column(d: Dataset, column: str, fraction: float, seed: int) -> Dataset:
    """Mark a uniformly random ``fraction`` of a column's cells as missing."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("missing fraction must lie in [0, 1)")
    j = d.col(column)
    k = int(round(fraction * d.n))
    if k == 0:
        return d
    rows = np.random.default_rng(seed).choice(d.n, size=k, replace=False)
    X = np.array(d.features)
    M = np.array(d.missing_mask)
    X[rows, j] = np.nan
    M[rows, j] = True
    return d.with_values(features=X, missing_mask=M)


def generate_ohe_sequence(n: int, positions: int = 21, noise_sd: float = 0.1, seed: int = 0,
                          coefficients: Optional[np.ndarray] = None, intercept: float = 0.0):
    """Random base sequences as one-hot groups with an additive per-base effect.

    Columns are ``<base>_<position>`` in group ``pos<position>``. Returns the
    dataset and the ``positions x 4`` coefficient table that generated it.
    """
    rng = np.random.default_rng(seed)
    if coefficients is None:
        coefficients = rng.normal(0.0, 0.5, size=(positions, len(BASES)))
    coefficients = np.asarray(coefficients, dtype=float)
    seq = rng.integers(0, len(BASES), size=(n, positions))
    X = np.zeros((n, positions * len(BASES)))
    for pos in range(positions):
        X[np.arange(n), pos * len(BASES) + seq[:, pos]] = 1.0
    y = intercept + coefficients[np.arange(positions), seq].sum(axis=1) + rng.normal(0.0, noise_sd, n)
    specs = tuple(VariableSpec(f"{b}_{pos}", BINARY, ohe_group=f"pos{pos}")
                  for pos in range(positions) for b in BASES)
    return Dataset(X, y, specs, target_name="activity"), coefficients


# ------------------------------------------------------------------- fitting policy

def _holdout(train, seed, fraction=0.2):
    rng = np.random.default_rng(seed)
    train = np.asarray(train)
    perm = rng.permutation(len(train))
    nv = max(1, int(round(fraction * len(train))))
    return train[perm[nv:]], train[perm[:nv]]


def _val_mae(m, d, rows):
    return float(np.mean(np.abs(predict(m, d.features[rows]) - d.target[rows])))


def select_lambda(fitter, d: Dataset, train, grid: Sequence[float], seed: int) -> float:
    """Pick the grid value with the lowest MAE on a seeded inner holdout of ``train``."""
    inner, val = _holdout(train, seed)
    scores = [_val_mae(fitter(d, inner, lam), d, val) for lam in grid]
    return grid[int(np.argmin(scores))]


def fit_family(family: str, d: Dataset, train, seed: int):
    if family == "ols":
        return fit_ols(d, train)
    if family == "krr":
        lam = select_lambda(fit_krr, d, train, LAMBDA_GRID, seed)
        return fit_krr(d, train, lam)
    if family == "lasso":
        lam = select_lambda(fit_lasso, d, train, LASSO_GRID, seed)
        return fit_lasso(d, train, lam)
    raise ValueError(f"sweeps do not support family {family!r}")


# ------------------------------------------------------------------- sweeps

# Per-panel base settings; coefficients, n and noise are declared substitutes
# for values the simulated study does not report.
PANEL_DEFAULTS = {
    "interaction": SimConfig(gamma=0.0),
    "size": SimConfig(alpha=1.0, gamma=0.5),
    "missing": SimConfig(alpha=1.0, gamma=0.5),
    "binning": SimConfig(alpha=1.0, gamma=0.5),
    "nuisance": SimConfig(n=200, alpha=0.0, gamma=0.0),
}

def replicate_seeds(master: int, n_seeds: int) -> list:
    """Three 32-bit seeds (data, split, tuning) per replicate."""
    return [tuple(int(s) for s in np.random.SeedSequence([master, r]).generate_state(3))
            for r in range(n_seeds)]


def _run(axis, base: SimConfig, values, families, n_seeds, test_fraction, prepare) -> SweepResult:
    if n_seeds < 2:
        raise ValueError("each sweep point needs at least 2 seeds")
    seeds = replicate_seeds(base.seed, n_seeds)
    result = SweepResult(axis, tuple(families), seeds=tuple(seeds), base=base)
    for value in values:
        maes = {f: [] for f in families}
        for data_seed, split_seed, tune_seed in seeds:
            d = prepare(value, data_seed, tune_seed)
            sp = split(d, test_fraction, split_seed)
            for f in families:
                maes[f].append(evaluate(fit_family(f, d, sp.train, tune_seed), d, sp.test).mae)
        result.points.append(SweepPoint(value, maes))
    return result


def ablate_interaction(base: Optional[SimConfig] = None, alphas=(0.0, 0.5, 1.0, 1.5, 2.0),
                       n_seeds: int = 10, test_fraction: float = 0.2) -> SweepResult:
    base = base or PANEL_DEFAULTS["interaction"]
    if len(alphas) < 2:
        raise ValueError("need at least two alpha values")

    def prepare(a, s, _):
        return standardize(generate(replace(base, alpha=a, seed=s)))

    return _run("alpha", base, alphas, ("ols", "krr"), n_seeds, test_fraction, prepare)


def ablate_size(base: Optional[SimConfig] = None, sizes=(30, 100, 300, 1000, 3000),
                n_seeds: int = 10, test_fraction: float = 0.2) -> SweepResult:
    base = base or PANEL_DEFAULTS["size"]
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be ascending")

    def prepare(n, s, _):
        return standardize(generate(replace(base, n=n, seed=s)))

    return _run("n", base, sizes, ("ols", "krr"), n_seeds, test_fraction, prepare)


def ablate_missing(base: Optional[SimConfig] = None, fractions=(0.0, 0.3, 0.6, 0.9),
                   n_seeds: int = 10, test_fraction: float = 0.2) -> SweepResult:
    base = base or PANEL_DEFAULTS["missing"]

    def prepare(frac, s, aux):
        d = mask_column(generate(replace(base, seed=s)), "x0", frac, aux)
        return standardize(impute_mean(d))

    return _run("missing_fraction", base, fractions, ("ols", "krr"), n_seeds, test_fraction, prepare)


def ablate_binning(base: Optional[SimConfig] = None, bin_counts=(2, 4, 8, 16, 32),
                   n_seeds: int = 10, test_fraction: float = 0.2) -> SweepResult:
    """Bin x0 before fitting; the sweep starts with an unbinned reference (value ``None``)."""
    base = base or PANEL_DEFAULTS["binning"]
    if any(k < 2 for k in bin_counts):
        raise ValueError("bin counts must be at least 2")

    def prepare(k, s, _):
        d = generate(replace(base, seed=s))
        return standardize(d if k is None else bin_continuous(d, "x0", k))

    return _run("bins", base, [None, *bin_counts], ("ols", "krr"), n_seeds, test_fraction, prepare)


def ablate_nuisance(base: Optional[SimConfig] = None, extra_counts=(0, 10, 20, 30, 40),
                    rho: float = 0.9, n_seeds: int = 10, test_fraction: float = 0.2) -> SweepResult:
    base = base or PANEL_DEFAULTS["nuisance"]
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must lie in (-1, 1)")

    def prepare(count, s, aux):
        return standardize(add_nuisance(generate(replace(base, seed=s)), count, rho, aux))

    return _run("extra_variables", base, extra_counts, ("ols", "lasso", "krr"),
                n_seeds, test_fraction, prepare)


ABLATIONS = {
    "interaction": ablate_interaction,
    "size": ablate_size,
    "missing": ablate_missing,
    "binning": ablate_binning,
    "nuisance": ablate_nuisance,
}


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis_value", "family", "mae_mean", "mae_sd", "n_seeds"])
        for p in result.points:
            for f in result.families:
                value = "none" if p.value is None else repr(p.value)
                w.writerow([value, f, repr(p.mean(f)), repr(p.sd(f)), p.n_seeds])
