"""Regression model families behind one fit/predict contract.

Families: ordinary least squares, ridge, LASSO (cyclic coordinate descent),
Gaussian-kernel ridge regression and a one-hidden-layer sigmoid network
trained by full-batch gradient descent.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy import linalg

from .data import BINARY, Dataset, DataError, SplitIndices, VariableSpec

log = logging.getLogger(__name__)

FAMILIES = ("ols", "ridge", "lasso", "krr", "mlp")
LINEAR_FAMILIES = ("ols", "ridge", "lasso")
FORMAT_VERSION = 1


class ModelError(RuntimeError):
    """Numerical failure while fitting or applying a model."""


class SingularDesignError(ModelError):
    pass


class ConvergenceError(ModelError):
    def __init__(self, msg, last_iterate=None):
        super().__init__(msg)
        self.last_iterate = last_iterate


class DivergenceError(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    family: str = "ols"
    lam: float = 0.0
    kernel_bandwidth: Union[float, str] = "median-heuristic"
    hidden_units: int = 10
    l1_hidden: float = 0.0
    epochs: int = 2000
    learning_rate: float = 0.1
    seed: int = 0
    tolerance: float = 1e-7
    max_sweeps: int = 10_000
    kernel: str = "rbf"  # "linear" is a test hook for checking the dual solve

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if self.family == "krr":
            bw = self.kernel_bandwidth
            if isinstance(bw, str):
                if bw != "median-heuristic":
                    raise ValueError(f"kernel_bandwidth must be positive or 'median-heuristic', got {bw!r}")
            elif not bw > 0:
                raise ValueError("kernel_bandwidth must be positive")
            if self.kernel not in ("rbf", "linear"):
                raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.family == "mlp":
            if self.hidden_units < 1:
                raise ValueError("hidden_units must be at least 1")
            if not self.l1_hidden >= 0:
                raise ValueError("l1_hidden must be nonnegative")
            if self.epochs < 1 or not self.learning_rate > 0:
                raise ValueError("epochs and learning_rate must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True, eq=False)
class FittedModel:
    family: str
    params: dict
    feature_names: tuple
    config: Optional[ModelConfig] = None
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return len(self.feature_names)

    @property
    def coef(self) -> np.ndarray:
        return self.params["coef"]

    @property
    def intercept(self) -> float:
        return float(self.params["intercept"][0])

    def predict(self, rows) -> np.ndarray:
        return predict(self, rows)

    __call__ = predict


@dataclass(frozen=True)
class Metrics:
    mae: float
    r2: Optional[float]
    r2_defined: bool = True


# ------------------------------------------------------------------- helpers

def _rows(d: Dataset, train) -> np.ndarray:
    if train is None:
        return np.arange(d.n)
    if isinstance(train, SplitIndices):
        return np.asarray(train.train)
    return np.asarray(train)


def _training_arrays(d: Dataset, train):
    if d.has_missing():
        raise DataError("fitting requires complete data; impute first")
    r = _rows(d, train)
    if r.size == 0:
        raise DataError("no training rows")
    return d.features[r], d.target[r]


def _linear_model(family, coef, intercept, d, config, **meta) -> FittedModel:
    params = {"coef": np.asarray(coef, dtype=float), "intercept": np.array([float(intercept)])}
    return FittedModel(family, params, tuple(d.names), config, meta)


# ------------------------------------------------------------------- linear

def fit_ols(d: Dataset, train=None, rank_tol: Optional[float] = None) -> FittedModel:
    """Least squares with intercept via a pivot-free QR factorization.

    A design whose smallest singular value falls below ``rank_tol`` (relative
    to the largest) is rejected rather than silently regularized.
    """
    X, y = _training_arrays(d, train)
    A = np.column_stack([X, np.ones(len(y))])
    n, k = A.shape
    s = np.linalg.svd(A, compute_uv=False)
    tol = rank_tol if rank_tol is not None else max(n, k) * np.finfo(float).eps
    if n < k or s[-1] <= tol * s[0]:
        raise SingularDesignError(
            f"design matrix with intercept is rank deficient (smallest/largest singular value "
            f"{s[-1] / s[0] if s[0] else 0.0:.3e} <= tolerance {tol:.3e})"
        )
    Q, R = np.linalg.qr(A)
    beta = linalg.solve_triangular(R, Q.T @ y)
    resid = y - A @ beta
    return _linear_model("ols", beta[:-1], beta[-1], d, ModelConfig("ols"),
                         n_train=int(n), final_loss=float(resid @ resid / n))


def fit_ridge(d: Dataset, train=None, lam: float = 0.0) -> FittedModel:
    """Minimize RSS + lam * ||coef||^2 with an unpenalized intercept."""
    if not lam >= 0:
        raise ValueError("lambda must be nonnegative")
    X, y = _training_arrays(d, train)
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    p = X.shape[1]
    # augmented least squares avoids forming X'X
    A = np.vstack([Xc, np.sqrt(lam) * np.eye(p)])
    b = np.concatenate([yc, np.zeros(p)])
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = yc - Xc @ coef
    return _linear_model("ridge", coef, ym - xm @ coef, d, ModelConfig("ridge", lam=lam),
                         n_train=len(y), final_loss=float(resid @ resid + lam * coef @ coef))


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def lasso_objective(X, y, coef, intercept, lam) -> float:
    r = y - X @ coef - intercept
    return float(r @ r / (2 * len(y)) + lam * np.abs(coef).sum())


def fit_lasso(d: Dataset, train=None, lam: float = 0.0, tolerance: float = 1e-7,
              max_sweeps: int = 10_000) -> FittedModel:
    """Cyclic coordinate descent on RSS/(2n) + lam * ||coef||_1.

    Coordinates are visited in column order each sweep; iteration stops once
    the largest coefficient change in a sweep is below ``tolerance``.
    """
    if not lam >= 0:
        raise ValueError("lambda must be nonnegative")
    X, y = _training_arrays(d, train)
    n, p = X.shape
    cont = [j for j, s in enumerate(d.specs) if not s.is_binary]
    full = d.features[:, cont]
    if cont and (np.abs(full.mean(axis=0)).max() > 1e-6 or np.abs(full.var(axis=0) - 1).max() > 1e-6):
        warnings.warn("fit_lasso: continuous features are not standardized", stacklevel=2)
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    sq = (Xc * Xc).sum(axis=0) / n
    coef = np.zeros(p)
    r = yc.copy()
    history = [lasso_objective(Xc, yc, coef, 0.0, lam)]
    for sweep in range(1, max_sweeps + 1):
        delta = 0.0
        for j in range(p):
            if sq[j] == 0.0:
                continue
            old = coef[j]
            rho = Xc[:, j] @ r / n + sq[j] * old
            new = soft_threshold(rho, lam) / sq[j]
            if new != old:
                r -= Xc[:, j] * (new - old)
                coef[j] = new
                delta = max(delta, abs(new - old))
        history.append(lasso_objective(Xc, yc, coef, 0.0, lam))
        if delta < tolerance:
            break
    else:
        raise ConvergenceError(
            f"LASSO did not converge within {max_sweeps} sweeps (last change {delta:.3e})",
            last_iterate=coef.copy(),
        )
    cfg = ModelConfig("lasso", lam=lam, tolerance=tolerance, max_sweeps=max_sweeps)
    return _linear_model("lasso", coef, ym - xm @ coef, d, cfg, n_train=n,
                         iterations=sweep, final_loss=history[-1], loss_history=history)


# ------------------------------------------------------------------- kernel ridge

def pairwise_sq_dists(A, B) -> np.ndarray:
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def median_heuristic(X) -> float:
    """Median of the pairwise Euclidean distances between distinct rows."""
    iu = np.triu_indices(len(X), k=1)
    dist = np.sqrt(pairwise_sq_dists(X, X)[iu])
    med = float(np.median(dist)) if dist.size else 0.0
    if not med > 0:
        raise ModelError("median heuristic bandwidth is zero (too few distinct training rows)")
    return med


def kernel_matrix(A, B, bandwidth, kernel="rbf") -> np.ndarray:
    if kernel == "linear":
        return A @ B.T
    return np.exp(-pairwise_sq_dists(A, B) / (2.0 * bandwidth ** 2))


def fit_krr(d: Dataset, train=None, lam: float = 1e-3,
            bandwidth: Union[float, str] = "median-heuristic", kernel: str = "rbf") -> FittedModel:
    """Solve (K + lam*n*I) a = y - mean(y) by Cholesky with a small diagonal jitter."""
    cfg = ModelConfig("krr", lam=lam, kernel_bandwidth=bandwidth, kernel=kernel)
    X, y = _training_arrays(d, train)
    n = len(y)
    if bandwidth == "median-heuristic":
        bw = median_heuristic(X) if kernel == "rbf" else 1.0
        log.info("krr: median-heuristic bandwidth %.6g", bw)
    else:
        bw = float(bandwidth)
    K = kernel_matrix(X, X, bw, kernel)
    jitter = 1e-10 * np.trace(K) / n
    ym = y.mean()
    A = K + (lam * n + jitter) * np.eye(n)
    try:
        c = linalg.cho_factor(A, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise ModelError(f"kernel system is not positive definite after jitter {jitter:.3e}: {exc}") from None
    alpha = linalg.cho_solve(c, y - ym)
    params = {"dual": alpha, "x_train": np.array(X), "bandwidth": np.array([bw]),
              "y_mean": np.array([ym])}
    fitted = K @ alpha + ym
    return FittedModel("krr", params, tuple(d.names), cfg,
                       {"n_train": n, "bandwidth": bw, "jitter": jitter,
                        "final_loss": float(np.mean((y - fitted) ** 2))})


# ------------------------------------------------------------------- neural network

def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def init_mlp(p: int, hidden: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    a1, a2 = 1.0 / np.sqrt(p), 1.0 / np.sqrt(hidden)
    return {
        "w_hidden": rng.uniform(-a1, a1, size=(p, hidden)),
        "b_hidden": rng.uniform(-a1, a1, size=hidden),
        "w_out": rng.uniform(-a2, a2, size=hidden),
        "b_out": rng.uniform(-a2, a2, size=1),
    }


def mlp_forward(params: dict, X) -> np.ndarray:
    h = sigmoid(X @ params["w_hidden"] + params["b_hidden"])
    return h @ params["w_out"] + params["b_out"][0]


def mlp_loss_and_grad(params: dict, X, y, l1_hidden: float = 0.0):
    """Mean squared error plus an L1 penalty on hidden-layer weights and biases."""
    n = len(y)
    h = sigmoid(X @ params["w_hidden"] + params["b_hidden"])
    out = h @ params["w_out"] + params["b_out"][0]
    err = out - y
    loss = err @ err / n + l1_hidden * (np.abs(params["w_hidden"]).sum() + np.abs(params["b_hidden"]).sum())
    g_out = 2.0 * err / n
    dh = np.outer(g_out, params["w_out"]) * h * (1.0 - h)
    grads = {
        "w_hidden": X.T @ dh + l1_hidden * np.sign(params["w_hidden"]),
        "b_hidden": dh.sum(axis=0) + l1_hidden * np.sign(params["b_hidden"]),
        "w_out": h.T @ g_out,
        "b_out": np.array([g_out.sum()]),
    }
    return float(loss), grads


def fit_mlp(d: Dataset, train=None, config: Optional[ModelConfig] = None) -> FittedModel:
    cfg = config or ModelConfig("mlp")
    if cfg.family != "mlp":
        cfg = replace(cfg, family="mlp")
    X, y = _training_arrays(d, train)
    params = init_mlp(X.shape[1], cfg.hidden_units, cfg.seed)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.epochs):
            loss, grads = mlp_loss_and_grad(params, X, y, cfg.l1_hidden)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"MLP loss became non-finite; learning_rate={cfg.learning_rate} is too large")
            for key in params:
                params[key] = params[key] - cfg.learning_rate * grads[key]
        loss, _ = mlp_loss_and_grad(params, X, y, cfg.l1_hidden)
    if not np.isfinite(loss):
        raise DivergenceError(f"MLP loss became non-finite; learning_rate={cfg.learning_rate} is too large")
    return FittedModel("mlp", params, tuple(d.names), cfg,
                       {"n_train": len(y), "iterations": cfg.epochs, "final_loss": loss, "seed": cfg.seed})


# ------------------------------------------------------------------- dispatch

def fit(d: Dataset, train=None, config: Optional[ModelConfig] = None) -> FittedModel:
    cfg = config or ModelConfig()
    if cfg.family == "ols":
        m = fit_ols(d, train)
    elif cfg.family == "ridge":
        m = fit_ridge(d, train, cfg.lam)
    elif cfg.family == "lasso":
        m = fit_lasso(d, train, cfg.lam, cfg.tolerance, cfg.max_sweeps)
    elif cfg.family == "krr":
        m = fit_krr(d, train, cfg.lam, cfg.kernel_bandwidth, cfg.kernel)
    else:
        return fit_mlp(d, train, cfg)
    return replace(m, config=cfg)


def predict(m: FittedModel, rows) -> np.ndarray:
    X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != m.p:
        raise ValueError(f"expected rows with {m.p} columns, got shape {X.shape}")
    P = m.params
    if m.family in LINEAR_FAMILIES:
        return X @ P["coef"] + P["intercept"][0]
    if m.family == "krr":
        kernel = m.config.kernel if m.config is not None else "rbf"
        out = np.empty(len(X))
        step = max(1, 4_000_000 // max(1, len(P["x_train"])))
        for s in range(0, len(X), step):
            K = kernel_matrix(X[s:s + step], P["x_train"], P["bandwidth"][0], kernel)
            out[s:s + step] = K @ P["dual"] + P["y_mean"][0]
        return out
    return mlp_forward(P, X)


def evaluate(m, d: Dataset, indices=None) -> Metrics:
    r = _rows(d, indices)
    if r.size == 0:
        raise DataError("evaluate needs at least one row")
    y = d.target[r]
    yhat = predict(m, d.features[r]) if isinstance(m, FittedModel) else np.asarray(m(d.features[r]))
    mae = float(np.mean(np.abs(y - yhat)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return Metrics(mae, None, False)
    return Metrics(mae, 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot)


def n_nonzero(m: FittedModel) -> Optional[int]:
    if m.family not in LINEAR_FAMILIES:
        return None
    return int(np.count_nonzero(m.coef))


def unstandardize_linear(m: FittedModel, params: dict) -> FittedModel:
    """Express a linear model fit on standardized features on the original feature scale."""
    if m.family not in LINEAR_FAMILIES:
        raise ValueError("only linear families have coefficients to map back")
    coef = np.array(m.coef)
    intercept = m.intercept
    for j, name in enumerate(m.feature_names):
        if name in params:
            mu, sd = params[name]
            coef[j] = m.coef[j] / sd
            intercept -= coef[j] * mu
    return replace(m, params={"coef": coef, "intercept": np.array([intercept])})


# ------------------------------------------------------------------- feature engineering

def add_interactions(d: Dataset, pairs) -> Dataset:
    """Append product columns named ``a*b``; the product of two binaries is binary."""
    seen = set(d.names)
    specs, cols, masks = list(d.specs), [], []
    for a, b in pairs:
        if a == b:
            raise DataError(f"interaction pair ({a!r}, {b!r}) repeats a column")
        ia, ib = d.col(a), d.col(b)
        name = f"{a}*{b}"
        if name in seen or f"{b}*{a}" in seen:
            raise DataError(f"duplicate interaction pair ({a!r}, {b!r})")
        seen.add(name)
        both_binary = d.specs[ia].is_binary and d.specs[ib].is_binary
        specs.append(VariableSpec(name, BINARY if both_binary else "continuous"))
        cols.append(d.features[:, ia] * d.features[:, ib])
        masks.append(d.missing_mask[:, ia] | d.missing_mask[:, ib])
    if not cols:
        return d
    X = np.column_stack([d.features] + cols)
    M = np.column_stack([d.missing_mask] + masks)
    return d.with_values(features=X, specs=tuple(specs), missing_mask=M)


# ------------------------------------------------------------------- serialization

def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def model_to_dict(m: FittedModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "family": m.family,
        "feature_names": list(m.feature_names),
        "config": asdict(m.config) if m.config is not None else None,
        "params": {k: _jsonable(v) for k, v in m.params.items()},
        "meta": _jsonable(m.meta),
    }


def model_from_dict(doc: dict) -> FittedModel:
    version = doc.get("format_version")
    if not isinstance(version, int) or version > FORMAT_VERSION:
        raise ValueError(f"model format version {version!r} is newer than supported ({FORMAT_VERSION})")
    cfg = ModelConfig(**doc["config"]) if doc.get("config") else None
    params = {k: np.asarray(v, dtype=float) for k, v in doc["params"].items()}
    return FittedModel(doc["family"], params, tuple(doc["feature_names"]), cfg, doc.get("meta", {}))


def save_model(m: FittedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(m), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
