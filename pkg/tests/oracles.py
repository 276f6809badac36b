"""Naive reference implementations used as independent oracles.

Deliberately written as plain loops that call a model one row at a time, with
no code shared with the package's vectorized paths.
"""
import numpy as np


def predict_row(f, row):
    return float(np.asarray(f(np.asarray(row, dtype=float)[None, :]))[0])


def naive_ice(f, X, col_sets, settings):
    """ICE[i][g]: row i with columns ``col_sets`` set to ``settings[g]``."""
    n = len(X)
    out = np.zeros((n, len(settings)))
    for i in range(n):
        for g, vals in enumerate(settings):
            row = list(X[i])
            for c, v in zip(col_sets, vals):
                row[c] = v
            out[i][g] = predict_row(f, row)
    return out


def naive_pd(f, X, col_sets, settings):
    ice = naive_ice(f, X, col_sets, settings)
    return [sum(ice[i][g] for i in range(len(X))) / len(X) for g in range(len(settings))]


def naive_h(f, X, cj, ck):
    """Centered pairwise H with every partial dependence computed by a double loop."""
    n = len(X)

    def pd_at(cols, i):
        total = 0.0
        for l in range(n):
            row = list(X[l])
            for c in cols:
                row[c] = X[i][c]
            total += predict_row(f, row)
        return total / n

    pj = [pd_at(cj, i) for i in range(n)]
    pk = [pd_at(ck, i) for i in range(n)]
    pjk = [pd_at(list(cj) + list(ck), i) for i in range(n)]
    mj, mk, mjk = sum(pj) / n, sum(pk) / n, sum(pjk) / n
    num = sum(((pjk[i] - mjk) - (pj[i] - mj) - (pk[i] - mk)) ** 2 for i in range(n))
    den = sum((pjk[i] - mjk) ** 2 for i in range(n))
    return (num / den) ** 0.5


def ols_with_se(X, y):
    """Normal-equation OLS estimate and its classical standard errors (intercept last)."""
    A = np.column_stack([X, np.ones(len(y))])
    XtX_inv = np.linalg.inv(A.T @ A)
    beta = XtX_inv @ A.T @ y
    resid = y - A @ beta
    sigma2 = resid @ resid / (len(y) - A.shape[1])
    return beta, np.sqrt(np.diag(sigma2 * XtX_inv))


def dense_krr_predict(Xtr, ytr, Xte, lam, bandwidth):
    """Direct dense solve of the centered kernel ridge system, including the documented jitter."""
    n = len(ytr)
    K = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            K[a, b] = np.exp(-np.sum((Xtr[a] - Xtr[b]) ** 2) / (2 * bandwidth ** 2))
    jitter = 1e-10 * np.trace(K) / n
    alpha = np.linalg.solve(K + (lam * n + jitter) * np.eye(n), ytr - ytr.mean())
    out = []
    for x in Xte:
        k = np.array([np.exp(-np.sum((x - t) ** 2) / (2 * bandwidth ** 2)) for t in Xtr])
        out.append(k @ alpha + ytr.mean())
    return np.array(out)


def central_difference(loss, params, step=1e-5):
    """Central finite-difference gradient of ``loss(params)`` for a dict of arrays."""
    grads = {}
    for key, arr in params.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[key][idx] += step
            minus[key][idx] -= step
            g[idx] = (loss(plus) - loss(minus)) / (2 * step)
        grads[key] = g
    return grads
