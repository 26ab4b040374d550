"""Binary logistic regression by iteratively reweighted least squares."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _st
from scipy.special import expit

# linear predictors beyond this are treated as separation (p within ~1e-15 of 0/1)
_ETA_LIMIT = 35.0


class FitError(ValueError):
    pass


@dataclass
class LogisticFit:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    loglik: float
    loglik_null: float
    n_obs: int
    n_iter: int
    converged: bool
    separation: bool
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)

    @property
    def iterations(self) -> int:
        return self.n_iter

    @property
    def log_likelihood(self) -> float:
        return self.loglik

    @property
    def z(self) -> np.ndarray:
        return self.coef / self.se

    @property
    def p_values(self) -> np.ndarray:
        return 2.0 * _st.norm.sf(np.abs(self.z))

    @property
    def n_params(self) -> int:
        return len(self.coef)

    @property
    def pseudo_r2(self) -> float:
        """McFadden's ``1 - ll / ll_null``."""
        return 1.0 - self.loglik / self.loglik_null if self.loglik_null != 0 else float("nan")

    @property
    def lr_stat(self) -> float:
        return 2.0 * (self.loglik - self.loglik_null)

    @property
    def lr_df(self) -> int:
        return self.n_params - 1

    @property
    def lr_p(self) -> float:
        return float(_st.chi2.sf(self.lr_stat, self.lr_df)) if self.lr_df > 0 else float("nan")

    @property
    def aic(self) -> float:
        return 2.0 * self.n_params - 2.0 * self.loglik

    @property
    def bic(self) -> float:
        return self.n_params * math.log(self.n_obs) - 2.0 * self.loglik

    def predict(self, X=None) -> np.ndarray:
        X = self.X if X is None else np.asarray(X, dtype=float)
        return expit(X @ self.coef)

    def summary(self) -> dict:
        return {
            "coefficients": {
                name: {"coef": float(b), "se": float(s), "z": float(zv), "p": float(p)}
                for name, b, s, zv, p in zip(self.names, self.coef, self.se, self.z, self.p_values)
            },
            "n_obs": self.n_obs,
            "loglik": self.loglik,
            "loglik_null": self.loglik_null,
            "pseudo_r2": self.pseudo_r2,
            "lr_stat": self.lr_stat,
            "lr_df": self.lr_df,
            "lr_p": self.lr_p,
            "aic": self.aic,
            "bic": self.bic,
            "converged": self.converged,
            "separation": self.separation,
            "n_iter": self.n_iter,
        }


def _loglik(y: np.ndarray, eta: np.ndarray) -> float:
    # y*eta - log(1 + e^eta), stable for large |eta|
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _null_loglik(y: np.ndarray) -> float:
    n = len(y)
    k = float(y.sum())
    out = 0.0
    if 0 < k:
        out += k * math.log(k / n)
    if k < n:
        out += (n - k) * math.log((n - k) / n)
    return out


def logistic_fit(X, y, names: list[str] | None = None, add_intercept: bool = True,
                 max_iter: int = 100, tol: float = 1e-10) -> LogisticFit:
    """Maximum-likelihood logit fit.

    Stops when the relative change in log-likelihood drops below ``tol`` or
    after ``max_iter`` iterations. Fitted probabilities pinned at 0 or 1 set
    ``separation`` and leave ``converged`` False.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if len(y) != X.shape[0]:
        raise FitError("X and y differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise FitError("outcome must be coded 0/1")
    if names is None:
        names = [f"x{i}" for i in range(X.shape[1])]
    names = list(names)
    if add_intercept:
        X = np.column_stack([np.ones(len(y)), X])
        names = ["const"] + names
    if len(names) != X.shape[1]:
        raise FitError("names do not match the number of columns")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise FitError("design matrix is rank deficient")

    beta = np.zeros(X.shape[1])
    eta = X @ beta
    ll = _loglik(y, eta)
    converged = separation = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        w = p * (1 - p)
        info = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(info, X.T @ (y - p))
        except np.linalg.LinAlgError:
            separation = True
            break
        beta = beta + step
        eta = X @ beta
        ll_new = _loglik(y, eta)
        if np.max(np.abs(eta)) > _ETA_LIMIT:
            ll = ll_new
            separation = True
            break
        rel = abs(ll_new - ll) / max(abs(ll), 1e-300)
        ll = ll_new
        if rel < tol:
            converged = True
            break

    p = expit(eta)
    w = p * (1 - p)
    info = X.T @ (X * w[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.full_like(info, np.nan)
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    return LogisticFit(names, beta, se, cov, ll, _null_loglik(y), len(y), it, converged and not separation,
                       separation, X, y)


def _is_binary(col: np.ndarray) -> bool:
    vals = np.unique(col)
    return len(vals) <= 2 and set(vals.tolist()) <= {0.0, 1.0}


def average_marginal_effects(fit: LogisticFit, X=None) -> dict[str, dict[str, float]]:
    """Average marginal effects with delta-method standard errors.

    0/1 columns get a discrete change (all rows set to 1 minus all rows set
    to 0); other columns the averaged derivative ``b_j p (1 - p)``.
    """
    if not fit.converged:
        raise FitError("marginal effects need a converged fit")
    X = fit.X if X is None else np.asarray(X, dtype=float)
    b = fit.coef
    out = {}
    for j, name in enumerate(fit.names):
        if np.all(X[:, j] == 1.0):
            continue  # intercept
        if _is_binary(X[:, j]):
            x1, x0 = X.copy(), X.copy()
            x1[:, j], x0[:, j] = 1.0, 0.0
            p1, p0 = expit(x1 @ b), expit(x0 @ b)
            ame = float(np.mean(p1 - p0))
            grad = ((p1 * (1 - p1))[:, None] * x1 - (p0 * (1 - p0))[:, None] * x0).mean(axis=0)
        else:
            p = expit(X @ b)
            d = p * (1 - p)
            ame = float(b[j] * d.mean())
            # d/db_k of mean(b_j p(1-p)) = mean(1[k=j] p(1-p) + b_j p(1-p)(1-2p) x_k)
            grad = b[j] * ((d * (1 - 2 * p))[:, None] * X).mean(axis=0)
            grad[j] += d.mean()
        se = float(math.sqrt(max(grad @ fit.cov @ grad, 0.0)))
        zv = ame / se if se > 0 else float("nan")
        out[name] = {
            "ame": ame,
            "se": se,
            "z": zv,
            "p": float(2 * _st.norm.sf(abs(zv))) if se > 0 else float("nan"),
            "kind": "discrete" if _is_binary(X[:, j]) else "derivative",
        }
    return out
