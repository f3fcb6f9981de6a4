"""Kaplan-Meier curves, risk stratification, Cox regression and hazard ratios."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import _kernels


class SurvivalError(ValueError):
    pass


class EmptyInput(SurvivalError):
    pass


class NoEvents(SurvivalError):
    pass


class Singular(SurvivalError):
    pass


class Diverged(SurvivalError):
    pass


# --------------------------------------------------------------------------- Kaplan-Meier


@dataclass(frozen=True)
class KaplanMeierCurve:
    event_times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __call__(self, t):
        """Step-function value S(t) (right-continuous)."""
        idx = np.searchsorted(self.event_times, np.asarray(t, dtype=float), side="right")
        return np.r_[1.0, self.survival][idx]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "survival", "at_risk", "events"])
            for row in zip(self.event_times, self.survival, self.at_risk, self.events):
                w.writerow([repr(float(row[0])), repr(float(row[1])), int(row[2]), int(row[3])])


def kaplan_meier(time, event):
    """Product-limit estimate at each distinct time with at least one event.

    Subjects censored at an event time count as at risk at that time.
    """
    t = np.asarray(time, dtype=float)
    e = np.asarray(event).astype(bool)
    if t.size == 0:
        raise EmptyInput("Kaplan-Meier needs at least one subject")
    uniq, deaths = np.unique(t[e], return_counts=True)
    at_risk = t.size - np.searchsorted(np.sort(t), uniq, side="left")
    surv = np.cumprod(1.0 - deaths / at_risk)
    return KaplanMeierCurve(uniq, surv, at_risk.astype(int), deaths)


def stratify(prob_2yr, threshold=0.5):
    """High-risk group membership: ``prob_2yr >= threshold``."""
    return np.asarray(prob_2yr, dtype=float) >= threshold


# --------------------------------------------------------------------------- Cox


@dataclass(frozen=True)
class CoxModel:
    coef: np.ndarray
    columns: list
    l2: float
    iterations: int
    grad_norm: float
    loglik: float
    information: np.ndarray
    baseline_times: np.ndarray | None = None
    baseline_cumhaz: np.ndarray | None = None

    def linear_predictor(self, X):
        return np.asarray(X, dtype=float) @ self.coef

    def cumulative_baseline_hazard(self, t):
        if self.baseline_times is None:
            raise SurvivalError("model has no baseline hazard")
        idx = np.searchsorted(self.baseline_times, np.asarray(t, dtype=float), side="right")
        return np.r_[0.0, self.baseline_cumhaz][idx]

    def survival_function(self, X, t):
        """S(t | x) = exp(-H0(t) * exp(x'beta)), shape (n, len(t))."""
        H0 = self.cumulative_baseline_hazard(np.atleast_1d(t))
        return np.exp(-np.outer(np.exp(self.linear_predictor(X)), H0))

    @property
    def hazard_ratios(self):
        return np.exp(self.coef)

    def to_dict(self):
        return {
            "coef": self.coef.tolist(),
            "columns": list(self.columns),
            "l2": self.l2,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "loglik": self.loglik,
            "information": self.information.tolist(),
            "baseline_times": None if self.baseline_times is None else self.baseline_times.tolist(),
            "baseline_cumhaz": None if self.baseline_cumhaz is None else self.baseline_cumhaz.tolist(),
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            np.asarray(obj["coef"], dtype=float),
            list(obj["columns"]),
            float(obj["l2"]),
            int(obj["iterations"]),
            float(obj["grad_norm"]),
            float(obj["loglik"]),
            np.asarray(obj["information"], dtype=float).reshape(len(obj["coef"]), len(obj["coef"])),
            None if obj.get("baseline_times") is None else np.asarray(obj["baseline_times"], dtype=float),
            None if obj.get("baseline_cumhaz") is None else np.asarray(obj["baseline_cumhaz"], dtype=float),
        )


def cox_partial_loglik(beta, X, time, event):
    """Breslow log partial likelihood with its gradient and Hessian."""
    X = np.asarray(X, dtype=float)
    order = np.argsort(-np.asarray(time, dtype=float), kind="stable")
    eta = X[order] @ beta
    eta = eta - eta.max() if eta.size else eta
    return _kernels.cox_breslow(X[order], eta, np.asarray(time, dtype=float)[order],
                                np.asarray(event, dtype=bool)[order])


_MONOTONE_TOL = 1e-6


def cox_fit(X, time, event, l2=0.0, columns=None, tol=1e-7, max_iter=100, init=None):
    """Maximize the L2-penalized Breslow partial likelihood by damped Newton steps.

    The objective is ``loglik(beta) - l2/2 * ||beta||^2``.  Steps are halved
    until the objective does not decrease; a singular Hessian gets a small
    ridge jitter for the step only.  Stops when ``max|gradient| < tol``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    n, d = X.shape
    if columns is None:
        columns = [f"x{j}" for j in range(d)]
    if not event.any():
        raise NoEvents("Cox regression needs at least one event")
    if l2 == 0 and d and np.any(np.ptp(X, axis=0) == 0):
        raise Singular("constant column without penalty")

    order = np.argsort(-time, kind="stable")
    Xs, ts, es = X[order], time[order], event[order]

    def objective(b):
        eta = Xs @ b
        eta = eta - eta.max()
        ll, g, h = _kernels.cox_breslow(Xs, eta, ts, es)
        return ll - 0.5 * l2 * (b @ b), g - l2 * b, h - l2 * np.eye(d)

    beta = np.zeros(d) if init is None else np.asarray(init, dtype=float).copy()
    f, g, H = objective(beta)
    it = 0
    while np.max(np.abs(g), initial=0.0) >= tol:
        if it >= max_iter:
            raise Diverged(f"no convergence after {max_iter} Newton iterations (max|grad|={np.max(np.abs(g)):.3g})")
        it += 1
        step = _newton_step(-H, g)
        t = 1.0
        while True:
            cand = beta + t * step
            f_new, g_new, H_new = objective(cand)
            if np.isfinite(f_new) and f_new >= f - 1e-12 * abs(f):
                break
            t *= 0.5
            if t < 1e-10:
                raise Diverged("step halving failed to improve the partial likelihood")
        beta, f, g, H = cand, f_new, g_new, H_new
        if not np.all(np.isfinite(beta)):
            raise Diverged("non-finite coefficients")

    info = -H
    if l2 == 0 and d:
        try:
            np.linalg.cholesky(info)
        except np.linalg.LinAlgError:
            raise Singular("information matrix is singular at the solution") from None
        # separated data: the gradient vanishes only because beta ran off towards infinity,
        # leaving almost no curvature relative to the column's spread
        rel = np.diag(info) / (event.sum() * np.var(X, axis=0))
        if np.any(rel < _MONOTONE_TOL):
            bad = [columns[j] for j in np.flatnonzero(rel < _MONOTONE_TOL)]
            raise Diverged(f"monotone likelihood (separated data) for {bad}; add an l2 penalty")
    bt, bh = breslow_baseline(X @ beta, time, event)
    return CoxModel(beta, list(columns), float(l2), it, float(np.max(np.abs(g), initial=0.0)), float(f), info,
                    bt, bh)


def breslow_baseline(eta, time, event):
    """Breslow cumulative baseline hazard at each distinct event time."""
    eta = np.asarray(eta, dtype=float)
    t = np.asarray(time, dtype=float)
    e = np.asarray(event).astype(bool)
    times, deaths = np.unique(t[e], return_counts=True)
    order = np.argsort(t)
    w = np.exp(eta[order])
    # sum of exp(eta) over subjects with time >= s
    tail = np.cumsum(w[::-1])[::-1]
    first = np.searchsorted(t[order], times, side="left")
    return times, np.cumsum(deaths / tail[first])


def _newton_step(info, grad):
    d = grad.size
    jitter = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(info)), initial=0.0)))
    for _ in range(12):
        try:
            L = np.linalg.cholesky(info + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            jitter = 1e-10 * scale if jitter == 0 else jitter * 100
            continue
        y = np.linalg.solve(L, grad)
        return np.linalg.solve(L.T, y)
    raise Singular("Hessian not positive definite even with jitter")


def hazard_ratio(groups, time, event):
    """Univariate Cox hazard ratio of ``groups`` (True = index group) with a Wald p-value."""
    g = np.asarray(groups).astype(bool)
    if g.all() or not g.any():
        raise SurvivalError("both groups must be nonempty")
    model = cox_fit(g.astype(float)[:, None], time, event, l2=0.0, columns=["group"])
    beta = float(model.coef[0])
    se = 1.0 / math.sqrt(float(model.information[0, 0]))
    z = beta / se
    p = float(2.0 * norm.sf(abs(z)))
    return math.exp(beta), p
