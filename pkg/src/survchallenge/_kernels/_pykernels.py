"""Pure numpy versions of the compiled kernels, used when the extension is unavailable."""

import numpy as np

_BLOCK = 512


def concordance_counts(risk, time, event):
    """Count concordant, risk-tied and comparable pairs by blocked pairwise comparison."""
    risk = np.asarray(risk, dtype=np.float64)
    time = np.asarray(time, dtype=np.float64)
    idx = np.flatnonzero(np.asarray(event, dtype=bool))
    concordant = tied = comparable = 0
    for start in range(0, idx.size, _BLOCK):
        rows = idx[start:start + _BLOCK]
        later = time[None, :] > time[rows, None]
        r_i = risk[rows, None]
        concordant += int(np.count_nonzero(later & (r_i > risk[None, :])))
        tied += int(np.count_nonzero(later & (r_i == risk[None, :])))
        comparable += int(np.count_nonzero(later))
    return concordant, tied, comparable


def cox_breslow(X, eta, time, event):
    """Breslow log partial likelihood, gradient and Hessian (rows sorted by descending time)."""
    X = np.asarray(X, dtype=np.float64)
    event = np.asarray(event, dtype=bool)
    n, d = X.shape
    if n == 0:
        return 0.0, np.zeros(d), np.zeros((d, d))
    w = np.exp(eta)
    s0 = np.cumsum(w)
    s1 = np.cumsum(w[:, None] * X, axis=0)
    s2 = np.cumsum(w[:, None, None] * X[:, :, None] * X[:, None, :], axis=0)

    # risk set for a tied group is everything up to the last member of that group
    last = np.empty(n, dtype=np.intp)
    boundary = np.r_[time[1:] != time[:-1], True]
    ends = np.flatnonzero(boundary)
    counts = np.diff(np.r_[-1, ends])
    last[:] = np.repeat(ends, counts)

    e = np.flatnonzero(event)
    at = last[e]
    S0 = s0[at]
    M1 = s1[at] / S0[:, None]
    loglik = float(np.sum(eta[e]) - np.sum(np.log(S0)))
    grad = X[e].sum(axis=0) - M1.sum(axis=0)
    hess = -(s2[at] / S0[:, None, None]).sum(axis=0) + M1.T @ M1
    return loglik, grad, hess
