# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for concordance counting and the Breslow partial likelihood."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def concordance_counts(const double[::1] risk, const double[::1] time, const unsigned char[::1] event):
    """Count concordant, risk-tied and comparable pairs in O(n log n).

    A pair (i, j) is comparable when i has an event and ``time[j] > time[i]``.
    Subjects are visited from the latest time downwards; a Fenwick tree over
    dense risk ranks holds every subject with a strictly later time.
    """
    cdef Py_ssize_t n = risk.shape[0]
    if n == 0:
        return 0, 0, 0
    uniq, inv = np.unique(np.asarray(risk), return_inverse=True)
    cdef cnp.int64_t[::1] rank = (inv.astype(np.int64) + 1)
    cdef Py_ssize_t m = uniq.shape[0]
    cdef cnp.int64_t[::1] order = np.argsort(-np.asarray(time), kind="stable").astype(np.int64)
    cdef cnp.int64_t[::1] tree = np.zeros(m + 1, dtype=np.int64)

    cdef cnp.int64_t concordant = 0, tied = 0, comparable = 0, inserted = 0
    cdef cnp.int64_t below, upto
    cdef Py_ssize_t start = 0, stop, a, i, pos
    cdef double t

    while start < n:
        t = time[order[start]]
        stop = start
        while stop < n and time[order[stop]] == t:
            stop += 1
        for a in range(start, stop):
            i = order[a]
            if not event[i]:
                continue
            below = 0
            pos = rank[i] - 1
            while pos > 0:
                below += tree[pos]
                pos -= pos & -pos
            upto = 0
            pos = rank[i]
            while pos > 0:
                upto += tree[pos]
                pos -= pos & -pos
            concordant += below
            tied += upto - below
            comparable += inserted
        for a in range(start, stop):
            pos = rank[order[a]]
            while pos <= m:
                tree[pos] += 1
                pos += pos & -pos
            inserted += 1
        start = stop
    return int(concordant), int(tied), int(comparable)


def cox_breslow(const double[:, ::1] X, const double[::1] eta, const double[::1] time,
                const unsigned char[::1] event):
    """Breslow log partial likelihood, gradient and Hessian.

    Rows must already be sorted by descending time.  ``eta`` should be shifted
    so its maximum is 0; the likelihood is invariant to that shift.
    """
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef double[::1] s1 = np.zeros(d)
    cdef double[:, ::1] s2 = np.zeros((d, d))
    grad_arr = np.zeros(d)
    hess_arr = np.zeros((d, d))
    cdef double[::1] grad = grad_arr
    cdef double[:, ::1] hess = hess_arr
    cdef double s0 = 0.0, loglik = 0.0, w, t, inv_s0
    cdef Py_ssize_t start = 0, stop, a, p, q, n_events

    while start < n:
        t = time[start]
        stop = start
        n_events = 0
        while stop < n and time[stop] == t:
            w = exp(eta[stop])
            s0 += w
            for p in range(d):
                s1[p] += w * X[stop, p]
                for q in range(p + 1):
                    s2[p, q] += w * X[stop, p] * X[stop, q]
            if event[stop]:
                n_events += 1
                loglik += eta[stop]
                for p in range(d):
                    grad[p] += X[stop, p]
            stop += 1
        if n_events > 0:
            inv_s0 = 1.0 / s0
            loglik -= n_events * log(s0)
            for p in range(d):
                grad[p] -= n_events * s1[p] * inv_s0
                for q in range(p + 1):
                    hess[p, q] -= n_events * (s2[p, q] * inv_s0 - s1[p] * s1[q] * inv_s0 * inv_s0)
        start = stop

    for p in range(d):
        for q in range(p):
            hess[q, p] = hess[p, q]
    return loglik, grad_arr, hess_arr
