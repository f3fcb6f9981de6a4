"""Challenge scoring: ranking metrics, resampling statistics and FDR control."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from . import _kernels


class MetricError(ValueError):
    pass


class OneClassOnly(MetricError):
    pass


class NoPositives(MetricError):
    pass


class NoComparablePairs(MetricError):
    pass


class ConstantInput(MetricError):
    pass


class PredictionError(ValueError):
    pass


N_CURVE_MONTHS = 24


@dataclass(frozen=True)
class PredictionSet:
    """Per-patient predictions: 2-year event probability, optional risk and survival curve."""

    ids: list
    prob_2yr: np.ndarray
    risk: np.ndarray | None = None
    curve: np.ndarray | None = None

    def __post_init__(self):
        ids = list(self.ids)
        p = np.asarray(self.prob_2yr, dtype=float)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "prob_2yr", p)
        if p.shape != (len(ids),):
            raise PredictionError("prob_2yr must have one value per id")
        if len(set(ids)) != len(ids):
            raise PredictionError("duplicate ids")
        if not np.all((p >= 0) & (p <= 1)):
            raise PredictionError("prob_2yr outside [0, 1]")
        if self.risk is not None:
            r = np.asarray(self.risk, dtype=float)
            if r.shape != p.shape or not np.all(np.isfinite(r)):
                raise PredictionError("risk must be finite with one value per id")
            object.__setattr__(self, "risk", r)
        if self.curve is not None:
            c = np.asarray(self.curve, dtype=float)
            if c.shape != (len(ids), N_CURVE_MONTHS):
                raise PredictionError(f"curve must be n x {N_CURVE_MONTHS}")
            if not np.all((c >= 0) & (c <= 1)):
                raise PredictionError("curve values outside [0, 1]")
            if np.any(np.diff(c, axis=1) > 1e-12):
                raise PredictionError("survival curves must be non-increasing")
            object.__setattr__(self, "curve", c)

    def __len__(self):
        return len(self.ids)

    @property
    def risk_or_proxy(self):
        """Risk score, falling back to the 2-year event probability."""
        return self.risk if self.risk is not None else self.prob_2yr

    def reindex(self, ids):
        pos = {i: k for k, i in enumerate(self.ids)}
        try:
            order = np.array([pos[i] for i in ids])
        except KeyError as exc:
            raise PredictionError(f"id {exc.args[0]!r} not in predictions") from None
        if len(ids) != len(self.ids):
            raise PredictionError("id sets differ")
        return PredictionSet(
            list(ids),
            self.prob_2yr[order],
            None if self.risk is None else self.risk[order],
            None if self.curve is None else self.curve[order],
        )


@dataclass(frozen=True)
class Truth:
    """Observed outcomes aligned with a prediction set."""

    ids: list
    time: np.ndarray
    event: np.ndarray
    label: np.ndarray

    @classmethod
    def from_dataset(cls, dataset, horizon=24.0):
        return cls(list(dataset.ids), np.asarray(dataset.time), np.asarray(dataset.event),
                   dataset.label_2yr(horizon))

    def take(self, index):
        return Truth([self.ids[i] for i in index], self.time[index], self.event[index], self.label[index])


# --------------------------------------------------------------------------- point metrics


def _binary(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    return s, y


def auroc(scores, labels):
    """Mann-Whitney AUROC with half credit for tied scores."""
    s, y = _binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUROC needs both classes")
    ranks = rankdata(s)
    # 2*U is an integer: keeps the result exactly equal to direct pair counting
    u2 = 2.0 * ranks[y].sum() - n_pos * (n_pos + 1)
    return float(u2 / 2.0 / (n_pos * n_neg))


def average_precision(scores, labels):
    """Non-interpolated AP, summing (R_n - R_{n-1}) * P_n over distinct score thresholds."""
    s, y = _binary(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("AP needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    recall = tp / n_pos
    precision = tp / (tp + fp)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def concordance_counts(risk, time, event):
    r = np.asarray(risk, dtype=float)
    t = np.asarray(time, dtype=float)
    e = np.asarray(event).astype(bool)
    if not (r.shape == t.shape == e.shape):
        raise MetricError("risk, time and event differ in length")
    return _kernels.concordance_counts(r, t, e)


def concordance_index(risk, time, event):
    """Harrell's C over pairs (i uncensored, t_j > t_i); risk ties earn half credit."""
    concordant, tied, comparable = concordance_counts(risk, time, event)
    if comparable == 0:
        raise NoComparablePairs("no comparable pairs")
    return (concordant + 0.5 * tied) / comparable


def spearman(a, b):
    """Pearson correlation of mid-ranks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 3:
        raise MetricError("spearman needs two equal-length vectors of length >= 3")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    denom = np.sqrt(np.dot(ra, ra) * np.dot(rb, rb))
    if denom == 0:
        raise ConstantInput("spearman undefined for constant input")
    return float(np.clip(np.dot(ra, rb) / denom, -1.0, 1.0))


# --------------------------------------------------------------------------- named metrics on (scores, truth)


def _auroc_t(scores, truth):
    return auroc(scores, truth.label)


def _ap_t(scores, truth):
    return average_precision(scores, truth.label)


def _cindex_t(scores, truth):
    return concordance_index(scores, truth.time, truth.event)


METRICS: dict[str, Callable] = {"auroc": _auroc_t, "ap": _ap_t, "c_index": _cindex_t}
_STRATUM = {"auroc": "label", "ap": "label", "c_index": "event"}


def _resolve(metric):
    if callable(metric):
        return metric, "label"
    try:
        return METRICS[metric], _STRATUM[metric]
    except KeyError:
        raise MetricError(f"unknown metric {metric!r}") from None


def _streams(seed, n):
    """Independent generator for replicate r, derived from (seed, r) only."""
    return (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n))


def stratified_indices(strata, rng):
    """Resample with replacement inside each stratum, preserving stratum counts."""
    parts = []
    for value in np.unique(strata):
        members = np.flatnonzero(strata == value)
        parts.append(members[rng.integers(0, members.size, members.size)])
    return np.concatenate(parts)


def bootstrap_replicates(metric, scores, truth, n=10_000, seed=0, strata=None):
    fn, stratum_field = _resolve(metric)
    scores = np.asarray(scores, dtype=float)
    if strata is None:
        strata = np.asarray(getattr(truth, stratum_field))
    reps = np.empty(n)
    for r, rng in enumerate(_streams(seed, n)):
        idx = stratified_indices(strata, rng)
        reps[r] = fn(scores[idx], truth.take(idx))
    return reps


def stratified_bootstrap_ci(metric, scores, truth, n=10_000, level=0.95, seed=0):
    """Percentile bootstrap interval, resampling within outcome strata.

    Strata are the 2-year label for ``auroc``/``ap`` and the event indicator for
    ``c_index``.  Replicate ``r`` draws from a stream seeded by ``(seed, r)``.
    """
    fn, _ = _resolve(metric)
    fn(np.asarray(scores, dtype=float), truth)  # surface metric errors on the full sample
    reps = bootstrap_replicates(metric, scores, truth, n=n, seed=seed)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(reps, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def permutation_test(metric, scores, truth, n=10_000, seed=0):
    """One-sided permutation p-value, ``(1 + #{permuted >= observed}) / (n + 1)``.

    Outcomes are permuted against fixed predictions: labels for binary metrics,
    (time, event) jointly for the C-index.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    fn, _ = _resolve(metric)
    scores = np.asarray(scores, dtype=float)
    observed = fn(scores, truth)
    m = len(truth.ids)
    hits = 0
    for rng in _streams(seed, n):
        perm = rng.permutation(m)
        if fn(scores, truth.take(perm)) >= observed:
            hits += 1
    return (1 + hits) / (n + 1)


def fdr_select(p_values, q=0.05):
    """Benjamini-Hochberg step-up; returns a boolean rejection mask in input order."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    reject = np.zeros(m, dtype=bool)
    if m == 0:
        return reject
    order = np.argsort(p, kind="stable")
    below = p[order] <= q * np.arange(1, m + 1) / m
    if below.any():
        k = np.flatnonzero(below).max()
        reject[order[: k + 1]] = True
    return reject


def calibration_curve(prob, labels, n_bins=10):
    """Equal-width reliability table: ``(mean_pred, frac_pos, count)`` per non-empty bin."""
    p = np.asarray(prob, dtype=float)
    y = np.asarray(labels, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise MetricError("probabilities must lie in [0, 1]")
    bins = np.minimum((p * n_bins).astype(int), n_bins - 1)
    out = []
    for b in range(n_bins):
        mask = bins == b
        count = int(mask.sum())
        if count:
            out.append((float(p[mask].mean()), float(y[mask].mean()), count))
    return out


# --------------------------------------------------------------------------- report


@dataclass
class EvalReport:
    auroc: tuple
    ap: tuple
    c_index: tuple
    n_boot: int
    seed: int
    p_perm: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        out = {}
        for name in ("auroc", "ap", "c_index"):
            point, lo, hi = getattr(self, name)
            out[name] = {"point": point, "lo": lo, "hi": hi}
        out["p_perm"] = dict(self.p_perm)
        out["n_boot"] = self.n_boot
        out["seed"] = self.seed
        out.update(self.metadata)
        return out


def _with_point(point, lo, hi):
    # a percentile interval can miss a skewed point estimate; widen to cover it
    return point, min(lo, point), max(hi, point)


def evaluate(preds, truth, n_boot=10_000, n_perm=10_000, seed=0, level=0.95):
    """Point estimates, bootstrap intervals and permutation p-values for all three metrics."""
    preds = preds.reindex(truth.ids)
    scores = {"auroc": preds.prob_2yr, "ap": preds.prob_2yr, "c_index": preds.risk_or_proxy}
    results = {}
    p_perm = {}
    for k, name in enumerate(("auroc", "ap", "c_index")):
        fn, _ = _resolve(name)
        point = fn(scores[name], truth)
        lo, hi = stratified_bootstrap_ci(name, scores[name], truth, n=n_boot, level=level, seed=[seed, k])
        results[name] = _with_point(point, lo, hi)
        if n_perm:
            p_perm[name] = permutation_test(name, scores[name], truth, n=n_perm, seed=[seed, 10 + k])
    return EvalReport(results["auroc"], results["ap"], results["c_index"], n_boot, seed, p_perm,
                      {"level": level, "risk_source": "risk" if preds.risk is not None else "prob_2yr"})


def paired_bootstrap_pvalue(scores_a, scores_b, truth, metric="auroc", n=10_000, seed=0):
    """One-sided p-value that ``scores_a`` is *not* better than ``scores_b``.

    Both score vectors are evaluated on the same stratified resamples;
    ``p = (1 + #{metric(a) - metric(b) <= 0}) / (n + 1)``.
    """
    fn, stratum_field = _resolve(metric)
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    strata = np.asarray(getattr(truth, stratum_field))
    hits = 0
    for rng in _streams(seed, n):
        idx = stratified_indices(strata, rng)
        t = truth.take(idx)
        if fn(a[idx], t) - fn(b[idx], t) <= 0:
            hits += 1
    return (1 + hits) / (n + 1)
