"""Challenger models: penalized logistic regression, MRMR selection, grid-search CV,
the volume-gated fuzzy mixture and the three benchmark baselines."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import Encoder, HORIZON_MONTHS
from .metrics import N_CURVE_MONTHS, OneClassOnly, PredictionSet, auroc
from .survival import CoxModel, Diverged, cox_fit

EMR = ("clinical", "treatment")
FUZZY_INPUTS = {
    "emr": EMR,
    "emr+radiomic": EMR + ("radiomic",),
    "radiomic": ("radiomic",),
}


class DegenerateGroup(ValueError):
    pass


class BadK(ValueError):
    pass


# --------------------------------------------------------------------------- logistic regression


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float
    l2: float
    class_weighted: bool
    grad_norm: float
    columns: list = field(default_factory=list)

    @property
    def converged(self):
        return self.grad_norm < 1e-7

    def decision(self, X):
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def predict_proba(self, X):
        return expit(self.decision(X))

    def to_dict(self):
        return {"weights": self.weights.tolist(), "bias": self.bias, "l2": self.l2,
                "class_weighted": self.class_weighted, "grad_norm": self.grad_norm,
                "columns": list(self.columns)}

    @classmethod
    def from_dict(cls, obj):
        return cls(np.asarray(obj["weights"], dtype=float), float(obj["bias"]), float(obj["l2"]),
                   bool(obj["class_weighted"]), float(obj["grad_norm"]), list(obj.get("columns", [])))


def _logistic_objective(params, X, y, w, l2):
    z = X @ params[:-1] + params[-1]
    # weighted mean cross-entropy, log(1 + e^z) - y z computed stably
    ce = np.logaddexp(0.0, z) - y * z
    f = float(w @ ce) + 0.5 * l2 * float(params[:-1] @ params[:-1])
    p = expit(z)
    r = w * (p - y)
    g = np.r_[X.T @ r, r.sum()]
    g[:-1] += l2 * params[:-1]
    s = w * p * (1.0 - p)
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    H = Xa.T @ (s[:, None] * Xa)
    H[:-1, :-1] += l2 * np.eye(X.shape[1])
    return f, g, H


def logistic_fit(X, labels, l2=1.0, class_weighted=False, columns=None, tol=1e-7, max_iter=100, init=None):
    """Penalized logistic regression by damped Newton iterations.

    Minimizes ``sum_i w_i * CE_i + l2/2 * ||w||^2`` with sample weights
    normalized to sum to one.  With ``class_weighted`` each class receives
    weight inversely proportional to its frequency.  The bias is unpenalized.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels).astype(float)
    n, d = X.shape
    n_pos = y.sum()
    if n_pos == 0 or n_pos == n:
        raise OneClassOnly("logistic regression needs both classes")
    if class_weighted:
        w = np.where(y == 1, n / (2 * n_pos), n / (2 * (n - n_pos)))
    else:
        w = np.ones(n)
    w = w / w.sum()

    params = np.zeros(d + 1) if init is None else np.asarray(init, dtype=float).copy()
    f, g, H = _logistic_objective(params, X, y, w, l2)
    it = 0
    while np.max(np.abs(g)) >= tol:
        if it >= max_iter:
            raise Diverged(f"logistic regression did not converge (max|grad|={np.max(np.abs(g)):.3g})")
        it += 1
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(d + 1), g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            cand = params - t * step
            f_new, g_new, H_new = _logistic_objective(cand, X, y, w, l2)
            if f_new <= f + 1e-14 * abs(f):
                break
            t *= 0.5
            if t < 1e-10:
                raise Diverged("step halving failed")
        params, f, g, H = cand, f_new, g_new, H_new
    cols = list(columns) if columns is not None else [f"x{j}" for j in range(d)]
    return LogisticModel(params[:-1], float(params[-1]), float(l2), bool(class_weighted),
                         float(np.max(np.abs(g))), cols)


# --------------------------------------------------------------------------- MRMR


def discretize(x):
    """Quartile bins for continuous columns; columns with <= 4 distinct values keep them."""
    x = np.asarray(x, dtype=float)
    uniq = np.unique(x)
    if uniq.size <= 4:
        return np.searchsorted(uniq, x)
    edges = np.unique(np.quantile(x, [0.25, 0.5, 0.75]))
    return np.searchsorted(edges, x, side="right")


def mutual_information(a, b):
    """Plug-in mutual information (nats) of two discrete vectors."""
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


def mrmr_select(X, labels, k):
    """Greedy MID selection: maximize MI(feature; label) - mean MI(feature; selected)."""
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    if not 1 <= k <= d:
        raise BadK(f"k must lie in [1, {d}], got {k}")
    D = [discretize(X[:, j]) for j in range(d)]
    y = np.asarray(labels)
    relevance = np.array([mutual_information(col, y) for col in D])
    selected = []
    redundancy = np.zeros(d)
    remaining = list(range(d))
    while len(selected) < k:
        if selected:
            score = relevance[remaining] - redundancy[remaining] / len(selected)
        else:
            score = relevance[remaining]
        # argmax keeps the first maximum: column order breaks ties
        best = remaining[int(np.argmax(score))]
        selected.append(best)
        remaining.remove(best)
        for j in remaining:
            redundancy[j] += mutual_information(D[j], D[best])
    return selected


# --------------------------------------------------------------------------- grid search


def stratified_folds(labels, folds, seed):
    """Fold id per sample; each class is shuffled and dealt round-robin."""
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold = np.empty(y.size, dtype=int)
    offset = 0
    for value in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == value))
        fold[members] = (np.arange(members.size) + offset) % folds
        offset += members.size
    return fold


def _expand_grid(grid):
    if isinstance(grid, dict):
        keys = list(grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    return [dict(g) for g in grid]


def grid_search_cv(family, grid, X, labels, folds=5, seed=0, return_scores=False):
    """Pick the grid point with the best mean validation AUROC over stratified folds.

    ``family(X_train, y_train, **params)`` must return a scoring callable.
    Ties go to the larger ``l2`` (stronger regularization), then grid order.
    """
    points = _expand_grid(grid)
    if not points:
        raise ValueError("empty parameter grid")
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels)
    if len(points) == 1:
        return (points[0], [math.nan]) if return_scores else points[0]
    fold = stratified_folds(y, folds, seed)
    scores = []
    for params in points:
        vals = []
        for f in range(folds):
            tr, va = fold != f, fold == f
            predict = family(X[tr], y[tr], **params)
            vals.append(auroc(predict(X[va]), y[va]))
        scores.append(float(np.mean(vals)))
    best = max(range(len(points)), key=lambda i: (scores[i], points[i].get("l2", 0.0), -i))
    return (points[best], scores) if return_scores else points[best]


def logistic_family(X, y, l2=1.0, k=None, class_weighted=False):
    """Logistic regression, optionally on the top-k MRMR columns."""
    cols = mrmr_select(X, y, k) if k is not None else list(range(X.shape[1]))
    model = logistic_fit(X[:, cols], y, l2=l2, class_weighted=class_weighted)
    return lambda Z: model.predict_proba(np.asarray(Z)[:, cols])


# --------------------------------------------------------------------------- fuzzy mixture


def binary_training_rows(dataset, horizon=HORIZON_MONTHS):
    """Rows whose 2-year status is observed, with their labels."""
    keep = np.flatnonzero(dataset.known_2yr(horizon))
    return keep, dataset.label_2yr(horizon)[keep]


@dataclass
class FuzzyModel:
    """Soft mixture of a low-volume and a high-volume expert, weighted by a gate."""

    task: str
    gate: LogisticModel
    expert_low: object
    expert_high: object
    median_volume: float
    gate_encoder: Encoder
    expert_encoder: Encoder
    inputs: str = "emr"

    def gate_probability(self, dataset):
        return self.gate.predict_proba(self.gate_encoder.transform(dataset).X)

    def expert_outputs(self, dataset):
        X = self.expert_encoder.transform(dataset).X
        if self.task == "binary":
            return self.expert_low.predict_proba(X), self.expert_high.predict_proba(X)
        return self.expert_low.linear_predictor(X), self.expert_high.linear_predictor(X)

    def predict(self, dataset):
        g = self.gate_probability(dataset)
        low, high = self.expert_outputs(dataset)
        return fuzzy_combine(g, low, high)

    def to_dict(self):
        return {
            "task": self.task,
            "inputs": self.inputs,
            "median_volume": self.median_volume,
            "gate": self.gate.to_dict(),
            "expert_low": self.expert_low.to_dict(),
            "expert_high": self.expert_high.to_dict(),
            "gate_encoder": self.gate_encoder.to_dict(),
            "expert_encoder": self.expert_encoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj):
        expert = LogisticModel if obj["task"] == "binary" else CoxModel
        return cls(obj["task"], LogisticModel.from_dict(obj["gate"]), expert.from_dict(obj["expert_low"]),
                   expert.from_dict(obj["expert_high"]), float(obj["median_volume"]),
                   Encoder.from_dict(obj["gate_encoder"]), Encoder.from_dict(obj["expert_encoder"]),
                   obj.get("inputs", "emr"))


def fuzzy_combine(g, low, high):
    g = np.asarray(g, dtype=float)
    return g * np.asarray(high, dtype=float) + (1.0 - g) * np.asarray(low, dtype=float)


def fuzzy_predict(model, dataset):
    """``g * expert_high + (1 - g) * expert_low`` with ``g`` the gate's large-volume probability."""
    return model.predict(dataset)


def fuzzy_fit(dataset, task="binary", inputs="emr", gate_inputs="volume", l2=1.0, gate_l2=1e-3,
              cox_l2=1.0, horizon=HORIZON_MONTHS):
    """Fit the volume-gated fuzzy model.

    The gate predicts ``volume > training median`` (ties go low) from volume
    alone (``gate_inputs="volume"``) or from every input plus volume
    (``"all"``).  Experts are inverse-frequency-weighted logistic models for
    ``task="binary"`` or Cox models for ``task="risk"``.
    """
    if task not in ("binary", "risk"):
        raise ValueError(f"unknown task {task!r}")
    if not dataset.has_volume:
        raise DegenerateGroup("fuzzy model needs tumour volume for every record")
    groups = FUZZY_INPUTS[inputs]
    vol = np.asarray(dataset.volume)
    median = float(np.median(vol))
    high = vol > median
    if high.all() or not high.any():
        raise DegenerateGroup("volume does not split into two groups at its median")

    if gate_inputs == "volume":
        gate_enc = Encoder.fit(dataset, groups=(), volume=True)
    elif gate_inputs == "all":
        gate_enc = Encoder.fit(dataset, groups=groups, volume=True)
    else:
        raise ValueError(f"unknown gate_inputs {gate_inputs!r}")
    gate = logistic_fit(gate_enc.transform(dataset).X, high, l2=gate_l2, columns=gate_enc.columns)

    expert_enc = Encoder.fit(dataset, groups=groups, volume=False)
    X = expert_enc.transform(dataset).X
    experts = []
    for member in (~high, high):
        if task == "binary":
            keep, y = binary_training_rows(dataset, horizon)
            rows = keep[member[keep]]
            y = y[member[keep]]
            if y.size == 0 or y.min() == y.max():
                raise DegenerateGroup("a volume subgroup has only one outcome class")
            experts.append(logistic_fit(X[rows], y, l2=l2, class_weighted=True, columns=expert_enc.columns))
        else:
            rows = np.flatnonzero(member)
            if not dataset.event[rows].any():
                raise DegenerateGroup("a volume subgroup has no events")
            experts.append(cox_fit(X[rows], dataset.time[rows], dataset.event[rows], l2=cox_l2,
                                   columns=expert_enc.columns))
    return FuzzyModel(task, gate, experts[0], experts[1], median, gate_enc, expert_enc, inputs)


@dataclass
class FuzzyPredictor:
    """Binary and risk fuzzy models trained together, as one challenge submission."""

    binary: FuzzyModel
    risk: FuzzyModel

    def predict(self, dataset):
        return PredictionSet(list(dataset.ids), fuzzy_predict(self.binary, dataset), fuzzy_predict(self.risk, dataset))

    def to_dict(self):
        return {"kind": "fuzzy", "binary": self.binary.to_dict(), "risk": self.risk.to_dict()}

    @classmethod
    def from_dict(cls, obj):
        return cls(FuzzyModel.from_dict(obj["binary"]), FuzzyModel.from_dict(obj["risk"]))


def train_fuzzy(dataset, inputs="emr", gate_inputs="volume", l2=1.0, cox_l2=1.0):
    return FuzzyPredictor(
        fuzzy_fit(dataset, "binary", inputs, gate_inputs, l2=l2),
        fuzzy_fit(dataset, "risk", inputs, gate_inputs, cox_l2=cox_l2),
    )


# --------------------------------------------------------------------------- linear submissions and baselines


@dataclass
class LinearPredictor:
    """Logistic model for the 2-year endpoint plus a Cox model for risk, on shared columns."""

    name: str
    encoder: Encoder
    column_index: list
    logistic: LogisticModel
    cox: CoxModel | None

    def _X(self, dataset):
        return self.encoder.transform(dataset).X[:, self.column_index]

    def predict(self, dataset):
        X = self._X(dataset)
        risk = None if self.cox is None else self.cox.linear_predictor(X)
        return PredictionSet(list(dataset.ids), self.logistic.predict_proba(X), risk)

    def to_dict(self):
        return {"kind": "linear", "name": self.name, "encoder": self.encoder.to_dict(),
                "column_index": list(self.column_index), "logistic": self.logistic.to_dict(),
                "cox": None if self.cox is None else self.cox.to_dict()}

    @classmethod
    def from_dict(cls, obj):
        return cls(obj["name"], Encoder.from_dict(obj["encoder"]), list(obj["column_index"]),
                   LogisticModel.from_dict(obj["logistic"]),
                   CoxModel.from_dict(obj["cox"]) if obj.get("cox") else None)


DEFAULT_L2_GRID = (0.001, 0.01, 0.1, 1.0)


def train_linear(dataset, name, groups, volume, l2_grid=DEFAULT_L2_GRID, k_grid=None, cox=True,
                 cox_l2=1.0, class_weighted=False, seed=0, folds=5, horizon=HORIZON_MONTHS):
    """Tune (k, l2) by stratified CV AUROC, then fit logistic + Cox on the chosen columns."""
    enc = Encoder.fit(dataset, groups=groups, volume=volume)
    X = enc.transform(dataset).X
    keep, y = binary_training_rows(dataset, horizon)
    grid = {"l2": list(l2_grid)}
    if k_grid:
        grid["k"] = [k for k in k_grid if k <= X.shape[1]]
    best = grid_search_cv(
        lambda A, b, **p: logistic_family(A, b, class_weighted=class_weighted, **p),
        grid, X[keep], y, folds=folds, seed=seed,
    )
    cols = mrmr_select(X[keep], y, best["k"]) if "k" in best else list(range(X.shape[1]))
    columns = [enc.columns[j] for j in cols]
    logit = logistic_fit(X[keep][:, cols], y, l2=best["l2"], class_weighted=class_weighted, columns=columns)
    cox_model = None
    if cox:
        cox_model = cox_fit(X[:, cols], dataset.time, dataset.event, l2=cox_l2, columns=columns)
    return LinearPredictor(name, enc, cols, logit, cox_model)


def baseline_suite(dataset, seed=0, l2_grid=DEFAULT_L2_GRID, k_grid=(1, 2, 3, 5, 8)):
    """The three benchmarks: clinical factors, volume alone, MRMR-selected radiomic-style columns."""
    return {
        "baseline-clinical": train_linear(dataset, "baseline-clinical", ("clinical",), False, l2_grid, seed=seed),
        "baseline-volume": train_linear(dataset, "baseline-volume", (), True, l2_grid, seed=seed),
        "baseline-radiomics": train_linear(dataset, "baseline-radiomics", ("radiomic",), True, l2_grid,
                                           k_grid=k_grid, seed=seed),
    }


@dataclass
class CoxPredictor:
    """Proportional-hazards submission: Breslow survival curve, 2-year probability and linear risk."""

    name: str
    encoder: Encoder
    cox: CoxModel

    def predict(self, dataset):
        X = self.encoder.transform(dataset).X
        months = np.arange(N_CURVE_MONTHS, dtype=float)
        curve = self.cox.survival_function(X, months)
        prob = 1.0 - self.cox.survival_function(X, [HORIZON_MONTHS])[:, 0]
        return PredictionSet(list(dataset.ids), np.clip(prob, 0.0, 1.0), self.cox.linear_predictor(X), curve)

    def to_dict(self):
        return {"kind": "cox", "name": self.name, "encoder": self.encoder.to_dict(), "cox": self.cox.to_dict()}

    @classmethod
    def from_dict(cls, obj):
        return cls(obj["name"], Encoder.from_dict(obj["encoder"]), CoxModel.from_dict(obj["cox"]))


def train_cox(dataset, groups=EMR, volume=True, l2=1.0, name="cox"):
    enc = Encoder.fit(dataset, groups=groups, volume=volume)
    model = cox_fit(enc.transform(dataset).X, dataset.time, dataset.event, l2=l2, columns=enc.columns)
    return CoxPredictor(name, enc, model)
