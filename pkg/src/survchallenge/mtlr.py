"""(Deep) multi-task logistic regression for discrete-time survival curves.

For K time bins the model assigns each patient a logit ``a_k`` per grid edge
(``k = 1..K-1``).  Outcome "event in bin i" has score ``S_i = sum_{k>=i} a_k``
(``S_K = 0``) and probability ``softmax(S)_i``.  An uncensored patient
contributes ``S_j - logZ``; a patient censored at ``T_c`` contributes the
log-sum-exp of ``S`` over every bin still possible after ``T_c`` minus ``logZ``.
The feature map feeding the logits is an ELU multi-layer perceptron; with no
hidden layers it is the identity and the model is plain linear MTLR.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .data import Encoder, HORIZON_MONTHS
from .metrics import N_CURVE_MONTHS, PredictionSet

log = logging.getLogger(__name__)

EMR_GROUPS = ("clinical", "treatment")


class MtlrError(ValueError):
    pass


class TooFewEvents(MtlrError):
    pass


class ShapeMismatch(MtlrError):
    pass


class NonFiniteLoss(MtlrError):
    pass


# --------------------------------------------------------------------------- grid and targets


@dataclass(frozen=True)
class TimeGrid:
    """Interior bin edges ``t_1 < ... < t_{K-1}``; bin K is ``(t_{K-1}, inf)``."""

    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 1:
            raise MtlrError("a time grid needs at least one edge (K >= 2)")
        if np.any(e <= 0) or np.any(np.diff(e) <= 0):
            raise MtlrError("edges must be positive and strictly increasing")
        object.__setattr__(self, "edges", e)

    @property
    def K(self):
        return self.edges.size + 1

    def bin_index(self, t):
        """1-based index of the smallest bin i with ``t_i >= t`` (K beyond the last edge)."""
        return np.searchsorted(self.edges, np.asarray(t, dtype=float), side="left") + 1


def make_time_grid(time, event):
    """K = ceil(sqrt(#events)) bins with edges at equally spaced quantiles of all observed times.

    The 0th and 100th percentiles are not edges.  Duplicate edges (heavily tied
    times) are collapsed with a warning, which lowers K.
    """
    t = np.asarray(time, dtype=float)
    e = np.asarray(event).astype(bool)
    n_events = int(e.sum())
    if n_events < 4:
        raise TooFewEvents(f"need at least 4 uncensored subjects, got {n_events}")
    K = math.ceil(math.sqrt(n_events))
    edges = np.quantile(t, np.arange(1, K) / K)
    uniq = np.unique(edges)
    if uniq.size < edges.size:
        warnings.warn(f"collapsed {edges.size - uniq.size} duplicate quantile edges; K={uniq.size + 1}",
                      stacklevel=2)
    return TimeGrid(uniq)


@dataclass(frozen=True)
class TargetEncoding:
    """Per-patient event flag and bin index (event bin, or first bin compatible with censoring)."""

    bin: np.ndarray
    event: np.ndarray
    K: int

    def __len__(self):
        return self.bin.size

    @property
    def y(self):
        """Indicator sequences ``y_k = 1{k >= bin}``, k = 1..K-1 (meaningful for uncensored rows)."""
        k = np.arange(1, self.K)
        return (k[None, :] >= self.bin[:, None]).astype(int)

    def mask(self):
        """Boolean (n, K) matrix of outcome bins consistent with each observation."""
        i = np.arange(1, self.K + 1)[None, :]
        b = self.bin[:, None]
        return np.where(self.event[:, None], i == b, i >= b)

    def take(self, index):
        return TargetEncoding(self.bin[index], self.event[index], self.K)


def encode_targets(time, event, grid):
    t = np.asarray(time, dtype=float)
    if np.any(t <= 0):
        raise MtlrError("times must be positive")
    return TargetEncoding(grid.bin_index(t).astype(np.int64), np.asarray(event).astype(bool), grid.K)


# --------------------------------------------------------------------------- model


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    lr: float = 0.006
    weight_decay: float = 6e-5
    dropout: float = 0.24
    epochs: int = 100
    hidden_sizes: tuple = (128,)
    C1: float = 10.0
    seed: int = 0
    groups: tuple = EMR_GROUPS
    use_volume: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "groups", tuple(self.groups))
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise MtlrError("batch_size, epochs and lr must be positive")
        if not 0 <= self.dropout < 1 or self.weight_decay < 0 or self.C1 < 0:
            raise MtlrError("dropout must lie in [0, 1); weight_decay and C1 must be >= 0")
        if any(h < 1 for h in self.hidden_sizes):
            raise MtlrError("hidden sizes must be positive")

    @classmethod
    def from_dict(cls, obj):
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise MtlrError(f"unknown training options: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["groups"] = list(self.groups)
        return d


# Default hyperparameters: the EMR+volume network and its smaller EMR-only sibling.
DEEP_MTLR_DEFAULTS = TrainConfig()
EMR_MTLR_DEFAULTS = TrainConfig(batch_size=1024, dropout=0.14, hidden_sizes=(32, 32, 32),
                                weight_decay=1.3e-6, use_volume=False)


@dataclass
class MtlrModel:
    weights: list
    biases: list
    theta: np.ndarray
    theta_bias: np.ndarray
    grid: TimeGrid
    C1: float
    dropout: float = 0.0
    encoder: Encoder | None = None
    config: TrainConfig | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        width = self.theta.shape[0]
        expected = self.weights[-1].shape[1] if self.weights else None
        if expected is not None and expected != width:
            raise ShapeMismatch("theta rows must match the last hidden width")
        if self.theta.shape[1] != self.grid.K - 1 or self.theta_bias.shape != (self.grid.K - 1,):
            raise ShapeMismatch("theta columns must match the number of grid edges")

    @property
    def K(self):
        return self.grid.K

    @property
    def n_inputs(self):
        return self.weights[0].shape[0] if self.weights else self.theta.shape[0]

    def params(self):
        """Parameter arrays in a fixed order: (W_1, b_1, ..., theta, theta_bias)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out + [self.theta, self.theta_bias]

    def with_params(self, params):
        params = list(params)
        nh = len(self.weights)
        return replace(
            self,
            weights=[params[2 * i] for i in range(nh)],
            biases=[params[2 * i + 1] for i in range(nh)],
            theta=params[-2],
            theta_bias=params[-1],
        )

    # features / prediction on raw datasets
    def features(self, dataset):
        if self.encoder is None:
            raise MtlrError("model has no encoder; pass encoded matrices instead")
        return self.encoder.transform(dataset).X

    def predict(self, dataset):
        X = self.features(dataset)
        curve = predict_curve(self, X)
        return PredictionSet(list(dataset.ids), predict_two_year(self, X), lifetime_risk(self, X), curve)

    def to_dict(self):
        return {
            "kind": "mtlr",
            "grid": self.grid.edges.tolist(),
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in zip(self.weights, self.biases)],
            "theta": self.theta.tolist(),
            "theta_bias": self.theta_bias.tolist(),
            "C1": self.C1,
            "dropout": self.dropout,
            "encoder": None if self.encoder is None else self.encoder.to_dict(),
            "config": None if self.config is None else self.config.to_dict(),
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, obj):
        def arr(v, ncols):
            return np.asarray(v, dtype=float).reshape(-1, ncols)

        grid = TimeGrid(np.asarray(obj["grid"], dtype=float))
        weights, biases = [], []
        for layer in obj["layers"]:
            b = np.asarray(layer["b"], dtype=float)
            weights.append(arr(layer["W"], b.size))
            biases.append(b)
        return cls(
            weights,
            biases,
            arr(obj["theta"], grid.K - 1),
            np.asarray(obj["theta_bias"], dtype=float),
            grid,
            float(obj["C1"]),
            float(obj.get("dropout", 0.0)),
            Encoder.from_dict(obj["encoder"]) if obj.get("encoder") else None,
            TrainConfig.from_dict(obj["config"]) if obj.get("config") else None,
            list(obj.get("history", [])),
        )


def init_model(n_inputs, grid, hidden_sizes=(), C1=10.0, dropout=0.0, rng=None, scale=None):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization for every layer.

    ``scale`` overrides the bound (``0`` gives the all-zero model).
    """
    rng = np.random.default_rng(rng)
    sizes = [n_inputs, *hidden_sizes]

    def layer(fan_in, fan_out):
        bound = 1.0 / math.sqrt(max(fan_in, 1)) if scale is None else scale
        return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)

    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W, b = layer(fan_in, fan_out)
        weights.append(W)
        biases.append(b)
    theta, tb = layer(sizes[-1], grid.K - 1)
    return MtlrModel(weights, biases, theta, tb, grid, float(C1), float(dropout))


# --------------------------------------------------------------------------- forward / backward


def _elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _check_X(model, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ShapeMismatch(f"expected {model.n_inputs} input columns, got {X.shape}")
    return X


def _forward(model, X, dropout_rng=None):
    """Return logits ``a`` (n, K-1) and the cache needed for backpropagation."""
    h = X
    cache = []
    for W, b in zip(model.weights, model.biases):
        z = h @ W + b
        act = _elu(z)
        keep = None
        if dropout_rng is not None and model.dropout > 0:
            keep = (dropout_rng.random(act.shape) >= model.dropout) / (1.0 - model.dropout)
            act = act * keep
        cache.append((h, z, keep))
        h = act
    return h @ model.theta + model.theta_bias, h, cache


def sequence_scores(a):
    """``S_i = sum_{k >= i} a_k`` for i = 1..K-1, plus ``S_K = 0``."""
    rev = np.cumsum(a[:, ::-1], axis=1)[:, ::-1]
    return np.hstack([rev, np.zeros((a.shape[0], 1))])


def bin_probabilities(model, X):
    """Per-bin event probabilities (n, K); rows sum to one."""
    a, _, _ = _forward(model, _check_X(model, X))
    S = sequence_scores(a)
    return np.exp(S - logsumexp(S, axis=1, keepdims=True))


def _check_targets(model, X, targets):
    if targets.K != model.K:
        raise ShapeMismatch(f"targets built for K={targets.K}, model has K={model.K}")
    if len(targets) != X.shape[0]:
        raise ShapeMismatch("targets and features differ in length")
    if len(targets) == 0:
        raise ShapeMismatch("empty batch")


def _loss_and_grad(model, X, targets, dropout_rng=None, need_grad=True):
    X = _check_X(model, X)
    _check_targets(model, X, targets)
    B = X.shape[0]
    a, phi, cache = _forward(model, X, dropout_rng)
    S = sequence_scores(a)
    logZ = logsumexp(S, axis=1)
    mask = targets.mask()
    S_obs = np.where(mask, S, -np.inf)
    log_obs = logsumexp(S_obs, axis=1)
    reg = 0.5 * model.C1 * float(np.sum(model.theta ** 2))
    loss = -float(np.mean(log_obs - logZ)) + reg
    if not need_grad:
        return loss, None

    P = np.exp(S - logZ[:, None])
    Q = np.exp(S_obs - log_obs[:, None])
    dS = (P - Q) / B
    # a_k enters every S_i with i <= k
    da = np.cumsum(dS, axis=1)[:, :-1]
    grads_theta = phi.T @ da + model.C1 * model.theta
    grads_tb = da.sum(axis=0)
    dh = da @ model.theta.T
    layer_grads = []
    for (h_in, z, keep), W in zip(reversed(cache), reversed(model.weights)):
        if keep is not None:
            dh = dh * keep
        dz = dh * _elu_grad(z)
        layer_grads.append((h_in.T @ dz, dz.sum(axis=0)))
        dh = dz @ W.T
    grads = []
    for gW, gb in reversed(layer_grads):
        grads += [gW, gb]
    return loss, grads + [grads_theta, grads_tb]


def mtlr_loss(model, X, targets):
    """Batch-mean negative MTLR log-likelihood plus ``C1/2 * sum ||theta_k||^2`` (no dropout)."""
    return _loss_and_grad(model, X, targets, need_grad=False)[0]


def mtlr_gradient(model, X, targets):
    """Exact gradient of :func:`mtlr_loss`, one array per entry of ``model.params()``."""
    return _loss_and_grad(model, X, targets)[1]


# --------------------------------------------------------------------------- training


class Adam:
    """Adam with coupled L2 weight decay (decay added to the gradient)."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            out.append(p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
        return out


def train_mtlr(train, config=DEEP_MTLR_DEFAULTS, grid=None):
    """Fit an MTLR model on a training :class:`SurvivalDataset`.

    Features are encoded with training statistics; the grid comes from the
    training event times unless given.  ``history`` records the full-data
    (dropout-free) loss before training and after every epoch.
    """
    encoder = Encoder.fit(train, groups=config.groups, volume=config.use_volume)
    X = encoder.transform(train).X
    if grid is None:
        grid = make_time_grid(train.time, train.event)
    targets = encode_targets(train.time, train.event, grid)
    rng = np.random.default_rng(config.seed)
    model = init_model(X.shape[1], grid, config.hidden_sizes, config.C1, config.dropout, rng)
    model = replace(model, encoder=encoder, config=config)
    return fit_mtlr(model, X, targets, config, rng)


def fit_mtlr(model, X, targets, config, rng=None):
    """Minibatch Adam on an initialized model; returns the trained copy."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    n = X.shape[0]
    params = model.params()
    opt = Adam(params, config.lr, weight_decay=config.weight_decay)
    history = [mtlr_loss(model, X, targets)]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = _loss_and_grad(model, X[idx], targets.take(idx), dropout_rng=rng)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NonFiniteLoss(f"non-finite loss/gradient at epoch {epoch}, batch starting {start}")
            params = opt.step(params, grads)
            model = model.with_params(params)
        history.append(mtlr_loss(model, X, targets))
        log.debug("epoch %d loss %.6f", epoch + 1, history[-1])
    return replace(model, history=[float(h) for h in history])


# --------------------------------------------------------------------------- readouts


def survival_at_edges(model, X):
    """S(t_k) at every grid edge, shape (n, K-1)."""
    P = bin_probabilities(model, X)
    return np.clip(1.0 - np.cumsum(P, axis=1)[:, :-1], 0.0, 1.0)


def survival_at(model, X, t):
    """Survival at times ``t``: linear between edges, S(0) = 1, flat after the last edge."""
    S_edges = survival_at_edges(model, X)
    knots = np.r_[0.0, model.grid.edges]
    values = np.hstack([np.ones((S_edges.shape[0], 1)), S_edges])
    t = np.atleast_1d(np.asarray(t, dtype=float))
    seg = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, knots.size - 1)
    nxt = np.minimum(seg + 1, knots.size - 1)
    width = knots[nxt] - knots[seg]
    frac = np.divide(t - knots[seg], width, out=np.zeros_like(t), where=width > 0)
    frac = np.clip(frac, 0.0, 1.0)
    out = values[:, seg] + frac * (values[:, nxt] - values[:, seg])
    return np.clip(out, 0.0, 1.0)


def predict_curve(model, X):
    """Survival probabilities at months 0..23, shape (n, 24)."""
    return survival_at(model, X, np.arange(N_CURVE_MONTHS, dtype=float))


def predict_two_year(model, X, horizon=HORIZON_MONTHS):
    return 1.0 - survival_at(model, X, [horizon])[:, 0]


def lifetime_risk(model, X):
    """Summed cumulative incidence over the grid edges (higher = worse)."""
    return np.sum(1.0 - survival_at_edges(model, X), axis=1)
