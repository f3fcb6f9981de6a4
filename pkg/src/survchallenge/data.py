"""Censored tabular cohorts: schema, CSV I/O, encoding, splitting and synthesis.

Times are in months throughout.  Categorical features always carry a reserved
``"missing"`` level; an empty categorical cell is stored as that level.  An
empty continuous cell is a load error, never imputed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

MISSING = "missing"
HORIZON_MONTHS = 24.0
_KINDS = ("continuous", "categorical")
_GROUPS = ("clinical", "treatment", "radiomic")
_RESERVED = ("id", "time", "event", "volume")


class DataError(ValueError):
    """Base class for dataset errors."""


class MissingColumn(DataError):
    def __init__(self, column):
        super().__init__(f"missing column {column!r}")
        self.column = column


class BadValue(DataError):
    def __init__(self, row, column, value, reason=""):
        msg = f"bad value {value!r} in row {row}, column {column!r}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.row = row
        self.column = column


class EmptyDataset(DataError):
    pass


class ZeroVariance(DataError):
    def __init__(self, column):
        super().__init__(f"training column {column!r} has zero variance")
        self.column = column


class DegenerateSplit(DataError):
    pass


class InvalidConfig(DataError):
    pass


# --------------------------------------------------------------------------- schema


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    levels: tuple[str, ...] = ()
    group: str = "clinical"
    norm: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidConfig(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.group not in _GROUPS:
            raise InvalidConfig(f"feature {self.name!r}: unknown group {self.group!r}")
        if self.kind == "categorical":
            levels = tuple(str(v) for v in self.levels)
            if MISSING not in levels:
                levels = levels + (MISSING,)
            if len(set(levels)) != len(levels):
                raise InvalidConfig(f"feature {self.name!r}: duplicate levels")
            object.__setattr__(self, "levels", levels)
        elif self.levels:
            raise InvalidConfig(f"continuous feature {self.name!r} cannot have levels")
        if self.norm is not None:
            mean, sd = (float(v) for v in self.norm)
            if not sd > 0:
                raise InvalidConfig(f"feature {self.name!r}: sd must be positive")
            object.__setattr__(self, "norm", (mean, sd))

    def to_dict(self, with_norm=True):
        out = {"name": self.name, "kind": self.kind, "group": self.group}
        if self.kind == "categorical":
            out["levels"] = list(self.levels)
        if with_norm and self.norm is not None:
            out["norm"] = list(self.norm)
        return out


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise InvalidConfig("feature names must be unique")
        clash = set(names) & set(_RESERVED)
        if clash:
            raise InvalidConfig(f"reserved column names used as features: {sorted(clash)}")

    @property
    def names(self):
        return [f.name for f in self.features]

    def __getitem__(self, name):
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def select(self, groups):
        """Sub-schema restricted to the given feature groups."""
        return FeatureSchema(tuple(f for f in self.features if f.group in groups))

    def to_dict(self, with_norm=True):
        return {"features": [f.to_dict(with_norm) for f in self.features]}

    @classmethod
    def from_dict(cls, obj):
        feats = []
        for f in obj["features"]:
            feats.append(
                Feature(
                    name=f["name"],
                    kind=f["kind"],
                    levels=tuple(f.get("levels", ())),
                    group=f.get("group", "clinical"),
                    norm=tuple(f["norm"]) if f.get("norm") is not None else None,
                )
            )
        return cls(tuple(feats))

    def digest(self):
        """Stable hash of names, kinds, groups and levels (normalization excluded)."""
        blob = json.dumps(self.to_dict(with_norm=False), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_schema(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return FeatureSchema.from_dict(json.load(fh))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"malformed schema file {path}: {exc}") from exc


def write_schema(schema, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


# --------------------------------------------------------------------------- records


@dataclass(frozen=True)
class SurvivalRecord:
    id: str
    raw_values: Mapping[str, Any]
    time: float
    event: bool
    volume: float | None = None


@dataclass(frozen=True)
class SurvivalDataset:
    schema: FeatureSchema
    records: tuple[SurvivalRecord, ...]
    split_tag: str = "none"
    metadata: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise EmptyDataset("dataset has no records")
        if self.split_tag not in ("train", "test", "none"):
            raise InvalidConfig(f"unknown split tag {self.split_tag!r}")

    def __len__(self):
        return len(self.records)

    @property
    def n_censored(self):
        return int(np.count_nonzero(~self.event))

    @cached_property
    def ids(self):
        return [r.id for r in self.records]

    @cached_property
    def time(self):
        return _frozen(np.array([r.time for r in self.records], dtype=float))

    @cached_property
    def event(self):
        return _frozen(np.array([r.event for r in self.records], dtype=bool))

    @cached_property
    def volume(self):
        if any(r.volume is None for r in self.records):
            return None
        return _frozen(np.array([r.volume for r in self.records], dtype=float))

    @property
    def has_volume(self):
        return self.volume is not None

    def label_2yr(self, horizon=HORIZON_MONTHS):
        """1 for an observed death by the horizon, else 0 (no censoring correction)."""
        return (self.event & (self.time <= horizon)).astype(int)

    def known_2yr(self, horizon=HORIZON_MONTHS):
        """Mask of patients whose horizon status is actually observed."""
        return self.event | (self.time >= horizon)

    def column(self, name):
        return [r.raw_values[name] for r in self.records]

    def subset(self, index, split_tag=None):
        recs = tuple(self.records[i] for i in index)
        meta = dict(self.metadata)
        if "true_risk" in meta:
            meta["true_risk"] = {r.id: self.metadata["true_risk"][r.id] for r in recs}
        return SurvivalDataset(self.schema, recs, split_tag or self.split_tag, meta)

    def true_risk(self):
        """Generating linear predictor per record (synthetic cohorts only)."""
        table = self.metadata.get("true_risk")
        if table is None:
            raise KeyError("dataset carries no generating risk")
        return np.array([table[i] for i in self.ids])


def _frozen(a):
    a.setflags(write=False)
    return a


def _parse_float(text, row, col):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise BadValue(row, col, text, "not a number") from None
    if not math.isfinite(v):
        raise BadValue(row, col, text, "not finite")
    return v


def load_dataset(path, schema):
    """Read a cohort CSV (``id,time,event,<features...>[,volume]``)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in ("id", "time", "event", *schema.names):
            if col not in header:
                raise MissingColumn(col)
        has_volume = "volume" in header
        records = []
        for row_no, row in enumerate(reader, start=1):
            t = _parse_float(row["time"], row_no, "time")
            if t <= 0:
                raise BadValue(row_no, "time", row["time"], "time must be positive")
            ev = row["event"].strip()
            if ev not in ("0", "1"):
                raise BadValue(row_no, "event", ev, "event must be 0 or 1")
            values = {}
            for feat in schema.features:
                cell = row[feat.name]
                cell = cell.strip() if cell is not None else ""
                if feat.kind == "categorical":
                    label = cell or MISSING
                    if label not in feat.levels:
                        raise BadValue(row_no, feat.name, cell, "unknown category")
                    values[feat.name] = label
                else:
                    if cell == "":
                        raise BadValue(row_no, feat.name, cell, "missing continuous value")
                    values[feat.name] = _parse_float(cell, row_no, feat.name)
            vol = None
            if has_volume:
                vol = _parse_float(row["volume"], row_no, "volume")
                if vol < 0:
                    raise BadValue(row_no, "volume", row["volume"], "volume must be >= 0")
            records.append(SurvivalRecord(row["id"], values, t, ev == "1", vol))
    if not records:
        raise EmptyDataset(f"{path} has no data rows")
    return SurvivalDataset(schema, tuple(records))


def write_dataset(dataset, path):
    names = dataset.schema.names
    header = ["id", "time", "event", *names]
    if dataset.has_volume:
        header.append("volume")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in dataset.records:
            row = [r.id, repr(float(r.time)), int(r.event)]
            for f in dataset.schema.features:
                v = r.raw_values[f.name]
                if f.kind == "categorical":
                    row.append("" if v == MISSING else v)
                else:
                    row.append(repr(float(v)))
            if dataset.has_volume:
                row.append(repr(float(r.volume)))
            w.writerow(row)


# --------------------------------------------------------------------------- encoding


@dataclass(frozen=True)
class EncodedMatrix:
    ids: list[str]
    X: np.ndarray
    columns: list[str]

    @property
    def shape(self):
        return self.X.shape


@dataclass(frozen=True)
class Encoder:
    """Training-split normalization plus the column recipe used by a model.

    ``schema`` carries the fitted (mean, sd) of every continuous feature.
    ``volume_norm`` is set when log1p(volume) is appended as a final column.
    """

    schema: FeatureSchema
    volume_norm: tuple[float, float] | None = None

    @classmethod
    def fit(cls, dataset, groups=None, volume=False):
        schema = dataset.schema if groups is None else dataset.schema.select(groups)
        fitted = []
        for f in schema.features:
            if f.kind == "continuous":
                col = np.asarray(dataset.column(f.name), dtype=float)
                mean, sd = float(col.mean()), float(col.std())
                if not sd > 0:
                    raise ZeroVariance(f.name)
                f = replace(f, norm=(mean, sd))
            fitted.append(f)
        vnorm = None
        if volume:
            if not dataset.has_volume:
                raise MissingColumn("volume")
            lv = np.log1p(dataset.volume)
            if not lv.std() > 0:
                raise ZeroVariance("volume")
            vnorm = (float(lv.mean()), float(lv.std()))
        return cls(FeatureSchema(tuple(fitted)), vnorm)

    @property
    def columns(self):
        cols = []
        for f in self.schema.features:
            if f.kind == "continuous":
                cols.append(f.name)
            else:
                cols.extend(f"{f.name}={lvl}" for lvl in f.levels)
        if self.volume_norm is not None:
            cols.append("volume")
        return cols

    def transform(self, dataset):
        n = len(dataset)
        blocks = []
        for f in self.schema.features:
            raw = dataset.column(f.name)
            if f.kind == "continuous":
                mean, sd = f.norm
                blocks.append(((np.asarray(raw, dtype=float) - mean) / sd)[:, None])
            else:
                lookup = {lvl: k for k, lvl in enumerate(f.levels)}
                block = np.zeros((n, len(f.levels)))
                try:
                    block[np.arange(n), [lookup[v] for v in raw]] = 1.0
                except KeyError as exc:
                    raise BadValue(None, f.name, exc.args[0], "unknown category") from None
                blocks.append(block)
        if self.volume_norm is not None:
            if not dataset.has_volume:
                raise MissingColumn("volume")
            mean, sd = self.volume_norm
            blocks.append(((np.log1p(dataset.volume) - mean) / sd)[:, None])
        X = np.hstack(blocks) if blocks else np.zeros((n, 0))
        return EncodedMatrix(list(dataset.ids), X, self.columns)

    def to_dict(self):
        return {"schema": self.schema.to_dict(), "volume_norm": list(self.volume_norm) if self.volume_norm else None}

    @classmethod
    def from_dict(cls, obj):
        vn = obj.get("volume_norm")
        return cls(FeatureSchema.from_dict(obj["schema"]), tuple(vn) if vn else None)


def encode(dataset, stats_from, groups=None, volume=False):
    """One-hot + standardize ``dataset`` using statistics of ``stats_from`` (the training split)."""
    if dataset.schema.digest() != stats_from.schema.digest():
        raise InvalidConfig("datasets have different schemas")
    return Encoder.fit(stats_from, groups=groups, volume=volume).transform(dataset)


# --------------------------------------------------------------------------- split


def split_train_test(dataset, fraction, key=None):
    """Deterministic prefix/suffix split after sorting by ``key`` (record order by default)."""
    if not 0 < fraction < 1:
        raise DegenerateSplit(f"fraction must lie in (0, 1), got {fraction}")
    n = len(dataset)
    if key is None:
        order = list(range(n))
    else:
        order = sorted(range(n), key=lambda i: key(dataset.records[i]))
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise DegenerateSplit(f"split of {n} records at {fraction} leaves one side empty")
    return (
        dataset.subset(order[:n_train], "train"),
        dataset.subset(order[n_train:], "test"),
    )


# --------------------------------------------------------------------------- synthesis

DEFAULT_FEATURES = [
    {"name": "age", "kind": "continuous", "group": "clinical", "dist": "normal", "mean": 63.0, "sd": 11.0},
    {"name": "sex", "kind": "categorical", "group": "clinical", "levels": ["Female", "Male"], "probs": [0.2, 0.8]},
    {"name": "t_stage", "kind": "categorical", "group": "clinical",
     "levels": ["T1", "T2", "T3", "T4"], "probs": [0.15, 0.3, 0.3, 0.25]},
    {"name": "n_stage", "kind": "categorical", "group": "clinical",
     "levels": ["N0", "N1", "N2", "N3"], "probs": [0.3, 0.1, 0.5, 0.1]},
    {"name": "hpv", "kind": "categorical", "group": "clinical",
     "levels": ["negative", "positive"], "probs": [0.15, 0.4], "missing": 0.45},
    {"name": "ecog", "kind": "categorical", "group": "clinical",
     "levels": ["0", "1", "2+"], "probs": [0.55, 0.35, 0.1]},
    {"name": "dose", "kind": "continuous", "group": "treatment", "dist": "normal", "mean": 66.0, "sd": 5.0},
    {"name": "chemo", "kind": "categorical", "group": "treatment", "levels": ["no", "yes"], "probs": [0.5, 0.5]},
    {"name": "glszm_size_zone_nonuniformity", "kind": "continuous", "group": "radiomic", "dist": "normal"},
    {"name": "glszm_zone_variance", "kind": "continuous", "group": "radiomic", "dist": "normal"},
    {"name": "glrlm_long_run_high_gray_level_emphasis", "kind": "continuous", "group": "radiomic", "dist": "normal"},
]

DEFAULT_VOLUME = {"dist": "lognormal", "mean": 10.0, "sd": 1.0}

DEFAULT_BETA = {
    "age": 0.35,
    "sex": {"Male": 0.1},
    "t_stage": {"T3": 0.3, "T4": 0.6},
    "n_stage": {"N2": 0.25, "N3": 0.6},
    "hpv": {"positive": -0.8},
    "ecog": {"1": 0.4, "2+": 0.9},
    "dose": -0.15,
    "chemo": {"yes": -0.1},
    "glszm_size_zone_nonuniformity": 0.15,
    "volume": 0.6,
}


@dataclass
class CohortConfig:
    """Settings for :func:`synthesize_cohort`.

    Continuous features are drawn as ``mean + sd * z`` (or ``exp`` of that for
    lognormal) with ``z`` standard normal; ``beta`` applies to ``z``, so each
    continuous coefficient is an effect per generating standard deviation.
    Categorical coefficients map level -> log hazard ratio (unlisted levels 0).
    """

    n: int
    lam: float = 0.015
    beta: dict = field(default_factory=lambda: dict(DEFAULT_BETA))
    censor_rate: float = 0.01
    followup_min: float = HORIZON_MONTHS
    followup_max: float | None = None
    features: list = field(default_factory=lambda: [dict(f) for f in DEFAULT_FEATURES])
    volume: dict | None = field(default_factory=lambda: dict(DEFAULT_VOLUME))
    seed: int | None = None

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown config fields: {sorted(unknown)}")
        if "n" not in obj:
            raise InvalidConfig("config requires 'n'")
        return cls(**obj)

    def to_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "lam"}
        out["lambda"] = self.lam
        return out

    def schema(self):
        return FeatureSchema(
            tuple(
                Feature(f["name"], f["kind"], tuple(f.get("levels", ())), f.get("group", "clinical"))
                for f in self.features
            )
        )


def load_cohort_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return CohortConfig.from_dict(json.load(fh))
    except (json.JSONDecodeError, TypeError) as exc:
        raise InvalidConfig(f"malformed generator config {path}: {exc}") from exc


def _check_config(cfg):
    if not isinstance(cfg.n, int) or cfg.n < 0:
        raise InvalidConfig("n must be a non-negative integer")
    if cfg.n == 0:
        raise EmptyDataset("n = 0")
    if not cfg.lam > 0:
        raise InvalidConfig("lambda must be positive")
    if cfg.censor_rate < 0:
        raise InvalidConfig("censor_rate must be >= 0")
    if cfg.followup_min < 0:
        raise InvalidConfig("followup_min must be >= 0")
    names = {f["name"] for f in cfg.features}
    unknown = set(cfg.beta) - names - {"volume"}
    if unknown:
        raise InvalidConfig(f"beta names unknown features: {sorted(unknown)}")
    if "volume" in cfg.beta and cfg.volume is None:
        raise InvalidConfig("beta for volume given but volume generation disabled")
    for f in cfg.features:
        if f["kind"] == "categorical":
            probs = np.asarray(f.get("probs", [1.0] * len(f["levels"])), dtype=float)
            if probs.size != len(f["levels"]) or np.any(probs < 0):
                raise InvalidConfig(f"bad probs for {f['name']!r}")


def synthesize_cohort(config, seed=None):
    """Draw a censored cohort from an exponential proportional-hazards model.

    Event times are ``Exp(lam * exp(eta))`` with ``eta`` the linear predictor;
    censoring times are ``followup_min + Exp(censor_rate)`` (never, when the
    rate is 0), optionally capped at ``followup_max``.  The generating
    coefficients and every record's ``eta`` are kept in ``metadata``.
    """
    if isinstance(config, Mapping):
        config = CohortConfig.from_dict(config)
    _check_config(config)
    if seed is None:
        seed = config.seed if config.seed is not None else 0
    rng = np.random.default_rng(seed)
    n = config.n
    schema = config.schema()
    eta = np.zeros(n)
    columns = {}
    for f in config.features:
        name = f["name"]
        coef = config.beta.get(name, 0.0)
        if f["kind"] == "continuous":
            z = rng.standard_normal(n)
            raw = f.get("mean", 0.0) + f.get("sd", 1.0) * z
            if f.get("dist", "normal") == "lognormal":
                raw = np.exp(raw)
            columns[name] = raw.tolist()
            eta += float(coef) * z
        else:
            levels = list(f["levels"])
            probs = list(f.get("probs", [1.0] * len(levels)))
            p_missing = float(f.get("missing", 0.0))
            probs = np.asarray(probs + [p_missing], dtype=float)
            probs /= probs.sum()
            idx = rng.choice(len(probs), size=n, p=probs)
            labels = np.array(levels + [MISSING], dtype=object)[idx]
            columns[name] = labels.tolist()
            if isinstance(coef, Mapping):
                effects = np.array([float(coef.get(lvl, 0.0)) for lvl in levels + [MISSING]])
                eta += effects[idx]
            elif coef:
                raise InvalidConfig(f"categorical beta for {name!r} must map level -> value")
    volume = None
    if config.volume is not None:
        z = rng.standard_normal(n)
        vspec = config.volume
        volume = np.exp(vspec.get("mean", 10.0) + vspec.get("sd", 1.0) * z)
        eta += float(config.beta.get("volume", 0.0)) * z

    event_time = rng.standard_exponential(n) / (config.lam * np.exp(eta))
    if config.censor_rate > 0:
        censor_time = config.followup_min + rng.standard_exponential(n) / config.censor_rate
    else:
        censor_time = np.full(n, np.inf)
    if config.followup_max is not None:
        censor_time = np.minimum(censor_time, config.followup_max)
    event = event_time <= censor_time
    time = np.where(event, event_time, censor_time)
    time = np.maximum(time, np.finfo(float).tiny)

    width = len(str(n - 1))
    records = []
    for i in range(n):
        values = {name: columns[name][i] for name in columns}
        records.append(
            SurvivalRecord(
                f"P{i:0{width}d}",
                values,
                float(time[i]),
                bool(event[i]),
                None if volume is None else float(volume[i]),
            )
        )
    meta = {
        "beta": config.beta,
        "lambda": config.lam,
        "seed": seed,
        "true_risk": {r.id: float(e) for r, e in zip(records, eta)},
    }
    return SurvivalDataset(schema, tuple(records), "none", meta)


def write_truth_metadata(dataset, path):
    meta = dict(dataset.metadata)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")


def read_truth_metadata(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def attach_metadata(dataset, metadata):
    return SurvivalDataset(dataset.schema, dataset.records, dataset.split_tag, dict(metadata))
