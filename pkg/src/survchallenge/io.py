"""File formats: prediction CSV, truth CSV, JSON reports and model files.

Prediction CSV: ``id,prob_2yr[,risk][,surv_m0..surv_m23]``.
Truth CSV: ``id,time,event,label_2yr``.
Model files are JSON; floats are written with ``repr`` precision, so a
reloaded model reproduces predictions bit for bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .metrics import N_CURVE_MONTHS, PredictionError, PredictionSet, Truth

CURVE_COLUMNS = [f"surv_m{m}" for m in range(N_CURVE_MONTHS)]
MODEL_FORMAT = "survchallenge-model"
MODEL_VERSION = 1


class FormatError(ValueError):
    pass


def _f(x):
    return repr(float(x))


def write_predictions(preds, path):
    header = ["id", "prob_2yr"]
    if preds.risk is not None:
        header.append("risk")
    if preds.curve is not None:
        header += CURVE_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, pid in enumerate(preds.ids):
            row = [pid, _f(preds.prob_2yr[k])]
            if preds.risk is not None:
                row.append(_f(preds.risk[k]))
            if preds.curve is not None:
                row += [_f(v) for v in preds.curve[k]]
            w.writerow(row)


def read_predictions(path):
    """Read and validate a prediction file; raises :class:`FormatError` on any violation."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        rows = list(reader)
    if header[:2] != ["id", "prob_2yr"]:
        raise FormatError(f"{path}: header must start with id,prob_2yr")
    rest = header[2:]
    has_risk = bool(rest) and rest[0] == "risk"
    if has_risk:
        rest = rest[1:]
    if rest and rest != CURVE_COLUMNS:
        raise FormatError(f"{path}: unexpected columns {rest[:3]}...")
    has_curve = bool(rest)
    if not rows:
        raise FormatError(f"{path}: no prediction rows")
    try:
        ids = [r[0] for r in rows]
        values = np.array([[float(v) for v in r[1:]] for r in rows])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if values.shape[1] != len(header) - 1:
        raise FormatError(f"{path}: ragged rows")
    col = 0
    prob = values[:, col]
    col += 1
    risk = None
    if has_risk:
        risk = values[:, col]
        col += 1
    curve = values[:, col:] if has_curve else None
    try:
        return PredictionSet(ids, prob, risk, curve)
    except PredictionError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_truth(truth, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "time", "event", "label_2yr"])
        for k, pid in enumerate(truth.ids):
            w.writerow([pid, _f(truth.time[k]), int(truth.event[k]), int(truth.label[k])])


def read_truth(path, horizon=24.0):
    """Truth CSV; ``label_2yr`` is derived from time/event when the column is absent."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for col in ("id", "time", "event"):
            if col not in fields:
                raise FormatError(f"{path}: missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise FormatError(f"{path}: no rows")
    try:
        ids = [r["id"] for r in rows]
        time = np.array([float(r["time"]) for r in rows])
        event = np.array([int(r["event"]) for r in rows]).astype(bool)
        if "label_2yr" in fields:
            label = np.array([int(r["label_2yr"]) for r in rows])
        else:
            label = (event & (time <= horizon)).astype(int)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return Truth(ids, time, event, label)


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# --------------------------------------------------------------------------- models


def save_model(model, path, schema=None, extra=None):
    payload = {"format": MODEL_FORMAT, "version": MODEL_VERSION}
    if schema is not None:
        payload["schema_hash"] = schema.digest()
    payload["model"] = model.to_dict()
    if extra:
        payload.update(extra)
    write_json(payload, path)


def _model_classes():
    from .classic import CoxPredictor, FuzzyPredictor, LinearPredictor
    from .mtlr import MtlrModel

    return {"mtlr": MtlrModel, "cox": CoxPredictor, "fuzzy": FuzzyPredictor, "linear": LinearPredictor, "suite": ModelSuite}


def model_from_dict(obj):
    kind = obj.get("kind")
    try:
        cls = _model_classes()[kind]
    except KeyError:
        raise FormatError(f"unknown model kind {kind!r}") from None
    return cls.from_dict(obj)


def load_model(path, schema=None):
    payload = read_json(path)
    if payload.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path}: not a model file")
    if schema is not None and payload.get("schema_hash") not in (None, schema.digest()):
        raise FormatError(f"{path}: model was trained on a different schema")
    return model_from_dict(payload["model"])


class ModelSuite:
    """Several named models stored in one file (used for the baseline suite)."""

    def __init__(self, members):
        self.members = dict(members)

    def predict_all(self, dataset):
        return {name: m.predict(dataset) for name, m in self.members.items()}

    def predict(self, dataset):
        raise FormatError("a model suite yields several prediction files; use predict_all")

    def to_dict(self):
        return {"kind": "suite", "members": {k: m.to_dict() for k, m in self.members.items()}}

    @classmethod
    def from_dict(cls, obj):
        return cls({k: model_from_dict(v) for k, v in obj["members"].items()})


def prediction_paths(directory):
    return sorted(Path(directory).glob("*.csv"))
