"""Unweighted prediction averaging, rank-wise partial ensembles and volume-correlation audits."""

from __future__ import annotations

import csv

import numpy as np

from .metrics import PredictionSet, auroc, average_precision, concordance_index, spearman


class IdMismatch(ValueError):
    pass


class EmptyList(ValueError):
    pass


def ensemble_average(preds):
    """Arithmetic mean of member predictions.

    Members without a risk score contribute their 2-year event probability to
    the risk mean.  Curves are averaged over the members that supplied one.
    """
    preds = list(preds)
    if not preds:
        raise EmptyList("no predictions to average")
    ids = preds[0].ids
    if any(set(p.ids) != set(ids) or len(p.ids) != len(ids) for p in preds[1:]):
        raise IdMismatch("members predict different patients")
    aligned = [p.reindex(ids) for p in preds]
    prob = _mean([p.prob_2yr for p in aligned])
    risk = None
    if any(p.risk is not None for p in aligned):
        risk = _mean([p.risk_or_proxy for p in aligned])
    curves = [p.curve for p in aligned if p.curve is not None]
    curve = _mean(curves) if curves else None
    return PredictionSet(list(ids), prob, risk, curve)


def _mean(arrays):
    stack = np.stack(arrays)
    # rounding can push the mean one ulp outside the member range
    return np.clip(stack.mean(axis=0), stack.min(axis=0), stack.max(axis=0))


def rank_submissions(named_preds, truth):
    """Names ordered by AUROC, then AP, then name (all best first)."""
    rows = []
    for name, p in named_preds.items():
        p = p.reindex(truth.ids)
        rows.append((name, auroc(p.prob_2yr, truth.label), average_precision(p.prob_2yr, truth.label)))
    rows.sort(key=lambda r: (-r[1], -r[2], r[0]))
    return rows


def partial_ensembles(ranked_preds, truth):
    """AUROC of the average of the top-m members for m = 1..M (members given best first)."""
    ranked_preds = list(ranked_preds)
    if not ranked_preds:
        raise EmptyList("no predictions")
    out = []
    for m in range(1, len(ranked_preds) + 1):
        ens = ensemble_average(ranked_preds[:m]).reindex(truth.ids)
        out.append(auroc(ens.prob_2yr, truth.label))
    return np.array(out)


def volume_correlation_audit(named_preds, volumes, truth):
    """Per member: Spearman rho of prob_2yr with volume, AUROC and C-index.

    ``volumes`` must be aligned with ``truth.ids``.
    """
    vol = np.asarray(volumes, dtype=float)
    rows = []
    for name, p in named_preds.items():
        p = p.reindex(truth.ids)
        rows.append({
            "name": name,
            "spearman_volume": spearman(p.prob_2yr, vol),
            "auroc": auroc(p.prob_2yr, truth.label),
            "c_index": concordance_index(p.risk_or_proxy, truth.time, truth.event),
        })
    return rows


def write_audit_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["name", "spearman_volume", "auroc", "c_index"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
