"""``survchallenge`` command line: synth, split, train, predict, evaluate, leaderboard, ensemble, audit.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import classic, data, ensemble, io, metrics, mtlr, survival

log = logging.getLogger("survchallenge")

MODELS = ("mtlr", "deep-mtlr", "cox", "logistic", "fuzzy", "baseline-suite")


class UsageError(Exception):
    pass


_USAGE_ERRORS = (UsageError, data.DataError, io.FormatError, mtlr.MtlrError, FileNotFoundError,
                 json.JSONDecodeError, metrics.PredictionError)


def _sidecar(path, suffix):
    p = Path(path)
    return p.with_name(p.stem + suffix)


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must be a JSON object")
    return cfg


def _load(args):
    schema = data.load_schema(args.schema)
    return data.load_dataset(args.data, schema)


# --------------------------------------------------------------------------- commands


def cmd_synth(args):
    cfg = data.load_cohort_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    if seed is None:
        raise UsageError("a seed is required (--seed or 'seed' in the config)")
    ds = data.synthesize_cohort(cfg, seed=seed)
    data.write_dataset(ds, args.out)
    data.write_schema(ds.schema, args.schema_out or _sidecar(args.out, ".schema.json"))
    data.write_truth_metadata(ds, _sidecar(args.out, ".truth.json"))
    print(f"wrote {len(ds)} records to {args.out}")


def cmd_split(args):
    ds = _load(args)
    train, test = data.split_train_test(ds, args.fraction)
    data.write_dataset(train, args.train_out)
    data.write_dataset(test, args.test_out)
    truth_out = args.truth_out or _sidecar(args.test_out, ".truth.csv")
    io.write_truth(metrics.Truth.from_dataset(test), truth_out)
    print(f"train {len(train)} / test {len(test)}")


def _train_config(base, overrides, seed):
    merged = base.to_dict()
    merged.update(overrides)
    merged["seed"] = seed
    return mtlr.TrainConfig.from_dict(merged)


def cmd_train(args):
    schema = data.load_schema(args.schema)
    ds = data.load_dataset(args.train, schema)
    cfg = _read_config(args.config)
    name = args.model
    if name == "deep-mtlr":
        model = mtlr.train_mtlr(ds, _train_config(mtlr.DEEP_MTLR_DEFAULTS, cfg, args.seed))
    elif name == "mtlr":
        model = mtlr.train_mtlr(ds, _train_config(mtlr.EMR_MTLR_DEFAULTS, cfg, args.seed))
    elif name == "cox":
        model = classic.train_cox(ds, l2=float(cfg.get("l2", 1.0)))
    elif name == "logistic":
        model = classic.train_linear(ds, "logistic", classic.EMR, True, cox=False,
                                     l2_grid=cfg.get("l2_grid", classic.DEFAULT_L2_GRID), seed=args.seed)
    elif name == "fuzzy":
        model = classic.train_fuzzy(ds, inputs=cfg.get("inputs", "emr"),
                                    gate_inputs=cfg.get("gate_inputs", "volume"),
                                    l2=float(cfg.get("l2", 1.0)), cox_l2=float(cfg.get("cox_l2", 1.0)))
    elif name == "baseline-suite":
        model = io.ModelSuite(classic.baseline_suite(ds, seed=args.seed))
    else:  # argparse restricts choices; kept for programmatic callers
        raise UsageError(f"unknown model {name!r}")
    io.save_model(model, args.out, schema, extra={"model_name": name, "seed": args.seed})
    print(f"saved {name} model to {args.out}")


def cmd_predict(args):
    schema = data.load_schema(args.schema)
    ds = data.load_dataset(args.data, schema)
    model = io.load_model(args.model_file, schema)
    if isinstance(model, io.ModelSuite):
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for member, preds in model.predict_all(ds).items():
            io.write_predictions(preds, out / f"{member}.csv")
        print(f"wrote {len(model.members)} prediction files to {out}")
    else:
        io.write_predictions(model.predict(ds), args.out)
        print(f"wrote predictions for {len(ds)} patients to {args.out}")


def stratification_summary(preds, truth, threshold=0.5, km_dir=None):
    high = survival.stratify(preds.prob_2yr, threshold)
    out = {"threshold": threshold, "n_high": int(high.sum()), "n_low": int((~high).sum())}
    curves = {}
    for label, mask in (("low", ~high), ("high", high)):
        if mask.any():
            km = survival.kaplan_meier(truth.time[mask], truth.event[mask])
            curves[label] = {"time": km.event_times.tolist(), "survival": km.survival.tolist(),
                             "at_risk": km.at_risk.tolist(), "events": km.events.tolist()}
            if km_dir is not None:
                Path(km_dir).mkdir(parents=True, exist_ok=True)
                km.to_csv(Path(km_dir) / f"km_{label}.csv")
    out["km"] = curves
    try:
        hr, p = survival.hazard_ratio(high, truth.time, truth.event)
        out["hazard_ratio"], out["hr_p"] = hr, p
    except survival.SurvivalError as exc:
        out["hazard_ratio"], out["hr_p"], out["hr_note"] = None, None, str(exc)
    return out


def cmd_evaluate(args):
    preds = io.read_predictions(args.pred)
    truth = io.read_truth(args.truth)
    report = metrics.evaluate(preds, truth, n_boot=args.n_boot, n_perm=args.n_perm, seed=args.seed)
    result = report.to_dict()
    aligned = preds.reindex(truth.ids)
    result["stratification"] = stratification_summary(aligned, truth, km_dir=args.km_dir)
    result["calibration"] = [
        {"mean_pred": m, "frac_pos": f, "count": c}
        for m, f, c in metrics.calibration_curve(aligned.prob_2yr, truth.label)
    ]
    io.write_json(result, args.out)
    print(f"AUROC {report.auroc[0]:.3f} [{report.auroc[1]:.3f}-{report.auroc[2]:.3f}]  "
          f"AP {report.ap[0]:.3f}  C {report.c_index[0]:.3f}")


def leaderboard(named, truth, n_boot=1000, seed=0, q=0.05):
    """Rows best first, with best-vs-rest paired bootstrap p-values and BH decisions."""
    ranked = ensemble.rank_submissions(named, truth)
    best = ranked[0][0]
    best_scores = named[best].reindex(truth.ids).prob_2yr
    pvals = []
    for k, (name, _, _) in enumerate(ranked[1:], start=1):
        other = named[name].reindex(truth.ids).prob_2yr
        pvals.append(metrics.paired_bootstrap_pvalue(best_scores, other, truth, n=n_boot, seed=[seed, k]))
    rejects = metrics.fdr_select(pvals, q) if pvals else []
    rows = []
    for k, (name, auc, ap) in enumerate(ranked):
        p = named[name].reindex(truth.ids)
        rows.append({
            "rank": k + 1,
            "name": name,
            "auroc": auc,
            "ap": ap,
            "c_index": metrics.concordance_index(p.risk_or_proxy, truth.time, truth.event),
            "p_vs_best": "" if k == 0 else pvals[k - 1],
            "fdr_reject": "" if k == 0 else bool(rejects[k - 1]),
        })
    return rows


def _read_pred_dir(directory):
    paths = io.prediction_paths(directory)
    if not paths:
        raise UsageError(f"no prediction files in {directory}")
    return {p.stem: io.read_predictions(p) for p in paths}


def cmd_leaderboard(args):
    named = _read_pred_dir(args.preds_dir)
    truth = io.read_truth(args.truth)
    rows = leaderboard(named, truth, n_boot=args.n_boot, seed=args.seed, q=args.q)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    for r in rows:
        print(f"{r['rank']:>3}  {r['name']:<24} AUROC {r['auroc']:.3f}  AP {r['ap']:.3f}  C {r['c_index']:.3f}")


def cmd_ensemble(args):
    preds = [io.read_predictions(p) for p in args.preds]
    io.write_predictions(ensemble.ensemble_average(preds), args.out)
    print(f"averaged {len(preds)} submissions into {args.out}")


def cmd_audit(args):
    named = _read_pred_dir(args.preds_dir)
    ds = _load(args)
    if not ds.has_volume:
        raise UsageError("audit needs a dataset with a volume column")
    truth = metrics.Truth.from_dataset(ds)
    rows = ensemble.volume_correlation_audit(named, ds.volume, truth)
    ensemble.write_audit_csv(rows, args.out)
    for r in rows:
        print(f"{r['name']:<24} rho {r['spearman_volume']:+.3f}  AUROC {r['auroc']:.3f}  C {r['c_index']:.3f}")


# --------------------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(prog="survchallenge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="draw a synthetic cohort")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--schema-out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="order-deterministic train/test split")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--fraction", type=float, default=1802 / 2552)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("--truth-out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--model", required=True, choices=MODELS)
    p.add_argument("--train", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write a prediction file")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True, help="file, or directory for a model suite")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score one prediction file")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--n-boot", type=int, default=10_000)
    p.add_argument("--n-perm", type=int, default=10_000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--km-dir", help="also write km_low.csv / km_high.csv here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("leaderboard", help="rank prediction files and compare to the best")
    p.add_argument("--preds-dir", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--q", type=float, default=0.05)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_leaderboard)

    p = sub.add_parser("ensemble", help="average prediction files")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("audit", help="volume correlation of every prediction file")
    p.add_argument("--preds-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
