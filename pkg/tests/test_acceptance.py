"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The verdict lines are repeated in an "acceptance criteria" block at the end of
any pytest run that includes this module; ``python3 tests/test_acceptance.py``
runs the suite on its own.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit

sys.path.insert(0, str(Path(__file__).parent))

from survchallenge import _kernels, classic, data, ensemble, io, metrics, mtlr, survival  # noqa: E402
from survchallenge.cli import main as cli_main  # noqa: E402
from survchallenge.metrics import PredictionSet  # noqa: E402
from survchallenge.mtlr import TimeGrid  # noqa: E402

from oracles import auroc_pairs, average_precision_direct, cindex_pairs, mtlr_nll_enumerated  # noqa: E402

def verdict(record, number, title, ok, detail):
    """Print and record one PASS/FAIL line; the conftest hook repeats it in the run summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
    print(line)
    record("verdict", line)
    assert ok, line


# --------------------------------------------------------------------------- 1


def test_c1_metric_oracles(record_property):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(4, 31))
        scores = rng.integers(0, 6, n) / 5.0  # coarse grid forces score ties
        label = rng.random(n) < 0.5
        label[:2] = [True, False]
        t = rng.integers(1, 10, n).astype(float)  # tied times
        e = rng.random(n) < 0.6
        e[0] = True
        worst = max(worst, abs(metrics.auroc(scores, label) - auroc_pairs(scores, label)))
        worst = max(worst, abs(metrics.average_precision(scores, label) - average_precision_direct(scores, label)))
        for b in _kernels.available_backends():
            conc, tied, comp = _kernels.concordance_counts(scores, t, e, backend=b)
            if comp:
                worst = max(worst, abs((conc + 0.5 * tied) / comp - cindex_pairs(scores, t, e)))
    elapsed = time.perf_counter() - t0
    verdict(record_property, 1, "metric oracle equivalence", worst < 1e-12 and elapsed < 10,
            f"max |delta| {worst:.1e}, {elapsed:.1f} s")


# --------------------------------------------------------------------------- 2


def test_c2_mtlr_normalizer(record_property):
    rng = np.random.default_rng(102)
    worst = 0.0
    for k in range(50):
        K = 2 + k % 5
        grid = TimeGrid(np.arange(1, K, dtype=float))
        model = mtlr.init_model(3, grid, ((), (4,), (3, 3))[k % 3], C1=rng.uniform(0, 2), rng=rng, scale=1.0)
        X = rng.standard_normal((6, 3))
        tg = mtlr.encode_targets(rng.uniform(0.2, K + 1.0, 6), rng.random(6) < 0.6, grid)
        a, _, _ = mtlr._forward(model, X)
        oracle = mtlr_nll_enumerated(a, tg.bin, tg.event, K) + 0.5 * model.C1 * np.sum(model.theta ** 2)
        worst = max(worst, abs(mtlr.mtlr_loss(model, X, tg) - oracle))
    verdict(record_property, 2, "MTLR normalizer exactness", worst < 1e-8,
            f"max |delta| {worst:.1e} over 50 models, K<=6")


# --------------------------------------------------------------------------- 3


def _fd_gradient(model, X, tg, h=1e-5):
    params = model.params()
    out = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (mtlr.mtlr_loss(model.with_params(plus), X, tg)
                      - mtlr.mtlr_loss(model.with_params(minus), X, tg)) / (2 * h)
        out.append(g)
    return out


def test_c3_gradient(record_property):
    rng = np.random.default_rng(103)
    worst = 0.0
    for k in range(50):
        K = int(rng.integers(2, 8))
        grid = TimeGrid(np.arange(1, K, dtype=float))
        model = mtlr.init_model(3, grid, ((), (4,), (3, 5))[k % 3], C1=rng.uniform(0, 2), rng=rng, scale=0.8)
        n = int(rng.integers(1, 9))
        X = rng.standard_normal((n, 3))
        censored_only = k % 4 == 0
        e = np.zeros(n, bool) if censored_only else rng.random(n) < 0.6
        tg = mtlr.encode_targets(rng.uniform(0.2, K + 1.0, n), e, grid)
        analytic = mtlr.mtlr_gradient(model, X, tg)
        numeric = _fd_gradient(model, X, tg)
        for a, b in zip(analytic, numeric):
            denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
            worst = max(worst, np.linalg.norm(a - b) / denom)
    verdict(record_property, 3, "gradient correctness", worst < 1e-4, f"max relative error {worst:.1e} over 50 draws")


# --------------------------------------------------------------------------- 4


def test_c4_synthetic_recovery(record_property):
    t0 = time.perf_counter()
    cohort = data.synthesize_cohort(data.CohortConfig(n=3000), seed=11)
    train, test = data.split_train_test(cohort, 2000 / 3000)
    cfg = mtlr.TrainConfig(groups=("clinical", "treatment", "radiomic"), seed=0)
    model = mtlr.train_mtlr(train, cfg)
    pred = model.predict(test)
    c_model = metrics.concordance_index(pred.risk, test.time, test.event)
    c_oracle = metrics.concordance_index(test.true_risk(), test.time, test.event)

    beta = {"x1": 0.8, "x2": -0.5, "x3": 0.3, "x4": 0.0}
    feats = [{"name": k, "kind": "continuous", "group": "clinical"} for k in beta]
    ph = data.synthesize_cohort(data.CohortConfig(n=5000, beta=beta, features=feats, volume=None), seed=12)
    enc = data.Encoder.fit(ph)
    fit = survival.cox_fit(enc.transform(ph).X, ph.time, ph.event, l2=0.0, columns=enc.columns)
    # encoded columns are standardized with the sample sd; map back to generating units
    sd = np.array([f.norm[1] for f in enc.schema.features])
    coef = fit.coef / sd
    err = float(np.max(np.abs(coef - np.array(list(beta.values())))))
    elapsed = time.perf_counter() - t0
    ok = abs(c_model - c_oracle) <= 0.02 and err <= 0.1 and elapsed < 120
    verdict(record_property, 4, "synthetic recovery", ok,
            f"deep-MTLR C {c_model:.4f} vs oracle {c_oracle:.4f}; Cox max coef error {err:.3f}; {elapsed:.0f} s")


# --------------------------------------------------------------------------- 5


def test_c5_ensemble_gain(record_property):
    t0 = time.perf_counter()
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = 500
        ids = [f"p{i}" for i in range(n)]
        score = rng.standard_normal(n)
        label = (rng.random(n) < expit(2 * score)).astype(int)
        members = [PredictionSet(ids, expit(score + s * rng.standard_normal(n))) for s in (1.0, 1.25, 1.5, 1.75, 2.0)]
        best = max(metrics.auroc(m.prob_2yr, label) for m in members)
        full = metrics.auroc(ensemble.ensemble_average(members).prob_2yr, label)
        wins += full >= best
    elapsed = time.perf_counter() - t0
    verdict(record_property, 5, "ensemble gain", wins >= 80 and elapsed < 60,
            f"ensemble >= best member in {wins}/100 seeds, {elapsed:.1f} s")


# --------------------------------------------------------------------------- 6


def _two_group(rng, n, ratio):
    g = rng.random(n) < 0.5
    t = rng.exponential(size=n) / np.where(g, ratio, 1.0)
    c = rng.exponential(size=n) / 0.3
    return g, np.minimum(t, c), t <= c


def test_c6_stratification(record_property):
    hr, p = survival.hazard_ratio(*_two_group(np.random.default_rng(106), 5000, 2.0))
    null_ok = 0
    for seed in range(100):
        _, pn = survival.hazard_ratio(*_two_group(np.random.default_rng(1000 + seed), 1000, 1.0))
        null_ok += pn > 0.05
    ok = 1.7 <= hr <= 2.3 and p < 0.01 and null_ok >= 90
    verdict(record_property, 6, "stratification statistics", ok,
            f"HR {hr:.3f}, p {p:.1e}; exchangeable p > .05 in {null_ok}/100")


# --------------------------------------------------------------------------- 7


def test_c7_calibration(record_property):
    rng = np.random.default_rng(107)
    p = rng.random(10_000)
    y = (rng.random(10_000) < p).astype(int)
    rows = metrics.calibration_curve(p, y)
    gap = max(abs(m - f) for m, f, c in rows if c)
    verdict(record_property, 7, "calibration", gap < 0.05, f"max bin gap {gap:.4f}")


# --------------------------------------------------------------------------- 8


REHEARSAL_MODELS = ("deep-mtlr", "mtlr", "cox", "logistic", "fuzzy")


def run_rehearsal(d, seed=0, n=10_000):
    def cli(*argv):
        code = cli_main([str(a) for a in argv])
        if code:
            raise RuntimeError(f"command failed ({code}): {argv}")

    d.mkdir(parents=True, exist_ok=True)
    (d / "cohort.json").write_text(json.dumps({"n": n}))
    cli("synth", "--config", d / "cohort.json", "--out", d / "cohort.csv", "--seed", seed)
    schema = d / "cohort.schema.json"
    cli("split", "--data", d / "cohort.csv", "--schema", schema, "--train-out", d / "train.csv",
        "--test-out", d / "test.csv", "--truth-out", d / "truth.csv")
    preds = d / "preds"
    preds.mkdir(exist_ok=True)
    for m in REHEARSAL_MODELS:
        cli("train", "--model", m, "--train", d / "train.csv", "--schema", schema,
            "--out", d / f"{m}.model.json", "--seed", seed)
        cli("predict", "--model-file", d / f"{m}.model.json", "--data", d / "test.csv", "--schema", schema,
            "--out", preds / f"{m}.csv")
    cli("train", "--model", "baseline-suite", "--train", d / "train.csv", "--schema", schema,
        "--out", d / "suite.model.json", "--seed", seed)
    cli("predict", "--model-file", d / "suite.model.json", "--data", d / "test.csv", "--schema", schema,
        "--out", preds)
    cli("leaderboard", "--preds-dir", preds, "--truth", d / "truth.csv", "--out", d / "leaderboard.csv",
        "--seed", seed)
    cli("ensemble", "--preds", *sorted(preds.glob("*.csv")), "--out", d / "ensemble.csv")
    cli("evaluate", "--pred", d / "ensemble.csv", "--truth", d / "truth.csv", "--seed", seed,
        "--out", d / "ensemble_report.json")
    cli("audit", "--preds-dir", preds, "--data", d / "test.csv", "--schema", schema, "--out", d / "audit.csv")
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_c8_rehearsal(record_property, tmp_path):
    t0 = time.perf_counter()
    first = run_rehearsal(tmp_path / "run1")
    elapsed = time.perf_counter() - t0
    second = run_rehearsal(tmp_path / "run2")
    same = first == second
    order = [line.split(",")[1] for line in first["leaderboard.csv"].decode().splitlines()[1:]]
    order2 = [line.split(",")[1] for line in second["leaderboard.csv"].decode().splitlines()[1:]]
    audit = {line.split(",")[0]: float(line.split(",")[1])
             for line in first["audit.csv"].decode().splitlines()[1:]}
    rho_vol, rho_clin = audit["baseline-volume"], audit["baseline-clinical"]
    ok = same and order == order2 and elapsed < 300 and abs(rho_vol - 1.0) < 1e-12 and abs(rho_clin) < 0.05
    verdict(record_property, 8, "challenge rehearsal", ok,
            f"{elapsed:.0f} s per run, outputs identical across runs: {same}, leaderboard {order[:3]}..., "
            f"rho volume {rho_vol:.3f}, rho clinical {rho_clin:+.3f}")


# --------------------------------------------------------------------------- 9


def test_c9_serialization(record_property, tmp_path):
    cohort = data.synthesize_cohort(data.CohortConfig(n=3000), seed=19)
    train, test = data.split_train_test(cohort, 2000 / 3000)
    assert len(test) == 1000
    schema = cohort.schema
    models = {
        "deep-mtlr": mtlr.train_mtlr(train, mtlr.TrainConfig(seed=1)),
        "mtlr": mtlr.train_mtlr(train, mtlr.TrainConfig.from_dict({**mtlr.EMR_MTLR_DEFAULTS.to_dict(), "seed": 1})),
        "cox": classic.train_cox(train),
        "logistic": classic.train_linear(train, "logistic", classic.EMR, True, cox=False, seed=1),
        "fuzzy": classic.train_fuzzy(train),
        **classic.baseline_suite(train, seed=1),
    }
    mismatched = []
    for name, model in models.items():
        path = tmp_path / f"{name}.json"
        io.save_model(model, path, schema)
        a, b = model.predict(test), io.load_model(path, schema).predict(test)
        for field in ("prob_2yr", "risk", "curve"):
            x, y = getattr(a, field), getattr(b, field)
            if (x is None) != (y is None) or (x is not None and not np.array_equal(x, y)):
                mismatched.append(f"{name}.{field}")
    verdict(record_property, 9, "serialization round-trip", not mismatched,
            f"{len(models)} models on {len(test)} patients, mismatches: {mismatched or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
