"""End-to-end acceptance checks; each prints one PASS/FAIL line.

The signal-recovery, ablation and explanation checks train 20 models on the
default synthetic panel and take roughly half an hour on one CPU core.
"""

import itertools
import time

import numpy as np
import pytest

from conftest import _AUDIT, check_grads, make_toy_snapshots
from stgat import autodiff as ad
from stgat.cli import main
from stgat.evaluation import AlertTier, SplitSpec, alert_tier, auprc, auroc
from stgat.model import (SEEDS, STGAT, Ablation, ModelConfig, ModelParams, TrainConfig, build_snapshots, focal_loss,
                         predict, train)
from stgat.netrecon import ras_reconstruct
from stgat.panel import SynthConfig, synthesize_panel
from stgat.xai import permutation_importance
from test_evaluation import average_precision_by_rank, brute_auprc, brute_auroc

TOY = ModelConfig(heads=2, head_dim=3, lstm_hidden=4, attn_dim=5, head_hidden=6)


@pytest.fixture
def verdict(capsys):
    def report(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\nCRITERION {n:>2} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return report


def test_criterion_01_ras(verdict):
    rng = np.random.default_rng(20240101)
    worst, slowest, diag_ok = 0.0, 0.0, True
    for k in range(100):
        n = (3, 10, 50)[k % 3]
        m = rng.lognormal(0.0, 1.0, (n, n))
        np.fill_diagonal(m, 0.0)
        rows, cols = m.sum(axis=1), m.sum(axis=0)
        t0 = time.perf_counter()
        a = ras_reconstruct(rows, cols).a
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, np.max(np.abs(a.sum(axis=1) - rows) / rows), np.max(np.abs(a.sum(axis=0) - cols) / cols))
        diag_ok &= bool(np.all(np.diag(a) == 0.0))
    forced = ras_reconstruct([10, 20], [20, 10]).a
    exact = np.array_equal(forced, [[0.0, 10.0], [20.0, 0.0]])
    verdict(1, worst <= 1e-8 and diag_ok and slowest < 1.0 and exact,
            f"max marginal violation {worst:.2e} (<= 1e-8), zero diagonal {diag_ok}, "
            f"slowest solve {slowest:.3f}s (< 1s), n=2 forced solution exact {exact}")


def test_criterion_02_gradients(verdict):
    errs = {}
    for abl in Ablation:
        snaps = make_toy_snapshots(n=5, T=3)
        params = ModelParams.init(TOY, abl, 11)
        model = STGAT(params, snaps, window=3)

        def loss():
            return focal_loss(model.forward(2, train=True, dropout=0.0).scores, snaps[2].labels)

        errs[abl.value] = check_grads(loss, params.parameters())
    worst = max(errs.values())
    verdict(2, worst < 1e-4, f"5 nodes, 3 quarters, 2 heads: max relative gradient error {worst:.2e} (< 1e-4) "
                             f"over all tensors of all variants")


def test_criterion_03_focal_reduction(verdict):
    rng = np.random.default_rng(3)
    r = rng.uniform(1e-4, 1 - 1e-4, 1000)
    y = (rng.random(1000) < 0.5).astype(float)
    bce = -np.mean(y * np.log(r) + (1 - y) * np.log(1 - r))
    gap = abs(focal_loss(ad.Tensor(r), y, gamma=0.0, alpha=0.5).item() - 0.5 * bce)
    verdict(3, gap <= 1e-12, f"|focal(gamma=0, alpha=0.5) - 0.5 BCE| = {gap:.1e} on 1000 pairs (<= 1e-12)")


def test_criterion_04_metric_oracles(verdict):
    rng = np.random.default_rng(4)
    instances = mismatches = 0
    for n in range(2, 9):
        scores = list(rng.permutation(n) / n + 0.01)
        for labels in itertools.product([0, 1], repeat=n):
            if 0 < sum(labels) < n:
                instances += 1
                a, p = auroc(scores, labels), auprc(scores, labels)
                mismatches += a != float(brute_auroc(scores, labels))
                mismatches += p != float(brute_auprc(scores, labels))
                mismatches += p != float(average_precision_by_rank(scores, labels))
    invariant = 0
    for _ in range(100):
        n = int(rng.integers(5, 80))
        s = rng.normal(size=n)
        y = rng.random(n) < 0.3
        y[:2] = True, False
        base = auroc(s, y)
        invariant += all(auroc(f(s), y) == base for f in (np.exp, np.arctan, lambda v: 2 * v - 1))
    verdict(4, mismatches == 0 and invariant == 100,
            f"{instances} exhaustive instances, {mismatches} mismatches; monotone invariance {invariant}/100")


def test_criterion_09_alert_tiers(verdict):
    grid = [0.0, 0.2999, 0.30, 0.4999, 0.50, 0.6499, 0.65, 1.0]
    want = ["NORMAL", "NORMAL", "ELEVATED", "ELEVATED", "HIGH_ALERT", "HIGH_ALERT", "CRITICAL", "CRITICAL"]
    got = [alert_tier(r).value for r in grid]
    verdict(9, got == want and len(AlertTier) == 4, f"boundary grid {dict(zip(grid, got))}")


def _cli_run(root, tag):
    out = root / tag
    cfg = root / "cfg.yaml"
    cfg.write_text("synth: {n_institutions: 30, n_quarters: 10}\nn_resamples: 50\nn_repeats: 2\nplots: false\n")
    base = ["--config", str(cfg), "--out", str(out)]
    data = [*base, "--panel", str(out / "panel.csv"), "--macro", str(out / "macro.csv"),
            "--epochs", "2", "--history-window", "3"]
    codes = [main(["synth", *base, "--seed", "11"])]
    for cmd in ("reconstruct", "train", "evaluate", "explain", "report"):
        codes.append(main([cmd, *data, "--seeds", "1,2"]))
    codes.append(main(["ablate", *data, "--seeds", "3", "--epochs", "1"]))
    return out, codes


def test_criterion_10_determinism(verdict, tmp_path):
    a, codes_a = _cli_run(tmp_path, "a")
    b, codes_b = _cli_run(tmp_path, "b")
    csvs = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    same_csv = all((a / p).read_bytes() == (b / p).read_bytes() for p in csvs)
    worst = 0.0
    cks = sorted(p.relative_to(a) for p in a.glob("checkpoints/*.json"))
    for p in cks:
        sa, _ = ad.load_tensors(a / p)
        sb, _ = ad.load_tensors(b / p)
        worst = max(worst, max(float(np.abs(sa[k] - sb[k]).max()) for k in sa))
    ok = codes_a == codes_b == [0] * 7 and same_csv and len(csvs) > 20 and worst <= 1e-12
    verdict(10, ok, f"7 subcommands rerun: {len(csvs)} CSVs byte-identical {same_csv}, "
                    f"{len(cks)} checkpoints max weight gap {worst:.1e} (<= 1e-12)")


# ------------------------------------------------------- synthetic panel runs


@pytest.fixture(scope="module")
def panel():
    t0 = time.perf_counter()
    records, macro = synthesize_panel(SynthConfig(n_institutions=200, n_quarters=20, distress_rate=0.09), 42)
    snaps = build_snapshots(records, macro)
    split = SplitSpec.for_quarters([s.quarter for s in snaps])
    return snaps, split, time.perf_counter() - t0


def _fit(snaps, split, ablation, seed):
    params, _ = train(snaps, split, TrainConfig(ablation=ablation), seed)
    preds = predict(params, snaps, list(split.test), 8, keep_attention=False)
    s = np.concatenate([p.scores for p in preds])
    y = np.concatenate([p.labels for p in preds])
    return params, preds, auprc(s, y), float(y.mean())


@pytest.fixture(scope="module")
def full_runs(panel):
    snaps, split, prep = panel
    t0 = time.perf_counter()
    runs = {seed: _fit(snaps, split, "FULL", seed) for seed in SEEDS}
    return runs, prep + time.perf_counter() - t0


def test_criterion_06_signal_recovery(verdict, full_runs):
    runs, elapsed = full_runs
    base = next(iter(runs.values()))[3]
    ok_seeds = [s for s, (_, _, ap, _) in runs.items() if ap >= 0.85 and ap >= 3 * base]
    scores = ", ".join(f"{s}:{r[2]:.3f}" for s, r in runs.items())
    verdict(6, len(ok_seeds) >= 4 and elapsed < 600,
            f"FULL test AUPRC per seed {scores}; base rate {base:.3f}; {len(ok_seeds)}/5 seeds >= max(0.85, 3x base); "
            f"panel + 5 seeds took {elapsed:.0f}s (< 600s)")


def test_criterion_07_ablation_directions(verdict, panel, full_runs):
    snaps, split, _ = panel
    runs, _ = full_runs
    full = {s: r[2] for s, r in runs.items()}
    other = {abl: {s: _fit(snaps, split, abl, s)[2] for s in SEEDS}
             for abl in ("NO_TEMPORAL", "NO_MACRO", "PERM_EDGE")}
    beats = sum(full[s] > other["NO_TEMPORAL"][s] for s in SEEDS)
    d_macro = np.mean(list(other["NO_MACRO"].values())) - np.mean(list(full.values()))
    d_perm = np.mean(list(other["PERM_EDGE"].values())) - np.mean(list(full.values()))
    verdict(7, beats >= 4 and abs(d_macro) < 0.02 and abs(d_perm) < 0.03,
            f"FULL > NO_TEMPORAL in {beats}/5 seeds (>= 4); mean dAUPRC NO_MACRO {d_macro:+.4f} (|.| < 0.02), "
            f"PERM_EDGE {d_perm:+.4f} (|.| < 0.03)")


def test_criterion_08_xai_sanity(verdict, panel, full_runs):
    snaps, split, _ = panel
    runs, _ = full_runs
    tops, spread = {}, {}
    for seed, (params, preds, _, _) in runs.items():
        imp = permutation_importance(params, snaps, split.test, n_repeats=10, seed=seed, window=8)
        tops[seed] = imp.top(2)
        # beta spread across institutions sharing a full history
        beta = np.vstack([p.beta[p.beta_mask.sum(axis=1) == 8] for p in preds])
        spread[seed] = float(beta.std(axis=0).max())
    hits = sum(set(t) == {"roa", "npl_ratio"} for t in tops.values())
    varied = sum(v > 1e-3 for v in spread.values())
    verdict(8, hits >= 4 and varied == 5,
            f"roa and npl_ratio are the top 2 in {hits}/5 seeds (>= 4) {tops}; "
            f"beta varies across institutions in {varied}/5 seeds (max slot std {min(spread.values()):.3g} or more)")


def test_criterion_05_distribution_invariants(verdict):
    # every attention call so far was audited; later modules are audited in place by the same wrapper
    a = _AUDIT
    ok = a.spatial_calls > 0 and a.temporal_calls > 0 and a.spatial_worst <= 1e-10 and a.temporal_worst <= 1e-6
    verdict(5, ok, f"{a.spatial_calls} spatial layer passes, worst row-sum error {a.spatial_worst:.1e} (<= 1e-10); "
                   f"{a.temporal_calls} temporal passes, worst beta-sum error {a.temporal_worst:.1e} (<= 1e-6)")
