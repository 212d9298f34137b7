import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stgat.errors import DataError
from stgat.evaluation import (AlertTier, SplitSpec, aggregate, alert_tier, auprc, auroc, bootstrap_ci, f1_mcc,
                              result_row, metric_report, write_rows)


def brute_auroc(scores, labels) -> Fraction:
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(Fraction(1) if p > q else Fraction(1, 2) if p == q else Fraction(0) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def brute_auprc(scores, labels) -> Fraction:
    """Sum over every distinct threshold t of precision(s >= t) times the recall gained at t."""
    n_pos = sum(labels)
    total, prev_recall = Fraction(0), Fraction(0)
    for t in sorted(set(scores), reverse=True):
        picked = [y for s, y in zip(scores, labels) if s >= t]
        recall = Fraction(sum(picked), n_pos)
        total += Fraction(sum(picked), len(picked)) * (recall - prev_recall)
        prev_recall = recall
    return total


def average_precision_by_rank(scores, labels) -> Fraction:
    """Textbook AP for distinct scores: mean precision at each positive's rank."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits, total = 0, Fraction(0)
    for k, i in enumerate(order, 1):
        if labels[i]:
            hits += 1
            total += Fraction(hits, k)
    return total / hits


def test_metrics_match_brute_force_exhaustively():
    rng = np.random.default_rng(0)
    checked = 0
    for n in range(2, 9):
        scores = list(rng.permutation(n) / n + rng.uniform(0, 1e-3))
        for labels in itertools.product([0, 1], repeat=n):
            if 0 < sum(labels) < n:
                assert auroc(scores, labels) == float(brute_auroc(scores, labels))
                ap = auprc(scores, labels)
                assert ap == float(brute_auprc(scores, labels))
                assert ap == float(average_precision_by_rank(scores, labels))
                checked += 1
    assert checked == sum(2 ** n - 2 for n in range(2, 9))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.booleans()), min_size=2, max_size=12))
def test_metrics_with_ties_match_brute_force(pairs):
    scores = [float(s) for s, _ in pairs]
    labels = [int(y) for _, y in pairs]
    if 0 < sum(labels) < len(labels):
        assert auroc(scores, labels) == float(brute_auroc(scores, labels))
        assert auprc(scores, labels) == float(brute_auprc(scores, labels))


def test_auroc_monotone_transform_invariance():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(5, 60))
        s = rng.normal(size=n)
        y = rng.random(n) < 0.3
        y[0], y[1] = True, False
        base = auroc(s, y)
        for f in (np.exp, lambda v: 3 * v + 7, lambda v: v ** 3, lambda v: 1 / (1 + np.exp(-v))):
            assert auroc(f(s), y) == base


def test_perfect_and_tied_rankings():
    y = np.array([0, 0, 1, 1, 0, 1])
    assert auroc(y * 1.0, y) == 1.0 and auprc(y * 1.0, y) == 1.0
    assert auroc(np.full(6, 0.3), y) == 0.5
    assert auprc(np.full(6, 0.3), y) == 0.5   # base rate


def test_metric_errors():
    with pytest.raises(DataError):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(DataError):
        auprc([0.1, 0.2], [0, 0])
    with pytest.raises(DataError):
        auroc([0.1], [1, 0])


def test_f1_mcc_oracle():
    s = np.array([0.9, 0.6, 0.4, 0.2, 0.55, 0.1])
    y = np.array([1, 0, 1, 0, 1, 0])
    tp, fp, fn, tn = 2, 1, 1, 2
    f1, mcc = f1_mcc(s, y)
    assert f1 == pytest.approx(2 * tp / (2 * tp + fp + fn))
    assert mcc == pytest.approx((tp * tn - fp * fn) / math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)))
    # nothing predicted positive: MCC denominator vanishes
    assert f1_mcc(np.zeros(4), np.array([0, 1, 0, 1])) == (0.0, 0.0)
    assert f1_mcc(np.array([0.5]), np.array([1]))[0] == 1.0   # threshold is inclusive


def test_bootstrap_ci_brackets_and_is_seeded():
    rng = np.random.default_rng(5)
    y = rng.random(300) < 0.2
    s = y * 0.8 + rng.normal(0, 0.5, 300)
    lo, hi = bootstrap_ci(s, y, n_resamples=300, seed=3)
    assert lo < auroc(s, y) < hi
    assert (lo, hi) == bootstrap_ci(s, y, n_resamples=300, seed=3)


def test_bootstrap_ci_degenerate_input():
    y = np.zeros(40, bool)
    with pytest.raises(DataError, match="single-class"):
        bootstrap_ci(np.linspace(0, 1, 40), y, n_resamples=200)
    # a lone positive is missed by about a third of resamples; redraws recover them
    y[0] = True
    lo, hi = bootstrap_ci(np.linspace(0, 1, 40), y, n_resamples=200)
    assert 0.0 <= lo <= hi <= 1.0


@pytest.mark.parametrize("r,tier", [
    (0.0, "NORMAL"), (0.2999, "NORMAL"), (0.30, "ELEVATED"), (0.4999, "ELEVATED"),
    (0.50, "HIGH_ALERT"), (0.6499, "HIGH_ALERT"), (0.65, "CRITICAL"), (1.0, "CRITICAL"),
])
def test_alert_tier_boundaries(r, tier):
    assert alert_tier(r) == AlertTier(tier)


@pytest.mark.parametrize("r", [-0.01, 1.01, float("nan")])
def test_alert_tier_rejects_out_of_range(r):
    with pytest.raises(DataError):
        alert_tier(r)


def _quarters(n, start=2010):
    return [f"{start + k // 4}Q{k % 4 + 1}" for k in range(n)]


def test_calendar_split_on_full_panel():
    split = SplitSpec.for_quarters(_quarters(58))
    assert (len(split.train), len(split.val), len(split.test)) == (48, 4, 6)
    assert split.val[0] == "2022Q1" and split.test == ("2023Q1", "2023Q2", "2023Q3", "2023Q4", "2024Q1", "2024Q2")


def test_proportional_split_on_short_panel():
    split = SplitSpec.for_quarters(_quarters(20))
    assert (len(split.train), len(split.val), len(split.test)) == (17, 1, 2)
    assert split.train[-1] < split.val[0] < split.test[0]


def test_split_rejects_overlap_and_empty():
    with pytest.raises(DataError):
        SplitSpec(("2020Q2",), ("2020Q1",), ("2020Q3",))
    with pytest.raises(DataError):
        SplitSpec(("2020Q1",), (), ("2020Q3",))
    with pytest.raises(DataError):
        SplitSpec.proportional(_quarters(2))


def test_aggregate_mean_std_and_delta(tmp_path):
    rep = lambda a: metric_report(np.array([0.1, 0.9, 0.8, 0.2]), np.array([0, 1, 1, 0]), n_resamples=50)
    rows = [result_row("FULL", 1, rep(0)), result_row("FULL", 2, rep(0)), result_row("NO_MACRO", 1, rep(0))]
    rows[1]["auprc"] = 0.5
    rows[2]["auprc"] = 0.6
    agg = {a["config"]: a for a in aggregate(rows)}
    assert agg["FULL"]["auprc_mean"] == pytest.approx(0.75)
    assert agg["FULL"]["auprc_std"] == pytest.approx(0.25)
    assert agg["NO_MACRO"]["auprc_std"] == 0.0
    assert agg["NO_MACRO"]["delta_auprc"] == pytest.approx(-0.15)
    write_rows(tmp_path / "a.csv", list(agg.values()))
    header = (tmp_path / "a.csv").read_text().splitlines()[0].split(",")
    assert "auprc_mean" in header and "auprc_std" in header and "delta_auprc" in header
