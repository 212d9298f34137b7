"""Temporal splits, imbalanced-classification metrics, bootstrap intervals,
alert tiers, and the multi-seed comparison harness."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .panel import parse_quarter

log = logging.getLogger(__name__)

# calendar split of the full 2010Q1-2024Q2 panel: 48 train, 4 validation, 6 test quarters
DEFAULT_SPLIT = {"train": ("2010Q1", "2021Q4"), "val": ("2022Q1", "2022Q4"), "test": ("2023Q1", "2024Q2")}
SPLIT_PROPORTIONS = (48, 4, 6)


@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    val: tuple
    test: tuple

    def __post_init__(self):
        for name in ("train", "val", "test"):
            if not getattr(self, name):
                raise DataError(f"split has no {name} quarters")
        tr, va, te = ([parse_quarter(q) for q in part] for part in (self.train, self.val, self.test))
        if max(tr) >= min(va) or max(va) >= min(te):
            raise DataError("split quarters must be ordered train < val < test")

    @classmethod
    def from_ranges(cls, quarters: Sequence[str], ranges: dict = DEFAULT_SPLIT) -> "SplitSpec":
        def pick(lo, hi):
            a, b = parse_quarter(lo), parse_quarter(hi)
            return tuple(q for q in quarters if a <= parse_quarter(q) <= b)

        return cls(*(pick(*ranges[k]) for k in ("train", "val", "test")))

    @classmethod
    def proportional(cls, quarters: Sequence[str]) -> "SplitSpec":
        """48:4:6 split scaled to a shorter panel (at least one quarter each for val and test)."""
        qs = sorted(quarters, key=parse_quarter)
        T = len(qs)
        total = sum(SPLIT_PROPORTIONS)
        n_val = max(1, round(T * SPLIT_PROPORTIONS[1] / total))
        n_test = max(1, round(T * SPLIT_PROPORTIONS[2] / total))
        n_train = T - n_val - n_test
        if n_train < 1:
            raise DataError(f"{T} quarters are too few for a train/val/test split")
        return cls(tuple(qs[:n_train]), tuple(qs[n_train:n_train + n_val]), tuple(qs[n_train + n_val:]))

    @classmethod
    def for_quarters(cls, quarters: Sequence[str]) -> "SplitSpec":
        """Calendar split when the panel covers it, proportional otherwise."""
        try:
            return cls.from_ranges(quarters)
        except DataError:
            return cls.proportional(quarters)


# ------------------------------------------------------------------- metrics


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise DataError(f"{s.size} scores vs {y.size} labels")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney statistic: P(positive outranks negative), ties counted half."""
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC needs at least one positive and one negative")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision: sum over score thresholds of precision x recall increment.

    Tied scores form a single threshold, so an all-tied ranking scores exactly
    the base rate.
    """
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DataError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    # last index of each tie group
    ends = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp_at = tp[ends]
    gain = np.diff(np.r_[0, tp_at])
    hit = gain > 0
    # sum of (tp / k) * gain / n_pos over a common integer denominator, so the
    # single final division returns the correctly rounded rational value
    k = [int(v) for v in ends[hit] + 1]
    denom = math.lcm(*k)
    num = sum(int(t) * int(g) * (denom // kk) for t, g, kk in zip(tp_at[hit], gain[hit], k))
    return num / (denom * n_pos)


def f1_mcc(scores, labels, threshold: float = 0.5) -> tuple[float, float]:
    s, y = _check_binary(scores, labels)
    if s.size == 0:
        raise DataError("f1_mcc needs a non-empty input")
    pred = s >= threshold
    tp = float(np.sum(pred & y))
    fp = float(np.sum(pred & ~y))
    fn = float(np.sum(~pred & y))
    tn = float(np.sum(~pred & ~y))
    f1_den = 2 * tp + fp + fn
    f1 = 2 * tp / f1_den if f1_den else 0.0
    mcc_den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    mcc = (tp * tn - fp * fn) / mcc_den if mcc_den else 0.0
    return f1, mcc


def bootstrap_ci(scores, labels, metric: Callable = auroc, n_resamples: int = 1000, seed: int = 0,
                 level: float = 0.95) -> tuple[float, float]:
    """Percentile interval over i.i.d. resamples of institution-quarters.

    Single-class resamples are redrawn up to 10 times, then skipped.
    """
    s, y = _check_binary(scores, labels)
    rng = np.random.default_rng(seed)
    n = s.size
    values = []
    skipped = 0
    for _ in range(n_resamples):
        for _attempt in range(10):
            idx = rng.integers(0, n, n)
            k = int(y[idx].sum())
            if 0 < k < n:
                values.append(metric(s[idx], y[idx]))
                break
        else:
            skipped += 1
    if skipped > n_resamples / 2:
        raise DataError(f"{skipped} of {n_resamples} bootstrap resamples were single-class")
    if skipped:
        log.warning("skipped %d degenerate bootstrap resamples", skipped)
    tail = (1.0 - level) / 2 * 100
    lo, hi = np.percentile(values, [tail, 100 - tail])
    return float(lo), float(hi)


class AlertTier(str, Enum):
    NORMAL = "NORMAL"
    ELEVATED = "ELEVATED"
    HIGH_ALERT = "HIGH_ALERT"
    CRITICAL = "CRITICAL"


TIER_BOUNDS = ((0.30, AlertTier.NORMAL), (0.50, AlertTier.ELEVATED), (0.65, AlertTier.HIGH_ALERT))


def alert_tier(r: float) -> AlertTier:
    if not 0.0 <= r <= 1.0:
        raise DataError(f"risk score {r} outside [0, 1]")
    for bound, tier in TIER_BOUNDS:
        if r < bound:
            return tier
    return AlertTier.CRITICAL


@dataclass
class MetricReport:
    auroc: float
    auprc: float
    f1: float
    mcc: float
    auroc_ci_low: float
    auroc_ci_high: float
    n: int
    n_positive: int
    threshold: float = 0.5


def metric_report(scores, labels, seed: int = 0, n_resamples: int = 1000, threshold: float = 0.5) -> MetricReport:
    s, y = _check_binary(scores, labels)
    f1, mcc = f1_mcc(s, y, threshold)
    lo, hi = bootstrap_ci(s, y, auroc, n_resamples, seed)
    return MetricReport(auroc(s, y), auprc(s, y), f1, mcc, lo, hi, int(s.size), int(y.sum()), threshold)


# --------------------------------------------------------------- comparison

RESULT_COLUMNS = ("config", "seed", "auroc", "auprc", "f1", "mcc", "auroc_ci_low", "auroc_ci_high",
                  "n_test", "n_positive")
METRIC_COLUMNS = ("auroc", "auprc", "f1", "mcc", "auroc_ci_low", "auroc_ci_high")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def result_row(config: str, seed, rep: MetricReport) -> dict:
    return {"config": config, "seed": seed, "auroc": rep.auroc, "auprc": rep.auprc, "f1": rep.f1,
            "mcc": rep.mcc, "auroc_ci_low": rep.auroc_ci_low, "auroc_ci_high": rep.auroc_ci_high,
            "n_test": rep.n, "n_positive": rep.n_positive}


def aggregate(rows: list[dict], reference: str = "FULL") -> list[dict]:
    """Mean/std per config (population std; 0 for a single seed) plus delta AUPRC vs ``reference``.

    CI bounds aggregate by median across seeds.
    """
    configs = list(dict.fromkeys(r["config"] for r in rows))
    out = []
    for c in configs:
        rs = [r for r in rows if r["config"] == c]
        agg = {"config": c, "n_seeds": len(rs)}
        for m in METRIC_COLUMNS:
            vals = np.array([r[m] for r in rs], dtype=float)
            if m.startswith("auroc_ci"):
                agg[f"{m}_median"] = float(np.median(vals))
            else:
                agg[f"{m}_mean"] = float(vals.mean())
                agg[f"{m}_std"] = float(vals.std())
        out.append(agg)
    ref = next((a for a in out if a["config"] == reference), None)
    for a in out:
        a["delta_auprc"] = a["auprc_mean"] - ref["auprc_mean"] if ref else float("nan")
    return out


def write_rows(path: str | Path, rows: list[dict], columns: Sequence[str] | None = None):
    columns = list(columns or (rows[0].keys() if rows else RESULT_COLUMNS))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def logistic_baseline(snapshots, split: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Logistic regression on current-quarter features and macro state; returns test (scores, labels)."""
    from sklearn.linear_model import LogisticRegression

    def stack(quarters):
        snaps = [s for s in snapshots if s.quarter in set(quarters)]
        X = np.vstack([np.hstack([s.x, np.broadcast_to(s.z, (s.n, len(s.z)))]) for s in snaps])
        y = np.concatenate([s.labels for s in snaps])
        return X, y

    Xtr, ytr = stack(split.train)
    Xte, yte = stack(split.test)
    clf = LogisticRegression(max_iter=2000)
    clf.fit(Xtr, ytr)
    return clf.predict_proba(Xte)[:, 1], yte


def run_comparison(snapshots, split: SplitSpec, configs: Sequence[str], seeds: Sequence[int], train_cfg=None,
                   n_resamples: int = 1000, include_baseline: bool = True, on_result=None):
    """Train and score every (config, seed) cell on the test quarters.

    Returns (per-run rows, aggregate rows). ``on_result(config, seed, params, log)``
    is called after each run, e.g. to persist checkpoints.
    """
    from dataclasses import replace

    from .model import TrainConfig, predict, train

    base = train_cfg or TrainConfig()
    rows = []
    for config in configs:
        cfg = replace(base, ablation=config)
        for seed in seeds:
            params, tlog = train(snapshots, split, cfg, seed)
            preds = predict(params, snapshots, list(split.test), cfg.history_window, keep_attention=False)
            s = np.concatenate([p.scores for p in preds])
            y = np.concatenate([p.labels for p in preds])
            rows.append(result_row(cfg.ablation.value, seed, metric_report(s, y, seed, n_resamples)))
            if on_result:
                on_result(cfg.ablation.value, seed, params, tlog)
    if include_baseline:
        s, y = logistic_baseline(snapshots, split)
        rows.append(result_row("LR", "", metric_report(s, y, 0, n_resamples)))
    return rows, aggregate(rows)
