"""Explanation outputs: temporal attention audit trails, permutation feature
importance, and the per-institution risk report."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .evaluation import AlertTier, alert_tier, auroc
from .model import STGAT, ModelParams, QuarterPrediction, predict
from .model.snapshots import GraphSnapshot
from .panel import FEATURES, parse_quarter

log = logging.getLogger(__name__)

BETA_SLOTS = 8
REPORT_COLUMNS = ("cert", "quarter", "risk_score", "alert_tier", "label", "top_feature_1", "top_feature_2",
                  *(f"beta_q{k}" for k in range(1, BETA_SLOTS + 1)))
IMPORTANCE_COLUMNS = ("feature", "delta_auroc", "rank")


@dataclass(frozen=True)
class TemporalAttribution:
    cert: str
    quarter: str
    weights: tuple[tuple[str, float], ...]   # (history quarter, beta), oldest first


def extract_temporal_attention(predictions: Sequence[QuarterPrediction], cert: str,
                               quarter: str) -> TemporalAttribution:
    """Beta weights exactly as produced during prediction, restricted to present quarters."""
    pred = next((p for p in predictions if p.quarter == quarter), None)
    if pred is None or cert not in pred.certs:
        raise DataError(f"institution {cert} was not scored at {quarter}")
    if pred.beta is None:
        raise DataError(f"predictions for {quarter} carry no temporal attention (ablated model)")
    i = pred.certs.index(cert)
    weights = tuple((pred.beta_quarters[k], float(pred.beta[i, k]))
                    for k in range(pred.beta.shape[1]) if pred.beta_mask[i, k] > 0)
    return TemporalAttribution(cert, quarter, weights)


@dataclass
class FeatureImportance:
    ranking: list[tuple[str, float]]        # descending by delta AUROC
    baseline_auroc: float
    n_repeats: int
    seed: int
    run_id: str = ""
    permuted_auroc: dict[str, list[float]] = field(default_factory=dict)

    def rank_of(self, feature: str) -> int:
        return [f for f, _ in self.ranking].index(feature) + 1

    def top(self, k: int = 2) -> list[str]:
        return [f for f, _ in self.ranking[:k]]


def _history_closure(model: STGAT, quarters: Sequence[str]) -> list[int]:
    """Snapshot positions whose features can reach the scores of ``quarters``."""
    pos = set()
    for q in quarters:
        p = model.position[q]
        pos.add(p)
        if model.params.ablation.value != "NO_TEMPORAL":
            pos.update(int(k) for k in model.history(p).quarters if k >= 0)
    return sorted(pos)


def permutation_importance(params: ModelParams, snapshots: list[GraphSnapshot], test_quarters: Sequence[str],
                           n_repeats: int = 10, seed: int = 0, window: int = 8,
                           features: Sequence[str] = FEATURES) -> FeatureImportance:
    """Drop in test AUROC when one standardized feature is shuffled across
    institutions within each quarter.

    Every quarter feeding the test scores (the history window included) is
    shuffled, each independently.  Repeat r of feature f always uses the same
    random stream, so fewer repeats are a prefix of more repeats.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    model = STGAT(params, snapshots, window)

    def score(overrides=None) -> float:
        preds = predict(params, snapshots, list(test_quarters), window, keep_attention=False, model=model,
                        features=overrides)
        return auroc(np.concatenate([p.scores for p in preds]), np.concatenate([p.labels for p in preds]))

    baseline = score()
    closure = _history_closure(model, test_quarters)
    deltas, permuted = {}, {}
    for name in features:
        j = FEATURES.index(name)
        rng = np.random.default_rng([seed, j])
        runs = []
        for _ in range(n_repeats):
            overrides = {}
            for p in closure:
                x = model.snapshots[p].x.copy()
                x[:, j] = x[rng.permutation(x.shape[0]), j]
                overrides[p] = x
            runs.append(score(overrides))
        permuted[name] = runs
        deltas[name] = baseline - float(np.mean(runs))
    ranking = sorted(deltas.items(), key=lambda kv: (-kv[1], FEATURES.index(kv[0])))
    return FeatureImportance(ranking, baseline, n_repeats, seed, params.digest(), permuted)


def write_importance(path: str | Path, imp: FeatureImportance):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMPORTANCE_COLUMNS)
        for rank, (name, delta) in enumerate(imp.ranking, 1):
            w.writerow([name, f"{delta:.6f}", rank])


def write_attributions(path: str | Path, predictions: Sequence[QuarterPrediction]):
    """Long-format audit trail: one row per (institution, quarter, history quarter)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("cert", "quarter", "history_quarter", "beta"))
        for pred in predictions:
            if pred.beta is None:
                continue
            for cert in pred.certs:
                for hq, b in extract_temporal_attention([pred], cert, pred.quarter).weights:
                    w.writerow([cert, pred.quarter, hq, f"{b:.6f}"])


# ------------------------------------------------------------------- report


@dataclass
class RiskReport:
    rows: list[dict]
    tier_summary: list[dict]
    files: list[Path] = field(default_factory=list)


def _beta_cells(pred: QuarterPrediction, i: int) -> list[str]:
    cells = [""] * BETA_SLOTS
    if pred.beta is None:
        return cells
    # right-align so beta_q8 is always the scored quarter
    W = pred.beta.shape[1]
    for k in range(W):
        slot = BETA_SLOTS - W + k
        if slot >= 0 and pred.beta_mask[i, k] > 0:
            cells[slot] = f"{pred.beta[i, k]:.6f}"
    return cells


def risk_report(predictions: Sequence[QuarterPrediction], importance: FeatureImportance | None = None,
                out_dir: str | Path | None = None, plots: bool = False) -> RiskReport:
    """Per institution-quarter report rows, a per-quarter tier summary, and
    optional plot files; CSVs are written when ``out_dir`` is given."""
    run_ids = {p.run_id for p in predictions}
    if importance is not None:
        run_ids.add(importance.run_id)
    if len(run_ids) > 1:
        raise DataError(f"report inputs come from different runs: {sorted(run_ids)}")
    top = importance.top(2) if importance else ["", ""]
    rows = []
    for pred in predictions:
        for i, cert in enumerate(pred.certs):
            r = float(pred.scores[i])
            row = {"cert": cert, "quarter": pred.quarter, "risk_score": f"{r:.6f}",
                   "alert_tier": alert_tier(r).value, "label": int(pred.labels[i]),
                   "top_feature_1": top[0], "top_feature_2": top[1]}
            row.update(zip(REPORT_COLUMNS[7:], _beta_cells(pred, i)))
            rows.append((parse_quarter(pred.quarter), -r, cert, row))
    rows = [r[-1] for r in sorted(rows, key=lambda t: t[:3])]

    summary = []
    for q in dict.fromkeys(r["quarter"] for r in rows):
        counts = Counter(r["alert_tier"] for r in rows if r["quarter"] == q)
        summary.append({"quarter": q, **{t.value: counts.get(t.value, 0) for t in AlertTier}})

    report = RiskReport(rows, summary)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_dicts(out / "risk_report.csv", rows, REPORT_COLUMNS)
        _write_dicts(out / "tier_summary.csv", summary, ("quarter", *(t.value for t in AlertTier)))
        report.files += [out / "risk_report.csv", out / "tier_summary.csv"]
        if plots:
            report.files += _plots(predictions, out)
    return report


def _write_dicts(path: Path, rows: list[dict], columns: Sequence[str]):
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _plots(predictions: Sequence[QuarterPrediction], out: Path) -> list[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib unavailable; report written without plots")
        return []
    files = []
    meta = {"Software": None}

    # risk trajectories of the highest-scoring institutions
    series: dict[str, list[tuple[int, float]]] = {}
    for pred in predictions:
        for cert, s in zip(pred.certs, pred.scores):
            series.setdefault(cert, []).append((parse_quarter(pred.quarter), float(s)))
    top = sorted(series, key=lambda c: (-max(v for _, v in series[c]), c))[:10]
    fig, ax = plt.subplots(figsize=(7, 4))
    for c in top:
        pts = sorted(series[c])
        ax.plot([q for q, _ in pts], [v for _, v in pts], marker="o", label=c)
    for bound in (0.30, 0.50, 0.65):
        ax.axhline(bound, color="grey", lw=0.5, ls="--")
    ax.set_xlabel("quarter index")
    ax.set_ylabel("risk score")
    ax.legend(fontsize=6)
    files.append(out / "risk_trajectories.png")
    fig.savefig(files[-1], metadata=meta)
    plt.close(fig)

    # mean beta by history slot
    betas = [p.beta for p in predictions if p.beta is not None]
    if betas:
        b = np.vstack(betas)
        m = np.vstack([p.beta_mask for p in predictions if p.beta is not None])
        mean_beta = (b * m).sum(axis=0) / np.maximum(m.sum(axis=0), 1)
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.bar(np.arange(1, b.shape[1] + 1), mean_beta)
        ax.set_xlabel("history slot (oldest to scored quarter)")
        ax.set_ylabel("mean beta")
        files.append(out / "beta_profile.png")
        fig.savefig(files[-1], metadata=meta)
        plt.close(fig)

    s = np.concatenate([p.scores for p in predictions]) if predictions else np.array([])
    y = np.concatenate([p.labels for p in predictions]).astype(bool) if predictions else np.array([], bool)
    if y.any():
        order = np.argsort(-s, kind="stable")
        tp = np.cumsum(y[order])
        precision = tp / np.arange(1, len(s) + 1)
        recall = tp / y.sum()
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.plot(recall, precision)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        files.append(out / "pr_curve.png")
        fig.savefig(files[-1], metadata=meta)
        plt.close(fig)
    return files
