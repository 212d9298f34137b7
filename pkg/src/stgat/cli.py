"""Command-line entry point: synth | reconstruct | train | evaluate | ablate | explain | report.

Every run writes ``manifest_<command>.json`` into the output directory with the
resolved configuration, input digests and output digests.  Failures print one
line ``stgat: error kind=<kind> exit=<code> msg=<json string>`` to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import netrecon
from .errors import StgatError, UsageError
from .evaluation import SplitSpec, aggregate, metric_report, result_row, run_comparison, write_rows
from .model import SEEDS, Ablation, ModelParams, TrainConfig, build_snapshots, predict, train
from .panel import SynthConfig, ingest_macro, ingest_panel, synthesize_panel, write_macro, write_panel

log = logging.getLogger("stgat")

COMMANDS = ("synth", "reconstruct", "train", "evaluate", "ablate", "explain", "report")
TRAIN_KEYS = {"lr", "weight_decay", "patience", "focal_gamma", "focal_alpha", "dropout"}
SYNTH_KEYS = {"n_institutions", "n_quarters", "distress_rate", "start_quarter"}


@dataclass
class RunConfig:
    panel: str | None = None
    macro: str | None = None
    out: str = "runs"
    seed: int = 42
    seeds: list[int] | None = None
    ablation: str = "FULL"
    tol: float = netrecon.DEFAULT_TOL
    max_iter: int = netrecon.DEFAULT_MAX_ITER
    prune: float = netrecon.PRUNE_THRESHOLD
    history_window: int = 8
    epochs: int = 200
    n_repeats: int = 10
    n_resamples: int = 1000
    plots: bool = True
    split: dict | None = None
    train: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)

    def seed_list(self) -> list[int]:
        return list(self.seeds) if self.seeds else [self.seed]

    def train_config(self, ablation: str | None = None) -> TrainConfig:
        return TrainConfig(max_epochs=self.epochs, history_window=self.history_window,
                           ablation=ablation or self.ablation, **self.train)

    def validate(self):
        try:
            Ablation(self.ablation)
        except ValueError:
            raise UsageError(f"unknown ablation {self.ablation!r}; expected one of "
                             f"{[a.value for a in Ablation]}") from None
        bad = set(self.train) - TRAIN_KEYS
        if bad:
            raise UsageError(f"unknown train settings: {sorted(bad)}")
        bad = set(self.synth) - SYNTH_KEYS
        if bad:
            raise UsageError(f"unknown synth settings: {sorted(bad)}")
        if self.split is not None and set(self.split) != {"train", "val", "test"}:
            raise UsageError("split needs exactly the keys train, val, test")
        if self.epochs < 1 or self.history_window < 1 or self.max_iter < 1 or self.n_repeats < 1:
            raise UsageError("epochs, history_window, max_iter and n_repeats must be positive")
        if self.tol <= 0 or self.prune < 0:
            raise UsageError("tol must be positive and prune non-negative")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seeds expects comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML file of settings; flags override it")
    common.add_argument("--panel", help="panel CSV")
    common.add_argument("--macro", help="macro CSV")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--seeds", type=_seed_list, help="comma-separated seed list")
    common.add_argument("--ablation", choices=[a.value for a in Ablation])
    common.add_argument("--tol", type=float, help="RAS convergence tolerance")
    common.add_argument("--max-iter", dest="max_iter", type=int, help="RAS iteration cap")
    common.add_argument("--prune", type=float, help="edge weight pruning threshold")
    common.add_argument("--history-window", dest="history_window", type=int)
    common.add_argument("--epochs", type=int, help="maximum training epochs")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="stgat", description="Interbank-network early warning pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "synth": "write a synthetic panel and macro series",
        "reconstruct": "rebuild exposure networks per quarter",
        "train": "train one model per seed",
        "evaluate": "score trained checkpoints on the test quarters",
        "ablate": "train and score all five variants across seeds",
        "explain": "temporal attention trails and permutation importance",
        "report": "per-institution risk report with alert tiers",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        try:
            data = yaml.safe_load(Path(args.config).read_text()) or {}
        except OSError as e:
            raise UsageError(f"cannot read config {args.config}: {e.strerror}") from None
        except yaml.YAMLError as e:
            raise UsageError(f"config {args.config} is not valid YAML: {e}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config {args.config} must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for name in known:
        val = getattr(args, name, None)
        if val is not None:
            data[name] = val
    cfg = RunConfig(**data)
    try:
        cfg.validate()
    except TypeError as e:
        raise UsageError(f"malformed config value: {e}") from None
    return cfg


# ------------------------------------------------------------------ helpers


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"cannot read {what} file {path}")
    return p


def _load(cfg: RunConfig):
    panel = _require_file(cfg.panel, "panel")
    macro = _require_file(cfg.macro, "macro")
    records = ingest_panel(panel)
    states = ingest_macro(macro)
    snaps = build_snapshots(records, states, tol=cfg.tol, max_iter=cfg.max_iter, prune=cfg.prune)
    quarters = [s.quarter for s in snaps]
    split = SplitSpec.from_ranges(quarters, cfg.split) if cfg.split else SplitSpec.for_quarters(quarters)
    return snaps, split


def _checkpoint(out: Path, ablation: str, seed: int) -> Path:
    return out / "checkpoints" / f"{ablation}_seed{seed}.json"


def _load_params(out: Path, ablation: str, seed: int) -> ModelParams:
    path = _checkpoint(out, ablation, seed)
    if not path.is_file():
        raise UsageError(f"missing checkpoint {path}; run `stgat train` first")
    return ModelParams.load(path)


def _save_run(out: Path, ablation: str, seed: int, params: ModelParams, tlog, cfg: RunConfig) -> list[Path]:
    ck = _checkpoint(out, ablation, seed)
    ck.parent.mkdir(parents=True, exist_ok=True)
    params.save(ck, {"train_config": cfg.train_config(ablation).to_dict(), "best_epoch": tlog.best_epoch})
    meta = out / "logs" / f"{ablation}_seed{seed}.json"
    meta.parent.mkdir(parents=True, exist_ok=True)
    meta.write_text(json.dumps({**tlog.to_dict(), "run_id": params.digest(),
                                "train_config": cfg.train_config(ablation).to_dict()}, indent=1) + "\n")
    return [ck, meta]


def write_manifest(out: Path, command: str, cfg: RunConfig, outputs: list[Path]) -> Path:
    inputs = {}
    for p in (cfg.panel, cfg.macro):
        if p and Path(p).is_file():
            inputs[str(p)] = sha256_file(p)
    manifest = {
        "command": command,
        "config": asdict(cfg),
        "seeds": cfg.seed_list(),
        "inputs": inputs,
        "outputs": {str(Path(o).relative_to(out)): sha256_file(o) for o in sorted(set(outputs))},
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _write_predictions(path: Path, preds):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("cert", "quarter", "risk_score", "label"))
        for p in preds:
            for cert, s, y in zip(p.certs, p.scores, p.labels):
                w.writerow([cert, p.quarter, f"{s:.6f}", int(y)])


# ----------------------------------------------------------------- commands


def cmd_synth(cfg: RunConfig, out: Path) -> list[Path]:
    sc = SynthConfig(**cfg.synth)
    records, macro = synthesize_panel(sc, cfg.seed)
    panel, macro_path = out / "panel.csv", out / "macro.csv"
    write_panel(panel, records)
    write_macro(macro_path, macro)
    return [panel, macro_path]


def cmd_reconstruct(cfg: RunConfig, out: Path) -> list[Path]:
    snaps, _ = _load(cfg)
    edge_dir = out / "edges"
    edge_dir.mkdir(exist_ok=True)
    files = []
    for s in snaps:
        path = edge_dir / f"{s.quarter}.csv"
        netrecon.write_edges(path, [(s.quarter, s.certs, s.edges)])
        files.append(path)
    recon = out / "reconstruction_log.csv"
    write_rows(recon, [{"quarter": s.quarter, "n": s.n, **s.recon} for s in snaps],
               ("quarter", "n", "iterations", "residual", "n_edges", "density"))
    return [*files, recon]


def cmd_train(cfg: RunConfig, out: Path) -> list[Path]:
    snaps, split = _load(cfg)
    files = []
    for seed in cfg.seed_list():
        params, tlog = train(snaps, split, cfg.train_config(), seed)
        log.info("trained %s seed %d: best epoch %d, val AUPRC %.4f", cfg.ablation, seed, tlog.best_epoch,
                 tlog.best_val_auprc)
        files += _save_run(out, cfg.ablation, seed, params, tlog, cfg)
    return files


def cmd_evaluate(cfg: RunConfig, out: Path) -> list[Path]:
    snaps, split = _load(cfg)
    rows, files = [], []
    for seed in cfg.seed_list():
        params = _load_params(out, cfg.ablation, seed)
        preds = predict(params, snaps, list(split.test), cfg.history_window, keep_attention=False)
        s = np.concatenate([p.scores for p in preds])
        y = np.concatenate([p.labels for p in preds])
        rows.append(result_row(cfg.ablation, seed, metric_report(s, y, seed, cfg.n_resamples)))
        path = out / f"test_predictions_{cfg.ablation}_seed{seed}.csv"
        _write_predictions(path, preds)
        files.append(path)
    metrics, summary = out / f"metrics_{cfg.ablation}.csv", out / f"metrics_{cfg.ablation}_summary.csv"
    write_rows(metrics, rows)
    write_rows(summary, aggregate(rows, reference=cfg.ablation))
    return [*files, metrics, summary]


def cmd_ablate(cfg: RunConfig, out: Path) -> list[Path]:
    snaps, split = _load(cfg)
    files = []

    def keep(config, seed, params, tlog):
        files.extend(_save_run(out, config, seed, params, tlog, cfg))

    seeds = list(cfg.seeds) if cfg.seeds else list(SEEDS)
    rows, summary = run_comparison(snaps, split, [a.value for a in Ablation], seeds,
                                   cfg.train_config(), cfg.n_resamples, on_result=keep)
    results, table = out / "ablation_results.csv", out / "ablation_summary.csv"
    write_rows(results, rows)
    write_rows(table, summary)
    return [*files, results, table]


def _importance_paths(out: Path, ablation: str, seed: int) -> tuple[Path, Path]:
    stem = f"{ablation}_seed{seed}"
    return out / f"importance_{stem}.csv", out / f"importance_{stem}.json"


def cmd_explain(cfg: RunConfig, out: Path) -> list[Path]:
    from .xai import permutation_importance, write_attributions, write_importance

    snaps, split = _load(cfg)
    files = []
    for seed in cfg.seed_list():
        params = _load_params(out, cfg.ablation, seed)
        preds = predict(params, snaps, list(split.test), cfg.history_window, keep_attention=False)
        attr = out / f"attributions_{cfg.ablation}_seed{seed}.csv"
        write_attributions(attr, preds)
        imp = permutation_importance(params, snaps, split.test, cfg.n_repeats, seed, cfg.history_window)
        csv_path, json_path = _importance_paths(out, cfg.ablation, seed)
        write_importance(csv_path, imp)
        json_path.write_text(json.dumps({"run_id": imp.run_id, "seed": imp.seed, "n_repeats": imp.n_repeats,
                                         "baseline_auroc": imp.baseline_auroc,
                                         "ranking": imp.ranking}, indent=1) + "\n")
        files += [attr, csv_path, json_path]
    return files


def cmd_report(cfg: RunConfig, out: Path) -> list[Path]:
    from .xai import FeatureImportance, permutation_importance, risk_report

    snaps, split = _load(cfg)
    files = []
    for seed in cfg.seed_list():
        params = _load_params(out, cfg.ablation, seed)
        preds = predict(params, snaps, list(split.test), cfg.history_window, keep_attention=False)
        _, json_path = _importance_paths(out, cfg.ablation, seed)
        imp = None
        if json_path.is_file():
            d = json.loads(json_path.read_text())
            if d["run_id"] == params.digest():
                imp = FeatureImportance([tuple(r) for r in d["ranking"]], d["baseline_auroc"], d["n_repeats"],
                                        d["seed"], d["run_id"])
        if imp is None:
            imp = permutation_importance(params, snaps, split.test, cfg.n_repeats, seed, cfg.history_window)
        rep = risk_report(preds, imp, out / f"report_{cfg.ablation}_seed{seed}", plots=cfg.plots)
        files += [f for f in rep.files if f.suffix == ".csv"]
    return files


HANDLERS = {"synth": cmd_synth, "reconstruct": cmd_reconstruct, "train": cmd_train, "evaluate": cmd_evaluate,
            "ablate": cmd_ablate, "explain": cmd_explain, "report": cmd_report}


def _fail(kind: str, code: int, msg: str) -> int:
    print(f"stgat: error kind={kind} exit={code} msg={json.dumps(msg)}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        out = Path(cfg.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise UsageError(f"cannot create output directory {out}: {e.strerror}") from None
        outputs = HANDLERS[args.command](cfg, out)
        write_manifest(out, args.command, cfg, outputs)
        return 0
    except StgatError as e:
        return _fail(e.kind, e.exit_code, str(e))
    except OSError as e:
        return _fail("usage", 2, f"{e.filename or ''}: {e.strerror or e}")
    except Exception as e:  # pragma: no cover - last-resort guard
        return _fail("internal", 5, f"{type(e).__name__}: {e}")


if __name__ == "__main__":
    sys.exit(main())
