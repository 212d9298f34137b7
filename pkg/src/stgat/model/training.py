"""Full-graph training with Adam, focal loss, and validation-AUPRC early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..errors import DataError
from ..evaluation import SplitSpec, auprc
from . import layers
from .snapshots import GraphSnapshot
from .stgat import STGAT, ModelConfig, ModelParams, TrainConfig, predict

log = logging.getLogger(__name__)

HEAD_DROPOUT_LAYER = 1


@dataclass
class TrainLog:
    seed: int
    ablation: str
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_auprc: float = float("-inf")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "ablation": self.ablation, "epochs": self.epochs,
                "best_epoch": self.best_epoch, "best_val_auprc": self.best_val_auprc}


def validation_auprc(params: ModelParams, model: STGAT, quarters) -> float:
    preds = predict(params, model.snapshots, list(quarters), model.window, keep_attention=False, model=model)
    return auprc(np.concatenate([p.scores for p in preds]), np.concatenate([p.labels for p in preds]))


def train(snapshots: list[GraphSnapshot], split: SplitSpec, cfg: TrainConfig, seed: int,
          model_cfg: ModelConfig | None = None) -> tuple[ModelParams, TrainLog]:
    """Train one seed of one ablation variant.

    Each epoch takes one Adam step per training quarter, in calendar order,
    with all of that quarter's nodes as the batch. Returns the parameters
    of the epoch with the best validation AUPRC.
    """
    by_q = {s.quarter: i for i, s in enumerate(snapshots)}
    missing = [q for q in (*split.train, *split.val) if q not in by_q]
    if missing:
        raise DataError(f"split quarters without snapshots: {missing[:3]}")
    if not any(snapshots[by_q[q]].labels.any() for q in split.val):
        raise DataError("validation quarters contain no distress cases; AUPRC undefined")

    params = ModelParams.init(model_cfg or ModelConfig(), cfg.ablation, seed)
    model = STGAT(params, snapshots, cfg.history_window)
    opt = ad.Adam(params.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    tlog = TrainLog(seed, cfg.ablation.value)
    best_state = params.state()
    stale = 0
    tape = ad.get_tape()
    for epoch in range(cfg.max_epochs):
        losses = []
        for step, q in enumerate(split.train):
            p = model.position[q]
            tape.clear()
            out = model.forward(p, train=True, dropout=cfg.dropout,
                                key=(seed, epoch, step, HEAD_DROPOUT_LAYER))
            loss = layers.focal_loss(out.scores, snapshots[p].labels, cfg.focal_gamma, cfg.focal_alpha)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            losses.append(loss.item())
        val = validation_auprc(params, model, split.val)
        tlog.epochs.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_auprc": val})
        log.debug("seed %d %s epoch %d loss %.5f val_auprc %.4f", seed, cfg.ablation.value, epoch,
                  np.mean(losses), val)
        if val > tlog.best_val_auprc:
            tlog.best_val_auprc, tlog.best_epoch = val, epoch
            best_state = params.state()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    params.load_state(best_state)
    return params, tlog
