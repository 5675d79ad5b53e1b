"""Reconstruction-autoencoder baseline sharing the detection protocol.

The AE reconstructs the most recent 30 days of normalized attributes
ending at each decision day (so the decided day is inside the window, as
reconstruction methods require), flattened to a 30*D vector through a
tanh encoder/decoder (30*D -> 64 -> 16 and mirror). Window error is the
mean squared reconstruction error; thresholds, decisions, scoring and
metrics go through exactly the same detector path as the main model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import math

import numpy as np
import torch

from .data import INPUT_DAYS
from .detector import AnomalyReport, AUCUndefinedError, detect, evaluate, fit_thresholds
from .model import Experiment
from .optim import DTYPE, AdamConfig, ParamStore, adam_step

HIDDEN, CODE = 64, 16


@dataclass(frozen=True)
class AEConfig:
    lr: float = 1e-3
    epochs: int = 100
    seed: int = 0
    patience: int = 20

    @classmethod
    def from_json(cls, path) -> "AEConfig":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def init_ae_params(input_dim: int, seed: int) -> ParamStore:
    rng = np.random.default_rng(seed)
    def w(a, b):
        return rng.normal(0, 1 / math.sqrt(a), (a, b))
    return ParamStore({
        "enc.w1": w(input_dim, HIDDEN), "enc.b1": np.zeros(HIDDEN),
        "enc.w2": w(HIDDEN, CODE), "enc.b2": np.zeros(CODE),
        "dec.w1": w(CODE, HIDDEN), "dec.b1": np.zeros(HIDDEN),
        "dec.w2": w(HIDDEN, input_dim), "dec.b2": np.zeros(input_dim),
    })


def ae_reconstruct(x: torch.Tensor, params: ParamStore) -> torch.Tensor:
    h = torch.tanh(x @ params["enc.w1"] + params["enc.b1"])
    code = torch.tanh(h @ params["enc.w2"] + params["enc.b2"])
    h = torch.tanh(code @ params["dec.w1"] + params["dec.b1"])
    return h @ params["dec.w2"] + params["dec.b2"]


def _ae_window(exp: Experiment, offset: int) -> torch.Tensor:
    """30 days ending at the decision day offset+30, flattened [N, 30*D]."""
    n = exp.norm.n_entities
    return exp._x[:, offset + 1 : offset + 1 + INPUT_DAYS, :].reshape(n, -1)


def ae_train(exp: Experiment, config: AEConfig) -> tuple[ParamStore, list[dict]]:
    """Train on normal-labeled windows only; returns params from the epoch
    with the lowest validation reconstruction error."""
    rng = np.random.default_rng(config.seed)
    d_in = INPUT_DAYS * exp.norm.n_attributes
    params = init_ae_params(d_in, config.seed)
    adam = AdamConfig(lr=config.lr)
    offsets = np.array(exp.offsets("train"))
    val_offsets = list(exp.offsets("val"))

    train_labels = np.array([
        exp.labels.labels[:, o + INPUT_DAYS] for o in offsets])
    if (train_labels != 0).all():
        raise ValueError("training set is entirely anomalous; nothing to train on")

    best = (np.inf, -1, params.clone())
    log: list[dict] = []
    for epoch in range(config.epochs):
        order = offsets.copy()
        rng.shuffle(order)
        total, n_batches = 0.0, 0
        for offset in order:
            lab = exp.labels.labels[:, offset + INPUT_DAYS]
            mask = torch.as_tensor(lab == 0)
            if not bool(mask.any()):
                continue
            x = _ae_window(exp, offset)[mask]
            params.zero_grad()
            mse = ((ae_reconstruct(x, params) - x) ** 2).mean()
            mse.backward()
            adam_step(params, adam)
            total += float(mse.detach())
            n_batches += 1
        with torch.no_grad():
            val_mse = float(np.mean([
                float(((ae_reconstruct(_ae_window(exp, o), params)
                        - _ae_window(exp, o)) ** 2).mean())
                for o in val_offsets]))
        log.append({"epoch": epoch, "mse": total / max(n_batches, 1), "val_mse": val_mse})
        if val_mse < best[0]:
            best = (val_mse, epoch, params.clone())
        elif epoch - best[1] >= config.patience:
            break
    return best[2], log


def _ae_errors(exp: Experiment, params: ParamStore, split: str, normal_only: bool = False):
    ents, days, errs, labs = [], [], [], []
    for offset in exp.offsets(split):
        x = _ae_window(exp, offset)
        lab = exp.labels.labels[:, offset + INPUT_DAYS].astype(np.int64)
        with torch.no_grad():
            err = ((ae_reconstruct(x, params) - x) ** 2).mean(dim=1).numpy()
        for e in range(exp.norm.n_entities):
            if normal_only and lab[e] != 0:
                continue
            ents.append(e)
            days.append(offset + INPUT_DAYS)
            errs.append(err[e])
            labs.append(lab[e])
    return np.array(ents), np.array(days), np.array(errs, dtype=np.float64), np.array(labs)


def ae_detect(exp: Experiment, params: ParamStore, split: str = "test") -> AnomalyReport:
    """Reconstruction errors through the shared threshold/decision path."""
    ents, _, errs, _ = _ae_errors(exp, params, "train", normal_only=True)
    per_entity: dict[int, list[float]] = {}
    for e, v in zip(ents, errs):
        per_entity.setdefault(int(e), []).append(float(v))
    thresholds = fit_thresholds({e: np.array(v) for e, v in per_entity.items()})

    ents, days, errs, labs = _ae_errors(exp, params, split)
    th = np.array([thresholds[int(e)] for e in ents])
    decisions, scores = detect(errs, th)
    try:
        precision, recall, f1, auc = evaluate(decisions, scores, labs)
    except AUCUndefinedError as err:
        precision, recall, f1, auc = err.precision, err.recall, err.f1, float("nan")
    return AnomalyReport(
        entity_ids=tuple(exp.norm.entity_ids[int(e)] for e in ents),
        days=days, errors=errs, thresholds=th, scores=scores,
        decisions=decisions, labels=labs,
        precision=precision, recall=recall, f1=f1, auc=auc,
    )
