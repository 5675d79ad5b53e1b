"""Full model assembly, unified loss and training loop.

Pipeline per batch (one current window per entity, shared calendar
offset): decompose each window into stable/volatile components; per
branch, project attribute day-series, run attention over the per-entity
attribute graph at every timestep, mean-pool attribute nodes into a
per-entity vector, and unroll the entity-temporal attention over the 30
steps; concatenate the two branch readouts and map through a small MLP to
the next-day KPI prediction.

Loss = MSE + lambda * CLUB(I(X, X^V)) + mu * ||X - (X^S + X^V)||^2. The
reconstruction penalty keeps the additive decomposition premise of the
unified objective approximately true. Training alternates auxiliary-net
likelihood steps with main-model steps and keeps the parameters from the
epoch with the best validation F1.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import (
    INPUT_DAYS,
    WINDOW_DAYS,
    DatasetTensor,
    EntityStaticProfile,
    LabelMatrix,
    NormStats,
    WindowSample,
    normalize,
    train_day_range,
)
from .detector import AnomalyReport, AUCUndefinedError, detect, evaluate, fit_thresholds
from .et_gat import TERMS, branch_weights, etgat_unroll_core
from .gat import gat_core
from .graphs import (
    BlockAdjacency,
    GraphTopology,
    build_topk_graph,
    encode_profiles,
)
from .kdecom import club_aux_loss, club_upper_bound, decompose_core, init_club_params
from .optim import DTYPE, AdamConfig, ParamStore, adam_step

VARIANTS = ("full", "no-kdecom", "no-agat", "no-entitygat", "no-temporalgat")
BRANCHES = ("stable", "volatile")


@dataclass(frozen=True)
class ModelConfig:
    d_a: int = 16
    lambda_mi: float = 12.41
    mu_recon: float = 1.0
    epochs: int = 100
    batch_size: int = 0  # 0 = all entities per step (full-graph batch)
    seed: int = 0
    readout: str = "last"
    variant: str = "full"
    lr: float = 5e-6
    aux_lr: float = 1e-3
    aux_steps: int = 5
    club_hidden: int = 16
    patience: int = 20

    def __post_init__(self):
        if self.lambda_mi < 0 or self.d_a < 1:
            raise ValueError("need lambda_mi >= 0 and d_a >= 1")
        if self.readout not in ("last", "mean"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    mse: float
    mi_estimate: float
    recon: float


@dataclass(frozen=True)
class Prediction:
    y_hat: float


@dataclass(frozen=True)
class BatchGraphs:
    attr: list[GraphTopology]  # one per entity, aligned with batch order
    block: BlockAdjacency


def etgat_variant_terms(variant: str) -> tuple[str, ...]:
    if variant == "no-entitygat":
        return ("t_prev", "t_curr")
    if variant == "no-temporalgat":
        return ("e_prev", "e_curr")
    return TERMS


def init_params(n_attributes: int, config: ModelConfig,
                rng: np.random.Generator | None = None) -> ParamStore:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    d, da = n_attributes, config.d_a
    arrays: dict[str, np.ndarray] = {}
    for branch in BRANCHES:
        if config.variant != "no-kdecom":
            arrays[f"decom.{branch}.w1"] = rng.normal(0, 1 / math.sqrt(d), (d, d))
            arrays[f"decom.{branch}.b1"] = np.zeros(d)
            arrays[f"decom.{branch}.w2"] = rng.normal(0, 1 / math.sqrt(d), (d, d))
            arrays[f"decom.{branch}.b2"] = np.zeros(d)
        arrays[f"agat.{branch}.w_a"] = rng.normal(0, 1 / math.sqrt(INPUT_DAYS), (INPUT_DAYS, da))
        if config.variant != "no-agat":
            arrays[f"agat.{branch}.w_e"] = rng.normal(0, 1 / math.sqrt(2 * da), 2 * da)
        for term in etgat_variant_terms(config.variant):
            arrays[f"etgat.{branch}.{term}"] = rng.normal(0, 1 / math.sqrt(2 * da), 2 * da)
    arrays["mlp.w1"] = rng.normal(0, 1 / math.sqrt(2 * da), (2 * da, 2 * da))
    arrays["mlp.b1"] = np.zeros(2 * da)
    arrays["mlp.w2"] = rng.normal(0, 1 / math.sqrt(2 * da), 2 * da)
    arrays["mlp.b2"] = np.zeros(1)
    if config.variant != "no-kdecom":
        arrays.update(init_club_params(d, config.club_hidden, rng))
    return ParamStore(arrays)


def _branch_readout(component: torch.Tensor, attr_nbrs: torch.Tensor,
                    nbrs_e: torch.Tensor, nbrs_t: torch.Tensor,
                    params: ParamStore, config: ModelConfig, branch: str) -> torch.Tensor:
    """component [B, 30, D] -> readout [B, d_a]."""
    w_a = params[f"agat.{branch}.w_a"]  # [30, d_a]
    # per-timestep attribute-node features; summed over t they equal the
    # full series projection component^T @ w_a
    z = component.unsqueeze(-1) * w_a.reshape(1, INPUT_DAYS, 1, -1)  # [B,30,D,d_a]
    if config.variant == "no-agat":
        h = z
    else:
        h = gat_core(z, attr_nbrs.unsqueeze(1), params[f"agat.{branch}.w_e"])
    hseq = h.mean(dim=2).transpose(0, 1)  # [30, B, d_a]
    return etgat_unroll_core(
        nbrs_e, nbrs_t, hseq, branch_weights(params, branch),
        terms=etgat_variant_terms(config.variant), readout=config.readout)


def forward_core(x: torch.Tensor, attr_nbrs: torch.Tensor,
                 nbrs_e: torch.Tensor, nbrs_t: torch.Tensor,
                 params: ParamStore, config: ModelConfig,
                 ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """x [B, 30, D] -> (y_hat [B], stable [B,30,D], volatile [B,30,D])."""
    if config.variant == "no-kdecom":
        xs, xv = x, x
    else:
        xs = decompose_core(x, params, "stable")
        xv = decompose_core(x, params, "volatile")
    rs = _branch_readout(xs, attr_nbrs, nbrs_e, nbrs_t, params, config, "stable")
    rv = _branch_readout(xv, attr_nbrs, nbrs_e, nbrs_t, params, config, "volatile")
    cat = torch.cat([rs, rv], dim=-1)  # [B, 2 d_a]
    hidden = torch.tanh(cat @ params["mlp.w1"] + params["mlp.b1"])
    y_hat = hidden @ params["mlp.w2"] + params["mlp.b2"][0]
    return y_hat, xs, xv


def loss_core(x: torch.Tensor, y: torch.Tensor, y_hat: torch.Tensor,
              xs: torch.Tensor, xv: torch.Tensor,
              params: ParamStore, config: ModelConfig,
              mask: torch.Tensor | None = None,
              ) -> tuple[torch.Tensor, LossBreakdown]:
    if mask is not None:
        x, y, y_hat, xs, xv = x[mask], y[mask], y_hat[mask], xs[mask], xv[mask]
    if y.numel() == 0:
        raise ValueError("no samples contribute to the loss")
    mse = ((y_hat - y) ** 2).mean()
    if config.variant == "no-kdecom":
        mi = torch.zeros((), dtype=DTYPE)
        recon = torch.zeros((), dtype=DTYPE)
    else:
        d = x.shape[-1]
        mi = club_upper_bound(x.reshape(-1, d), xv.reshape(-1, d), params)
        recon = ((x - xs - xv) ** 2).sum(dim=-1).mean()
    total = mse + config.lambda_mi * mi + config.mu_recon * recon
    return total, LossBreakdown(
        total=float(total.detach()), mse=float(mse.detach()),
        mi_estimate=float(mi.detach()), recon=float(recon.detach()))


# ---------------------------------------------------------------------------
# spec-level operations on window samples


def _batch_tensor(batch: list[WindowSample]) -> torch.Tensor:
    return torch.as_tensor(
        np.stack([w.input for w in batch]).astype(np.float64), dtype=DTYPE)


def _graph_tensors(graphs: BatchGraphs) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    attr = torch.as_tensor(np.stack([g.out_edges for g in graphs.attr]), dtype=torch.long)
    nbrs_e = torch.as_tensor(graphs.block.entity_graph.out_edges, dtype=torch.long)
    nbrs_t = torch.as_tensor(graphs.block.temporal_graph.out_edges, dtype=torch.long)
    return attr, nbrs_e, nbrs_t


def forward(batch: list[WindowSample], graphs: BatchGraphs,
            params: ParamStore, config: ModelConfig) -> list[Prediction]:
    if len(graphs.attr) != len(batch):
        raise ValueError("need one attribute graph per batch window")
    if len({w.entity_index for w in batch}) != len(batch):
        raise ValueError("expected one current window per entity")
    attr, nbrs_e, nbrs_t = _graph_tensors(graphs)
    with torch.no_grad():
        y_hat, _, _ = forward_core(_batch_tensor(batch), attr, nbrs_e, nbrs_t, params, config)
    return [Prediction(y_hat=float(v)) for v in y_hat]


def loss(batch: list[WindowSample], predictions: list[Prediction],
         decomposed, params: ParamStore, config: ModelConfig) -> LossBreakdown:
    """Recompute the loss breakdown from already-computed pieces."""
    y = np.array([w.target for w in batch])
    y_hat = np.array([p.y_hat for p in predictions])
    mse = float(((y_hat - y) ** 2).mean())
    if config.variant == "no-kdecom" or decomposed is None:
        mi = recon = 0.0
    else:
        x = np.stack([w.input for w in batch]).astype(np.float64)
        xs = np.stack([d.stable for d in decomposed])
        xv = np.stack([d.volatile for d in decomposed])
        dim = x.shape[-1]
        with torch.no_grad():
            mi = float(club_upper_bound(x.reshape(-1, dim), xv.reshape(-1, dim), params))
        recon = float(((x - xs - xv) ** 2).sum(axis=-1).mean())
    total = mse + config.lambda_mi * mi + config.mu_recon * recon
    return LossBreakdown(total=total, mse=mse, mi_estimate=mi, recon=recon)


# ---------------------------------------------------------------------------
# experiment container: normalized data, graphs, split bookkeeping


@dataclass
class Experiment:
    norm: DatasetTensor
    stats: NormStats
    labels: LabelMatrix
    profiles: list[EntityStaticProfile]
    profile_enc: np.ndarray
    entity_graph: GraphTopology
    n_offsets: int
    n_train: int
    n_val: int
    _x: torch.Tensor = field(repr=False, default=None)
    _attr_cache: dict = field(repr=False, default_factory=dict)
    _temporal_cache: dict = field(repr=False, default_factory=dict)

    def offsets(self, split: str) -> range:
        if split == "train":
            return range(0, self.n_train)
        if split == "val":
            return range(self.n_train, self.n_train + self.n_val)
        if split == "test":
            return range(self.n_train + self.n_val, self.n_offsets)
        raise ValueError(f"unknown split {split!r}")

    def attr_graph(self, entity: int, offset: int) -> GraphTopology:
        key = (entity, offset)
        if key not in self._attr_cache:
            win = self.norm.values[entity, offset : offset + INPUT_DAYS, :]
            self._attr_cache[key] = build_topk_graph(win.T.astype(np.float64))
        return self._attr_cache[key]

    def temporal_graph(self, offset: int) -> GraphTopology:
        if offset not in self._temporal_cache:
            flat = self.norm.values[:, offset : offset + INPUT_DAYS, :].reshape(
                self.norm.n_entities, -1).astype(np.float64)
            self._temporal_cache[offset] = build_topk_graph(flat)
        return self._temporal_cache[offset]

    def batch(self, offset: int) -> tuple[torch.Tensor, torch.Tensor, np.ndarray, BatchGraphs]:
        """(x [N,30,D], y [N], target labels [N], graphs) at one offset."""
        x = self._x[:, offset : offset + INPUT_DAYS, :]
        y = self._x[:, offset + INPUT_DAYS, self.norm.kpi_index]
        lab = self.labels.labels[:, offset + INPUT_DAYS].astype(np.int64)
        graphs = BatchGraphs(
            attr=[self.attr_graph(n, offset) for n in range(self.norm.n_entities)],
            block=BlockAdjacency(self.entity_graph, self.temporal_graph(offset)),
        )
        return x, y, lab, graphs


def prepare(data: DatasetTensor, labels: LabelMatrix,
            profiles: list[EntityStaticProfile]) -> Experiment:
    norm, stats = normalize(data, train_day_range(data.n_days))
    n_offsets = data.n_days - WINDOW_DAYS + 1
    if n_offsets < 5:
        raise ValueError(f"need >= 5 windows per entity, got {n_offsets}")
    enc = encode_profiles(profiles)
    return Experiment(
        norm=norm,
        stats=stats,
        labels=labels,
        profiles=profiles,
        profile_enc=enc,
        entity_graph=build_topk_graph(enc),
        n_offsets=n_offsets,
        n_train=math.floor(0.6 * n_offsets),
        n_val=math.floor(0.2 * n_offsets),
        _x=torch.as_tensor(norm.values.astype(np.float64), dtype=DTYPE),
    )


# ---------------------------------------------------------------------------
# training


def _split_errors(exp: Experiment, params: ParamStore, config: ModelConfig,
                  split: str, normal_only: bool = False):
    """Per-offset forward pass; returns flat arrays of
    (entity, day, error, label) for the split."""
    ents, days, errs, labs = [], [], [], []
    n = exp.norm.n_entities
    for offset in exp.offsets(split):
        x, y, lab, graphs = exp.batch(offset)
        attr, nbrs_e, nbrs_t = _graph_tensors(graphs)
        with torch.no_grad():
            y_hat, _, _ = forward_core(x, attr, nbrs_e, nbrs_t, params, config)
        err = (y_hat - y).abs().numpy()
        for e in range(n):
            if normal_only and lab[e] != 0:
                continue
            ents.append(e)
            days.append(offset + INPUT_DAYS)
            errs.append(err[e])
            labs.append(lab[e])
    return np.array(ents), np.array(days), np.array(errs, dtype=np.float64), np.array(labs)


def _f1_on_split(exp, params, config, thresholds: dict[int, float], split: str) -> float:
    ents, _, errs, labs = _split_errors(exp, params, config, split)
    th = np.array([thresholds[e] for e in ents])
    decisions, scores = detect(errs, th)
    try:
        _, _, f1, _ = evaluate(decisions, scores, labs)
    except AUCUndefinedError as err:
        f1 = err.f1
    return f1


def train_thresholds(exp: Experiment, params: ParamStore, config: ModelConfig) -> dict[int, float]:
    ents, _, errs, _ = _split_errors(exp, params, config, "train", normal_only=True)
    per_entity: dict[int, list[float]] = {}
    for e, v in zip(ents, errs):
        per_entity.setdefault(int(e), []).append(float(v))
    missing = set(range(exp.norm.n_entities)) - set(per_entity)
    for e in missing:  # entity with no normal training day: no threshold basis
        raise ValueError(f"entity {e} has no normal training samples")
    return fit_thresholds({e: np.array(v) for e, v in per_entity.items()})


def train(exp: Experiment, config: ModelConfig) -> tuple[ParamStore, list[dict]]:
    """Alternating CLUB-aux / main optimization; returns the parameters
    from the best-validation-F1 epoch and a per-epoch log."""
    rng = np.random.default_rng(config.seed)
    d = exp.norm.n_attributes
    params = init_params(d, config, rng)
    main_names = [n for n in params.names() if not n.startswith("club.")]
    club_names = [n for n in params.names() if n.startswith("club.")]
    main_cfg = AdamConfig(lr=config.lr)
    aux_cfg = AdamConfig(lr=config.aux_lr)

    train_labels = np.array([
        exp.labels.labels[:, o + INPUT_DAYS] for o in exp.offsets("train")])
    if (train_labels != 0).all():
        raise ValueError("training set is entirely anomalous; nothing to train on")

    best_f1, best_epoch, best_params = -1.0, -1, params.clone()
    log: list[dict] = []
    offsets = np.array(exp.offsets("train"))
    for epoch in range(config.epochs):
        order = offsets.copy()
        rng.shuffle(order)
        sums = np.zeros(4)
        n_batches = 0
        for offset in order:
            x, y, lab, graphs = exp.batch(offset)
            mask_np = lab == 0
            if not mask_np.any():
                continue
            if config.batch_size and config.batch_size < exp.norm.n_entities:
                keep = np.sort(rng.choice(np.flatnonzero(mask_np),
                                          size=min(config.batch_size, int(mask_np.sum())),
                                          replace=False))
                keep_idx = torch.as_tensor(keep, dtype=torch.long)
                x, y, lab = x[keep_idx], y[keep_idx], lab[keep]
                graphs = BatchGraphs(
                    attr=[graphs.attr[i] for i in keep],
                    block=BlockAdjacency(
                        build_topk_graph(exp.profile_enc[keep]),
                        build_topk_graph(x.numpy().reshape(len(keep), -1))),
                )
                mask_np = lab == 0
            mask = torch.as_tensor(mask_np)
            attr, nbrs_e, nbrs_t = _graph_tensors(graphs)

            if club_names:
                with torch.no_grad():
                    xv = decompose_core(x[mask], params, "volatile")
                xd = x[mask].reshape(-1, d)
                vd = xv.reshape(-1, d)
                for _ in range(config.aux_steps):
                    params.zero_grad(club_names)
                    aux = club_aux_loss(xd, vd, params)
                    aux.backward()
                    adam_step(params, aux_cfg, club_names)

            params.zero_grad()
            y_hat, xs, xv = forward_core(x, attr, nbrs_e, nbrs_t, params, config)
            total, bd = loss_core(x, y, y_hat, xs, xv, params, config, mask=mask)
            total.backward()
            adam_step(params, main_cfg, main_names)
            sums += (bd.total, bd.mse, bd.mi_estimate, bd.recon)
            n_batches += 1

        thresholds = train_thresholds(exp, params, config)
        val_f1 = _f1_on_split(exp, params, config, thresholds, "val")
        means = sums / max(n_batches, 1)
        log.append({
            "epoch": epoch, "total": means[0], "mse": means[1],
            "mi": means[2], "recon": means[3], "val_f1": val_f1,
        })
        if val_f1 > best_f1:
            best_f1, best_epoch, best_params = val_f1, epoch, params.clone()
        elif epoch - best_epoch >= config.patience:
            break
    return best_params, log


def detect_report(exp: Experiment, params: ParamStore, config: ModelConfig,
                  split: str = "test") -> AnomalyReport:
    thresholds = train_thresholds(exp, params, config)
    ents, days, errs, labs = _split_errors(exp, params, config, split)
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


# ---------------------------------------------------------------------------
# checkpoints and logs


def save_model(path, params: ParamStore, config: ModelConfig) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = params.numpy()
    manifest = {
        "schema": 1,
        "config": asdict(config),
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in sorted(arrays)],
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    with open(path / "params.f64", "wb") as f:
        for entry in manifest["arrays"]:
            f.write(arrays[entry["name"]].astype("<f8").tobytes())


def load_model(path) -> tuple[ParamStore, ModelConfig]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    config = ModelConfig(**manifest["config"])
    raw = np.fromfile(path / "params.f64", dtype="<f8")
    arrays = {}
    pos = 0
    for entry in manifest["arrays"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arrays[entry["name"]] = raw[pos : pos + size].reshape(entry["shape"])
        pos += size
    if pos != raw.size:
        raise ValueError("checkpoint size does not match manifest")
    return ParamStore(arrays), config


def write_log_csv(path, log: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("epoch,mse,mi,recon,total,val_f1\n")
        for row in log:
            f.write(f"{row['epoch']},{row['mse']:.9e},{row['mi']:.9e},"
                    f"{row['recon']:.9e},{row['total']:.9e},{row['val_f1']:.9e}\n")
