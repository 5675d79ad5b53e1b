"""Graph attention layer shared by the attribute and entity-temporal nets.

The layer follows a residual-plus-attention form: each node keeps its own
feature and adds an attention-weighted sum of raw neighbor features, then
a logistic sigmoid. Attention logits are LeakyReLU(w_e . [z_i || z_j])
normalized by softmax over each node's out-neighbors.

The printed normalization in the source equations divides the raw logit by
a sum of exponentials, which does not produce a distribution; standard
softmax is used instead.

Core functions operate on torch tensors with arbitrary leading batch
dimensions so one implementation serves single graphs and batched
(per-entity, per-timestep) evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .graphs import GraphTopology
from .optim import DTYPE

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class AttentionScores:
    """Per-node attention over its out-neighbors, aligned with
    graph.out_edges rows."""
    values: np.ndarray  # [n_nodes][k]


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=DTYPE)


def _gather_nodes(x: torch.Tensor, nbrs: torch.Tensor) -> torch.Tensor:
    """x [..., n, d], nbrs [..., n, k] (broadcastable) -> [..., n, k, d]."""
    batch = x.shape[:-2]
    n, d = x.shape[-2], x.shape[-1]
    k = nbrs.shape[-1]
    nbrs = nbrs.expand(*batch, n, k)
    idx = nbrs.reshape(*batch, n * k).unsqueeze(-1).expand(*batch, n * k, d)
    return torch.gather(x, -2, idx).reshape(*batch, n, k, d)


def attention_core(z: torch.Tensor, nbrs: torch.Tensor, w_e: torch.Tensor) -> torch.Tensor:
    """Attention weights [..., n, k] for features z [..., n, d]."""
    d = z.shape[-1]
    if w_e.shape != (2 * d,):
        raise ValueError(f"w_e must have length {2*d}, got {tuple(w_e.shape)}")
    self_score = z @ w_e[:d]      # [..., n]
    nbr_score = z @ w_e[d:]       # [..., n]
    batch = z.shape[:-2]
    n, k = z.shape[-2], nbrs.shape[-1]
    nbrs_b = nbrs.expand(*batch, n, k)
    nbr_score_j = torch.gather(nbr_score, -1, nbrs_b.reshape(*batch, n * k)).reshape(*batch, n, k)
    logits = torch.nn.functional.leaky_relu(
        self_score.unsqueeze(-1) + nbr_score_j, negative_slope=LEAKY_SLOPE)
    return torch.softmax(logits, dim=-1)


def gat_core(z: torch.Tensor, nbrs: torch.Tensor, w_e: torch.Tensor) -> torch.Tensor:
    """sigmoid(z_i + sum_j alpha_ij z_j) over each node's out-neighbors."""
    alpha = attention_core(z, nbrs, w_e)
    z_j = _gather_nodes(z, nbrs)
    return torch.sigmoid(z + (alpha.unsqueeze(-1) * z_j).sum(dim=-2))


def neighbor_tensor(graph: GraphTopology) -> torch.Tensor:
    return torch.as_tensor(graph.out_edges, dtype=torch.long)


def attention_scores(graph: GraphTopology, z, w_e) -> AttentionScores:
    alpha = attention_core(_as_tensor(z), neighbor_tensor(graph), _as_tensor(w_e))
    return AttentionScores(values=alpha.detach().numpy())


def gat_forward(graph: GraphTopology, z, w_e):
    """Single-graph forward; returns the same array type it was given."""
    out = gat_core(_as_tensor(z), neighbor_tensor(graph), _as_tensor(w_e))
    if isinstance(z, torch.Tensor):
        return out
    return out.detach().numpy()


def project_attributes(window, w_a):
    """Project each attribute's day series to d_A features.

    window is [days][D], w_a is [days][d_A]; returns [D][d_A] with one row
    per attribute node.
    """
    if isinstance(window, torch.Tensor) or isinstance(w_a, torch.Tensor):
        return _as_tensor(window).swapaxes(-1, -2) @ _as_tensor(w_a)
    return np.asarray(window).swapaxes(-1, -2) @ np.asarray(w_a)
