"""Entity-temporal graph attention over two adjacent timesteps.

Each step sums four independently parameterized attention networks: the
static entity graph and the dynamic temporal graph, each applied to the
previous and the current timestep representations. The unroll feeds raw
per-timestep inputs (no recurrent state) and reads out the last step, or
the mean over steps when configured.
"""

from __future__ import annotations

import numpy as np
import torch

from .gat import gat_core, neighbor_tensor
from .graphs import BlockAdjacency
from .optim import DTYPE, ParamStore

TERMS = ("e_prev", "e_curr", "t_prev", "t_curr")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=DTYPE)


def etgat_core(
    nbrs_e: torch.Tensor,
    nbrs_t: torch.Tensor,
    h_prev: torch.Tensor,
    h_curr: torch.Tensor,
    weights: dict[str, torch.Tensor],
    terms: tuple[str, ...] = TERMS,
) -> torch.Tensor:
    parts = {
        "e_prev": lambda: gat_core(h_prev, nbrs_e, weights["e_prev"]),
        "e_curr": lambda: gat_core(h_curr, nbrs_e, weights["e_curr"]),
        "t_prev": lambda: gat_core(h_prev, nbrs_t, weights["t_prev"]),
        "t_curr": lambda: gat_core(h_curr, nbrs_t, weights["t_curr"]),
    }
    out = None
    for term in terms:
        val = parts[term]()
        out = val if out is None else out + val
    if out is None:
        raise ValueError("at least one attention term required")
    return out


def branch_weights(params: ParamStore, branch: str) -> dict[str, torch.Tensor]:
    return {term: params[f"etgat.{branch}.{term}"] for term in TERMS
            if f"etgat.{branch}.{term}" in params}


def etgat_forward(block: BlockAdjacency, h_prev, h_curr, params: ParamStore,
                  branch: str = "stable"):
    """Four-network sum at one timestep pair; entity rows must align with
    the block graphs."""
    hp, hc = _as_tensor(h_prev), _as_tensor(h_curr)
    if hp.shape != hc.shape:
        raise ValueError(f"h_prev shape {tuple(hp.shape)} != h_curr {tuple(hc.shape)}")
    if hp.shape[-2] != block.entity_graph.n_nodes:
        raise ValueError(
            f"entity count {hp.shape[-2]} != graph nodes {block.entity_graph.n_nodes}")
    out = etgat_core(
        neighbor_tensor(block.entity_graph), neighbor_tensor(block.temporal_graph),
        hp, hc, branch_weights(params, branch))
    if isinstance(h_prev, torch.Tensor):
        return out
    return out.detach().numpy()


def etgat_unroll_core(
    nbrs_e: torch.Tensor,
    nbrs_t: torch.Tensor,
    hseq: torch.Tensor,  # [T, N, d]
    weights: dict[str, torch.Tensor],
    terms: tuple[str, ...] = TERMS,
    readout: str = "last",
) -> torch.Tensor:
    if hseq.shape[0] < 2:
        raise ValueError("unroll needs at least 2 timesteps")
    parts = []
    if "e_prev" in terms:
        parts.append(gat_core(hseq[:-1], nbrs_e, weights["e_prev"]))
    if "e_curr" in terms:
        parts.append(gat_core(hseq[1:], nbrs_e, weights["e_curr"]))
    if "t_prev" in terms:
        parts.append(gat_core(hseq[:-1], nbrs_t, weights["t_prev"]))
    if "t_curr" in terms:
        parts.append(gat_core(hseq[1:], nbrs_t, weights["t_curr"]))
    stacked = parts[0]
    for p in parts[1:]:
        stacked = stacked + p
    if readout == "last":
        return stacked[-1]
    if readout == "mean":
        return stacked.mean(dim=0)
    raise ValueError(f"unknown readout {readout!r}")


def etgat_unroll(block: BlockAdjacency, sequence, params: ParamStore,
                 branch: str = "stable", readout: str = "last"):
    """Apply the two-timestep network along a sequence of per-timestep
    entity representations; returns the readout representation [N][d]."""
    hseq = torch.stack([_as_tensor(h) for h in sequence]) \
        if isinstance(sequence, (list, tuple)) else _as_tensor(sequence)
    out = etgat_unroll_core(
        neighbor_tensor(block.entity_graph), neighbor_tensor(block.temporal_graph),
        hseq, branch_weights(params, branch), readout=readout)
    if isinstance(sequence, torch.Tensor) or (
            isinstance(sequence, (list, tuple)) and isinstance(sequence[0], torch.Tensor)):
        return out
    return out.detach().numpy()
