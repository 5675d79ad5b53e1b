"""Directed top-k cosine-similarity graphs over attributes, entities and time.

Every graph gives each node exactly k out-neighbors (k defaults to 5% of
the node count, at least 1). Ties are broken toward the lower index so
construction is deterministic. Self-loops are excluded; the attention
layer adds the self-message as a residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import EntityStaticProfile, WindowSample


@dataclass(frozen=True)
class GraphTopology:
    n_nodes: int
    out_edges: np.ndarray  # [n_nodes][k] neighbor indices
    k: int

    def __post_init__(self):
        e = self.out_edges
        if e.shape != (self.n_nodes, self.k):
            raise ValueError(f"out_edges shape {e.shape} != ({self.n_nodes}, {self.k})")
        if (e < 0).any() or (e >= self.n_nodes).any():
            raise ValueError("neighbor index out of range")
        if (e == np.arange(self.n_nodes)[:, None]).any():
            raise ValueError("self-loop in out_edges")


@dataclass(frozen=True)
class BlockAdjacency:
    entity_graph: GraphTopology
    temporal_graph: GraphTopology

    def __post_init__(self):
        if self.entity_graph.n_nodes != self.temporal_graph.n_nodes:
            raise ValueError("entity and temporal graphs must cover the same entities")


def default_k(n_nodes: int) -> int:
    return max(1, math.ceil(0.05 * n_nodes))


def time_series_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0 if either vector is all-zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def _cosine_matrix(series: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(series, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = series / safe[:, None]
    unit[norms == 0.0] = 0.0
    return unit @ unit.T


def build_topk_graph(node_series: np.ndarray, k: int | None = None) -> GraphTopology:
    """Connect each node to its k most cosine-similar other nodes.

    node_series is [n_nodes][length]. Ties break toward the lower index.
    """
    series = np.asarray(node_series, dtype=np.float64)
    n = series.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    if k is None:
        k = default_k(n)
    if not (1 <= k <= n - 1):
        raise ValueError(f"k={k} out of range for {n} nodes")
    sim = _cosine_matrix(series)
    np.fill_diagonal(sim, -np.inf)
    # stable argsort on -sim keeps lower indices first among ties
    order = np.argsort(-sim, axis=1, kind="stable")
    return GraphTopology(n_nodes=n, out_edges=order[:, :k].copy(), k=k)


def build_attribute_graph(window: WindowSample, k: int | None = None) -> GraphTopology:
    """Attribute graph for one window: nodes are attributes, series are
    each attribute's 30-day history."""
    return build_topk_graph(window.input.T, k=k)


def encode_profiles(profiles: list[EntityStaticProfile]) -> np.ndarray:
    """Static profile -> real vector: one-hot categoricals plus z-scored
    numeric fields."""
    if len(profiles) < 2:
        raise ValueError("need at least 2 profiles")
    n_pt = max(p.product_type for p in profiles) + 1
    n_loc = max(p.location for p in profiles) + 1
    numeric = np.array(
        [[float(p.open_time), *p.extra] for p in profiles], dtype=np.float64)
    mean = numeric.mean(axis=0)
    std = np.maximum(numeric.std(axis=0), 1e-8)
    numeric = (numeric - mean) / std
    rows = []
    for i, p in enumerate(profiles):
        pt = np.zeros(n_pt)
        pt[p.product_type] = 1.0
        loc = np.zeros(n_loc)
        loc[p.location] = 1.0
        rows.append(np.concatenate([pt, loc, numeric[i]]))
    return np.stack(rows)


def build_entity_graph(profiles: list[EntityStaticProfile], k: int | None = None) -> GraphTopology:
    return build_topk_graph(encode_profiles(profiles), k=k)


def build_temporal_graph(batch_windows: list[WindowSample], k: int | None = None) -> GraphTopology:
    """Temporal graph over entities from their current windows, flattened
    to 30*D vectors. Recomputed per batch."""
    if len({w.entity_index for w in batch_windows}) != len(batch_windows):
        raise ValueError("expected exactly one current window per entity")
    series = np.stack([w.input.reshape(-1) for w in batch_windows]).astype(np.float64)
    return build_topk_graph(series, k=k)
