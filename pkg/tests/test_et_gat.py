import numpy as np
import pytest
import torch

from graphad.et_gat import TERMS, etgat_core, etgat_forward, etgat_unroll
from graphad.gat import gat_core, neighbor_tensor
from graphad.graphs import BlockAdjacency, GraphTopology
from graphad.optim import ParamStore


def ring_graph(n, k=1, shift=1):
    edges = np.stack([(np.arange(n) + shift + s) % n for s in range(k)], axis=1)
    return GraphTopology(n_nodes=n, out_edges=edges, k=k)


def make_block(n, rng):
    return BlockAdjacency(entity_graph=ring_graph(n, k=2),
                          temporal_graph=ring_graph(n, k=2, shift=2))


def make_params(d, rng, shared=False):
    base = rng.normal(size=2 * d)
    arrays = {}
    for branch in ("stable",):
        for term in TERMS:
            arrays[f"etgat.{branch}.{term}"] = base if shared else rng.normal(size=2 * d)
    return ParamStore(arrays)


def test_four_term_decomposition_bit_exact(rng):
    """The output equals the sum of the four GAT applications, computed in
    the same order, with no tolerance."""
    n, d = 6, 4
    block = make_block(n, rng)
    params = make_params(d, rng)
    hp = torch.tensor(rng.normal(size=(n, d)))
    hc = torch.tensor(rng.normal(size=(n, d)))

    out = etgat_forward(block, hp, hc, params)
    ne = neighbor_tensor(block.entity_graph)
    nt = neighbor_tensor(block.temporal_graph)
    w = {t: params[f"etgat.stable.{t}"] for t in TERMS}
    manual = gat_core(hp, ne, w["e_prev"])
    manual = manual + gat_core(hc, ne, w["e_curr"])
    manual = manual + gat_core(hp, nt, w["t_prev"])
    manual = manual + gat_core(hc, nt, w["t_curr"])
    assert torch.equal(out, manual)


def test_shared_weights_collapse(rng):
    """With h_prev = h_curr and shared weights the sum is 2 (GAT_E + GAT_T)."""
    n, d = 5, 3
    block = make_block(n, rng)
    params = make_params(d, rng, shared=True)
    h = torch.tensor(rng.normal(size=(n, d)))
    out = etgat_forward(block, h, h, params)
    w = params["etgat.stable.e_prev"]
    two = 2 * (gat_core(h, neighbor_tensor(block.entity_graph), w)
               + gat_core(h, neighbor_tensor(block.temporal_graph), w))
    assert torch.allclose(out, two, atol=1e-12)


def test_term_subsets(rng):
    n, d = 5, 3
    block = make_block(n, rng)
    params = make_params(d, rng)
    hp = torch.tensor(rng.normal(size=(n, d)))
    hc = torch.tensor(rng.normal(size=(n, d)))
    ne = neighbor_tensor(block.entity_graph)
    nt = neighbor_tensor(block.temporal_graph)
    w = {t: params[f"etgat.stable.{t}"] for t in TERMS}

    only_e = etgat_core(ne, nt, hp, hc, w, terms=("e_prev", "e_curr"))
    assert torch.equal(only_e, gat_core(hp, ne, w["e_prev"]) + gat_core(hc, ne, w["e_curr"]))
    with pytest.raises(ValueError):
        etgat_core(ne, nt, hp, hc, w, terms=())


def test_shape_validation(rng):
    block = make_block(5, rng)
    params = make_params(3, rng)
    with pytest.raises(ValueError):
        etgat_forward(block, np.zeros((5, 3)), np.zeros((4, 3)), params)
    with pytest.raises(ValueError):
        etgat_forward(block, np.zeros((6, 3)), np.zeros((6, 3)), params)


def test_unroll_last_matches_stepwise_loop(rng):
    n, d, t = 6, 4, 30
    block = make_block(n, rng)
    params = make_params(d, rng)
    seq = torch.tensor(rng.normal(size=(t, n, d)))
    out = etgat_unroll(block, seq, params, readout="last")
    per_pair = etgat_forward(block, seq[-2], seq[-1], params)
    assert torch.allclose(out, per_pair, atol=1e-12)


def test_unroll_mean_matches_stepwise_loop(rng):
    n, d, t = 4, 3, 8
    block = make_block(n, rng)
    params = make_params(d, rng)
    seq = torch.tensor(rng.normal(size=(t, n, d)))
    out = etgat_unroll(block, seq, params, readout="mean")
    steps = [etgat_forward(block, seq[i], seq[i + 1], params) for i in range(t - 1)]
    assert torch.allclose(out, torch.stack(steps).mean(dim=0), atol=1e-12)


def test_unroll_accepts_list_of_numpy(rng):
    n, d = 4, 3
    block = make_block(n, rng)
    params = make_params(d, rng)
    seq = [rng.normal(size=(n, d)) for _ in range(5)]
    out = etgat_unroll(block, seq, params)
    assert isinstance(out, np.ndarray) and out.shape == (n, d)


def test_unroll_needs_two_steps(rng):
    block = make_block(4, rng)
    params = make_params(3, rng)
    with pytest.raises(ValueError):
        etgat_unroll(block, torch.zeros(1, 4, 3, dtype=torch.float64), params)


def test_unroll_output_bounded(rng):
    """Sum of four sigmoids stays in (0, 4)."""
    block = make_block(6, rng)
    params = make_params(4, rng)
    seq = torch.tensor(rng.normal(size=(10, 6, 4)) * 5)
    out = etgat_unroll(block, seq, params)
    assert (out > 0).all() and (out < 4).all()
