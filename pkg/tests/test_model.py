import numpy as np
import pytest
import torch

from graphad.data import sliding_windows
from graphad.model import (
    BatchGraphs,
    ModelConfig,
    detect_report,
    forward,
    forward_core,
    init_params,
    load_model,
    loss,
    loss_core,
    prepare,
    save_model,
    train,
    train_thresholds,
    write_log_csv,
)
from graphad.graphs import BlockAdjacency
from graphad.kdecom import decompose
from graphad.optim import grad_check

from conftest import make_dataset


def small_experiment(n=4, t=45, d=6, seed=0):
    data, labels, profiles = make_dataset(n=n, t=t, d=d, seed=seed)
    return prepare(data, labels, profiles)


def small_config(**kw):
    base = dict(d_a=4, epochs=2, lr=1e-3, aux_steps=2, club_hidden=4, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def batch_at(exp, offset):
    x, y, lab, graphs = exp.batch(offset)
    return x, y, lab, graphs


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(variant="bogus")
    with pytest.raises(ValueError):
        ModelConfig(readout="first")
    with pytest.raises(ValueError):
        ModelConfig(lambda_mi=-1)


def test_init_params_variant_arrays():
    full = init_params(6, small_config())
    assert "decom.stable.w1" in full and "club.mean.w1" in full
    assert "agat.stable.w_e" in full
    no_kd = init_params(6, small_config(variant="no-kdecom"))
    assert "decom.stable.w1" not in no_kd and "club.mean.w1" not in no_kd
    no_ag = init_params(6, small_config(variant="no-agat"))
    assert "agat.stable.w_e" not in no_ag and "agat.stable.w_a" in no_ag
    no_eg = init_params(6, small_config(variant="no-entitygat"))
    assert "etgat.stable.e_prev" not in no_eg and "etgat.stable.t_prev" in no_eg


def test_prepare_split_sizes():
    exp = small_experiment(t=45)  # 15 offsets -> 9 / 3 / 3
    assert exp.n_offsets == 15
    assert list(exp.offsets("train")) == list(range(9))
    assert list(exp.offsets("val")) == [9, 10, 11]
    assert list(exp.offsets("test")) == [12, 13, 14]
    with pytest.raises(ValueError):
        exp.offsets("holdout")


def test_forward_shapes_and_determinism():
    exp = small_experiment()
    config = small_config()
    params = init_params(exp.norm.n_attributes, config)
    x, y, lab, graphs = batch_at(exp, 0)
    from graphad.model import _graph_tensors

    attr, ne, nt = _graph_tensors(graphs)
    y1, xs, xv = forward_core(x, attr, ne, nt, params, config)
    y2, _, _ = forward_core(x, attr, ne, nt, params, config)
    assert y1.shape == (4,) and xs.shape == x.shape
    assert torch.equal(y1, y2)


def test_forward_windows_api_matches_core():
    exp = small_experiment()
    config = small_config()
    params = init_params(exp.norm.n_attributes, config)
    x, y, lab, graphs = batch_at(exp, 2)
    windows = [w for w in sliding_windows(exp.norm, exp.labels) if w.start == 2]
    preds = forward(windows, graphs, params, config)
    from graphad.model import _graph_tensors

    attr, ne, nt = _graph_tensors(graphs)
    with torch.no_grad():
        y_hat, _, _ = forward_core(x, attr, ne, nt, params, config)
    assert np.allclose([p.y_hat for p in preds], y_hat.numpy(), atol=1e-12)


def test_forward_validates_batch():
    exp = small_experiment()
    config = small_config()
    params = init_params(exp.norm.n_attributes, config)
    _, _, _, graphs = batch_at(exp, 0)
    windows = [w for w in sliding_windows(exp.norm, exp.labels) if w.start == 0]
    with pytest.raises(ValueError):
        forward(windows + windows[:1], graphs, params, config)
    with pytest.raises(ValueError):
        forward(windows, BatchGraphs(attr=graphs.attr[:-1], block=graphs.block), params, config)


def test_loss_breakdown_invariant():
    exp = small_experiment()
    config = small_config()
    params = init_params(exp.norm.n_attributes, config)
    x, y, lab, graphs = batch_at(exp, 1)
    from graphad.model import _graph_tensors

    attr, ne, nt = _graph_tensors(graphs)
    y_hat, xs, xv = forward_core(x, attr, ne, nt, params, config)
    total, bd = loss_core(x, torch.as_tensor(y), y_hat, xs, xv, params, config)
    assert abs(bd.total - (bd.mse + config.lambda_mi * bd.mi_estimate
                           + config.mu_recon * bd.recon)) < 1e-9
    assert bd.mse >= 0 and bd.recon >= 0
    assert float(total.detach()) == pytest.approx(bd.total, abs=1e-12)


def test_lambda_changes_loss_but_not_forward():
    exp = small_experiment()
    c1 = small_config(lambda_mi=0.5)
    c2 = small_config(lambda_mi=1.0)
    params = init_params(exp.norm.n_attributes, c1)
    x, y, lab, graphs = batch_at(exp, 1)
    from graphad.model import _graph_tensors

    attr, ne, nt = _graph_tensors(graphs)
    y1, xs1, xv1 = forward_core(x, attr, ne, nt, params, c1)
    y2, xs2, xv2 = forward_core(x, attr, ne, nt, params, c2)
    assert torch.equal(y1, y2) and torch.equal(xs1, xs2) and torch.equal(xv1, xv2)
    _, bd1 = loss_core(x, torch.as_tensor(y), y1, xs1, xv1, params, c1)
    _, bd2 = loss_core(x, torch.as_tensor(y), y2, xs2, xv2, params, c2)
    assert bd1.mse == pytest.approx(bd2.mse) and bd1.mi_estimate == pytest.approx(bd2.mi_estimate)
    assert bd1.total != bd2.total


def test_loss_mask_drops_anomalous_targets():
    exp = small_experiment()
    config = small_config()
    params = init_params(exp.norm.n_attributes, config)
    x, y, lab, graphs = batch_at(exp, 0)
    from graphad.model import _graph_tensors

    attr, ne, nt = _graph_tensors(graphs)
    y_hat, xs, xv = forward_core(x, attr, ne, nt, params, config)
    mask = torch.tensor([True, True, False, True])
    _, bd_masked = loss_core(x, torch.as_tensor(y), y_hat, xs, xv, params, config, mask=mask)
    _, bd_sub = loss_core(x[mask], torch.as_tensor(y)[mask], y_hat[mask],
                          xs[mask], xv[mask], params, config)
    assert bd_masked.total == pytest.approx(bd_sub.total, abs=1e-12)
    with pytest.raises(ValueError):
        loss_core(x, torch.as_tensor(y), y_hat, xs, xv, params, config,
                  mask=torch.zeros(4, dtype=torch.bool))


def test_public_loss_matches_core():
    exp = small_experiment()
    config = small_config()
    params = init_params(exp.norm.n_attributes, config)
    x, y, lab, graphs = batch_at(exp, 1)
    windows = [w for w in sliding_windows(exp.norm, exp.labels) if w.start == 1]
    preds = forward(windows, graphs, params, config)
    decomposed = [decompose(w.input, params) for w in windows]
    bd = loss(windows, preds, decomposed, params, config)
    from graphad.model import _graph_tensors

    attr, ne, nt = _graph_tensors(graphs)
    y_hat, xs, xv = forward_core(x, attr, ne, nt, params, config)
    _, bd_core = loss_core(x, torch.as_tensor(y), y_hat, xs, xv, params, config)
    assert bd.total == pytest.approx(bd_core.total, rel=1e-6)


def test_full_loss_gradients(rng):
    """Autograd against central differences on a tiny instance."""
    exp = small_experiment(n=3, t=40, d=5)
    config = small_config(d_a=3)
    params = init_params(exp.norm.n_attributes, config)
    x, y, lab, graphs = batch_at(exp, 0)
    from graphad.model import _graph_tensors

    attr, ne, nt = _graph_tensors(graphs)
    yt = torch.as_tensor(y)

    def loss_fn():
        y_hat, xs, xv = forward_core(x, attr, ne, nt, params, config)
        total, _ = loss_core(x, yt, y_hat, xs, xv, params, config)
        return total

    assert grad_check(loss_fn, params, probes=60, seed=7) < 1e-4


def test_zero_lr_training_is_a_noop():
    exp = small_experiment()
    config = small_config(lr=0.0, aux_lr=0.0, epochs=1, patience=1)
    init = init_params(exp.norm.n_attributes, config,
                       np.random.default_rng(config.seed))
    best, log = train(exp, config)
    for name in init.names():
        assert np.array_equal(init.numpy()[name], best.numpy()[name])
    assert len(log) == 1


def test_training_reduces_loss_and_logs():
    exp = small_experiment()
    config = small_config(epochs=6, lr=2e-3)
    params, log = train(exp, config)
    assert len(log) >= 2
    assert log[-1]["total"] < log[0]["total"]
    for row in log:
        assert set(row) == {"epoch", "total", "mse", "mi", "recon", "val_f1"}


def test_training_deterministic_for_seed():
    exp = small_experiment()
    config = small_config(epochs=2)
    p1, log1 = train(exp, config)
    p2, log2 = train(exp, config)
    for name in p1.names():
        assert np.array_equal(p1.numpy()[name], p2.numpy()[name])
    assert log1 == log2


def test_entity_subset_batching_runs():
    exp = small_experiment(n=6)
    config = small_config(epochs=2, batch_size=3)
    params, log = train(exp, config)
    assert len(log) == 2


def test_thresholds_exclude_anomalous_days():
    exp = small_experiment()
    config = small_config()
    params = init_params(exp.norm.n_attributes, config)
    thresholds = train_thresholds(exp, params, config)
    assert set(thresholds) == set(range(4))
    assert all(v > 0 for v in thresholds.values())


def test_detect_report_structure():
    exp = small_experiment(t=60, seed=3)
    config = small_config(epochs=2)
    params, _ = train(exp, config)
    report = detect_report(exp, params, config, split="test")
    n_rows = len(list(exp.offsets("test"))) * exp.norm.n_entities
    assert len(report.entity_ids) == n_rows
    assert report.errors.shape == (n_rows,)
    assert ((report.scores > 1.0) == (report.decisions == 1)).all()
    m = report.metrics()
    assert 0 <= m["precision"] <= 1 and 0 <= m["recall"] <= 1


def test_checkpoint_round_trip(tmp_path):
    config = small_config()
    params = init_params(6, config)
    save_model(tmp_path / "ckpt", params, config)
    loaded, cfg2 = load_model(tmp_path / "ckpt")
    assert cfg2 == config
    for name in params.names():
        assert np.array_equal(params.numpy()[name], loaded.numpy()[name])


def test_no_kdecom_checkpoint_has_no_decomposition_arrays(tmp_path):
    config = small_config(variant="no-kdecom")
    params = init_params(6, config)
    save_model(tmp_path / "ckpt", params, config)
    import json

    manifest = json.loads((tmp_path / "ckpt" / "manifest.json").read_text())
    names = [a["name"] for a in manifest["arrays"]]
    assert not any(n.startswith(("decom.", "club.")) for n in names)


def test_write_log_csv(tmp_path):
    log = [{"epoch": 0, "total": 1.0, "mse": 0.5, "mi": 0.25, "recon": 0.25,
            "val_f1": 0.1}]
    write_log_csv(tmp_path / "log.csv", log)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,mse,mi,recon,total,val_f1"
    assert lines[1].startswith("0,5.000000000e-01")
