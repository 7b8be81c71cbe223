import json
import math
from dataclasses import replace

import numpy as np
import pytest

from sepgconv import functional as Fn
from sepgconv import tensorio
from sepgconv.data import LabeledImageSet, synth_split
from sepgconv.groups import group, transform_image
from sepgconv.models import REFERENCE_PARAMS, ArchitectureConfig, build
from sepgconv.training import (TrainConfig, TrainingDivergedError, evaluate, load_checkpoint, rows_to_csv,
                               sweep_data_fraction, sweep_width, train)


@pytest.fixture(scope="module")
def tiny_data():
    return synth_split(64, 64, seed=5)


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("family, width", sorted(REFERENCE_PARAMS))
def test_param_counts_match_cost_model(family, width):
    net = build(ArchitectureConfig(family, width))
    assert net.num_parameters() == net.cost_report().total_params


@pytest.mark.parametrize("family, width", sorted(k for k in REFERENCE_PARAMS if k[0] != "cZ2CNN"))
def test_param_counts_near_reference(family, width):
    count = build(ArchitectureConfig(family, width)).num_parameters()
    assert abs(count - REFERENCE_PARAMS[family, width]) <= 0.05 * REFERENCE_PARAMS[family, width]


def test_layer_kinds_and_shapes():
    net = build(ArchitectureConfig("gcP4CNN", 10))
    layers, norms = net.describe()
    assert [s.kind for _, s in layers[:7]] == ["lifting-gconv"] + ["gc-sep"] * 6
    assert [s.H for _, s in layers[:7]] == [26, 24, 10, 8, 6, 4, 1]
    assert layers[-1][1].C_in == 10 and len(norms) == 7
    z = build(ArchitectureConfig("cZ2CNN", 8))
    assert [s.kind for _, s in z.describe()[0][1:7]] == ["depthwise-sep"] * 6


@pytest.mark.parametrize("kwargs", [
    dict(family="Z2CNN", width=4, group="p4"),
    dict(family="P4CNN", width=4, group="none"),
    dict(family="P4CNN", width=0),
    dict(family="ResNet", width=4),
    dict(family="P4CNN", width=4, head="avg"),
    dict(family="P4CNN", width=4, padding="same"),
])
def test_architecture_validation(kwargs):
    with pytest.raises(ValueError):
        ArchitectureConfig(**kwargs)


def test_family_aliases():
    assert ArchitectureConfig("gc-P4CNN", 3).family == "gcP4CNN"
    assert ArchitectureConfig("p4cnn", 3).group == "p4"


@pytest.mark.parametrize("family, group_name", [("P4CNN", "p4"), ("gP4CNN", "p4"), ("gcP4CNN", "p4m"),
                                                ("P4CNN", "p4m")])
def test_network_logits_invariant(family, group_name, rng):
    net = build(ArchitectureConfig(family, 3, group=group_name, seed=1))
    net.eval()
    x = rng.uniform(0, 1, (2, 1, 28, 28)).astype(np.float32)
    ref = net(x).data
    spec = group(group_name)
    for g in spec.elements():
        assert np.abs(net(transform_image(spec, g, x)).data - ref).max() <= 1e-4


def test_flatten_head_runs(rng):
    net = build(ArchitectureConfig("P4CNN", 2, head="flatten"))
    assert net(rng.uniform(0, 1, (3, 1, 28, 28)).astype(np.float32)).shape == (3, 10)
    assert net.num_parameters() == net.cost_report().total_params


def test_naive_and_efficient_network_paths_agree(rng):
    net = build(ArchitectureConfig("gP4CNN", 3, dtype="f64"))
    net.eval()
    x = rng.uniform(0, 1, (2, 1, 28, 28))
    np.testing.assert_allclose(net(x, path="naive").data, net(x).data, atol=1e-10)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _quick_cfg(**kw):
    base = dict(epochs=1, batch_size=16, lr=1e-2, milestones=())
    base.update(kw)
    return TrainConfig(**base)


def _batch_stat_loss(net, data):
    """Full-set loss with batch statistics, as the optimiser sees it (dropout off in the config)."""
    net.train()
    return float(Fn.softmax_cross_entropy(net(data.images), data.labels).data)


@pytest.mark.parametrize("family", ["P4CNN", "gP4CNN", "gcP4CNN", "Z2CNN"])
def test_one_epoch_reduces_loss(tiny_data, family):
    train_data, test_data = tiny_data
    net = build(ArchitectureConfig(family, 4, dropout=0.0))
    before = _batch_stat_loss(net, train_data)
    report = train(net, train_data, test_data, _quick_cfg(lr=3e-3))
    after = _batch_stat_loss(net, train_data)
    assert after < math.log(10) and after < before
    assert 0 <= report.final_test_error <= 100
    assert report.params == net.num_parameters()


def test_identical_seeds_identical_reports(tiny_data):
    train_data, test_data = tiny_data
    cfg = _quick_cfg(epochs=2, fraction=0.5)
    a = train(build(ArchitectureConfig("gcP4CNN", 3)), train_data, test_data, cfg)
    b = train(build(ArchitectureConfig("gcP4CNN", 3)), train_data, test_data, cfg)
    assert a == b
    c = train(build(ArchitectureConfig("gcP4CNN", 3)), train_data, test_data, replace(cfg, seed=1))
    assert c != a


def test_sgd_momentum_trains(tiny_data):
    train_data, test_data = tiny_data
    net = build(ArchitectureConfig("Z2CNN", 4))
    report = train(net, train_data, test_data, _quick_cfg(optimizer="sgd-momentum", lr=0.05, epochs=2))
    assert report.epochs[-1].train_loss < report.initial_loss


def test_divergence_aborts(tiny_data):
    train_data, test_data = tiny_data
    bad = LabeledImageSet(train_data.images.copy(), train_data.labels)
    bad.images[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergedError, match="epoch 0"):
        train(build(ArchitectureConfig("Z2CNN", 2)), bad, test_data, _quick_cfg(batch_size=64))


def test_checkpoint_round_trip(tiny_data, tmp_path):
    train_data, test_data = tiny_data
    net = build(ArchitectureConfig("gP4CNN", 3))
    report = train(net, train_data, test_data, _quick_cfg(epochs=2), checkpoint_dir=tmp_path / "ck")
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert manifest["epoch"] == report.best_epoch
    assert manifest["metrics"]["best_test_error"] == report.best_test_error
    assert set(manifest["tensors"]) >= {"convs.1.K", "convs.1.w", "norms.0.running_mean"}
    loaded, _ = load_checkpoint(tmp_path / "ck")
    err, _ = evaluate(loaded, test_data)
    assert err == pytest.approx(report.best_test_error)
    stored = tensorio.load(tmp_path / "ck" / manifest["tensors"]["convs.1.K"]["file"])
    assert np.array_equal(dict(loaded.named_parameters())["convs.1.K"].data, stored)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path)


@pytest.mark.parametrize("kwargs", [dict(epochs=0), dict(fraction=0.0), dict(fraction=1.5), dict(lr=-1.0),
                                    dict(optimizer="rmsprop"), dict(dtype="f16")])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_learning_rate_schedule():
    cfg = TrainConfig(lr=1.0, milestones=(2, 4), gamma=0.5)
    assert [cfg.lr_at(e) for e in range(6)] == [1.0, 1.0, 0.5, 0.5, 0.25, 0.25]


def test_dtype_mismatch_rejected(tiny_data):
    with pytest.raises(ValueError):
        train(build(ArchitectureConfig("Z2CNN", 2)), *tiny_data, TrainConfig(dtype="f64"))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def test_data_sweep_rows_and_full_fraction(tiny_data):
    train_data, test_data = tiny_data
    archs = [ArchitectureConfig("Z2CNN", 2), ArchitectureConfig("gcP4CNN", 2)]
    cfg = _quick_cfg()
    rows = sweep_data_fraction(archs, [0.5, 1.0], cfg, train_data, test_data, seeds=(0, 1))
    assert len(rows) == 2 * 2 * 2
    plain = train(build(ArchitectureConfig("Z2CNN", 2)), train_data, test_data, cfg)
    full = next(r for r in rows if r["family"] == "Z2CNN" and r["fraction"] == 1.0 and r["seed"] == 0)
    assert full["final_test_error"] == round(plain.final_test_error, 4)
    text = rows_to_csv(rows)
    assert text.splitlines()[0].startswith("family,group,width,fraction,seed,params")
    assert len(text.splitlines()) == 9


def test_width_sweep_records_params(tiny_data):
    rows = sweep_width("gP4CNN", [2, 3], _quick_cfg(), *tiny_data)
    assert [r["width"] for r in rows] == [2, 3]
    assert rows[0]["params"] == build(ArchitectureConfig("gP4CNN", 2)).num_parameters()
    assert rows[0]["params"] < rows[1]["params"]
