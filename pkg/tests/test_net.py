import numpy as np
import pytest

from conftest import random_cloud
from desenat.core import RngSpec, gen_synthetic_dataset
from desenat.net import (EmptyInputError, TrainConfig, TrainingDiverged, backward, ce_loss,
                         forward, forward_batch, init_model, load_model, predict, run_training,
                         save_model, target_score, train_standard)
from gradcheck import max_rel_error, numeric_grads


def test_forward_is_distribution(small_model, cloud8):
    p = forward(small_model, cloud8)
    assert p.shape == (3,)
    assert np.all(p > 0) and abs(p.sum() - 1) < 1e-12


def test_permutation_invariance(small_model, cloud8):
    perm = np.random.default_rng(0).permutation(8)
    assert np.allclose(forward(small_model, cloud8.points[perm]), forward(small_model, cloud8),
                       atol=1e-15)


def test_duplicate_point_invariance(small_model, cloud8):
    dup = np.vstack([cloud8.points, cloud8.points[:3]])
    assert np.allclose(forward(small_model, dup), forward(small_model, cloud8), atol=1e-15)


def test_target_score_empty_is_uniform(small_model):
    assert target_score(small_model, np.zeros((0, 3)), 0) == pytest.approx(1 / 3)


def test_target_score_bad_class(small_model, cloud8):
    with pytest.raises(IndexError):
        target_score(small_model, cloud8, 3)


def test_forward_empty_raises(small_model):
    with pytest.raises(EmptyInputError):
        forward(small_model, np.zeros((0, 3)))


def test_batch_matches_single(small_model):
    clouds = [random_cloud(6, s).points for s in range(4)]
    z, _ = forward_batch(small_model, np.stack(clouds))
    from desenat.net import softmax
    for i, c in enumerate(clouds):
        assert np.allclose(softmax(z[i]), forward(small_model, c), atol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_ce_gradient_matches_finite_differences(seed):
    model = init_model(3, (4, 5, 4), RngSpec(seed))
    pc = random_cloud(6, seed + 10)
    target = seed % 3
    err = max_rel_error(backward(model, pc, target),
                        numeric_grads(lambda m: ce_loss(m, pc, target), model))
    assert err < 1e-4


def test_checkpoint_round_trip_bytes(tmp_path, small_model):
    save_model(small_model, tmp_path / "a.ckpt")
    back = load_model(tmp_path / "a.ckpt")
    assert back.equals(small_model)
    save_model(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_model(tmp_path / "x.ckpt")


def test_training_learns_and_is_deterministic():
    ds = gen_synthetic_dataset(3, 10, 16, RngSpec(2))
    cfg = TrainConfig(epochs=30, batch_size=8, seed=RngSpec(4))
    rows = []
    a = train_standard(ds, cfg, rows)
    b = train_standard(ds, cfg)
    assert a.equals(b)
    assert len(rows) == 30 and rows[-1]["loss"] < rows[0]["loss"]
    assert (predict(a, ds.samples) == ds.labels).mean() > 0.6


def test_zero_epochs_returns_init():
    ds = gen_synthetic_dataset(2, 2, 8, RngSpec(2))
    cfg = TrainConfig(epochs=0, seed=RngSpec(4))
    assert train_standard(ds, cfg).equals(init_model(2, cfg.hidden, cfg.seed))


def test_divergence_aborts(small_model):
    def step(m, idx, epoch, bno):
        return float("nan"), {k: np.zeros_like(v) for k, v in m.params.items()}, {}

    with pytest.raises(TrainingDiverged):
        run_training(small_model, 4, TrainConfig(epochs=1), step)


@pytest.mark.parametrize("kwargs", [dict(epochs=-1), dict(batch_size=0), dict(learning_rate=0),
                                    dict(momentum=1.0)])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_zero_head_gives_uniform(small_model, cloud8):
    m = small_model.copy()
    m.params["hw2"][:] = 0.0
    m.params["hb2"][:] = 0.0
    assert np.allclose(forward(m, cloud8), 1 / 3, atol=1e-15)


def test_full_subset_score_matches_forward(small_model, cloud8):
    p = forward(small_model, cloud8)
    assert target_score(small_model, cloud8, int(p.argmax())) == p.max()


def test_small_subsets_score_in_open_interval(small_model, cloud8):
    for i in range(8):
        for j in range(i + 1, 8):
            for sub in (cloud8.points[[i]], cloud8.points[[i, j]]):
                assert 0 < target_score(small_model, sub, 1) < 1


def test_ce_gradient_vanishes_at_minimum(small_model, cloud8):
    m = small_model.copy()
    m.params["hw2"][:] = 0.0
    m.params["hb2"][:] = [0.0, 60.0, 0.0]
    g = backward(m, cloud8, 1)
    assert np.sqrt(sum(float((v ** 2).sum()) for v in g.values())) < 1e-8


def test_maxpool_gradient_routes_to_selected_points(small_model, cloud8):
    _, cache = forward_batch(small_model, cloud8.points[None])
    routed = set(cache.arg[0].tolist())
    from desenat.net import backward_batch
    _, dx = backward_batch(small_model, cache, np.ones((1, 3)), want_input=True)
    for i in range(8):
        assert (np.abs(dx[0, i]).sum() > 0) == (i in routed)


@pytest.mark.parametrize("classes,per_class,seed", [(2, 10, 1), (4, 50, 7)])
def test_separable_shapes_train_to_high_accuracy(classes, per_class, seed):
    ds = gen_synthetic_dataset(classes, per_class, 64, RngSpec(seed))
    model = train_standard(ds, TrainConfig(epochs=100, seed=RngSpec(seed)))
    assert (predict(model, ds.samples) == ds.labels).mean() >= 0.95
