import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cloud
from desenat.adversarial import (AdvConfig, filter_indices, generate_adversarial, keep_count,
                                 sample_shear, shapley_filter, spatial_transform)
from desenat.core import PointCloud, RngSpec, gen_synthetic_dataset
from desenat.net import TrainConfig, target_score, train_standard
from desenat.shapley import Attribution, mc_shapley

IDENTITY = AdvConfig((1.0, 1.0), c1=0.0, c2=0.0)


def attr_of(values):
    return Attribution(np.asarray(values, dtype=np.float64), 0)


def test_filter_keeps_lowest_in_original_order():
    assert filter_indices(np.array([0.4, 0.1, 0.3, 0.2]), 0.5).tolist() == [1, 3]


def test_filter_tie_rule():
    assert filter_indices(np.zeros(4), 0.5).tolist() == [0, 1]


def test_filter_pseudocode_mode_keeps_top_descending():
    assert filter_indices(np.array([0.4, 0.1, 0.3, 0.2]), 0.5, "pseudocode").tolist() == [0, 2]


def test_filter_r_one_is_input():
    pc = random_cloud(5, 0)
    assert shapley_filter(pc, attr_of(np.arange(5.0)), 1.0) is pc


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 40), r=st.floats(0.05, 1.0), seed=st.integers(0, 999))
def test_keep_set_is_m_smallest(n, r, seed):
    m = keep_count(n, r)
    if m < 1:
        return
    vals = np.random.default_rng(seed).standard_normal(n)
    idx = filter_indices(vals, r)
    assert len(idx) == m == int(np.floor(r * n))
    assert sorted(vals[idx].tolist()) == sorted(vals)[:m]
    assert np.all(np.diff(idx) > 0)


def test_filter_size_mismatch():
    with pytest.raises(ValueError):
        shapley_filter(random_cloud(4, 0), attr_of([0.0, 1.0]), 0.5)


def test_filter_keeps_nothing():
    with pytest.raises(ValueError):
        filter_indices(np.zeros(3), 0.2)


@pytest.mark.parametrize("kwargs", [dict(c1=0.04), dict(c2=-0.1), dict(r_range=(0.0, 1.0)),
                                    dict(r_range=(0.8, 0.5)), dict(filter_mode="other")])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        AdvConfig(**kwargs)


def test_shear_magnitudes_default():
    cfg = AdvConfig()
    for j in range(50):
        k = sample_shear(cfg, RngSpec(j))
        off = np.array([k[0, 2], k[1, 2], k[2, 0], k[2, 1]])
        assert np.all((np.abs(off) >= 0.2 - 1e-12) & (np.abs(off) <= 0.3 + 1e-12))
        assert k[0, 1] == k[1, 0] == 0 and np.all(np.diag(k) == 1)


def test_shear_small_c1():
    k = sample_shear(AdvConfig(c1=0.05), RngSpec(3))
    assert np.all(np.abs(k - np.eye(3)) <= 0.1)


def test_shear_deterministic_and_identity():
    assert np.array_equal(sample_shear(AdvConfig(), RngSpec(1)), sample_shear(AdvConfig(), RngSpec(1)))
    assert np.array_equal(sample_shear(IDENTITY, RngSpec(1)), np.eye(3))


def test_row_vector_convention():
    k = np.array([[1, 0, 0.2], [0, 1, 0.2], [0.2, 0.2, 1]])
    out = spatial_transform(PointCloud(np.ones((1, 3))), k, 0.0, RngSpec(0))
    assert np.allclose(out.points, [[1.2, 1.2, 1.4]])


def test_noise_bound():
    pc = random_cloud(200, 1)
    k = sample_shear(AdvConfig(), RngSpec(2))
    out = spatial_transform(pc, k, 0.05, RngSpec(3))
    assert np.abs(out.points - pc.points @ k).max() <= 0.05


def test_identity_pipeline_bitwise():
    pc = random_cloud(64, 5, 1)
    out = generate_adversarial(pc, attr_of(np.random.default_rng(0).random(64)), IDENTITY, 1.0)
    assert np.array_equal(out.points, pc.points) and out.label == 1


def test_output_count_and_input_untouched():
    pc = random_cloud(64, 5, 1)
    before = pc.points.copy()
    out = generate_adversarial(pc, attr_of(np.arange(64.0)), AdvConfig(), 0.5, RngSpec(8))
    assert len(out) == 32
    assert np.array_equal(pc.points, before)


def test_generate_deterministic():
    pc = random_cloud(20, 5)
    a = generate_adversarial(pc, attr_of(np.arange(20.0)), AdvConfig(), 0.7, RngSpec(1))
    b = generate_adversarial(pc, attr_of(np.arange(20.0)), AdvConfig(), 0.7, RngSpec(1))
    assert np.array_equal(a.points, b.points)


def test_adversarial_lowers_target_score_mostly():
    ds = gen_synthetic_dataset(4, 25, 64, RngSpec(11))
    model = train_standard(ds, TrainConfig(epochs=60, seed=RngSpec(11)))
    suite = gen_synthetic_dataset(4, 25, 64, RngSpec(11, 1))
    cfg = AdvConfig(seed=RngSpec(12))
    lower = 0
    for i, pc in enumerate(suite.samples):
        attr = mc_shapley(model, pc, pc.label, 64, RngSpec(13, i))
        adv = generate_adversarial(pc, attr, cfg, 0.5, cfg.seed.derive(i))
        lower += target_score(model, adv, pc.label) <= target_score(model, pc, pc.label)
    assert lower >= 70
