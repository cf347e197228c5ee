import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cleanplate.config import Config
from cleanplate.correspondence import (estimate_dense_field,
                                       harvest_matches, s_e,
                                       similarity_map)
from cleanplate.epipolar import EpipolarKernel
from cleanplate.features import dense_descriptor_field, normalize_fields
from cleanplate.image_set import rgb_to_lab

S_E_EXAMPLE = 0.5812730178734145


def _noise(h, w, seed):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (h, w, 3), dtype=np.uint8)


def _field(img, p=7):
    return dense_descriptor_field(rgb_to_lab(img), p)


def test_s_e_identity():
    f = np.array([50.0, 3.0, -2.0])
    assert s_e(f, f, 4.8) == 1.0


def test_s_e_frozen_example():
    # (50,0,0) vs (50,3,4) under sigma_c = 4.8: exp(-25 / (2 * 4.8^2)).
    got = s_e(np.array([50.0, 0.0, 0.0]), np.array([50.0, 3.0, 4.0]), 4.8)
    assert got == pytest.approx(S_E_EXAMPLE, abs=1e-15)
    assert got == pytest.approx(math.exp(-25.0 / 46.08), abs=1e-15)


def test_s_e_closed_form_e_inverse():
    for sigma in (0.25, 4.8, 0.17):
        f1 = np.zeros(4)
        f2 = np.zeros(4)
        f2[0] = sigma * math.sqrt(2.0)
        assert s_e(f1, f2, sigma) == pytest.approx(math.exp(-1.0),
                                                   abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
       st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_s_e_bounds_and_symmetry(a, b):
    n = min(len(a), len(b))
    f1 = np.array(a[:n])
    f2 = np.array(b[:n])
    v = s_e(f1, f2, 4.8)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(s_e(f2, f1, 4.8), abs=1e-15)


@pytest.fixture(scope="module")
def identity_pair():
    img = _noise(30, 40, seed=11)
    field = _field(img)
    normalize_fields([field])
    return field


def test_identity_field_recovers_itself(identity_pair):
    field = identity_pair
    corr = estimate_dense_field(field, field, seed=5, source_index=3)
    h, w = field.height, field.width
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    exact = ((corr.target[..., 0] == xs) & (corr.target[..., 1] == ys))
    assert exact.mean() > 0.8
    assert corr.source_index == 3


def test_cost_history_monotone(identity_pair):
    field = identity_pair
    cfg = Config(pm_iters=4)
    corr = estimate_dense_field(field, field, config=cfg, seed=1)
    assert len(corr.cost_history) == cfg.pm_iters + 1
    for a, b in zip(corr.cost_history, corr.cost_history[1:]):
        assert b <= a + 1e-12


def test_field_estimation_is_deterministic(identity_pair):
    field = identity_pair
    a = estimate_dense_field(field, field, seed=9)
    b = estimate_dense_field(field, field, seed=9)
    np.testing.assert_array_equal(a.target, b.target)
    assert a.cost_history == b.cost_history


def test_translation_recovered_in_interior():
    canvas = _noise(38, 52, seed=12)
    dx, dy = 5, 4
    ref = canvas[dy:dy + 26, dx:dx + 40]
    fields = [_field(ref), _field(canvas)]
    normalize_fields(fields)
    corr = estimate_dense_field(fields[0], fields[1], seed=2)
    m = 5  # border descriptors see clamped content; judge the interior
    xs, ys = np.meshgrid(np.arange(40), np.arange(26))
    exact = ((corr.target[..., 0] == xs + dx)
             & (corr.target[..., 1] == ys + dy))
    assert exact[m:-m, m:-m].mean() > 0.75


def test_targets_stay_inside_source(identity_pair):
    field = identity_pair
    corr = estimate_dense_field(field, field, seed=3)
    assert corr.target[..., 0].min() >= 0
    assert corr.target[..., 1].min() >= 0
    assert corr.target[..., 0].max() < field.width
    assert corr.target[..., 1].max() < field.height


def _identity_corr(field):
    h, w = field.height, field.width
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    target = np.stack([xs, ys], axis=-1).astype(np.int32)
    from cleanplate.correspondence import CorrespondenceField
    return CorrespondenceField(target=target, source_index=0)


def test_similarity_map_perfect_match_is_one(identity_pair):
    field = identity_pair
    sim = similarity_map(field, field, _identity_corr(field))
    np.testing.assert_allclose(sim.value, 1.0, atol=1e-12)


def test_similarity_map_with_zeroed_geometry_is_appearance_sum(
        identity_pair):
    # A kernel whose gradient vanishes everywhere yields s_f = 0, so a
    # perfect appearance match scores lambda1 + lambda2 = 0.55.
    field = identity_pair
    dead = EpipolarKernel(f=np.array([[0.0, 0.0, 0.0],
                                      [0.0, 0.0, 0.0],
                                      [0.0, 0.0, 1.0]]))
    sim = similarity_map(field, field, _identity_corr(field), epipolar=dead)
    np.testing.assert_allclose(sim.value, 0.55, atol=1e-12)


def test_similarity_map_within_unit_interval(identity_pair):
    field = identity_pair
    corr = estimate_dense_field(field, field, seed=8)
    sim = similarity_map(field, field, corr)
    assert sim.value.min() >= 0.0
    assert sim.value.max() <= 1.0 + 1e-12


def test_harvest_matches_structure(identity_pair):
    field = identity_pair
    corr = estimate_dense_field(field, field, seed=4)
    rows = harvest_matches(field, field, corr, budget=2000, cell=8)
    h, w = field.height, field.width
    blocks = math.ceil(h / 8) * math.ceil(w / 8)
    assert rows.shape == (blocks, 4)
    # One winner per cell, and each row restates the field's target.
    cells = {(int(x) // 8, int(y) // 8) for x, y, _, _ in rows}
    assert len(cells) == blocks
    for x, y, u, v in rows[:20]:
        assert corr.target[int(y), int(x), 0] == int(u)
        assert corr.target[int(y), int(x), 1] == int(v)


def test_harvest_budget_caps_output(identity_pair):
    field = identity_pair
    corr = estimate_dense_field(field, field, seed=4)
    rows = harvest_matches(field, field, corr, budget=9, cell=8)
    assert rows.shape == (9, 4)
