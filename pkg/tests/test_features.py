import logging

import numpy as np
import pytest

from cleanplate.features import (DESC_DIM, dense_descriptor_field,
                                 descriptor_at, extract_patch,
                                 normalize_fields, patch_descriptor)
from cleanplate.image_set import rgb_to_lab


def _noise_lab(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return rgb_to_lab(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


def test_constant_image_has_zero_gradient_descriptors():
    lab = rgb_to_lab(np.full((16, 20, 3), 131, dtype=np.uint8))
    field = dense_descriptor_field(lab, 7)
    assert np.all(field.fg == 0.0)
    np.testing.assert_allclose(field.fc, lab, atol=1e-4)
    assert field.patch_size == 7
    assert field.gradient_scale == 1.0


def test_descriptor_norm_is_unit_or_zero():
    field = dense_descriptor_field(_noise_lab(20, 24, seed=1), 7)
    norms = np.linalg.norm(field.fg.astype(np.float64), axis=-1)
    nonzero = norms > 0
    assert nonzero.any()
    np.testing.assert_allclose(norms[nonzero], 1.0, atol=1e-4)
    assert np.all(field.fg >= 0.0)


def test_descriptor_at_matches_dense_field():
    lab = _noise_lab(18, 22, seed=2)
    field = dense_descriptor_field(lab, 7)
    for (x, y) in [(0, 0), (21, 17), (10, 8), (0, 9), (13, 0)]:
        fc, fg = descriptor_at(lab, x, y, 7)
        np.testing.assert_array_equal(fc, field.fc[y, x])
        np.testing.assert_array_equal(fg, field.fg[y, x])


def test_border_descriptors_equal_edge_replicated_interior():
    # A window overhanging the border must see the same gradients as an
    # interior window over content that really is edge-replicated,
    # otherwise border pixels are unmatchable across views.
    lab = _noise_lab(20, 26, seed=3)
    k = 5
    padded = np.pad(lab, ((k, k), (k, k), (0, 0)), mode="edge")
    fa = dense_descriptor_field(lab, 7)
    fb = dense_descriptor_field(padded, 7)
    np.testing.assert_array_equal(fa.fc, fb.fc[k:-k, k:-k])
    np.testing.assert_array_equal(fa.fg, fb.fg[k:-k, k:-k])


def test_step_edge_votes_into_single_orientation():
    # Rising left-to-right step: gradients point along +x, orientation
    # bin 0; every nonzero component sits at an index = 0 mod 8.
    img = np.zeros((15, 15, 3), dtype=np.uint8)
    img[:, 8:] = 200
    field = dense_descriptor_field(rgb_to_lab(img), 7)
    fg = field.fg[7, 7]
    assert fg.sum() > 0
    mask = np.arange(DESC_DIM) % 8 == 0
    assert np.all(fg[~mask] == 0.0)
    assert np.all(fg[mask] >= 0.0)

    # Top-to-bottom rising step: +y gradient, quarter turn, bin 2.
    img2 = np.zeros((15, 15, 3), dtype=np.uint8)
    img2[8:, :] = 200
    fg2 = dense_descriptor_field(rgb_to_lab(img2), 7).fg[7, 7]
    mask2 = np.arange(DESC_DIM) % 8 == 2
    assert fg2.sum() > 0
    assert np.all(fg2[~mask2] == 0.0)


def test_normalize_fields_scales_global_max_to_one():
    fields = [dense_descriptor_field(_noise_lab(16, 18, seed=s), 7)
              for s in (4, 5)]
    normalize_fields(fields)
    gmax = max(float(f.fg.max()) for f in fields)
    assert gmax == pytest.approx(1.0, abs=1e-6)
    assert all(f.gradient_scale != 1.0 for f in fields)


def test_normalize_fields_is_idempotent():
    fields = [dense_descriptor_field(_noise_lab(16, 18, seed=6), 7)]
    normalize_fields(fields)
    snap = fields[0].fg.copy()
    scale = fields[0].gradient_scale
    normalize_fields(fields)
    np.testing.assert_array_equal(fields[0].fg, snap)
    assert fields[0].gradient_scale == pytest.approx(scale, rel=1e-6)


def test_normalize_fields_warns_on_zero_energy(caplog):
    lab = rgb_to_lab(np.full((12, 12, 3), 77, dtype=np.uint8))
    fields = [dense_descriptor_field(lab, 7)]
    with caplog.at_level(logging.WARNING):
        normalize_fields(fields)
    assert any("no gradient energy" in r.message for r in caplog.records)
    assert np.all(fields[0].fg == 0.0)
    assert fields[0].gradient_scale == 1.0


def test_gradient_scale_reproduces_normalized_descriptors():
    lab = _noise_lab(16, 20, seed=7)
    field = dense_descriptor_field(lab, 7)
    normalize_fields([field])
    for (x, y) in [(3, 4), (0, 0), (19, 15)]:
        fc, fg = descriptor_at(lab, x, y, 7, field.gradient_scale)
        np.testing.assert_allclose(fg, field.fg[y, x], rtol=0, atol=1e-7)
        np.testing.assert_array_equal(fc, field.fc[y, x])


def test_patch_descriptor_constant_patch():
    lab = rgb_to_lab(np.full((7, 7, 3), 99, dtype=np.uint8))
    pd = patch_descriptor(lab)
    np.testing.assert_allclose(pd.g_c, lab[0, 0], atol=1e-4)
    assert np.all(pd.g_h == 0.0)


def test_patch_descriptor_alignment_puts_dominant_bin_first():
    lab = _noise_lab(9, 9, seed=8)
    pd = patch_descriptor(lab)
    assert pd.g_h.shape == (16,)
    assert pd.g_h[0] == pytest.approx(float(pd.g_h.max()), rel=1e-6)
    assert np.linalg.norm(pd.g_h) == pytest.approx(1.0, abs=1e-5)


def test_patch_descriptor_alignment_is_rotation_invariant():
    # Rotating the gradient field by a whole bin must not change the
    # aligned histogram. A quarter turn of the image rotates every
    # gradient by 90 degrees = 4 bins of 16.
    lab = _noise_lab(9, 9, seed=9)
    rotated = np.ascontiguousarray(np.rot90(lab))
    a = patch_descriptor(lab).g_h
    b = patch_descriptor(rotated).g_h
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_extract_patch_interior_and_corner():
    rng = np.random.default_rng(10)
    img = rng.integers(0, 256, (12, 14, 3), dtype=np.uint8)
    inner = extract_patch(img, 6, 5, 5)
    np.testing.assert_array_equal(inner, img[3:8, 4:9])
    corner = extract_patch(img, 0, 0, 5)
    assert corner.shape == (5, 5, 3)
    # Out-of-range rows/columns replicate the border.
    np.testing.assert_array_equal(corner[0], corner[1])
    np.testing.assert_array_equal(corner[:, 0], corner[:, 1])
    np.testing.assert_array_equal(corner[2:, 2:], img[0:3, 0:3])
