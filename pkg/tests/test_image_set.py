import os

import numpy as np
import pytest
from PIL import Image

from cleanplate.image_set import (ImageSet, ImageSetError, lab_to_rgb,
                                  load_image_set, rgb_to_lab, write_outputs)

GRAY119_L = 50.034438792538225


def _save(path, arr):
    Image.fromarray(arr).save(path)


def _views_dir(tmp_path, n=3, h=40, w=48, seed=0):
    rng = np.random.default_rng(seed)
    d = tmp_path / "views"
    d.mkdir()
    for i in range(n):
        _save(str(d / f"view_{i:02d}.png"),
              rng.integers(0, 256, (h, w, 3), dtype=np.uint8))
    return str(d)


def test_gray119_lightness_matches_frozen_value():
    lab = rgb_to_lab(np.full((1, 1, 3), 119, dtype=np.uint8))
    # Fields are float32, so the frozen float64 value is matched to the
    # storage precision.
    assert lab[0, 0, 0] == pytest.approx(GRAY119_L, abs=1e-4)
    assert abs(lab[0, 0, 1]) < 0.5
    assert abs(lab[0, 0, 2]) < 0.5


def test_lab_extremes():
    lab = rgb_to_lab(np.array([[[255, 255, 255]], [[0, 0, 0]]],
                              dtype=np.uint8))
    assert lab[0, 0, 0] == pytest.approx(100.0, abs=0.01)
    assert lab[1, 0, 0] == pytest.approx(0.0, abs=0.01)
    assert np.all(np.abs(lab[:, :, 1:]) < 0.5)


def test_lab_roundtrip_within_one_level():
    rng = np.random.default_rng(7)
    rgb = rng.integers(0, 256, (32, 24, 3), dtype=np.uint8)
    back = lab_to_rgb(rgb_to_lab(rgb))
    assert back.dtype == np.uint8
    assert np.max(np.abs(back.astype(int) - rgb.astype(int))) <= 1


def test_lab_shape_preserved():
    rgb = np.zeros((5, 6, 3), dtype=np.uint8)
    assert rgb_to_lab(rgb).shape == (5, 6, 3)
    assert rgb_to_lab(rgb).dtype == np.float32


def test_load_orders_lexicographically(tmp_path):
    d = tmp_path / "views"
    d.mkdir()
    for name, val in (("b.png", 20), ("a.png", 10), ("c.png", 30)):
        _save(str(d / name), np.full((20, 20, 3), val, dtype=np.uint8))
    iset = load_image_set(str(d), reference="0", patch_size=7)
    assert iset.names == ["a", "b", "c"]
    assert [img[0, 0, 0] for img in iset.images] == [10, 20, 30]


def test_load_ignores_non_images_and_subdirs(tmp_path):
    d = _views_dir(tmp_path)
    os.makedirs(os.path.join(d, "gt"))
    _save(os.path.join(d, "gt", "mask_00.png"),
          np.zeros((20, 20), dtype=np.uint8))
    with open(os.path.join(d, "notes.txt"), "w") as fh:
        fh.write("not an image")
    iset = load_image_set(d)
    assert iset.n == 3
    assert all(n.startswith("view_") for n in iset.names)


def test_reference_by_index_and_name(tmp_path):
    d = _views_dir(tmp_path)
    assert load_image_set(d, reference="1").reference_index == 1
    assert load_image_set(d, reference="view_02").reference_index == 2
    assert load_image_set(d, reference="view_02.png").reference_index == 2


def test_reference_errors(tmp_path):
    d = _views_dir(tmp_path)
    with pytest.raises(ImageSetError, match="out of range"):
        load_image_set(d, reference="5")
    with pytest.raises(ImageSetError, match="not found"):
        load_image_set(d, reference="nope")


def test_load_rejects_missing_directory(tmp_path):
    with pytest.raises(ImageSetError, match="not a directory"):
        load_image_set(str(tmp_path / "absent"))


def test_load_rejects_single_image(tmp_path):
    d = tmp_path / "views"
    d.mkdir()
    _save(str(d / "only.png"), np.zeros((20, 20, 3), dtype=np.uint8))
    with pytest.raises(ImageSetError, match="insufficient views"):
        load_image_set(str(d))


def test_load_rejects_undersized_image(tmp_path):
    d = tmp_path / "views"
    d.mkdir()
    _save(str(d / "a.png"), np.zeros((10, 10, 3), dtype=np.uint8))
    _save(str(d / "b.png"), np.zeros((40, 40, 3), dtype=np.uint8))
    with pytest.raises(ImageSetError, match="smaller than the minimum"):
        load_image_set(str(d), patch_size=7)


def test_load_rejects_undecodable_file(tmp_path):
    d = _views_dir(tmp_path)
    with open(os.path.join(d, "broken.png"), "wb") as fh:
        fh.write(b"not a png at all")
    with pytest.raises(ImageSetError, match="cannot decode"):
        load_image_set(d)


def test_sources_iterates_non_reference_views(tmp_path):
    iset = load_image_set(_views_dir(tmp_path), reference="1")
    indices = [i for i, _ in iset.sources()]
    assert indices == [0, 2]
    assert iset.reference_name == "view_01"
    assert iset.reference is iset.images[1]


def test_write_outputs_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    cleaned = rng.integers(0, 256, (18, 22, 3), dtype=np.uint8)
    mask = np.zeros((18, 22), dtype=np.uint8)
    mask[4:9, 5:11] = 1
    out = str(tmp_path / "out")
    mask_path, clean_path = write_outputs(mask, cleaned, out, "ref")
    assert os.path.basename(mask_path) == "ref_mask.png"
    assert os.path.basename(clean_path) == "ref_clean.png"
    with Image.open(mask_path) as im:
        mask_back = np.asarray(im)
    with Image.open(clean_path) as im:
        clean_back = np.asarray(im.convert("RGB"))
    assert set(np.unique(mask_back)) <= {0, 255}
    assert np.array_equal(mask_back > 0, mask > 0)
    assert np.array_equal(clean_back, cleaned)


def test_write_outputs_rejects_unwritable_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ImageSetError):
        write_outputs(np.zeros((4, 4)), np.zeros((4, 4, 3), dtype=np.uint8),
                      str(blocker / "sub"))


def test_image_set_direct_construction():
    imgs = [np.zeros((16, 16, 3), dtype=np.uint8) for _ in range(2)]
    iset = ImageSet(images=imgs, names=["a", "b"], reference_index=0)
    assert iset.n == 2
    assert list(iset.sources()) == [(1, imgs[1])]
