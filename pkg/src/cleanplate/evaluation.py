"""Synthetic multi-view scenes with known ground truth, plus metrics.

A scene is one textured planar canvas photographed by a translating
camera: every view is an axis-aligned integer crop, so view-to-view
motion is an exact (resampling-free) homography and ground truth is
known to the pixel. An optional occluding object moves independently
across views and can be absent from some of them. Source views are
cropped ``source_extra`` pixels wider than the reference on every side,
which keeps the true counterpart of every reference pixel strictly
inside every source; without that margin, reference border pixels are
invisible in some sources and no correct match exists for them.

Canvas content outside the reference window replicates the window's
edge rows and columns. Descriptor windows that overhang an image border
are edge-replicated, so a reference border pixel's descriptor assumes
exactly that continuation; building the world to satisfy the assumption
makes border descriptors agree across views, which keeps static border
pixels decidable. Without it, no source location can match a clamped
reference descriptor and the border band is condemned as dynamic.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

GLYPH_DARK = 25
GLYPH_LIGHT = 232
GLYPH_THRESHOLD = 128


class EvaluationError(Exception):
    """Raised for unusable scene parameters or metric inputs."""


@dataclass
class SceneParams:
    """Parameters of a synthetic scene.

    Camera offsets come from ``camera_path`` when given, otherwise view
    v sits at ``v * camera_step``. The reference view is a width x
    height crop; all other views additionally include ``source_extra``
    pixels on every side. The occluder, when present, is an object at
    canvas position ``occluder_start + v * occluder_step`` (reference
    coordinates) in view v, omitted in ``absent_views``. A zero
    ``occluder_size`` disables it. ``texture`` 'glyphs' additionally
    draws high-contrast glyph shapes on the background under the
    reference occluder footprint so fills can be checked structurally.
    """

    width: int = 320
    height: int = 240
    n_views: int = 5
    reference_index: int = 0
    seed: int = 0
    camera_step: tuple[int, int] = (3, 2)
    camera_path: tuple[tuple[int, int], ...] | None = None
    source_extra: int = 8
    texture: str = "noise"
    occluder_size: tuple[int, int] = (40, 40)
    occluder_start: tuple[int, int] = (60, 70)
    occluder_step: tuple[int, int] = (26, 7)
    absent_views: tuple[int, ...] = ()

    def offsets(self) -> list[tuple[int, int]]:
        """Per-view camera offsets in canvas pixels."""
        if self.camera_path is not None:
            if len(self.camera_path) != self.n_views:
                raise EvaluationError(
                    "camera_path must list one offset per view")
            return [tuple(o) for o in self.camera_path]
        return [(v * self.camera_step[0], v * self.camera_step[1])
                for v in range(self.n_views)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "SceneParams":
        kw = dict(d)
        for key in ("camera_step", "occluder_size", "occluder_start",
                    "occluder_step", "absent_views"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if kw.get("camera_path") is not None:
            kw["camera_path"] = tuple(tuple(o) for o in kw["camera_path"])
        return SceneParams(**kw)


@dataclass
class SyntheticScene:
    """Rendered views plus ground truth.

    ``views[reference_index]`` matches ``gt_background`` except where
    the occluder covers it; source views are larger than the reference
    by 2 * source_extra in each dimension. ``gt_masks`` are per-view
    occluder footprints in that view's own coordinates.
    """

    views: list[np.ndarray]
    gt_masks: list[np.ndarray]
    gt_background: np.ndarray
    params: SceneParams


def _value_noise(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Multi-octave bilinear value noise in [0, 1], shape (h, w)."""
    acc = np.zeros((h, w))
    total = 0.0
    for scale, weight in ((3, 0.35), (6, 0.25), (12, 0.2), (24, 0.12),
                          (48, 0.08)):
        gh, gw = h // scale + 2, w // scale + 2
        grid = rng.random((gh, gw))
        ys = np.arange(h) / scale
        xs = np.arange(w) / scale
        y0 = ys.astype(np.int64)
        x0 = xs.astype(np.int64)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        g00 = grid[np.ix_(y0, x0)]
        g01 = grid[np.ix_(y0, x0 + 1)]
        g10 = grid[np.ix_(y0 + 1, x0)]
        g11 = grid[np.ix_(y0 + 1, x0 + 1)]
        acc += weight * ((g00 * (1 - fx) + g01 * fx) * (1 - fy)
                         + (g10 * (1 - fx) + g11 * fx) * fy)
        total += weight
    return acc / total


def _noise_rgb(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Colorful textured canvas, uint8, away from the value extremes."""
    channels = [(_value_noise(rng, h, w) * 175.0 + 40.0) for _ in range(3)]
    return np.stack(channels, axis=-1).round().astype(np.uint8)


def _draw_glyphs(canvas: np.ndarray, x0: int, y0: int, w: int, h: int
                 ) -> None:
    """Draw a light plate with dark ring and cross strokes in place."""
    dark = np.array([GLYPH_DARK, GLYPH_DARK, GLYPH_DARK], dtype=np.uint8)
    light = np.array([GLYPH_LIGHT, GLYPH_LIGHT, GLYPH_LIGHT],
                     dtype=np.uint8)
    canvas[y0 + 1:y0 + h - 1, x0 + 1:x0 + w - 1] = light
    # Border ring, thickness 3.
    canvas[y0 + 3:y0 + 6, x0 + 3:x0 + w - 3] = dark
    canvas[y0 + h - 6:y0 + h - 3, x0 + 3:x0 + w - 3] = dark
    canvas[y0 + 3:y0 + h - 3, x0 + 3:x0 + 6] = dark
    canvas[y0 + 3:y0 + h - 3, x0 + w - 6:x0 + w - 3] = dark
    # Central cross, bar thickness 4.
    cy = y0 + h // 2
    cx = x0 + w // 2
    canvas[cy - 2:cy + 2, x0 + 9:x0 + w - 9] = dark
    canvas[y0 + 9:y0 + h - 9, cx - 2:cx + 2] = dark


def synth_scene(params: SceneParams) -> SyntheticScene:
    """Render a deterministic scene from its parameters.

    Raises:
        EvaluationError: inconsistent parameters, or an occluder that
            does not fit fully inside some view where it is present.
    """
    p = params
    if p.n_views < 2:
        raise EvaluationError("a scene needs at least 2 views")
    if not 0 <= p.reference_index < p.n_views:
        raise EvaluationError("reference_index out of range")
    if p.texture not in ("noise", "glyphs"):
        raise EvaluationError(f"unknown texture {p.texture!r}")
    if p.source_extra < 0:
        raise EvaluationError("source_extra must be non-negative")
    for v in p.absent_views:
        if not 0 <= v < p.n_views:
            raise EvaluationError(f"absent view {v} out of range")

    offsets = p.offsets()
    extra = p.source_extra
    max_off = max(max(abs(o[0]), abs(o[1])) for o in offsets)
    margin = extra + max_off + 16
    ch = p.height + 2 * margin
    cw = p.width + 2 * margin

    # View windows in canvas coordinates: (x0, y0, w, h).
    windows: list[tuple[int, int, int, int]] = []
    for v in range(p.n_views):
        e = 0 if v == p.reference_index else extra
        windows.append((margin + offsets[v][0] - e,
                        margin + offsets[v][1] - e,
                        p.width + 2 * e, p.height + 2 * e))

    ow, oh = p.occluder_size
    has_occluder = ow > 0 and oh > 0
    # Occluder canvas rectangle per view; must fit inside each present
    # view's window so masks never need cropping.
    occ_canvas: list[tuple[int, int] | None] = []
    for v in range(p.n_views):
        if not has_occluder or v in p.absent_views:
            occ_canvas.append(None)
            continue
        cx0 = margin + p.occluder_start[0] + v * p.occluder_step[0]
        cy0 = margin + p.occluder_start[1] + v * p.occluder_step[1]
        wx0, wy0, ww, wh = windows[v]
        if (cx0 < wx0 or cy0 < wy0 or cx0 + ow > wx0 + ww
                or cy0 + oh > wy0 + wh):
            raise EvaluationError(
                f"occluder does not fit inside view {v}: canvas origin "
                f"({cx0}, {cy0}), size ({ow}, {oh}), window "
                f"{windows[v]}")
        occ_canvas.append((cx0, cy0))

    # Texture only the reference window; the rest of the canvas is its
    # edge replication (module docstring explains why that matters).
    rng = np.random.default_rng(p.seed)
    rx0, ry0, _, _ = windows[p.reference_index]
    core = _noise_rgb(rng, p.height, p.width)
    canvas = np.pad(core, ((ry0, ch - ry0 - p.height),
                           (rx0, cw - rx0 - p.width), (0, 0)),
                    mode="edge")

    if p.texture == "glyphs":
        # Glyphs live on the background under the reference occluder.
        if not has_occluder:
            raise EvaluationError("glyph texture requires an occluder")
        gx = margin + p.occluder_start[0] + p.reference_index * \
            p.occluder_step[0]
        gy = margin + p.occluder_start[1] + p.reference_index * \
            p.occluder_step[1]
        _draw_glyphs(canvas, gx, gy, ow, oh)

    occ_tex = None
    if has_occluder:
        # Strongly biased to red so it contrasts with the background.
        base = _value_noise(rng, oh, ow)
        occ_tex = np.stack([
            base * 55.0 + 190.0,
            base * 50.0 + 25.0,
            base * 45.0 + 30.0,
        ], axis=-1).round().astype(np.uint8)

    views: list[np.ndarray] = []
    gt_masks: list[np.ndarray] = []
    gt_background = None
    for v in range(p.n_views):
        wx0, wy0, ww, wh = windows[v]
        view = canvas[wy0:wy0 + wh, wx0:wx0 + ww].copy()
        if v == p.reference_index:
            gt_background = view.copy()
        mask = np.zeros((wh, ww), dtype=np.uint8)
        if occ_canvas[v] is not None:
            ox = occ_canvas[v][0] - wx0
            oy = occ_canvas[v][1] - wy0
            view[oy:oy + oh, ox:ox + ow] = occ_tex
            mask[oy:oy + oh, ox:ox + ow] = 1
        views.append(view)
        gt_masks.append(mask)
    return SyntheticScene(views=views, gt_masks=gt_masks,
                          gt_background=gt_background, params=p)


def preset_params(name: str, seed: int = 0, width: int = 320,
                  height: int = 240, n_views: int = 5) -> SceneParams:
    """Named parameter bundles used by the command line and the tests."""
    common = dict(width=width, height=height, n_views=n_views, seed=seed)
    path = _centered_path(n_views, (3, 2))
    # Occluder geometry: fixed 40 px size and >= 25 px/view motion, with
    # the start scaled so the whole walk stays inside smaller scenes.
    start = (round(width * 0.11), round(height * 0.29))
    if name == "static-null":
        return SceneParams(camera_path=_jittered_path(n_views, seed),
                           occluder_size=(0, 0), **common)
    if name == "square-walk":
        return SceneParams(camera_path=path, occluder_size=(40, 40),
                           occluder_start=start, occluder_step=(26, 7),
                           absent_views=(2,), **common)
    if name == "glyph-walk":
        return SceneParams(camera_path=path, texture="glyphs",
                           occluder_size=(40, 40), occluder_start=start,
                           occluder_step=(26, 7), absent_views=(2,),
                           **common)
    raise EvaluationError(f"unknown preset {name!r}")


def _centered_path(n_views: int, step: tuple[int, int]
                   ) -> tuple[tuple[int, int], ...]:
    """Camera offsets alternating around the reference at view 0."""
    out = [(0, 0)]
    k = 1
    while len(out) < n_views:
        out.append((k * step[0], k * step[1]))
        if len(out) < n_views:
            out.append((-k * step[0], -k * step[1]))
        k += 1
    return tuple(out[:n_views])


def _jittered_path(n_views: int, seed: int
                   ) -> tuple[tuple[int, int], ...]:
    """Small random integer offsets, reference fixed at zero."""
    rng = np.random.default_rng(seed)
    while True:
        path = [(0, 0)] + [tuple(int(c) for c in rng.integers(-3, 4, 2))
                           for _ in range(n_views - 1)]
        if any(o != (0, 0) for o in path[1:]):
            return tuple(path)


def save_scene(scene: SyntheticScene, directory: str) -> None:
    """Write views, ground truth and parameters to a scene directory.

    Views land in the directory root as view_XX.png; ground truth goes
    to a gt/ subdirectory the image loader ignores.
    """
    gt_dir = os.path.join(directory, "gt")
    os.makedirs(gt_dir, exist_ok=True)
    for v, img in enumerate(scene.views):
        Image.fromarray(img).save(
            os.path.join(directory, f"view_{v:02d}.png"))
        Image.fromarray(scene.gt_masks[v] * np.uint8(255)).save(
            os.path.join(gt_dir, f"mask_{v:02d}.png"))
    Image.fromarray(scene.gt_background).save(
        os.path.join(gt_dir, "background.png"))
    with open(os.path.join(directory, "params.json"), "w",
              encoding="utf-8") as fh:
        json.dump(scene.params.to_dict(), fh, indent=2)


def load_scene_truth(directory: str
                     ) -> tuple[SceneParams, list[np.ndarray], np.ndarray]:
    """Read back a saved scene's parameters and ground truth."""
    try:
        with open(os.path.join(directory, "params.json"), encoding="utf-8"
                  ) as fh:
            params = SceneParams.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise EvaluationError(
            f"cannot read scene parameters in {directory}: {exc}") from exc
    gt_dir = os.path.join(directory, "gt")
    masks = []
    for v in range(params.n_views):
        path = os.path.join(gt_dir, f"mask_{v:02d}.png")
        try:
            with Image.open(path) as im:
                masks.append(np.asarray(im.convert("L")) > 127)
        except OSError as exc:
            raise EvaluationError(f"cannot read {path}: {exc}") from exc
    with Image.open(os.path.join(gt_dir, "background.png")) as im:
        background = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return params, masks, background


def jaccard(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two masks; 1.0 when both are empty.

    Raises:
        EvaluationError: on shape mismatch.
    """
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise EvaluationError(
            f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def psnr_region(image: np.ndarray, reference: np.ndarray,
                mask: np.ndarray) -> float:
    """PSNR of ``image`` against ``reference`` over the masked pixels.

    Uses the mean squared error across all channels of the selected
    pixels and a 255 peak. Identical content gives +inf.

    Raises:
        EvaluationError: empty mask or mismatched shapes.
    """
    image = np.asarray(image)
    reference = np.asarray(reference)
    mask = np.asarray(mask).astype(bool)
    if image.shape != reference.shape:
        raise EvaluationError(
            f"image shapes differ: {image.shape} vs {reference.shape}")
    if mask.shape != image.shape[:2]:
        raise EvaluationError(
            f"mask shape {mask.shape} does not match image {image.shape}")
    if not mask.any():
        raise EvaluationError("psnr_region needs a non-empty mask")
    diff = image.astype(np.float64) - reference.astype(np.float64)
    mse = float((diff[mask] ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def glyph_accuracy(image: np.ndarray, reference: np.ndarray,
                   mask: np.ndarray, threshold: int = GLYPH_THRESHOLD
                   ) -> float:
    """Fraction of masked pixels whose binarized intensity matches.

    Both images are reduced to grayscale means and thresholded; this
    checks that the structure of restored glyphs is right even where
    intensities differ slightly.
    """
    mask = np.asarray(mask).astype(bool)
    if not mask.any():
        raise EvaluationError("glyph_accuracy needs a non-empty mask")
    ga = np.asarray(image, dtype=np.float64).mean(axis=-1) > threshold
    gb = np.asarray(reference, dtype=np.float64).mean(axis=-1) > threshold
    return float((ga[mask] == gb[mask]).mean())
