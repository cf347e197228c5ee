"""Dense per-pixel appearance descriptors and whole-patch descriptors.

Every pixel of every view carries two descriptors computed over a p x p
window centered on it, with window indices clamped to the image border:

* ``f_c``: the 3-vector mean of the Lab patch.
* ``f_g``: a 128-vector gradient layout descriptor. The window is divided
  into a 4 x 4 spatial grid with 8 orientation bins per cell; gradients of
  the L channel (clamped central differences) vote with their magnitude
  into the two nearest orientation bins and the spatially nearest cells
  (bilinear cell weights), i.e. trilinear binning without a Gaussian
  window. Each descriptor is L2-normalized, clamped at 0.2 per component,
  and renormalized.

Whole patches additionally carry ``g_c`` (Lab mean) and ``g_h``, a 16-bin
magnitude-weighted orientation histogram rotated so its dominant bin
comes first, which makes it invariant to bin-aligned rotations.

``f_g`` fields are comparable across views only after
:func:`normalize_fields`, which divides every descriptor in the set by
the single largest component found anywhere in the set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

logger = logging.getLogger(__name__)

GRID = 4
ORI_BINS = 8
DESC_DIM = GRID * GRID * ORI_BINS
HIST_BINS = 16
_CLAMP = 0.2
_TWO_PI = 2.0 * np.pi


@dataclass
class DescriptorField:
    """Per-pixel descriptors of one view.

    Attributes:
        fc: (H, W, 3) float32 Lab patch means.
        fg: (H, W, 128) float32 gradient descriptors.
        patch_size: window side p used to compute them.
        gradient_scale: factor applied to raw gradient descriptors by
            set-level normalization; 1.0 before normalization.
    """

    fc: np.ndarray
    fg: np.ndarray
    patch_size: int
    gradient_scale: float = 1.0

    @property
    def height(self) -> int:
        return self.fc.shape[0]

    @property
    def width(self) -> int:
        return self.fc.shape[1]


@dataclass
class PatchDescriptor:
    """Whole-patch descriptors: Lab mean and aligned orientation histogram."""

    g_c: np.ndarray
    g_h: np.ndarray


@njit(cache=True)
def _grad_at(L, y, x):
    """Clamped central differences of the L channel at (row y, col x)."""
    h, w = L.shape
    xm = x - 1 if x > 0 else 0
    xp = x + 1 if x < w - 1 else w - 1
    ym = y - 1 if y > 0 else 0
    yp = y + 1 if y < h - 1 else h - 1
    gx = (np.float64(L[y, xp]) - np.float64(L[y, xm])) * 0.5
    gy = (np.float64(L[yp, x]) - np.float64(L[ym, x])) * 0.5
    return gx, gy


@njit(cache=True)
def _fc_at(lab, y, x, p, out):
    """Mean Lab over the clamped p x p window centered at (x, y)."""
    h, w = lab.shape[0], lab.shape[1]
    r = p // 2
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    for dv in range(-r, r + 1):
        v = y + dv
        if v < 0:
            v = 0
        elif v > h - 1:
            v = h - 1
        for du in range(-r, r + 1):
            u = x + du
            if u < 0:
                u = 0
            elif u > w - 1:
                u = w - 1
            s0 += lab[v, u, 0]
            s1 += lab[v, u, 1]
            s2 += lab[v, u, 2]
    n = p * p
    out[0] = s0 / n
    out[1] = s1 / n
    out[2] = s2 / n


@njit(cache=True)
def _clamped(L, v, u):
    h, w = L.shape
    if v < 0:
        v = 0
    elif v > h - 1:
        v = h - 1
    if u < 0:
        u = 0
    elif u > w - 1:
        u = w - 1
    return np.float64(L[v, u])


@njit(cache=True)
def _fg_at(L, y, x, p, out):
    """Raw (un-normalized-set) gradient descriptor at (x, y).

    Fills ``out`` (128,) with the trilinearly binned histogram, then
    applies L2 norm, 0.2 clamp and renorm. All-zero gradients give a
    zero descriptor. Gradients are central differences taken in the
    edge-replicated window content (each neighbor sample clamped on its
    own), so a window overhanging the border sees the same gradients as
    an interior window over content that really is edge-replicated;
    anything else would make border descriptors incomparable across
    views.
    """
    r = p // 2
    for i in range(DESC_DIM):
        out[i] = 0.0
    cell = p / GRID
    for dv in range(-r, r + 1):
        v = y + dv
        # Local row coordinate in [0, p) and its two nearest cell rows.
        lv = dv + r
        fy = (lv + 0.5) / cell - 0.5
        for du in range(-r, r + 1):
            u = x + du
            gx = (_clamped(L, v, u + 1) - _clamped(L, v, u - 1)) * 0.5
            gy = (_clamped(L, v + 1, u) - _clamped(L, v - 1, u)) * 0.5
            mag = np.sqrt(gx * gx + gy * gy)
            if mag <= 0.0:
                continue
            theta = np.arctan2(gy, gx)
            if theta < 0.0:
                theta += _TWO_PI
            o = theta / (_TWO_PI / ORI_BINS)
            o0 = int(o)
            if o0 >= ORI_BINS:
                o0 = ORI_BINS - 1
            fo = o - o0
            o0 = o0 % ORI_BINS
            o1 = (o0 + 1) % ORI_BINS
            lu = du + r
            fxc = (lu + 0.5) / cell - 0.5
            for ci in range(GRID):
                wy = 1.0 - abs(fy - ci)
                if wy <= 0.0:
                    continue
                for cj in range(GRID):
                    wx = 1.0 - abs(fxc - cj)
                    if wx <= 0.0:
                        continue
                    base = (ci * GRID + cj) * ORI_BINS
                    out[base + o0] += mag * wy * wx * (1.0 - fo)
                    out[base + o1] += mag * wy * wx * fo
    norm = 0.0
    for i in range(DESC_DIM):
        norm += out[i] * out[i]
    if norm <= 0.0:
        return
    norm = np.sqrt(norm)
    for i in range(DESC_DIM):
        out[i] = out[i] / norm
        if out[i] > _CLAMP:
            out[i] = _CLAMP
    norm = 0.0
    for i in range(DESC_DIM):
        norm += out[i] * out[i]
    if norm <= 0.0:
        return
    norm = np.sqrt(norm)
    for i in range(DESC_DIM):
        out[i] = out[i] / norm


@njit(cache=True, parallel=True)
def _dense_fields(lab, p, fc, fg):
    h, w = lab.shape[0], lab.shape[1]
    L = lab[:, :, 0].copy()
    for y in prange(h):
        tmp = np.empty(DESC_DIM, dtype=np.float32)
        c = np.empty(3, dtype=np.float32)
        for x in range(w):
            _fc_at(lab, y, x, p, c)
            fc[y, x, 0] = c[0]
            fc[y, x, 1] = c[1]
            fc[y, x, 2] = c[2]
            _fg_at(L, y, x, p, tmp)
            for i in range(DESC_DIM):
                fg[y, x, i] = tmp[i]


@njit(cache=True)
def _region_gc(region, out):
    """Mean Lab of an arbitrary (h, w, 3) region."""
    h, w = region.shape[0], region.shape[1]
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    for v in range(h):
        for u in range(w):
            s0 += region[v, u, 0]
            s1 += region[v, u, 1]
            s2 += region[v, u, 2]
    n = h * w
    out[0] = s0 / n
    out[1] = s1 / n
    out[2] = s2 / n


@njit(cache=True)
def _region_gh(L, out):
    """Aligned 16-bin orientation histogram of an L-channel region.

    Gradients use central differences clamped at the region border. The
    histogram is circularly shifted so the dominant bin (lowest index on
    ties) sits first, then L2-normalized. Zero total energy gives zeros.
    """
    h, w = L.shape
    raw = np.zeros(HIST_BINS, dtype=np.float64)
    for v in range(h):
        for u in range(w):
            gx, gy = _grad_at(L, v, u)
            mag = np.sqrt(gx * gx + gy * gy)
            if mag <= 0.0:
                continue
            theta = np.arctan2(gy, gx)
            if theta < 0.0:
                theta += _TWO_PI
            b = int(theta / (_TWO_PI / HIST_BINS))
            if b >= HIST_BINS:
                b = HIST_BINS - 1
            raw[b] += mag
    best = 0
    for i in range(1, HIST_BINS):
        if raw[i] > raw[best]:
            best = i
    norm = 0.0
    for i in range(HIST_BINS):
        norm += raw[i] * raw[i]
    if norm <= 0.0:
        for i in range(HIST_BINS):
            out[i] = 0.0
        return
    norm = np.sqrt(norm)
    for i in range(HIST_BINS):
        out[i] = raw[(best + i) % HIST_BINS] / norm


@njit(cache=True)
def _extract_patch(img, cy, cx, p, out):
    """Copy the clamped p x p window around (cx, cy) into ``out``."""
    h, w = img.shape[0], img.shape[1]
    r = p // 2
    for dv in range(-r, r + 1):
        v = cy + dv
        if v < 0:
            v = 0
        elif v > h - 1:
            v = h - 1
        for du in range(-r, r + 1):
            u = cx + du
            if u < 0:
                u = 0
            elif u > w - 1:
                u = w - 1
            for ch in range(img.shape[2]):
                out[dv + r, du + r, ch] = img[v, u, ch]


def dense_descriptor_field(lab: np.ndarray, patch_size: int = 7
                           ) -> DescriptorField:
    """Compute per-pixel descriptors for one Lab image.

    The returned gradient descriptors are un-normalized at set level;
    run :func:`normalize_fields` over the whole set before comparing
    them across views.
    """
    lab = np.ascontiguousarray(lab, dtype=np.float32)
    h, w = lab.shape[:2]
    fc = np.empty((h, w, 3), dtype=np.float32)
    fg = np.empty((h, w, DESC_DIM), dtype=np.float32)
    _dense_fields(lab, patch_size, fc, fg)
    return DescriptorField(fc=fc, fg=fg, patch_size=patch_size)


def descriptor_at(lab: np.ndarray, x: int, y: int, patch_size: int,
                  gradient_scale: float = 1.0
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Recompute (f_c, f_g) for a single pixel from current image content.

    ``gradient_scale`` should be the field's set-normalization factor so
    the result is comparable with the stored field.
    """
    lab = np.ascontiguousarray(lab, dtype=np.float32)
    fc = np.empty(3, dtype=np.float32)
    fg = np.empty(DESC_DIM, dtype=np.float32)
    _fc_at(lab, y, x, patch_size, fc)
    L = np.ascontiguousarray(lab[:, :, 0])
    _fg_at(L, y, x, patch_size, fg)
    return fc, fg * np.float32(gradient_scale)


def normalize_fields(fields: list[DescriptorField]) -> list[DescriptorField]:
    """Scale gradient descriptors of the whole set by its global maximum.

    The largest single component found across every field becomes 1.0.
    Idempotent: a second call finds a maximum of 1 and changes nothing.
    If the set has no gradient energy at all a warning is logged and the
    fields are returned unchanged.
    """
    gmax = 0.0
    for f in fields:
        m = float(f.fg.max()) if f.fg.size else 0.0
        if m > gmax:
            gmax = m
    if gmax <= 0.0:
        logger.warning(
            "descriptor normalization skipped: no gradient energy in set")
        return fields
    scale = np.float32(1.0 / gmax)
    for f in fields:
        f.fg *= scale
        f.gradient_scale *= float(scale)
    return fields


def patch_descriptor(patch_lab: np.ndarray) -> PatchDescriptor:
    """Compute (g_c, g_h) for an extracted Lab patch or region."""
    patch_lab = np.ascontiguousarray(patch_lab, dtype=np.float32)
    g_c = np.empty(3, dtype=np.float32)
    g_h = np.empty(HIST_BINS, dtype=np.float64)
    _region_gc(patch_lab, g_c)
    _region_gh(np.ascontiguousarray(patch_lab[:, :, 0]), g_h)
    return PatchDescriptor(g_c=g_c, g_h=g_h.astype(np.float32))


def extract_patch(img: np.ndarray, x: int, y: int, patch_size: int
                  ) -> np.ndarray:
    """Return the clamped patch_size x patch_size window around (x, y)."""
    img = np.ascontiguousarray(img)
    out = np.empty((patch_size, patch_size, img.shape[2]), dtype=img.dtype)
    _extract_patch(img, y, x, patch_size, out)
    return out
