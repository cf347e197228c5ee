"""Dense correspondence between the reference view and one source view.

The field maps every reference pixel to an integer source position. It
is estimated by randomized coherency propagation: random initialization,
then alternating forward (left/up neighbors) and backward (right/bottom
neighbors) propagation passes interleaved with exponentially shrinking
random search, accepting a proposal only when it strictly lowers the
match cost. The cost blends color and gradient descriptor similarity
with an optional epipolar consistency term:

    cost = lambda4 (1 - Se_c) + lambda5 (1 - Se_g) + lambda3 (1 - S_f)

From a converged field, :func:`similarity_map` evaluates the full
three-term similarity at every pixel and :func:`harvest_matches` draws
spatially spread high-confidence matches for geometry estimation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ._kernels import BIG, _rng_below, _rng_init, _sf_scalar
from .config import Config
from .epipolar import EpipolarKernel
from .features import DescriptorField


@dataclass
class CorrespondenceField:
    """Integer target positions in one source view for each reference pixel.

    Attributes:
        target: (H, W, 2) int32, x at [..., 0] and y at [..., 1], always
            inside the source image bounds.
        source_index: view index of the source in the image set.
        cost_history: mean match cost after initialization and after each
            propagation pass; non-increasing.
    """

    target: np.ndarray
    source_index: int = -1
    cost_history: list[float] = field(default_factory=list)


@dataclass
class SimilarityMap:
    """Per-pixel similarity of the reference against one source view."""

    value: np.ndarray
    source_index: int = -1


def s_e(f1: np.ndarray, f2: np.ndarray, sigma: float) -> float:
    """Gaussian descriptor similarity exp(-||f1 - f2||^2 / (2 sigma^2))."""
    d = np.asarray(f1, dtype=np.float64) - np.asarray(f2, dtype=np.float64)
    return float(np.exp(-(d * d).sum() / (2.0 * sigma * sigma)))


@njit(cache=True)
def _pm_cost(ref_fc, ref_fg, src_fc, src_fg, y, x, v, u, fmat, inv_dr,
             inv_ds, l4, l5, l3w, inv2sc2, inv2sg2, inv2se2, cbest):
    """Match cost of pairing reference (x, y) with source (u, v).

    Returns a value above ``cbest`` (early exit) as soon as a partial
    lower bound already rules the proposal out.
    """
    dc = 0.0
    for i in range(3):
        t = ref_fc[y, x, i] - src_fc[v, u, i]
        dc += t * t
    ec = np.exp(-dc * inv2sc2)
    acc = l4 * (1.0 - ec)
    if l3w > 0.0:
        sf = _sf_scalar(np.float64(x), np.float64(y), np.float64(u),
                        np.float64(v), fmat, inv_dr, inv_ds, inv2se2)
        acc += l3w * (1.0 - sf)
    if acc >= cbest:
        return BIG
    # Residual budget for the gradient term decides how large the
    # gradient distance may get before the proposal is hopeless.
    b = cbest - acc
    if b >= l5:
        dg_max = BIG
    else:
        dg_max = -np.log(1.0 - b / l5) / inv2sg2
    dg = 0.0
    for i in range(128):
        t = ref_fg[y, x, i] - src_fg[v, u, i]
        dg += t * t
        if dg > dg_max:
            return BIG
    return acc + l5 * (1.0 - np.exp(-dg * inv2sg2))


@njit(cache=True)
def _pm_run(ref_fc, ref_fg, src_fc, src_fg, hs, ws, fmat, inv_dr, inv_ds,
            l4, l5, l3w, inv2sc2, inv2sg2, inv2se2, iters, seed, tx, ty,
            hist):
    h, w = ref_fc.shape[0], ref_fc.shape[1]
    cost = np.empty((h, w), dtype=np.float64)
    state = _rng_init(seed, 0)
    for y in range(h):
        for x in range(w):
            state, u = _rng_below(state, ws)
            state, v = _rng_below(state, hs)
            tx[y, x] = u
            ty[y, x] = v
            cost[y, x] = _pm_cost(ref_fc, ref_fg, src_fc, src_fg, y, x, v, u,
                                  fmat, inv_dr, inv_ds, l4, l5, l3w,
                                  inv2sc2, inv2sg2, inv2se2, BIG)
    total = 0.0
    for y in range(h):
        for x in range(w):
            total += cost[y, x]
    hist[0] = total / (h * w)

    rmax = hs if hs > ws else ws
    for it in range(iters):
        forward = it % 2 == 0
        for yy in range(h):
            y = yy if forward else h - 1 - yy
            for xx in range(w):
                x = xx if forward else w - 1 - xx
                # Propagation from the two already-visited neighbors.
                for k in range(2):
                    if forward:
                        nx = x - 1 if k == 0 else x
                        ny = y if k == 0 else y - 1
                        du = 1 if k == 0 else 0
                        dv = 0 if k == 0 else 1
                    else:
                        nx = x + 1 if k == 0 else x
                        ny = y if k == 0 else y + 1
                        du = -1 if k == 0 else 0
                        dv = 0 if k == 0 else -1
                    if nx < 0 or nx >= w or ny < 0 or ny >= h:
                        continue
                    u = tx[ny, nx] + du
                    v = ty[ny, nx] + dv
                    if u < 0:
                        u = 0
                    elif u > ws - 1:
                        u = ws - 1
                    if v < 0:
                        v = 0
                    elif v > hs - 1:
                        v = hs - 1
                    if u == tx[y, x] and v == ty[y, x]:
                        continue
                    c = _pm_cost(ref_fc, ref_fg, src_fc, src_fg, y, x, v, u,
                                 fmat, inv_dr, inv_ds, l4, l5, l3w,
                                 inv2sc2, inv2sg2, inv2se2, cost[y, x])
                    if c < cost[y, x]:
                        cost[y, x] = c
                        tx[y, x] = u
                        ty[y, x] = v
                # Random search around the incumbent, halving radius.
                rad = rmax
                while rad >= 1:
                    state, ru = _rng_below(state, 2 * rad + 1)
                    state, rv = _rng_below(state, 2 * rad + 1)
                    u = tx[y, x] + ru - rad
                    v = ty[y, x] + rv - rad
                    if u < 0:
                        u = 0
                    elif u > ws - 1:
                        u = ws - 1
                    if v < 0:
                        v = 0
                    elif v > hs - 1:
                        v = hs - 1
                    if u != tx[y, x] or v != ty[y, x]:
                        c = _pm_cost(ref_fc, ref_fg, src_fc, src_fg, y, x,
                                     v, u, fmat, inv_dr, inv_ds, l4, l5,
                                     l3w, inv2sc2, inv2sg2, inv2se2,
                                     cost[y, x])
                        if c < cost[y, x]:
                            cost[y, x] = c
                            tx[y, x] = u
                            ty[y, x] = v
                    rad //= 2
        total = 0.0
        for y in range(h):
            for x in range(w):
                total += cost[y, x]
        hist[it + 1] = total / (h * w)


def estimate_dense_field(ref_field: DescriptorField,
                         src_field: DescriptorField,
                         epipolar: EpipolarKernel | None = None,
                         config: Config | None = None,
                         seed: int = 0,
                         source_index: int = -1) -> CorrespondenceField:
    """Estimate the dense field from reference descriptors to one source.

    When ``epipolar`` is given its similarity joins the cost with weight
    lambda3, pulling targets toward epipolar lines; otherwise the cost
    is purely appearance-based. Deterministic for a given seed.
    """
    cfg = config or Config()
    h, w = ref_field.height, ref_field.width
    hs, ws = src_field.height, src_field.width
    tx = np.empty((h, w), dtype=np.int32)
    ty = np.empty((h, w), dtype=np.int32)
    hist = np.zeros(cfg.pm_iters + 1, dtype=np.float64)
    if epipolar is not None:
        fmat = np.ascontiguousarray(epipolar.f, dtype=np.float64)
        inv_dr, inv_ds = epipolar.inv_diag_ref, epipolar.inv_diag_src
        l3w = cfg.lambda3
        inv2se2 = 1.0 / (2.0 * epipolar.sigma_e ** 2)
    else:
        fmat = np.zeros((3, 3), dtype=np.float64)
        inv_dr = inv_ds = 1.0
        l3w = 0.0
        inv2se2 = 1.0
    _pm_run(ref_field.fc, ref_field.fg, src_field.fc, src_field.fg,
            hs, ws, fmat, inv_dr, inv_ds,
            cfg.lambda4, cfg.lambda5, l3w,
            1.0 / (2.0 * cfg.sigma_c ** 2), 1.0 / (2.0 * cfg.sigma_g ** 2),
            inv2se2, cfg.pm_iters, seed, tx, ty, hist)
    target = np.stack([tx, ty], axis=-1).astype(np.int32)
    return CorrespondenceField(target=target, source_index=source_index,
                               cost_history=[float(v) for v in hist])


def _gathered_similarities(ref_field: DescriptorField,
                           src_field: DescriptorField,
                           corr: CorrespondenceField,
                           sigma_c: float, sigma_g: float
                           ) -> tuple[np.ndarray, np.ndarray]:
    tx = corr.target[..., 0]
    ty = corr.target[..., 1]
    dfc = ref_field.fc.astype(np.float64) - src_field.fc[ty, tx].astype(np.float64)
    dc = (dfc * dfc).sum(axis=-1)
    dfg = ref_field.fg.astype(np.float64) - src_field.fg[ty, tx].astype(np.float64)
    dg = (dfg * dfg).sum(axis=-1)
    sec = np.exp(-dc / (2.0 * sigma_c ** 2))
    seg = np.exp(-dg / (2.0 * sigma_g ** 2))
    return sec, seg


def similarity_map(ref_field: DescriptorField, src_field: DescriptorField,
                   corr: CorrespondenceField,
                   epipolar: EpipolarKernel | None = None,
                   config: Config | None = None) -> SimilarityMap:
    """Evaluate the three-term similarity at every reference pixel.

    With no geometry supplied the geometric factor is taken as 1. The
    result lies in [0, 1] everywhere.
    """
    cfg = config or Config()
    sec, seg = _gathered_similarities(ref_field, src_field, corr,
                                      cfg.sigma_c, cfg.sigma_g)
    if epipolar is not None:
        h, w = ref_field.height, ref_field.width
        xs, ys = np.meshgrid(np.arange(w), np.arange(h))
        ref_xy = np.stack([xs, ys], axis=-1).reshape(-1, 2)
        src_xy = corr.target.reshape(-1, 2)
        sf = epipolar.s_f(ref_xy, src_xy).reshape(h, w)
    else:
        sf = 1.0
    value = cfg.lambda1 * sec + cfg.lambda2 * seg + cfg.lambda3 * sf
    return SimilarityMap(value=value.astype(np.float64),
                         source_index=corr.source_index)


def harvest_matches(ref_field: DescriptorField, src_field: DescriptorField,
                    corr: CorrespondenceField, budget: int = 2000,
                    cell: int = 8) -> np.ndarray:
    """Pick spatially spread, appearance-confident matches from a field.

    The appearance-only score lambda4 Se_c + lambda5 Se_g (geometry
    deliberately excluded, since these matches feed its estimation) is
    maximized within each cell x cell block, and the per-block winners
    are ranked globally; the ``budget`` best rows (x_ref, y_ref, x_src,
    y_src) are returned, float64.
    """
    cfg = Config()
    sec, seg = _gathered_similarities(ref_field, src_field, corr,
                                      cfg.sigma_c, cfg.sigma_g)
    score = cfg.lambda4 * sec + cfg.lambda5 * seg
    h, w = score.shape
    rows = []
    for by in range(0, h, cell):
        for bx in range(0, w, cell):
            block = score[by:by + cell, bx:bx + cell]
            k = int(np.argmax(block))
            dy, dx = divmod(k, block.shape[1])
            y, x = by + dy, bx + dx
            rows.append((score[y, x], x, y,
                         corr.target[y, x, 0], corr.target[y, x, 1]))
    # Deterministic order: score descending, then position.
    rows.sort(key=lambda r: (-r[0], r[2], r[1]))
    rows = rows[:budget]
    return np.array([(x, y, u, v) for _, x, y, u, v in rows],
                    dtype=np.float64).reshape(-1, 4)
