"""Alternating bidirectional scans that detect and replace dynamic pixels.

A run proceeds in two phases. Preparation estimates, per source view, a
dense correspondence field (first from appearance alone, then refined
under the epipolar geometry recovered from the first field's best
matches) and the resulting per-pixel similarity. Scanning then walks the
reference in row-major order, alternating top-down and bottom-up, and at
every pixel gathers coherency-propagated candidates from its
already-decided neighbors, clusters them, and labels the pixel static or
dynamic against the winning cluster's consensus. Dynamic pixels are
overwritten with the best-fitting candidate patch and their
correspondences re-anchored, so later pixels propagate corrected
information. Scans repeat until one finds no dynamic pixel or the scan
budget is exhausted. The union of all per-scan dynamic labels is the
output mask; the working reference after the last scan is the cleaned
image.

Every per-pixel operation is also exposed as a standalone function
(:func:`candidate_set`, :func:`decide`, :func:`select_patch`,
:func:`apply_patch`, :func:`update_correspondences`) driving the same
compiled helpers as the fused scan kernel.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _scan, cache
from .clustering import Candidate
from .config import TIE_EPS, Config
from .correspondence import (estimate_dense_field, harvest_matches,
                             similarity_map)
from .epipolar import (EpipolarKernel, FundamentalMatrix,
                       estimate_fundamental, prepare_epipolar_kernel)
from .features import DESC_DIM, DescriptorField, dense_descriptor_field, normalize_fields
from .image_set import ImageSet, rgb_to_lab

logger = logging.getLogger(__name__)

DIRECTIONS = ("down", "up")


def _dir_code(direction: str) -> int:
    if direction == "down":
        return _scan.DOWN
    if direction == "up":
        return _scan.UP
    raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")


@dataclass
class ScanState:
    """Mutable state of one detection-and-removal run.

    Reference-side arrays are working copies that scans overwrite.
    Source data lives in padded stacks indexed by position among the
    source views (reference excluded); ``src_dims`` holds each source's
    true (height, width) for bounds handling inside the padding.
    """

    config: Config
    ref_rgb: np.ndarray
    ref_lab: np.ndarray
    ref_fc: np.ndarray
    ref_fg: np.ndarray
    stale: np.ndarray
    gradient_scale: float
    src_rgb: np.ndarray
    src_lab: np.ndarray
    src_fc: np.ndarray
    src_fg: np.ndarray
    src_dims: np.ndarray
    f_mats: np.ndarray
    inv_diag: np.ndarray
    corr: np.ndarray
    conf: np.ndarray
    label: np.ndarray
    cumulative: np.ndarray
    written: np.ndarray
    fundamentals: dict[int, FundamentalMatrix] = field(default_factory=dict)
    source_views: list[int] = field(default_factory=list)
    scan_count: int = 0

    @property
    def height(self) -> int:
        return self.ref_rgb.shape[0]

    @property
    def width(self) -> int:
        return self.ref_rgb.shape[1]

    @property
    def n_sources(self) -> int:
        return self.src_dims.shape[0]

    def params(self) -> tuple:
        """Scalar kernel parameters in the order the kernels take them."""
        c = self.config
        return (c.patch_size, c.min_pts,
                1 if c.refresh_neighbor_descriptors else 0,
                c.lambda1, c.lambda2, c.lambda3, c.lambda4, c.lambda5,
                c.lambda6, c.lambda7, c.lambda8,
                1.0 / (2.0 * c.sigma_c ** 2), 1.0 / (2.0 * c.sigma_g ** 2),
                1.0 / (2.0 * c.sigma_e ** 2), 1.0 / (2.0 * c.sigma_h ** 2),
                c.t_r, c.dbscan_eps, TIE_EPS)


@dataclass
class Decision:
    """Outcome of judging one pixel: its label and the winning cluster."""

    label: int
    members: list[int]
    fc_hat: np.ndarray
    fg_hat: np.ndarray
    score: float


@dataclass
class PatchChoice:
    """The replacement chosen for a dynamic pixel."""

    candidate_index: int
    source_index: int
    x: int
    y: int


@dataclass
class DynamicMap:
    """Per-scan and cumulative dynamic labels (1 marks static in
    ``label``; 1 marks ever-dynamic in ``cumulative``)."""

    label: np.ndarray
    cumulative: np.ndarray


@dataclass
class Snapshot:
    """Intermediate view of a scan in progress, for visual inspection."""

    scan_index: int
    direction: str
    decided: int
    image: np.ndarray
    cumulative: np.ndarray


@dataclass
class RunResult:
    """Everything a completed run produced."""

    dynamic_map: DynamicMap
    cleaned: np.ndarray
    written_mask: np.ndarray
    per_scan_counts: list[int]
    scan_directions: list[str]
    seconds: float
    converged: bool
    fundamentals: dict[int, FundamentalMatrix]

    @property
    def scans(self) -> int:
        return len(self.per_scan_counts)


def _mix_seed(seed: int, source: int, stage: int) -> int:
    return (seed * 1000003 + source * 101 + stage * 31 + 7) & 0x7FFFFFFF


def prepare_state(image_set: ImageSet, config: Config | None = None,
                  cache_dir: str | None = None) -> ScanState:
    """Run the full precompute and return a ready-to-scan state.

    Descriptor fields are computed for every view (or loaded from
    ``cache_dir``, where they are stored un-normalized) and normalized
    as a set. Each source then gets two field estimation passes: the
    first, appearance-only, supplies matches for fundamental matrix
    estimation; the second folds the recovered geometry into the match
    cost. The resulting fields and similarity maps seed the
    correspondence and confidence arrays.

    Raises:
        ConfigError: on invalid configuration.
        EpipolarError: when geometry cannot be estimated for a source.
    """
    cfg = config or Config()
    cfg.validate()
    p = cfg.patch_size

    labs = [rgb_to_lab(img) for img in image_set.images]
    t0 = time.perf_counter()
    fields = []
    for img, lab in zip(image_set.images, labs):
        fld = cache.get_field(cache_dir, img, p) if cache_dir else None
        if fld is None:
            fld = dense_descriptor_field(lab, p)
            if cache_dir:
                cache.put_field(cache_dir, img, fld)
        fields.append(fld)
    normalize_fields(fields)
    logger.info("descriptor fields for %d views in %.2f s",
                image_set.n, time.perf_counter() - t0)

    ref_idx = image_set.reference_index
    ref_field = fields[ref_idx]
    h, w = ref_field.height, ref_field.width
    source_views = [i for i in range(image_set.n) if i != ref_idx]
    n_src = len(source_views)

    hmax = max(fields[i].height for i in source_views)
    wmax = max(fields[i].width for i in source_views)
    src_rgb = np.zeros((n_src, hmax, wmax, 3), dtype=np.uint8)
    src_lab = np.zeros((n_src, hmax, wmax, 3), dtype=np.float32)
    src_fc = np.zeros((n_src, hmax, wmax, 3), dtype=np.float32)
    src_fg = np.zeros((n_src, hmax, wmax, DESC_DIM), dtype=np.float32)
    src_dims = np.zeros((n_src, 2), dtype=np.int32)
    f_mats = np.zeros((n_src, 3, 3), dtype=np.float64)
    inv_diag = np.ones((n_src, 2), dtype=np.float64)
    corr = np.zeros((n_src, h, w, 2), dtype=np.int32)
    conf = np.zeros((n_src, h, w), dtype=np.float32)
    fundamentals: dict[int, FundamentalMatrix] = {}

    for s, view in enumerate(source_views):
        sf_field = fields[view]
        hs, ws = sf_field.height, sf_field.width
        t0 = time.perf_counter()
        first = estimate_dense_field(
            ref_field, sf_field, None, cfg,
            seed=_mix_seed(cfg.seed, view, 0), source_index=view)
        matches = harvest_matches(ref_field, sf_field, first,
                                  cfg.match_budget, cfg.match_cell)
        fm = estimate_fundamental(matches, cfg.ransac_threshold,
                                  cfg.ransac_confidence,
                                  cfg.ransac_max_iters,
                                  seed=_mix_seed(cfg.seed, view, 1))
        if fm.low_inlier_warning:
            logger.warning(
                "source %d: inlier ratio %.2f below %.2f, geometry term "
                "unreliable", view, fm.inlier_ratio, 0.2)
        epi = prepare_epipolar_kernel(fm, (h, w), (hs, ws), cfg.sigma_e,
                                      cfg.normalize_coords)
        refined = estimate_dense_field(
            ref_field, sf_field, epi, cfg,
            seed=_mix_seed(cfg.seed, view, 2), source_index=view)
        sim = similarity_map(ref_field, sf_field, refined, epi, cfg)
        logger.info("source %d: field + geometry in %.2f s (inliers %d, "
                    "ratio %.2f)", view, time.perf_counter() - t0,
                    fm.inlier_count, fm.inlier_ratio)

        src_rgb[s, :hs, :ws] = image_set.images[view]
        src_lab[s, :hs, :ws] = labs[view]
        src_fc[s, :hs, :ws] = sf_field.fc
        src_fg[s, :hs, :ws] = sf_field.fg
        src_dims[s, 0] = hs
        src_dims[s, 1] = ws
        f_mats[s] = epi.f
        inv_diag[s, 0] = epi.inv_diag_ref
        inv_diag[s, 1] = epi.inv_diag_src
        corr[s] = refined.target
        conf[s] = sim.value.astype(np.float32)
        fundamentals[view] = fm

    return ScanState(
        config=cfg,
        ref_rgb=image_set.reference.copy(),
        ref_lab=labs[ref_idx].copy(),
        ref_fc=ref_field.fc.copy(),
        ref_fg=ref_field.fg.copy(),
        stale=np.zeros((h, w), dtype=np.uint8),
        gradient_scale=ref_field.gradient_scale,
        src_rgb=src_rgb, src_lab=src_lab, src_fc=src_fc, src_fg=src_fg,
        src_dims=src_dims, f_mats=f_mats, inv_diag=inv_diag,
        corr=corr, conf=conf,
        label=np.ones((h, w), dtype=np.uint8),
        cumulative=np.zeros((h, w), dtype=np.uint8),
        written=np.zeros((h, w), dtype=np.uint8),
        fundamentals=fundamentals,
        source_views=source_views,
    )


_ORIGIN_NAMES = {
    _scan.DOWN: ("left", "up"),
    _scan.UP: ("right", "bottom"),
}


def _gather_arrays(state: ScanState, x: int, y: int, dcode: int):
    cap = 2 * state.n_sources
    cx = np.empty(cap, dtype=np.int64)
    cy = np.empty(cap, dtype=np.int64)
    csrc = np.empty(cap, dtype=np.int64)
    cconf = np.empty(cap, dtype=np.float64)
    cnt, navail = _scan._gather(dcode, x, y, state.height, state.width,
                                state.src_dims, state.corr, state.conf,
                                cx, cy, csrc, cconf)
    return cnt, navail, cx, cy, csrc, cconf


def candidate_set(state: ScanState, x: int, y: int, direction: str
                  ) -> list[Candidate]:
    """Candidates proposed for (x, y) by its already-decided neighbors.

    Grouped by source view in index order; within a source the
    horizontal proposal precedes the vertical one. Pixels with no
    decided neighbor (the scan's starting corner) get an empty list.
    """
    dcode = _dir_code(direction)
    cnt, navail, cx, cy, csrc, cconf = _gather_arrays(state, x, y, dcode)
    names = _ORIGIN_NAMES[dcode]
    out = []
    for i in range(cnt):
        slot = i % navail if navail else 0
        # With one proposal per source its slot is whichever neighbor
        # exists; the horizontal one is absent only at a row edge.
        if navail == 1:
            hx = x - 1 if dcode == _scan.DOWN else x + 1
            slot = 0 if 0 <= hx < state.width else 1
        out.append(Candidate(x=int(cx[i]), y=int(cy[i]),
                             source_index=int(csrc[i]),
                             confidence=float(cconf[i]),
                             origin=names[slot]))
    return out


def _candidate_arrays(candidates: list[Candidate]):
    cnt = len(candidates)
    cx = np.array([c.x for c in candidates], dtype=np.int64)
    cy = np.array([c.y for c in candidates], dtype=np.int64)
    csrc = np.array([c.source_index for c in candidates], dtype=np.int64)
    cconf = np.array([c.confidence for c in candidates], dtype=np.float64)
    return cnt, cx, cy, csrc, cconf


def decide(state: ScanState, x: int, y: int,
           candidates: list[Candidate]) -> Decision:
    """Label (x, y) static (1) or dynamic (0) against the candidate set."""
    (p, min_pts, _refresh, _l1, _l2, _l3, l4, l5, _l6, _l7, _l8, inv2sc2,
     inv2sg2, _inv2se2, _inv2sh2, t_r, eps, _tie) = state.params()
    cnt, cx, cy, csrc, cconf = _candidate_arrays(candidates)
    members = np.zeros(max(cnt, 1), dtype=np.uint8)
    dwork = np.zeros((max(cnt, 1), max(cnt, 1)), dtype=np.float64)
    fc_hat = np.zeros(3, dtype=np.float64)
    fg_hat = np.zeros(DESC_DIM, dtype=np.float64)
    label, score = _scan._decide(
        cnt, cx, cy, csrc, cconf, state.src_fc, state.src_fg,
        state.ref_fc[y, x], state.ref_fg[y, x], l4, l5, inv2sc2, inv2sg2,
        eps, min_pts, t_r, dwork, members, fc_hat, fg_hat)
    return Decision(label=int(label),
                    members=[i for i in range(cnt) if members[i]],
                    fc_hat=fc_hat, fg_hat=fg_hat, score=float(score))


def select_patch(state: ScanState, x: int, y: int, direction: str,
                 candidates: list[Candidate], decision: Decision
                 ) -> PatchChoice:
    """Choose which cluster member's patch replaces a dynamic pixel.

    Raises:
        ValueError: if the decision's cluster is empty, which cannot
            happen for a pixel labeled dynamic.
    """
    if not decision.members:
        raise ValueError("select_patch needs a non-empty winning cluster")
    dcode = _dir_code(direction)
    (p, _min_pts, _refresh, _l1, _l2, _l3, l4, l5, l6, l7, l8, inv2sc2,
     inv2sg2, inv2se2, inv2sh2, _t_r, _eps, tie) = state.params()
    cnt, cx, cy, csrc, _ = _candidate_arrays(candidates)
    members = np.zeros(cnt, dtype=np.uint8)
    for i in decision.members:
        members[i] = 1
    sbuf = np.empty(cnt, dtype=np.float64)
    qbuf = np.empty((p, p, 3), dtype=np.float32)
    nbuf = np.empty((p, p, 3), dtype=np.float32)
    gc1 = np.empty(3, dtype=np.float64)
    gc2 = np.empty(3, dtype=np.float64)
    gh1 = np.empty(16, dtype=np.float64)
    gh2 = np.empty(16, dtype=np.float64)
    k = _scan._select_patch(
        dcode, x, y, state.height, state.width, cnt, cx, cy, csrc, members,
        state.ref_lab, state.src_lab, state.src_fc, state.src_fg,
        state.src_dims, state.f_mats, state.inv_diag,
        decision.fc_hat, decision.fg_hat, p, l4, l5, l6, l7, l8,
        inv2sc2, inv2sg2, inv2sh2, inv2se2, tie, sbuf, qbuf, nbuf,
        gc1, gc2, gh1, gh2)
    return PatchChoice(candidate_index=int(k),
                       source_index=int(csrc[k]),
                       x=int(cx[k]), y=int(cy[k]))


def apply_patch(state: ScanState, x: int, y: int, choice: PatchChoice
                ) -> None:
    """Overwrite the patch around (x, y) with the chosen source window."""
    p = state.config.patch_size
    _scan._apply_patch(
        x, y, state.height, state.width, 0,
        np.array([choice.x], dtype=np.int64),
        np.array([choice.y], dtype=np.int64),
        np.array([choice.source_index], dtype=np.int64),
        state.src_rgb, state.src_lab, state.src_fc, state.src_fg,
        state.src_dims, state.ref_rgb, state.ref_lab, state.ref_fc,
        state.ref_fg, state.written, state.stale, p)


def update_correspondences(state: ScanState, x: int, y: int, direction: str,
                           candidates: list[Candidate],
                           decision: Decision) -> None:
    """Re-anchor all sources' correspondences at a just-replaced pixel.

    ``candidates`` must be the unmodified result of :func:`candidate_set`
    for the same pixel and direction (gather layout is assumed).
    """
    dcode = _dir_code(direction)
    (_p, _min_pts, _refresh, l1, l2, l3, _l4, _l5, _l6, _l7, _l8, inv2sc2,
     inv2sg2, inv2se2, _inv2sh2, _t_r, _eps, _tie) = state.params()
    cnt, cx, cy, csrc, _ = _candidate_arrays(candidates)
    if cnt == 0:
        return
    navail = cnt // state.n_sources
    members = np.zeros(cnt, dtype=np.uint8)
    for i in decision.members:
        members[i] = 1
    _scan._update_corr(
        dcode, x, y, state.height, state.width, navail, cx, cy, csrc,
        members, state.corr, state.conf, state.src_dims, state.f_mats,
        state.inv_diag, state.ref_fc, state.ref_fg, state.src_fc,
        state.src_fg, l1, l2, l3, inv2sc2, inv2sg2, inv2se2)


def run_scan(state: ScanState, direction: str,
             snapshot_callback: Callable[[Snapshot], None] | None = None
             ) -> int:
    """Execute one full scan over the reference; returns the dynamic count.

    When the configuration asks for snapshots the scan is chunked into
    row spans so the callback observes the working image roughly every
    ``snapshot_every`` decided pixels (rounded up to whole rows).
    """
    dcode = _dir_code(direction)
    h, w = state.height, state.width
    (p, min_pts, refresh, l1, l2, l3, l4, l5, l6, l7, l8, inv2sc2, inv2sg2,
     inv2se2, inv2sh2, t_r, eps, tie) = state.params()
    state.label.fill(1)
    every = state.config.snapshot_every
    if snapshot_callback is not None and every > 0:
        rows = max(1, every // w)
    else:
        rows = h
    count = 0
    decided = 0
    # Row spans are consumed in scan order: top-down or bottom-up.
    spans: list[tuple[int, int]] = []
    if dcode == _scan.DOWN:
        y = 0
        while y < h:
            spans.append((y, min(y + rows, h)))
            y += rows
    else:
        y = h
        while y > 0:
            spans.append((max(0, y - rows), y))
            y -= rows
    for (y0, y1) in spans:
        count += _scan._scan_span(
            dcode, y0, y1, state.ref_rgb, state.ref_lab, state.ref_fc,
            state.ref_fg, state.stale, state.gradient_scale, state.src_rgb,
            state.src_lab, state.src_fc, state.src_fg, state.src_dims,
            state.f_mats, state.inv_diag, state.corr, state.conf,
            state.label, state.cumulative, state.written, p, min_pts,
            refresh, l1, l2, l3, l4, l5, l6, l7, l8, inv2sc2, inv2sg2,
            inv2se2, inv2sh2, t_r, eps, tie)
        decided += (y1 - y0) * w
        if snapshot_callback is not None and every > 0 and decided < h * w:
            snapshot_callback(Snapshot(
                scan_index=state.scan_count, direction=direction,
                decided=decided, image=state.ref_rgb.copy(),
                cumulative=state.cumulative.copy()))
    return count


def run(image_set: ImageSet, config: Config | None = None,
        snapshot_callback: Callable[[Snapshot], None] | None = None,
        cache_dir: str | None = None) -> RunResult:
    """Detect and remove dynamic content from the reference view."""
    cfg = config or Config()
    t_start = time.perf_counter()
    state = prepare_state(image_set, cfg, cache_dir)
    counts: list[int] = []
    dirs: list[str] = []
    converged = False
    for i in range(cfg.max_scans):
        direction = DIRECTIONS[i % 2]
        t0 = time.perf_counter()
        count = run_scan(state, direction, snapshot_callback)
        state.scan_count += 1
        counts.append(count)
        dirs.append(direction)
        logger.info("scan %d (%s): %d dynamic pixels (%.2f s)",
                    i + 1, direction, count, time.perf_counter() - t0)
        if count == 0:
            converged = True
            break
    if len(counts) > 2 and any(counts[i + 1] > counts[i]
                               for i in range(1, len(counts) - 1)):
        logger.warning("dynamic counts did not decrease monotonically "
                       "after the second scan: %s", counts)
    return RunResult(
        dynamic_map=DynamicMap(label=state.label.copy(),
                               cumulative=state.cumulative.copy()),
        cleaned=state.ref_rgb.copy(),
        written_mask=state.written.copy(),
        per_scan_counts=counts,
        scan_directions=dirs,
        seconds=time.perf_counter() - t_start,
        converged=converged,
        fundamentals=dict(state.fundamentals),
    )
