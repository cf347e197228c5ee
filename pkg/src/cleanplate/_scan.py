"""Jitted kernels of the scan engine.

Everything here operates on the flat array form of the scan state:
padded per-source stacks plus the working reference image, its
descriptor fields, the per-source correspondence and similarity arrays,
and the per-scan / cumulative label maps. The Python wrappers in
``scan_engine`` call the same helpers one pixel at a time, so the fused
row-span kernel and the step-by-step API cannot diverge.

Candidate arrays follow gather layout: candidates are grouped by source
view in index order, with the horizontal-neighbor proposal first where
it exists. Every source contributes the same number of candidates
(``navail``, 1 or 2), which makes per-source slots trivial to locate.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._kernels import _sf_scalar
from .clustering import _dbscan_core, _pair_distance
from .features import _fc_at, _fg_at, _region_gc, _region_gh

DOWN = 0
UP = 1


@njit(cache=True)
def _extract_clamped(img, hlim, wlim, cy, cx, p, out):
    """Clamped p x p window around (cx, cy) honoring explicit bounds.

    Padded stacks are larger than the images they hold, so clamping must
    use the true image dimensions, not the array shape.
    """
    r = p // 2
    for dv in range(-r, r + 1):
        v = cy + dv
        if v < 0:
            v = 0
        elif v > hlim - 1:
            v = hlim - 1
        for du in range(-r, r + 1):
            u = cx + du
            if u < 0:
                u = 0
            elif u > wlim - 1:
                u = wlim - 1
            for ch in range(img.shape[2]):
                out[dv + r, du + r, ch] = img[v, u, ch]


@njit(cache=True)
def _gather(direction, x, y, h, w, src_dims, corr, conf, cx, cy, csrc,
            cconf):
    """Collect candidate matches for (x, y) from already-decided neighbors.

    Each source proposes the horizontal neighbor's target shifted one
    step along the scan direction and the vertical neighbor's target
    shifted likewise, clamped into the source bounds. Returns
    (candidate count, proposals per source).
    """
    s_count = src_dims.shape[0]
    if direction == DOWN:
        ax, ay, adx, ady = x - 1, y, 1, 0
        bx, by, bdx, bdy = x, y - 1, 0, 1
    else:
        ax, ay, adx, ady = x + 1, y, -1, 0
        bx, by, bdx, bdy = x, y + 1, 0, -1
    a_ok = 0 <= ax < w and 0 <= ay < h
    b_ok = 0 <= bx < w and 0 <= by < h
    cnt = 0
    for s in range(s_count):
        hs = src_dims[s, 0]
        ws = src_dims[s, 1]
        if a_ok:
            u = corr[s, ay, ax, 0] + adx
            v = corr[s, ay, ax, 1] + ady
            if u < 0:
                u = 0
            elif u > ws - 1:
                u = ws - 1
            if v < 0:
                v = 0
            elif v > hs - 1:
                v = hs - 1
            cx[cnt] = u
            cy[cnt] = v
            csrc[cnt] = s
            cconf[cnt] = conf[s, ay, ax]
            cnt += 1
        if b_ok:
            u = corr[s, by, bx, 0] + bdx
            v = corr[s, by, bx, 1] + bdy
            if u < 0:
                u = 0
            elif u > ws - 1:
                u = ws - 1
            if v < 0:
                v = 0
            elif v > hs - 1:
                v = hs - 1
            cx[cnt] = u
            cy[cnt] = v
            csrc[cnt] = s
            cconf[cnt] = conf[s, by, bx]
            cnt += 1
    navail = (1 if a_ok else 0) + (1 if b_ok else 0)
    return cnt, navail


@njit(cache=True)
def _decide(cnt, cx, cy, csrc, cconf, src_fc, src_fg, ref_fc_pix,
            ref_fg_pix, l4, l5, inv2sc2, inv2sg2, eps, min_pts, t_r,
            dwork, members, fc_hat, fg_hat):
    """Cluster the candidates and judge the pixel against the consensus.

    Returns (pixel label, consensus similarity M). Label 1 is static.
    An empty candidate set, or one that yields no cluster, cannot argue
    for motion and is static by definition (M reported as 1). Otherwise
    the cluster with the largest summed confidence wins (ties: more
    members, then lower minimum source index, then first index) and the
    pixel is static iff M exceeds t_r, where M compares the pixel's own
    descriptors with the cluster's confidence-weighted mean.
    """
    for i in range(members.shape[0]):
        members[i] = 0
    if cnt == 0:
        return 1, 1.0
    for i in range(cnt):
        dwork[i, i] = 0.0
        for j in range(i + 1, cnt):
            d = _pair_distance(src_fc[csrc[i], cy[i], cx[i]],
                               src_fg[csrc[i], cy[i], cx[i]],
                               src_fc[csrc[j], cy[j], cx[j]],
                               src_fg[csrc[j], cy[j], cx[j]],
                               l4, l5, inv2sc2, inv2sg2)
            dwork[i, j] = d
            dwork[j, i] = d
    labels = _dbscan_core(dwork[:cnt, :cnt], eps, min_pts)
    nk = -1
    for i in range(cnt):
        if labels[i] > nk:
            nk = labels[i]
    nk += 1
    if nk == 0:
        return 1, 1.0
    best_k = -1
    best_b = -1.0
    best_n = 0
    best_src = 1 << 30
    best_first = 1 << 30
    for k in range(nk):
        b = 0.0
        n = 0
        msrc = 1 << 30
        first = 1 << 30
        for i in range(cnt):
            if labels[i] == k:
                b += cconf[i]
                n += 1
                if csrc[i] < msrc:
                    msrc = csrc[i]
                if i < first:
                    first = i
        if n == 0:
            continue
        take = False
        if b > best_b:
            take = True
        elif b == best_b:
            if n > best_n:
                take = True
            elif n == best_n:
                if msrc < best_src:
                    take = True
                elif msrc == best_src and first < best_first:
                    take = True
        if take:
            best_k = k
            best_b = b
            best_n = n
            best_src = msrc
            best_first = first
    for j in range(3):
        fc_hat[j] = 0.0
    for j in range(128):
        fg_hat[j] = 0.0
    for i in range(cnt):
        if labels[i] == best_k:
            members[i] = 1
            wgt = cconf[i] / best_b if best_b > 1e-12 else 1.0 / best_n
            for j in range(3):
                fc_hat[j] += wgt * src_fc[csrc[i], cy[i], cx[i], j]
            for j in range(128):
                fg_hat[j] += wgt * src_fg[csrc[i], cy[i], cx[i], j]
    dc = 0.0
    for j in range(3):
        t = ref_fc_pix[j] - fc_hat[j]
        dc += t * t
    dg = 0.0
    for j in range(128):
        t = ref_fg_pix[j] - fg_hat[j]
        dg += t * t
    m = l4 * np.exp(-dc * inv2sc2) + l5 * np.exp(-dg * inv2sg2)
    pix_label = 1 if m > t_r else 0
    return pix_label, m


@njit(cache=True)
def _overlap_term(wq, wr, l6, l7, inv2sc2, inv2sh2, gc1, gc2, gh1, gh2):
    _region_gc(wq, gc1)
    _region_gc(wr, gc2)
    dc = 0.0
    for i in range(3):
        t = gc1[i] - gc2[i]
        dc += t * t
    _region_gh(wq[:, :, 0], gh1)
    _region_gh(wr[:, :, 0], gh2)
    dh = 0.0
    for i in range(16):
        t = gh1[i] - gh2[i]
        dh += t * t
    return l6 * np.exp(-dc * inv2sc2) + l7 * np.exp(-dh * inv2sh2)


@njit(cache=True)
def _score_candidate(direction, x, y, h, w, u, v, ref_lab, src_lab_s, hs,
                     ws, fmat_s, inv_dr, inv_ds, p, l6, l7, l8, inv2sc2,
                     inv2sh2, inv2se2, qbuf, nbuf, gc1, gc2, gh1, gh2):
    """Agreement of the candidate patch with the already-scanned context.

    The candidate patch overlaps the patches of the two neighbors behind
    the scan front on p x (p-1) regions; both overlap descriptors and
    the epipolar consistency of the centers contribute.
    """
    _extract_clamped(src_lab_s, hs, ws, v, u, p, qbuf)
    score = 0.0
    nx = x - 1 if direction == DOWN else x + 1
    if 0 <= nx < w:
        _extract_clamped(ref_lab, h, w, y, nx, p, nbuf)
        if direction == DOWN:
            score += _overlap_term(qbuf[:, 0:p - 1], nbuf[:, 1:p], l6, l7,
                                   inv2sc2, inv2sh2, gc1, gc2, gh1, gh2)
        else:
            score += _overlap_term(qbuf[:, 1:p], nbuf[:, 0:p - 1], l6, l7,
                                   inv2sc2, inv2sh2, gc1, gc2, gh1, gh2)
    ny = y - 1 if direction == DOWN else y + 1
    if 0 <= ny < h:
        _extract_clamped(ref_lab, h, w, ny, x, p, nbuf)
        if direction == DOWN:
            score += _overlap_term(qbuf[0:p - 1, :], nbuf[1:p, :], l6, l7,
                                   inv2sc2, inv2sh2, gc1, gc2, gh1, gh2)
        else:
            score += _overlap_term(qbuf[1:p, :], nbuf[0:p - 1, :], l6, l7,
                                   inv2sc2, inv2sh2, gc1, gc2, gh1, gh2)
    score += l8 * _sf_scalar(np.float64(x), np.float64(y), np.float64(u),
                             np.float64(v), fmat_s, inv_dr, inv_ds, inv2se2)
    return score


@njit(cache=True)
def _select_patch(direction, x, y, h, w, cnt, cx, cy, csrc, members,
                  ref_lab, src_lab, src_fc, src_fg, src_dims, f_mats,
                  inv_diag, fc_hat, fg_hat, p, l4, l5, l6, l7, l8,
                  inv2sc2, inv2sg2, inv2sh2, inv2se2, tie_eps, sbuf,
                  qbuf, nbuf, gc1, gc2, gh1, gh2):
    """Pick the best-cluster candidate whose patch fits the context.

    Scores every cluster member; candidates within ``tie_eps`` of the
    maximum are re-ranked by closeness of their descriptors to the
    cluster means, then by lower source index, then by candidate order.
    Returns the winning candidate index, or -1 for an empty cluster.
    """
    smax = -1e30
    for i in range(cnt):
        if members[i] == 0:
            sbuf[i] = -1e30
            continue
        s = csrc[i]
        sc = _score_candidate(direction, x, y, h, w, cx[i], cy[i], ref_lab,
                              src_lab[s], src_dims[s, 0], src_dims[s, 1],
                              f_mats[s], inv_diag[s, 0], inv_diag[s, 1], p,
                              l6, l7, l8, inv2sc2, inv2sh2, inv2se2, qbuf,
                              nbuf, gc1, gc2, gh1, gh2)
        sbuf[i] = sc
        if sc > smax:
            smax = sc
    best = -1
    best_key = 1e30
    best_src = 1 << 30
    for i in range(cnt):
        if members[i] == 0 or sbuf[i] < smax - tie_eps:
            continue
        dc = 0.0
        for j in range(3):
            t = fc_hat[j] - src_fc[csrc[i], cy[i], cx[i], j]
            dc += t * t
        dg = 0.0
        for j in range(128):
            t = fg_hat[j] - src_fg[csrc[i], cy[i], cx[i], j]
            dg += t * t
        key = l4 * dc + l5 * dg
        if best < 0:
            take = True
        elif key < best_key - 1e-12:
            take = True
        elif key <= best_key + 1e-12 and csrc[i] < best_src:
            take = True
        else:
            take = False
        if take:
            best = i
            best_key = key
            best_src = csrc[i]
    return best


@njit(cache=True)
def _apply_patch(x, y, h, w, k, cx, cy, csrc, src_rgb, src_lab, src_fc,
                 src_fg, src_dims, ref_rgb, ref_lab, ref_fc, ref_fg,
                 written, stale, p):
    """Write candidate k's patch over (x, y) and pin the center descriptors.

    The source window is clamped to the source bounds; reference pixels
    outside the image are skipped. Only the replaced center adopts the
    source's descriptors; surrounding descriptors keep their values but
    are flagged stale, including the one-pixel gradient halo beyond the
    descriptor window.
    """
    s = csrc[k]
    u = cx[k]
    v = cy[k]
    hs = src_dims[s, 0]
    ws = src_dims[s, 1]
    r = p // 2
    for dv in range(-r, r + 1):
        ry = y + dv
        if ry < 0 or ry >= h:
            continue
        sv = v + dv
        if sv < 0:
            sv = 0
        elif sv > hs - 1:
            sv = hs - 1
        for du in range(-r, r + 1):
            rx = x + du
            if rx < 0 or rx >= w:
                continue
            su = u + du
            if su < 0:
                su = 0
            elif su > ws - 1:
                su = ws - 1
            for ch in range(3):
                ref_rgb[ry, rx, ch] = src_rgb[s, sv, su, ch]
                ref_lab[ry, rx, ch] = src_lab[s, sv, su, ch]
            written[ry, rx] = 1
    halo = 2 * r + 1
    for dv in range(-halo, halo + 1):
        ry = y + dv
        if ry < 0 or ry >= h:
            continue
        for du in range(-halo, halo + 1):
            rx = x + du
            if rx < 0 or rx >= w:
                continue
            stale[ry, rx] = 1
    for ch in range(3):
        ref_fc[y, x, ch] = src_fc[s, v, u, ch]
    for i in range(128):
        ref_fg[y, x, i] = src_fg[s, v, u, i]
    stale[y, x] = 0


@njit(cache=True)
def _h_sim(x, y, u, v, ref_fc_pix, ref_fg_pix, src_fc_s, src_fg_s, fmat,
           inv_dr, inv_ds, l1, l2, l3, inv2sc2, inv2sg2, inv2se2):
    """Full three-term similarity of reference pixel and source position."""
    dc = 0.0
    for j in range(3):
        t = ref_fc_pix[j] - src_fc_s[v, u, j]
        dc += t * t
    dg = 0.0
    for j in range(128):
        t = ref_fg_pix[j] - src_fg_s[v, u, j]
        dg += t * t
    sf = _sf_scalar(np.float64(x), np.float64(y), np.float64(u),
                    np.float64(v), fmat, inv_dr, inv_ds, inv2se2)
    return (l1 * np.exp(-dc * inv2sc2) + l2 * np.exp(-dg * inv2sg2)
            + l3 * sf)


@njit(cache=True)
def _update_corr(direction, x, y, h, w, navail, cx, cy, csrc, members,
                 corr, conf, src_dims, f_mats, inv_diag, ref_fc, ref_fg,
                 src_fc, src_fg, l1, l2, l3, inv2sc2, inv2sg2, inv2se2):
    """Re-anchor every source's correspondence at a just-replaced pixel.

    Per source: if exactly one of its proposals joined the winning
    cluster it becomes the new target; if both did, the one with higher
    full similarity wins; if neither did, the proposals and the raw
    (unshifted) neighbor targets compete on epipolar consistency alone.
    The stored confidence is always the full similarity of the new
    target against the pixel's post-replacement descriptors.
    """
    if navail == 0:
        return
    s_count = src_dims.shape[0]
    if direction == DOWN:
        ax, ay = x - 1, y
        bx, by = x, y - 1
    else:
        ax, ay = x + 1, y
        bx, by = x, y + 1
    a_ok = 0 <= ax < w and 0 <= ay < h
    b_ok = 0 <= bx < w and 0 <= by < h
    ref_fc_pix = ref_fc[y, x]
    ref_fg_pix = ref_fg[y, x]
    for s in range(s_count):
        base = s * navail
        n_in = 0
        for t in range(navail):
            if members[base + t] == 1:
                n_in += 1
        if n_in == 0:
            # Geometry alone arbitrates: shifted proposals first, then
            # raw neighbor targets, first maximum kept.
            best_sf = -1.0
            bu = cx[base]
            bv = cy[base]
            for t in range(navail):
                sf = _sf_scalar(np.float64(x), np.float64(y),
                                np.float64(cx[base + t]),
                                np.float64(cy[base + t]), f_mats[s],
                                inv_diag[s, 0], inv_diag[s, 1], inv2se2)
                if sf > best_sf:
                    best_sf = sf
                    bu = cx[base + t]
                    bv = cy[base + t]
            if a_ok:
                u = corr[s, ay, ax, 0]
                v = corr[s, ay, ax, 1]
                sf = _sf_scalar(np.float64(x), np.float64(y), np.float64(u),
                                np.float64(v), f_mats[s], inv_diag[s, 0],
                                inv_diag[s, 1], inv2se2)
                if sf > best_sf:
                    best_sf = sf
                    bu = u
                    bv = v
            if b_ok:
                u = corr[s, by, bx, 0]
                v = corr[s, by, bx, 1]
                sf = _sf_scalar(np.float64(x), np.float64(y), np.float64(u),
                                np.float64(v), f_mats[s], inv_diag[s, 0],
                                inv_diag[s, 1], inv2se2)
                if sf > best_sf:
                    best_sf = sf
                    bu = u
                    bv = v
            corr[s, y, x, 0] = bu
            corr[s, y, x, 1] = bv
            conf[s, y, x] = _h_sim(x, y, bu, bv, ref_fc_pix, ref_fg_pix,
                                   src_fc[s], src_fg[s], f_mats[s],
                                   inv_diag[s, 0], inv_diag[s, 1], l1, l2,
                                   l3, inv2sc2, inv2sg2, inv2se2)
            continue
        chosen = -1
        if n_in == navail and navail == 2:
            h0 = _h_sim(x, y, cx[base], cy[base], ref_fc_pix, ref_fg_pix,
                        src_fc[s], src_fg[s], f_mats[s], inv_diag[s, 0],
                        inv_diag[s, 1], l1, l2, l3, inv2sc2, inv2sg2,
                        inv2se2)
            h1 = _h_sim(x, y, cx[base + 1], cy[base + 1], ref_fc_pix,
                        ref_fg_pix, src_fc[s], src_fg[s], f_mats[s],
                        inv_diag[s, 0], inv_diag[s, 1], l1, l2, l3,
                        inv2sc2, inv2sg2, inv2se2)
            if h1 > h0:
                chosen = base + 1
                hval = h1
            else:
                chosen = base
                hval = h0
        else:
            for t in range(navail):
                if members[base + t] == 1:
                    chosen = base + t
                    break
            hval = _h_sim(x, y, cx[chosen], cy[chosen], ref_fc_pix,
                          ref_fg_pix, src_fc[s], src_fg[s], f_mats[s],
                          inv_diag[s, 0], inv_diag[s, 1], l1, l2, l3,
                          inv2sc2, inv2sg2, inv2se2)
        corr[s, y, x, 0] = cx[chosen]
        corr[s, y, x, 1] = cy[chosen]
        conf[s, y, x] = hval


@njit(cache=True)
def _scan_span(direction, y0, y1, ref_rgb, ref_lab, ref_fc, ref_fg, stale,
               grad_scale, src_rgb, src_lab, src_fc, src_fg, src_dims,
               f_mats, inv_diag, corr, conf, label, cumulative, written,
               p, min_pts, refresh, l1, l2, l3, l4, l5, l6, l7, l8,
               inv2sc2, inv2sg2, inv2se2, inv2sh2, t_r, eps, tie_eps):
    """Decide rows [y0, y1) in scan order; returns the dynamic count.

    A down scan walks rows top to bottom with x increasing, an up scan
    walks rows bottom to top with x decreasing, so the span must be fed
    in the matching order by the caller.
    """
    h, w = label.shape
    cap = 2 * src_dims.shape[0]
    cx = np.empty(cap, dtype=np.int64)
    cy = np.empty(cap, dtype=np.int64)
    csrc = np.empty(cap, dtype=np.int64)
    cconf = np.empty(cap, dtype=np.float64)
    members = np.zeros(cap, dtype=np.uint8)
    dwork = np.empty((cap, cap), dtype=np.float64)
    fc_hat = np.empty(3, dtype=np.float64)
    fg_hat = np.empty(128, dtype=np.float64)
    sbuf = np.empty(cap, dtype=np.float64)
    qbuf = np.empty((p, p, 3), dtype=np.float32)
    nbuf = np.empty((p, p, 3), dtype=np.float32)
    gc1 = np.empty(3, dtype=np.float64)
    gc2 = np.empty(3, dtype=np.float64)
    gh1 = np.empty(16, dtype=np.float64)
    gh2 = np.empty(16, dtype=np.float64)
    fcbuf = np.empty(3, dtype=np.float32)
    fgbuf = np.empty(128, dtype=np.float32)
    lref = ref_lab[:, :, 0]
    count = 0
    for yy in range(y1 - y0):
        y = y0 + yy if direction == DOWN else y1 - 1 - yy
        for xx in range(w):
            x = xx if direction == DOWN else w - 1 - xx
            if refresh == 1 and stale[y, x] == 1:
                _fc_at(ref_lab, y, x, p, fcbuf)
                for ch in range(3):
                    ref_fc[y, x, ch] = fcbuf[ch]
                _fg_at(lref, y, x, p, fgbuf)
                for i in range(128):
                    ref_fg[y, x, i] = fgbuf[i] * grad_scale
                stale[y, x] = 0
            cnt, navail = _gather(direction, x, y, h, w, src_dims, corr,
                                  conf, cx, cy, csrc, cconf)
            pix_label, _ = _decide(cnt, cx, cy, csrc, cconf, src_fc, src_fg,
                                   ref_fc[y, x], ref_fg[y, x], l4, l5,
                                   inv2sc2, inv2sg2, eps, min_pts, t_r,
                                   dwork, members, fc_hat, fg_hat)
            label[y, x] = pix_label
            if pix_label == 0:
                cumulative[y, x] = 1
                count += 1
                k = _select_patch(direction, x, y, h, w, cnt, cx, cy, csrc,
                                  members, ref_lab, src_lab, src_fc,
                                  src_fg, src_dims, f_mats, inv_diag,
                                  fc_hat, fg_hat, p, l4, l5, l6, l7, l8,
                                  inv2sc2, inv2sg2, inv2sh2, inv2se2,
                                  tie_eps, sbuf, qbuf, nbuf, gc1, gc2,
                                  gh1, gh2)
                if k >= 0:
                    _apply_patch(x, y, h, w, k, cx, cy, csrc, src_rgb,
                                 src_lab, src_fc, src_fg, src_dims,
                                 ref_rgb, ref_lab, ref_fc, ref_fg,
                                 written, stale, p)
                    _update_corr(direction, x, y, h, w, navail, cx, cy,
                                 csrc, members, corr, conf, src_dims,
                                 f_mats, inv_diag, ref_fc, ref_fg, src_fc,
                                 src_fg, l1, l2, l3, inv2sc2, inv2sg2,
                                 inv2se2)
    return count
