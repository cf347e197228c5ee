"""Two-view epipolar geometry: robust fundamental matrix estimation and
the Sampson-distance similarity kernel.

Conventions: a match row is (x1, y1, x2, y2) with side 1 the reference
view and side 2 the source view, and F satisfies x2^T F x1 = 0 for true
correspondences (homogeneous pixel coordinates (x, y, 1)).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import SIGMA_E

logger = logging.getLogger(__name__)

LOW_INLIER_RATIO = 0.2


class EpipolarError(Exception):
    """Raised when geometry cannot be estimated from the given matches."""


@dataclass
class FundamentalMatrix:
    """Estimated fundamental matrix with estimation diagnostics.

    Attributes:
        f: (3, 3) float64 matrix, rank 2, unit Frobenius norm.
        inlier_count: inliers of the final consensus set.
        inlier_ratio: inlier_count over the number of input matches.
        residual_median: median Sampson residual (px) over the inliers.
        low_inlier_warning: True when inlier_ratio fell below 0.2; the
            geometry term is then unreliable but the run proceeds.
        planar_degenerate: True when the matches were consistent with a
            plane and F is one member of the resulting solution family.
    """

    f: np.ndarray
    inlier_count: int = 0
    inlier_ratio: float = 0.0
    residual_median: float = 0.0
    low_inlier_warning: bool = False
    planar_degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "f": self.f.tolist(),
            "inlier_count": int(self.inlier_count),
            "inlier_ratio": float(self.inlier_ratio),
            "residual_median_px": float(self.residual_median),
            "low_inlier_warning": bool(self.low_inlier_warning),
            "planar_degenerate": bool(self.planar_degenerate),
        }


@dataclass(frozen=True)
class EpipolarKernel:
    """A fundamental matrix prepared for similarity evaluation.

    Holds the matrix expressed in the coordinates the kernel is applied
    in, together with the per-side scale factors that map pixel
    coordinates into those coordinates (1.0 when unnormalized).
    """

    f: np.ndarray
    inv_diag_ref: float = 1.0
    inv_diag_src: float = 1.0
    sigma_e: float = SIGMA_E

    def s_f(self, x_ref: np.ndarray, x_src: np.ndarray) -> np.ndarray:
        """Geometric similarity of pixel coordinate pairs.

        Both inputs are (..., 2) pixel coordinates; scaling is applied
        internally.
        """
        xr = np.asarray(x_ref, dtype=np.float64) * self.inv_diag_ref
        xs = np.asarray(x_src, dtype=np.float64) * self.inv_diag_src
        d = sampson_sq(xr, xs, self.f)
        return s_f_from_dist(d, self.sigma_e)


def _hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate points to zero centroid and scale mean norm to sqrt(2)."""
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    mean_dist = np.sqrt((centered ** 2).sum(axis=1)).mean()
    scale = math.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    t = np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])
    return centered * scale, t


def _eight_point(x1: np.ndarray, x2: np.ndarray,
                 allow_degenerate: bool = False) -> np.ndarray | None:
    """Normalized eight-point estimate from >= 8 matches, or None when
    the design matrix is degenerate.

    With ``allow_degenerate`` the estimate is returned even when the
    constraint matrix has extra null directions. Coplanar scene points
    determine F only up to a family, every member of which satisfies the
    epipolar constraint for those points, so the smallest-singular-value
    solution is still a geometrically valid choice there.
    """
    n1, t1 = _hartley_normalize(x1)
    n2, t2 = _hartley_normalize(x2)
    n = x1.shape[0]
    a = np.empty((n, 9))
    a[:, 0] = n2[:, 0] * n1[:, 0]
    a[:, 1] = n2[:, 0] * n1[:, 1]
    a[:, 2] = n2[:, 0]
    a[:, 3] = n2[:, 1] * n1[:, 0]
    a[:, 4] = n2[:, 1] * n1[:, 1]
    a[:, 5] = n2[:, 1]
    a[:, 6] = n1[:, 0]
    a[:, 7] = n1[:, 1]
    a[:, 8] = 1.0
    try:
        _, s, vt = np.linalg.svd(a)
    except np.linalg.LinAlgError:
        return None
    if s[-2] < 1e-12 and not allow_degenerate:
        return None
    fn = vt[-1].reshape(3, 3)
    # Enforce rank 2.
    u, s, vt = np.linalg.svd(fn)
    s[2] = 0.0
    fn = u @ np.diag(s) @ vt
    f = t2.T @ fn @ t1
    return _canonical(f)


def _canonical(f: np.ndarray) -> np.ndarray:
    """Unit Frobenius norm with a deterministic sign."""
    norm = np.linalg.norm(f)
    if norm == 0.0:
        return f
    f = f / norm
    flat = f.ravel()
    pivot = flat[np.argmax(np.abs(flat))]
    if pivot < 0:
        f = -f
    return f


def sampson_sq(x1: np.ndarray, x2: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Squared Sampson distance of point pairs under F.

    Accepts (2,) or (..., 2) coordinate arrays for both sides. Pairs
    whose gradient denominator vanishes get +inf so any similarity built
    on them decays to zero.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    scalar = x1.ndim == 1
    p1 = np.concatenate([np.atleast_2d(x1),
                         np.ones((np.atleast_2d(x1).shape[0], 1))], axis=1)
    p2 = np.concatenate([np.atleast_2d(x2),
                         np.ones((np.atleast_2d(x2).shape[0], 1))], axis=1)
    fx1 = p1 @ f.T
    ftx2 = p2 @ f
    num = (p2 * fx1).sum(axis=1) ** 2
    den = fx1[:, 0] ** 2 + fx1[:, 1] ** 2 + ftx2[:, 0] ** 2 + ftx2[:, 1] ** 2
    out = np.full(num.shape, np.inf)
    ok = den > 0.0
    out[ok] = num[ok] / den[ok]
    return out[0] if scalar else out


def s_f_from_dist(d_sq, sigma_e: float = SIGMA_E):
    """Gaussian kernel on a squared Sampson distance; inf maps to 0."""
    d = np.asarray(d_sq, dtype=np.float64)
    out = np.exp(-np.where(np.isinf(d), 0.0, d) / (2.0 * sigma_e ** 2))
    out = np.where(np.isinf(d), 0.0, out)
    return float(out) if np.isscalar(d_sq) or d.ndim == 0 else out


def s_f(x1, x2, f: np.ndarray, sigma_e: float = SIGMA_E):
    """Geometric similarity exp(-d_sampson^2 / (2 sigma_e^2))."""
    return s_f_from_dist(sampson_sq(x1, x2, f), sigma_e)


def estimate_fundamental(matches: np.ndarray, threshold: float = 1.0,
                         confidence: float = 0.999, max_iters: int = 5000,
                         seed: int = 0) -> FundamentalMatrix:
    """RANSAC around the normalized eight-point algorithm.

    Args:
        matches: (N, 4) rows (x1, y1, x2, y2), N >= 8.
        threshold: inlier gate on squared Sampson distance, px^2.
        confidence: target probability of having sampled an
            outlier-free minimal set; drives adaptive early exit.
        max_iters: cap on sampling iterations.
        seed: RNG seed; identical inputs give identical results.

    Raises:
        EpipolarError: fewer than 8 matches, or every sample degenerate.
    """
    matches = np.asarray(matches, dtype=np.float64)
    if matches.ndim != 2 or matches.shape[1] != 4 or matches.shape[0] < 8:
        raise EpipolarError(
            "degenerate geometry: need at least 8 matches to estimate a "
            f"fundamental matrix, got {0 if matches.ndim != 2 else matches.shape[0]}")
    x1 = matches[:, 0:2]
    x2 = matches[:, 2:4]
    n = matches.shape[0]
    rng = np.random.default_rng(seed)

    best_f = None
    best_inliers = None
    best_count = -1
    iters = max_iters
    it = 0
    while it < iters:
        it += 1
        idx = rng.choice(n, size=8, replace=False)
        f = _eight_point(x1[idx], x2[idx])
        if f is None:
            continue
        d = sampson_sq(x1, x2, f)
        inliers = d < threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_f = f
            best_inliers = inliers
            w = count / n
            if w > 0:
                denom = math.log(max(1e-12, 1.0 - w ** 8))
                if denom < 0:
                    needed = math.log(max(1e-12, 1.0 - confidence)) / denom
                    iters = min(max_iters, max(it, int(math.ceil(needed))))
    planar = False
    if best_f is None:
        # Every minimal sample was rank deficient: the matches are
        # consistent with a plane (or worse). F is then only determined
        # up to a family; fit one member on all matches and flag it.
        best_f = _eight_point(x1, x2, allow_degenerate=True)
        if best_f is None:
            raise EpipolarError(
                "degenerate geometry: fundamental matrix estimation "
                "failed on every sample and on the full match set")
        planar = True
        best_inliers = sampson_sq(x1, x2, best_f) < threshold
        best_count = int(best_inliers.sum())
        logger.warning(
            "matches are planar-degenerate; using one member of the "
            "fundamental matrix family (%d/%d consistent)",
            best_count, n)

    if best_count >= 8 and not planar:
        refit = _eight_point(x1[best_inliers], x2[best_inliers])
        if refit is not None:
            d = sampson_sq(x1, x2, refit)
            inliers = d < threshold
            if int(inliers.sum()) >= best_count:
                best_f = refit
                best_inliers = inliers
                best_count = int(inliers.sum())

    d = sampson_sq(x1, x2, best_f)
    resid = np.sqrt(d[best_inliers]) if best_count > 0 else np.array([0.0])
    ratio = best_count / n
    return FundamentalMatrix(
        f=best_f,
        inlier_count=best_count,
        inlier_ratio=float(ratio),
        residual_median=float(np.median(resid)),
        low_inlier_warning=bool(ratio < LOW_INLIER_RATIO),
        planar_degenerate=planar,
    )


def normalized_fundamental(f: np.ndarray, ref_shape: tuple[int, int],
                           src_shape: tuple[int, int]) -> np.ndarray:
    """Re-express a pixel-coordinate F for diagonal-normalized coordinates.

    ``ref_shape`` and ``src_shape`` are (height, width). If x_hat =
    x / diag on each side, the returned matrix satisfies
    x2_hat^T F_hat x1_hat = 0 exactly when x2^T F x1 = 0. The result is
    Frobenius-normalized.
    """
    d1 = math.hypot(ref_shape[0], ref_shape[1])
    d2 = math.hypot(src_shape[0], src_shape[1])
    t1 = np.diag([d1, d1, 1.0])
    t2 = np.diag([d2, d2, 1.0])
    return _canonical(t2 @ f @ t1)


def prepare_epipolar_kernel(fm: FundamentalMatrix | np.ndarray,
                            ref_shape: tuple[int, int],
                            src_shape: tuple[int, int],
                            sigma_e: float = SIGMA_E,
                            normalize_coords: bool = True) -> EpipolarKernel:
    """Bundle F with the coordinate scaling the similarity kernel uses.

    With ``normalize_coords`` the Sampson distance is computed on
    coordinates divided by each image's diagonal, which makes sigma_e
    resolution-independent; otherwise raw pixels are used.
    """
    f = fm.f if isinstance(fm, FundamentalMatrix) else np.asarray(fm)
    if normalize_coords:
        fhat = normalized_fundamental(f, ref_shape, src_shape)
        return EpipolarKernel(
            f=fhat,
            inv_diag_ref=1.0 / math.hypot(ref_shape[0], ref_shape[1]),
            inv_diag_src=1.0 / math.hypot(src_shape[0], src_shape[1]),
            sigma_e=sigma_e,
        )
    return EpipolarKernel(f=_canonical(np.array(f, dtype=np.float64)),
                          inv_diag_ref=1.0, inv_diag_src=1.0,
                          sigma_e=sigma_e)


def dump_diagnostics(fundamentals: dict[int, FundamentalMatrix],
                     path: str) -> None:
    """Write per-source estimation diagnostics as JSON."""
    payload = {str(k): v.to_dict() for k, v in fundamentals.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
