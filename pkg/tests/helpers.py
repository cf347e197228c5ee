"""Shared test utilities: synthetic camera rigs, scene adapters, a
brute-force clustering oracle, and scan-state construction helpers."""

from __future__ import annotations

import dataclasses

import numpy as np

from cleanplate.config import Config
from cleanplate.image_set import ImageSet
from cleanplate.scan_engine import ScanState


def canonical(f: np.ndarray) -> np.ndarray:
    """Unit Frobenius norm with the largest-|element| made positive."""
    f = np.asarray(f, dtype=np.float64)
    f = f / np.linalg.norm(f)
    flat = f.ravel()
    if flat[np.argmax(np.abs(flat))] < 0:
        f = -f
    return f


def _rotation(rx: float, ry: float, rz: float) -> np.ndarray:
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]],
                     [v[2], 0, -v[0]],
                     [-v[1], v[0], 0]], dtype=np.float64)


def make_rig(n: int = 250, planar: bool = False, seed: int = 12345
             ) -> tuple[np.ndarray, np.ndarray]:
    """Exact two-view correspondences and the true fundamental matrix.

    Camera 1 is K[I|0], camera 2 is K[R|t]; returned matches are rows
    (x1, y1, x2, y2) satisfying x2^T F x1 = 0 up to float rounding.
    With ``planar`` the 3D points lie on one plane, which leaves F
    determined only up to a family.
    """
    k = np.array([[400.0, 0.0, 160.0],
                  [0.0, 400.0, 120.0],
                  [0.0, 0.0, 1.0]])
    r = _rotation(0.03, -0.02, 0.015)
    t = np.array([0.25, 0.08, 0.03])
    f_true = np.linalg.inv(k).T @ _skew(t) @ r @ np.linalg.inv(k)

    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.2, 1.2, n)
    y = rng.uniform(-0.9, 0.9, n)
    if planar:
        z = 4.0 + 0.3 * x + 0.1 * y
    else:
        z = rng.uniform(3.0, 7.0, n)
    pts = np.stack([x, y, z], axis=1)

    p1 = (k @ pts.T).T
    p1 = p1[:, :2] / p1[:, 2:3]
    cam2 = (r @ pts.T).T + t
    p2 = (k @ cam2.T).T
    p2 = p2[:, :2] / p2[:, 2:3]
    return np.hstack([p1, p2]), canonical(f_true)


def image_set_from_scene(scene) -> ImageSet:
    """Wrap a SyntheticScene's views as an in-memory ImageSet."""
    return ImageSet(
        images=[v.copy() for v in scene.views],
        names=[f"view_{v:02d}" for v in range(len(scene.views))],
        reference_index=scene.params.reference_index,
    )


def eps_components(dist: np.ndarray, eps: float) -> frozenset:
    """Connected components of the eps-threshold graph, brute force."""
    n = dist.shape[0]
    seen = np.zeros(n, dtype=bool)
    parts = []
    for i in range(n):
        if seen[i]:
            continue
        stack = [i]
        seen[i] = True
        comp = []
        while stack:
            p = stack.pop()
            comp.append(p)
            for j in range(n):
                if not seen[j] and dist[p, j] <= eps:
                    seen[j] = True
                    stack.append(j)
        parts.append(frozenset(comp))
    return frozenset(parts)


def partition(cluster_set) -> frozenset:
    """ClusterSet clusters as an order-free partition value."""
    return frozenset(frozenset(c) for c in cluster_set.clusters)


def clone_state(state: ScanState) -> ScanState:
    """Independent deep copy of a scan state (arrays included)."""
    return dataclasses.replace(
        state,
        ref_rgb=state.ref_rgb.copy(), ref_lab=state.ref_lab.copy(),
        ref_fc=state.ref_fc.copy(), ref_fg=state.ref_fg.copy(),
        stale=state.stale.copy(), src_rgb=state.src_rgb.copy(),
        src_lab=state.src_lab.copy(), src_fc=state.src_fc.copy(),
        src_fg=state.src_fg.copy(), src_dims=state.src_dims.copy(),
        f_mats=state.f_mats.copy(), inv_diag=state.inv_diag.copy(),
        corr=state.corr.copy(), conf=state.conf.copy(),
        label=state.label.copy(), cumulative=state.cumulative.copy(),
        written=state.written.copy(),
        fundamentals=dict(state.fundamentals),
        source_views=list(state.source_views),
    )


def blank_state(config: Config | None = None, h: int = 8, w: int = 8,
                n_src: int = 1, hs: int = 12, ws: int = 12) -> ScanState:
    """Empty scan state with hand-settable descriptor and image arrays."""
    cfg = config or Config()
    dims = np.zeros((n_src, 2), dtype=np.int32)
    dims[:, 0] = hs
    dims[:, 1] = ws
    return ScanState(
        config=cfg,
        ref_rgb=np.zeros((h, w, 3), dtype=np.uint8),
        ref_lab=np.zeros((h, w, 3), dtype=np.float32),
        ref_fc=np.zeros((h, w, 3), dtype=np.float32),
        ref_fg=np.zeros((h, w, 128), dtype=np.float32),
        stale=np.zeros((h, w), dtype=np.uint8),
        gradient_scale=1.0,
        src_rgb=np.zeros((n_src, hs, ws, 3), dtype=np.uint8),
        src_lab=np.zeros((n_src, hs, ws, 3), dtype=np.float32),
        src_fc=np.zeros((n_src, hs, ws, 3), dtype=np.float32),
        src_fg=np.zeros((n_src, hs, ws, 128), dtype=np.float32),
        src_dims=dims,
        f_mats=np.zeros((n_src, 3, 3), dtype=np.float64),
        inv_diag=np.ones((n_src, 2), dtype=np.float64),
        corr=np.zeros((n_src, h, w, 2), dtype=np.int32),
        conf=np.zeros((n_src, h, w), dtype=np.float32),
        label=np.ones((h, w), dtype=np.uint8),
        cumulative=np.zeros((h, w), dtype=np.uint8),
        written=np.zeros((h, w), dtype=np.uint8),
    )
