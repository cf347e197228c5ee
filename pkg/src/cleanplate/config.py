"""Runtime configuration and the fixed weights of the similarity model.

All weights and bandwidths default to the values the detection and
replacement formulas were calibrated with.  ``lambda4`` and ``lambda5``
are not free parameters: they are the first two similarity weights
renormalized to sum to one, and are exposed as read-only properties.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

# Similarity map weights (color, gradient, epipolar). Sum to 1.
LAMBDA1 = 0.15
LAMBDA2 = 0.40
LAMBDA3 = 0.45

# Patch selection weights (color overlap, orientation overlap, epipolar).
LAMBDA6 = 0.12
LAMBDA7 = 0.36
LAMBDA8 = 0.03

# Gaussian kernel bandwidths: color, gradient, epipolar, orientation hist.
SIGMA_C = 4.8
SIGMA_G = 0.25
SIGMA_E = 0.17
SIGMA_H = 4.8

DEFAULT_PATCH_SIZE = 7
DEFAULT_T_R = 0.5
DEFAULT_DBSCAN_EPS = 0.35
DEFAULT_MIN_PTS = 1
DEFAULT_PM_ITERS = 6
DEFAULT_MAX_SCANS = 10

# Tolerance inside which two patch scores count as tied.
TIE_EPS = 1e-6


class ConfigError(Exception):
    """Raised when a configuration value is outside its legal range."""


@dataclass
class Config:
    """Tunable parameters for a detection-and-removal run.

    Attributes:
        lambda1, lambda2, lambda3: Weights of the color, gradient and
            epipolar terms of the pixel similarity map. Must sum to 1.
        lambda6, lambda7, lambda8: Weights of the color-overlap,
            orientation-overlap and epipolar terms of the patch score.
        sigma_c, sigma_g, sigma_e, sigma_h: Kernel bandwidths for color,
            gradient, epipolar and orientation-histogram distances.
        patch_size: Side length p of square patches. Odd, in [5, 31].
        t_r: Static/dynamic decision threshold on the consensus score.
        dbscan_eps: Clustering radius on the candidate distance.
        min_pts: DBSCAN core-point threshold (neighbourhood includes the
            point itself, so 1 reduces to connected components).
        pm_iters: Propagation/search iterations of the field estimator.
        max_scans: Upper bound on alternating scans per run.
        seed: Master seed; every stochastic stage derives from it.
        normalize_coords: Evaluate epipolar distances in diagonal-
            normalized coordinates instead of raw pixels.
        refresh_neighbor_descriptors: Recompute descriptors around
            replaced pixels from updated image content before they are
            next read, instead of keeping their original values.
        snapshot_every: Emit an intermediate snapshot each time this many
            pixels have been decided within a scan. 0 disables.
        ransac_threshold: Inlier gate on squared Sampson distance (px^2).
        ransac_confidence: Probability target for the adaptive iteration
            count of the robust estimator.
        ransac_max_iters: Hard cap on robust sampling iterations.
        match_budget: Number of correspondences harvested per source for
            fundamental matrix estimation.
        match_cell: Grid cell size (px) used to spread harvested matches.
    """

    lambda1: float = LAMBDA1
    lambda2: float = LAMBDA2
    lambda3: float = LAMBDA3
    lambda6: float = LAMBDA6
    lambda7: float = LAMBDA7
    lambda8: float = LAMBDA8
    sigma_c: float = SIGMA_C
    sigma_g: float = SIGMA_G
    sigma_e: float = SIGMA_E
    sigma_h: float = SIGMA_H
    patch_size: int = DEFAULT_PATCH_SIZE
    t_r: float = DEFAULT_T_R
    dbscan_eps: float = DEFAULT_DBSCAN_EPS
    min_pts: int = DEFAULT_MIN_PTS
    pm_iters: int = DEFAULT_PM_ITERS
    max_scans: int = DEFAULT_MAX_SCANS
    seed: int = 0
    normalize_coords: bool = True
    refresh_neighbor_descriptors: bool = False
    snapshot_every: int = 0
    ransac_threshold: float = 1.0
    ransac_confidence: float = 0.999
    ransac_max_iters: int = 5000
    match_budget: int = 2000
    match_cell: int = 8

    @property
    def lambda4(self) -> float:
        """Color weight of the two-term consensus, lambda1/(lambda1+lambda2)."""
        return self.lambda1 / (self.lambda1 + self.lambda2)

    @property
    def lambda5(self) -> float:
        """Gradient weight of the two-term consensus, lambda2/(lambda1+lambda2)."""
        return self.lambda2 / (self.lambda1 + self.lambda2)

    def validate(self) -> None:
        """Check every field against its legal range.

        Raises:
            ConfigError: with the offending field named in the message.
        """
        for name in ("lambda1", "lambda2", "lambda3", "lambda6", "lambda7",
                     "lambda8"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        s = self.lambda1 + self.lambda2 + self.lambda3
        if abs(s - 1.0) > 1e-9:
            raise ConfigError(
                f"lambda1 + lambda2 + lambda3 must equal 1, got {s}")
        if self.lambda1 + self.lambda2 <= 0.0:
            raise ConfigError("lambda1 + lambda2 must be positive")
        for name in ("sigma_c", "sigma_g", "sigma_e", "sigma_h"):
            v = getattr(self, name)
            if not v > 0.0:
                raise ConfigError(f"{name} must be positive, got {v}")
        p = self.patch_size
        if p % 2 != 1 or not 5 <= p <= 31:
            raise ConfigError(
                f"patch_size must be odd and in [5, 31], got {p}")
        if not 0.0 < self.t_r < 1.0:
            raise ConfigError(f"t_r must be in (0, 1), got {self.t_r}")
        if not self.dbscan_eps > 0.0:
            raise ConfigError(
                f"dbscan_eps must be positive, got {self.dbscan_eps}")
        if self.min_pts < 1:
            raise ConfigError(f"min_pts must be >= 1, got {self.min_pts}")
        if self.pm_iters < 1:
            raise ConfigError(f"pm_iters must be >= 1, got {self.pm_iters}")
        if self.max_scans < 1:
            raise ConfigError(f"max_scans must be >= 1, got {self.max_scans}")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")
        if not self.ransac_threshold > 0.0:
            raise ConfigError("ransac_threshold must be positive")
        if not 0.0 < self.ransac_confidence < 1.0:
            raise ConfigError("ransac_confidence must be in (0, 1)")
        if self.ransac_max_iters < 1:
            raise ConfigError("ransac_max_iters must be >= 1")
        if self.match_budget < 8:
            raise ConfigError("match_budget must be >= 8")
        if self.match_cell < 1:
            raise ConfigError("match_cell must be >= 1")

    def to_dict(self) -> dict:
        """Return the configuration as a plain JSON-serializable dict."""
        return dataclasses.asdict(self)


def load_config(path: str | None = None, overrides: dict | None = None) -> Config:
    """Build a validated Config from an optional JSON file plus overrides.

    Flag-style overrides win over file values, which win over defaults.
    Unknown keys in either source are rejected.

    Raises:
        ConfigError: on unknown keys, unreadable/invalid JSON, or any
            value failing validation.
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        values.update(data)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    known = {f.name for f in dataclasses.fields(Config)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = Config(**values)
    cfg.validate()
    return cfg
