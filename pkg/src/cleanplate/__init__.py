"""Simultaneous detection and removal of moving objects from multi-view
image sets.

Given several photographs of the same scene taken from slightly
different viewpoints, :func:`run` labels every pixel of a chosen
reference view as static or dynamic and replaces the dynamic ones with
the static content seen by the other views, returning both the dynamic
mask and the cleaned image.
"""

from .config import Config, ConfigError, load_config
from .evaluation import SceneParams, jaccard, psnr_region, synth_scene
from .image_set import ImageSet, ImageSetError, load_image_set
from .scan_engine import RunResult, run

__version__ = "0.1.0"

__all__ = [
    "Config",
    "ConfigError",
    "ImageSet",
    "ImageSetError",
    "RunResult",
    "SceneParams",
    "__version__",
    "jaccard",
    "load_config",
    "load_image_set",
    "psnr_region",
    "run",
    "synth_scene",
]
