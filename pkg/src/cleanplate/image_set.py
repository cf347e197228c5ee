"""Loading multi-view image sets, Lab color conversion, and result output.

Images are held as uint8 RGB arrays. All similarity computations happen
in CIE Lab (D65 white point), so the conversions here are the single
authority for that mapping in both directions.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

_IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

# sRGB -> XYZ (D65), rows are X, Y, Z.
_RGB2XYZ = np.array([
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
], dtype=np.float64)
_XYZ2RGB = np.linalg.inv(_RGB2XYZ)
_WHITE = np.array([0.95047, 1.0, 1.08883], dtype=np.float64)
_DELTA = 6.0 / 29.0


class ImageSetError(Exception):
    """Raised when an image set cannot be loaded or is unusable."""


@dataclass
class ImageSet:
    """An ordered multi-view set with one designated reference view.

    Attributes:
        images: uint8 RGB arrays of shape (H, W, 3), one per view.
        names: file stems aligned with ``images``.
        reference_index: position of the reference view in ``images``.
    """

    images: list[np.ndarray] = field(default_factory=list)
    names: list[str] = field(default_factory=list)
    reference_index: int = 0

    @property
    def n(self) -> int:
        return len(self.images)

    @property
    def reference(self) -> np.ndarray:
        return self.images[self.reference_index]

    @property
    def reference_name(self) -> str:
        return self.names[self.reference_index]

    def sources(self) -> Iterator[tuple[int, np.ndarray]]:
        """Yield (view index, image) for every non-reference view."""
        for i, img in enumerate(self.images):
            if i != self.reference_index:
                yield i, img


def load_image_set(directory: str, reference: str = "0",
                   patch_size: int = 7) -> ImageSet:
    """Load every decodable image in ``directory`` in lexicographic order.

    Subdirectories and files without a recognized image extension are
    ignored. The reference is selected by ``reference``, which is either
    a 0-based index into the sorted list or a file name (with or without
    extension).

    Raises:
        ImageSetError: if fewer than two images are found, any file with
            an image extension fails to decode, the reference selector
            does not resolve, or an image is too small to host a patch
            (each side must be at least 2 * patch_size + 1).
    """
    if not os.path.isdir(directory):
        raise ImageSetError(f"not a directory: {directory}")
    entries = sorted(
        e for e in os.listdir(directory)
        if os.path.isfile(os.path.join(directory, e))
        and os.path.splitext(e)[1].lower() in _IMAGE_EXTS
    )
    if len(entries) < 2:
        raise ImageSetError(
            f"insufficient views: found {len(entries)} image(s) in "
            f"{directory}, need at least 2")

    images: list[np.ndarray] = []
    names: list[str] = []
    min_side = 2 * patch_size + 1
    for entry in entries:
        path = os.path.join(directory, entry)
        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (UnidentifiedImageError, OSError) as exc:
            raise ImageSetError(f"cannot decode image {path}: {exc}") from exc
        h, w = arr.shape[:2]
        if h < min_side or w < min_side:
            raise ImageSetError(
                f"image {entry} is {w}x{h}, smaller than the minimum "
                f"{min_side}x{min_side} for patch_size={patch_size}")
        images.append(arr)
        names.append(os.path.splitext(entry)[0])

    ref_idx = _resolve_reference(reference, entries, names)
    return ImageSet(images=images, names=names, reference_index=ref_idx)


def _resolve_reference(selector: str, entries: list[str],
                       names: list[str]) -> int:
    try:
        idx = int(selector)
    except ValueError:
        idx = -1
    else:
        if 0 <= idx < len(entries):
            return idx
        raise ImageSetError(
            f"reference index {idx} out of range for {len(entries)} images")
    for i, (entry, name) in enumerate(zip(entries, names)):
        if selector in (entry, name):
            return i
    raise ImageSetError(f"reference {selector!r} not found among {entries}")


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert uint8 sRGB to float32 CIE Lab (D65).

    L lies in [0, 100]; a and b are signed. Shape is preserved; the last
    axis must have length 3.
    """
    srgb = rgb.astype(np.float64) / 255.0
    lin = np.where(srgb > 0.04045,
                   ((srgb + 0.055) / 1.055) ** 2.4,
                   srgb / 12.92)
    xyz = lin @ _RGB2XYZ.T
    t = xyz / _WHITE
    f = np.where(t > _DELTA ** 3,
                 np.cbrt(t),
                 t / (3.0 * _DELTA ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab.astype(np.float32)


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Invert :func:`rgb_to_lab` back to uint8 sRGB with clipping."""
    lab64 = lab.astype(np.float64)
    fy = (lab64[..., 0] + 16.0) / 116.0
    fx = fy + lab64[..., 1] / 500.0
    fz = fy - lab64[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    t = np.where(f > _DELTA, f ** 3, 3.0 * _DELTA ** 2 * (f - 4.0 / 29.0))
    xyz = t * _WHITE
    lin = xyz @ _XYZ2RGB.T
    srgb = np.where(lin > 0.0031308,
                    1.055 * np.clip(lin, 0.0, None) ** (1.0 / 2.4) - 0.055,
                    12.92 * lin)
    return np.clip(np.round(srgb * 255.0), 0, 255).astype(np.uint8)


def write_outputs(dynamic_map: np.ndarray, cleaned: np.ndarray,
                  output_dir: str, ref_stem: str = "reference"
                  ) -> tuple[str, str]:
    """Write the dynamic mask and cleaned reference as PNGs.

    ``dynamic_map`` is any array where nonzero marks a pixel that was
    ever dynamic; it is written as 8-bit grayscale with dynamic = 255.
    ``cleaned`` is the uint8 RGB reference after replacement.

    Returns:
        (mask_path, clean_path).

    Raises:
        ImageSetError: if the output directory cannot be created or
            written to.
    """
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as exc:
        raise ImageSetError(
            f"cannot create output directory {output_dir}: {exc}") from exc
    mask = np.where(np.asarray(dynamic_map) != 0, 255, 0).astype(np.uint8)
    mask_path = os.path.join(output_dir, f"{ref_stem}_mask.png")
    clean_path = os.path.join(output_dir, f"{ref_stem}_clean.png")
    try:
        Image.fromarray(mask, mode="L").save(mask_path)
        Image.fromarray(np.ascontiguousarray(cleaned), mode="RGB").save(
            clean_path)
    except OSError as exc:
        raise ImageSetError(f"cannot write outputs to {output_dir}: {exc}"
                            ) from exc
    return mask_path, clean_path
