"""A small binary container for cached arrays, and a descriptor cache.

Container layout, all little-endian: 4-byte magic "CPF1", uint8 dtype
code (0 float32, 1 int32, 2 uint8), uint8 ndim, uint16 reserved zero,
uint32 meta word (the patch size for descriptor fields), ndim uint32
dimensions, then the raw row-major payload.

Descriptor fields are cached un-normalized and keyed by a digest of the
image bytes, its shape and the patch size, so a cache entry never
depends on which other views happen to be in the set.
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

from .features import DESC_DIM, DescriptorField

MAGIC = b"CPF1"
_HEADER = struct.Struct("<4sBBHI")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4"), 2: np.dtype("<u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CacheError(Exception):
    """Raised when a cache file is unreadable or malformed."""


def save_array(path: str, arr: np.ndarray, meta: int = 0) -> None:
    """Write one array to ``path`` in the container format."""
    arr = np.ascontiguousarray(arr)
    dt = np.dtype(arr.dtype).newbyteorder("<")
    if dt not in _CODES:
        raise CacheError(f"unsupported dtype {arr.dtype}")
    header = _HEADER.pack(MAGIC, _CODES[dt], arr.ndim, 0, meta)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(arr.astype(dt, copy=False).tobytes())


def load_array(path: str) -> tuple[np.ndarray, int]:
    """Read one array and its meta word back from ``path``.

    Raises:
        CacheError: wrong magic, unknown dtype or truncated payload.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CacheError(f"cannot read cache file {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise CacheError(f"cache file {path} is truncated")
    magic, code, ndim, _reserved, meta = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CacheError(f"cache file {path} has wrong magic {magic!r}")
    if code not in _DTYPES:
        raise CacheError(f"cache file {path} has unknown dtype code {code}")
    off = _HEADER.size
    if len(raw) < off + 4 * ndim:
        raise CacheError(f"cache file {path} is truncated")
    dims = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    dt = _DTYPES[code]
    count = int(np.prod(dims)) if ndim else 1
    if len(raw) - off != count * dt.itemsize:
        raise CacheError(f"cache file {path} payload size mismatch")
    arr = np.frombuffer(raw, dtype=dt, offset=off).reshape(dims).copy()
    return arr, meta


# Bumped whenever descriptor arithmetic changes, so caches written by
# older code cannot be mistaken for current fields.
FIELD_VERSION = 2


def field_cache_key(image: np.ndarray, patch_size: int) -> str:
    """Content digest identifying one image's descriptor field."""
    h = hashlib.sha1()
    h.update(str(FIELD_VERSION).encode())
    h.update(str(image.shape).encode())
    h.update(str(patch_size).encode())
    h.update(np.ascontiguousarray(image).tobytes())
    return h.hexdigest()


def get_field(cache_dir: str, image: np.ndarray, patch_size: int
              ) -> DescriptorField | None:
    """Load a cached descriptor field, or None on miss or damage."""
    key = field_cache_key(image, patch_size)
    fc_path = os.path.join(cache_dir, f"{key}_fc.bin")
    fg_path = os.path.join(cache_dir, f"{key}_fg.bin")
    if not (os.path.isfile(fc_path) and os.path.isfile(fg_path)):
        return None
    try:
        fc, meta_c = load_array(fc_path)
        fg, meta_g = load_array(fg_path)
    except CacheError:
        return None
    h, w = image.shape[:2]
    if (meta_c != patch_size or meta_g != patch_size
            or fc.shape != (h, w, 3) or fg.shape != (h, w, DESC_DIM)):
        return None
    return DescriptorField(fc=fc, fg=fg, patch_size=patch_size)


def put_field(cache_dir: str, image: np.ndarray,
              field: DescriptorField) -> None:
    """Store an (un-normalized) descriptor field for ``image``."""
    os.makedirs(cache_dir, exist_ok=True)
    key = field_cache_key(image, field.patch_size)
    save_array(os.path.join(cache_dir, f"{key}_fc.bin"), field.fc,
               meta=field.patch_size)
    save_array(os.path.join(cache_dir, f"{key}_fg.bin"), field.fg,
               meta=field.patch_size)
