"""Image I/O, random patch cropping and image/sample layout reshaping.

Images are float64 arrays of shape (height, width, 3) with values in [0, 1].
A patch set is an array of shape (count, side, side, 3).
"""

import io
import logging
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError

log = logging.getLogger(__name__)

_GRAY_MODES = {"1", "L", "I", "I;16", "F"}


def load_image(path):
    """Read a PNG/PPM raster into a (H, W, 3) float array in [0, 1].

    Grayscale input is replicated onto three channels. Alpha or other
    channel layouts are rejected.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode == "RGB":
                data = np.asarray(im, dtype=np.float64) / 255.0
            elif mode in _GRAY_MODES:
                log.warning("%s is grayscale; replicating to 3 channels", path)
                if mode == "1":
                    gray = np.asarray(im, dtype=np.float64)
                elif mode == "F":
                    gray = np.clip(np.asarray(im, dtype=np.float64), 0.0, 1.0)
                elif mode in ("I", "I;16"):
                    gray = np.asarray(im, dtype=np.float64) / 65535.0
                else:
                    gray = np.asarray(im, dtype=np.float64) / 255.0
                data = np.repeat(gray[..., None], 3, axis=2)
            else:
                raise ConfigError(f"{path}: unsupported channel layout {mode!r}, expected RGB")
    except (OSError, SyntaxError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return np.ascontiguousarray(data)


def to_uint8(image):
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_image(image, fmt="PNG"):
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image), mode="RGB").save(buf, format=fmt)
    return buf.getvalue()


def atomic_write(path, payload):
    """Write bytes to a sibling temp file and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_image(image, path):
    """Clamp to [0, 1], quantize to 8 bits and write PNG (or PPM by suffix)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {image.shape}")
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pnm") else "PNG"
    atomic_write(path, encode_image(image, fmt))


def crop_origins(height, width, side, count, seed):
    """Top-left corners drawn uniformly (with replacement) over valid positions."""
    if side < 1 or side > min(height, width):
        raise ConfigError(f"patch side {side} does not fit in a {height}x{width} image")
    if count < 1:
        raise ConfigError("crop count must be >= 1")
    rng = np.random.default_rng(seed)
    ys = rng.integers(0, height - side + 1, size=count)
    xs = rng.integers(0, width - side + 1, size=count)
    return np.stack([ys, xs], axis=1)


def random_crops(image, side, count, seed):
    """Crop ``count`` side x side patches, returned as (count, side, side, 3)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    origins = crop_origins(h, w, side, count, seed)
    # gather via a strided view: (h-side+1, w-side+1, 3, side, side)
    windows = np.lib.stride_tricks.sliding_window_view(image, (side, side), axis=(0, 1))
    patches = windows[origins[:, 0], origins[:, 1]]
    return np.ascontiguousarray(patches.transpose(0, 2, 3, 1))


def flatten_patches(patches):
    """(n, N, N, 3) -> (n, 3N^2) sample vectors."""
    patches = np.asarray(patches)
    return patches.reshape(patches.shape[0], -1)


def unflatten_patches(samples, side):
    samples = np.asarray(samples)
    return samples.reshape(samples.shape[0], side, side, 3)
