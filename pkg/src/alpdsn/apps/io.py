"""Image files (PGM/PPM) and the atomic-write helper used by every writer."""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager

import numpy as np
from PIL import Image

__all__ = ["atomic_write", "read_image", "write_image", "stack_channels", "unstack_channels"]


@contextmanager
def atomic_write(path, mode: str = "w"):
    """Open a temporary sibling of ``path`` and rename it into place on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def stack_channels(img: np.ndarray) -> np.ndarray:
    """``(h, w, 3)`` color image -> ``(3h, w)`` matrix of stacked channels."""
    if img.ndim == 2:
        return img
    return np.concatenate([img[:, :, c] for c in range(img.shape[2])], axis=0)


def unstack_channels(mat: np.ndarray, channels: int = 3) -> np.ndarray:
    if channels == 1:
        return mat
    h = mat.shape[0] // channels
    return np.stack([mat[c * h:(c + 1) * h] for c in range(channels)], axis=2)


def read_image(path, stack: bool = True) -> np.ndarray:
    """Read a PGM/PPM file as floats in [0, 255].

    Color images come back as stacked-channel matrices unless ``stack=False``.
    """
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if len(im.getbands()) >= 3 else "L")
        arr = np.asarray(im, dtype=float)
    return stack_channels(arr) if stack else arr


def write_image(path, img, channels: int = 1) -> None:
    """Write a gray (``channels=1``) or stacked-channel color matrix, clipped to [0, 255]."""
    arr = np.asarray(img, dtype=float)
    if channels == 3 and arr.ndim == 2:
        arr = unstack_channels(arr, 3)
    data = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    im = Image.fromarray(data)
    # Pillow's PPM writer emits P5 for gray and P6 for color
    with atomic_write(path, "wb") as fh:
        im.save(fh, format="PPM")
