"""Binary PGM emission for walk frames."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

SEPARATOR = 255


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] to bytes with round-half-up (0.5 -> 128)."""
    v = np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5)
    return v.astype(np.uint8)


def tile(frames, columns: int, image_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Tile frames left-to-right, top-to-bottom with 1-pixel separators."""
    if not frames:
        raise ValueError("no frames to tile")
    if columns < 1:
        raise ValueError("columns must be positive")
    imgs = []
    for f in frames:
        f = np.asarray(f)
        if f.ndim == 1:
            if image_shape is None:
                side = math.isqrt(f.size)
                if side * side != f.size:
                    raise ValueError("flat frame is not square; pass image_shape")
                image_shape = (side, side)
            f = f.reshape(image_shape)
        imgs.append(f)
    h, w = imgs[0].shape
    if any(im.shape != (h, w) for im in imgs):
        raise ValueError("frames must share one size")
    cols = min(columns, len(imgs))
    rows = math.ceil(len(imgs) / cols)
    grid = np.full((rows * h + rows - 1, cols * w + cols - 1), SEPARATOR, dtype=np.uint8)
    for i, im in enumerate(imgs):
        r, c = divmod(i, cols)
        grid[r * (h + 1) : r * (h + 1) + h, c * (w + 1) : c * (w + 1) + w] = quantize(im)
    return grid


def pgm_bytes(grid: np.ndarray) -> bytes:
    h, w = grid.shape
    return f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(grid, dtype=np.uint8).tobytes()


def emit_image_grid(frames, columns: int, path, image_shape=None) -> np.ndarray:
    grid = tile(frames, columns, image_shape)
    Path(path).write_bytes(pgm_bytes(grid))
    return grid


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
