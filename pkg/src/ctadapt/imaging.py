"""Image primitives used by the CT simulation path.

Images are plain 2-D ``float64`` numpy arrays (row-major, row index first).
Geometric center convention is ``(N - 1) / 2`` along each axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PadPlan:
    """Placement of an ``H x H`` image inside its shift-padded ``M x M`` frame.

    ``top``/``bottom``/``left``/``right`` are the shift pads; the diagonal pad
    applied afterwards is a pure function of ``padded_side`` (see
    :func:`diagonal_side`), so it is not stored.
    """

    top: int
    bottom: int
    left: int
    right: int
    padded_side: int

    @property
    def original_side(self) -> int:
        return self.padded_side - self.top - self.bottom

    @property
    def diagonal_side(self) -> int:
        return diagonal_side(self.padded_side)


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a nonempty 2-D image, got shape {arr.shape}")
    return arr


def _require_square(img: np.ndarray) -> int:
    if img.shape[0] != img.shape[1]:
        raise ValueError(f"expected a square image, got shape {img.shape}")
    return img.shape[0]


def normalize_unit(img) -> np.ndarray:
    """Affinely map intensities onto [0, 1]; a constant image maps to zeros."""
    img = as_image(img)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def pad_for_shift(img, dx: int, dy: int) -> tuple[np.ndarray, PadPlan]:
    """Zero-pad a square image so its isocenter sits ``(dx, dy)`` off the image center.

    The top pad is ``max(|dx|, |dy|) + dy`` and the left pad
    ``max(|dx|, |dy|) + dx``; the result is square with side
    ``M = 2 * (max(|dx|, |dy|) + H / 2)``.
    """
    img = as_image(img)
    h = _require_square(img)
    dx, dy = int(dx), int(dy)
    if abs(dx) > h / 2 or abs(dy) > h / 2:
        raise ValueError(f"shift ({dx}, {dy}) exceeds half the image side {h}")
    m = max(abs(dx), abs(dy))
    side = 2 * m + h
    top, left = m + dy, m + dx
    plan = PadPlan(top=top, bottom=side - h - top, left=left, right=side - h - left,
                   padded_side=side)
    out = np.zeros((side, side), dtype=np.float64)
    out[top:top + h, left:left + h] = img
    return out, plan


def diagonal_side(side: int) -> int:
    """``ceil(side * sqrt(2))`` bumped by one when needed to keep the pad even."""
    diag = math.ceil(side * math.sqrt(2))
    if (diag - side) % 2:
        diag += 1
    return diag


def pad_to_diagonal(img) -> np.ndarray:
    img = as_image(img)
    side = _require_square(img)
    total = diagonal_side(side) - side
    before = total // 2
    return np.pad(img, ((before, total - before), (before, total - before)))


def crop(img, plan: PadPlan) -> np.ndarray:
    """Undo :func:`pad_to_diagonal` after :func:`pad_for_shift` with ``plan``."""
    img = as_image(img)
    diag = plan.diagonal_side
    if img.shape != (diag, diag):
        raise ValueError(
            f"image shape {img.shape} does not match plan (expected {diag}x{diag})")
    h = plan.original_side
    if h < 1 or plan.left + plan.right + h != plan.padded_side:
        raise ValueError(f"inconsistent pad plan {plan}")
    off = (diag - plan.padded_side) // 2
    r0, c0 = off + plan.top, off + plan.left
    return img[r0:r0 + h, c0:c0 + h].copy()


def bilinear_weights(shape: tuple[int, int], angle: float):
    """Source indices and weights for a bilinear rotation by ``angle`` degrees.

    Returns ``(dst, src, w)`` flat arrays: output pixel ``dst`` receives
    ``w * img.flat[src]``. Neighbours outside the source grid are dropped,
    which is the same as reading zeros there.
    """
    h, w = shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    theta = math.radians(angle)
    c, s = math.cos(theta), math.sin(theta)
    rows, cols = np.mgrid[0:h, 0:w]
    x = cols - cx
    y = rows - cy
    # inverse map: counterclockwise on screen (row axis points down)
    sx = c * x - s * y + cx
    sy = s * x + c * y + cy
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    dst = np.arange(h * w).reshape(h, w)

    dsts, srcs, wts = [], [], []
    for oy, ox, wt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                       (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy, xx = y0 + oy, x0 + ox
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w) & (wt != 0)
        dsts.append(dst[ok])
        srcs.append(yy[ok] * w + xx[ok])
        wts.append(wt[ok])
    return np.concatenate(dsts), np.concatenate(srcs), np.concatenate(wts)


def rotate_bilinear(img, angle: float) -> np.ndarray:
    """Rotate counterclockwise by ``angle`` degrees about the image center."""
    img = as_image(img)
    _require_square(img)
    if angle == 0:
        return img.copy()
    dst, src, w = bilinear_weights(img.shape, angle)
    out = np.zeros(img.size, dtype=np.float64)
    np.add.at(out, dst, w * img.ravel()[src])
    return out.reshape(img.shape)


def rotate90(img) -> np.ndarray:
    """Exact counterclockwise quarter turn: ``[[a, b], [c, d]] -> [[b, d], [a, c]]``."""
    return np.rot90(np.asarray(img), 1).copy()
