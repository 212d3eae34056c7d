"""Parallel-beam forward projection and filtered backprojection.

Forward projection is rotate-then-sum: the projection at angle ``theta`` is
the column sum of the image rotated by ``-theta`` with bilinear sampling.
Both directions are assembled once per geometry as sparse matrices, so a
transform is a single deterministic sparse mat-vec.

Geometry: pixel ``(row, col)`` has offsets ``u = col - c``, ``v = row - c``
with ``c = (N - 1) / 2``; detector bin ``j`` sits at ``t = j - c`` and the
ray at angle ``theta`` through a point lands at ``t = u cos(theta) - v sin(theta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .imaging import as_image, bilinear_weights


@dataclass(frozen=True)
class Sinogram:
    """Angle-major line integrals: ``values[a, b]`` is bin ``b`` at ``angles[a]``.

    A detector channel (a "row" of the sinogram in the CT sense) is the
    column ``values[:, b]``.
    """

    values: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        angles = np.asarray(self.angles, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != angles.shape[0]:
            raise ValueError(
                f"values {values.shape} do not match {angles.shape[0]} angles")
        if np.any(np.diff(angles) <= 0) or angles[0] < 0 or angles[-1] >= 180:
            raise ValueError("angles must be strictly increasing within [0, 180)")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "angles", angles)

    @property
    def num_angles(self) -> int:
        return self.values.shape[0]

    @property
    def num_bins(self) -> int:
        return self.values.shape[1]

    def with_values(self, values) -> "Sinogram":
        return Sinogram(values, self.angles)


def projection_angles(num_angles: int) -> np.ndarray:
    if num_angles < 1:
        raise ValueError("num_angles must be >= 1")
    return np.arange(num_angles) * (180.0 / num_angles)


@lru_cache(maxsize=64)
def _forward_operator(side: int, num_angles: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for k, theta in enumerate(projection_angles(num_angles)):
        dst, src, w = bilinear_weights((side, side), -theta)
        # column sum: output pixel dst lands in bin dst % side
        rows.append(k * side + dst % side)
        cols.append(src)
        vals.append(w)
    op = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(num_angles * side, side * side))
    return op.tocsr()


@lru_cache(maxsize=64)
def _backprojection_operator(side: int, num_angles: int) -> sp.csr_matrix:
    c = (side - 1) / 2
    rows, cols = np.mgrid[0:side, 0:side]
    u = (cols - c).ravel()
    v = (rows - c).ravel()
    pix = np.arange(side * side)
    r_all, c_all, w_all = [], [], []
    for k, theta in enumerate(np.deg2rad(projection_angles(num_angles))):
        t = u * math.cos(theta) - v * math.sin(theta) + c
        b0 = np.floor(t)
        f = t - b0
        b0 = b0.astype(np.int64)
        for off, w in ((0, 1 - f), (1, f)):
            b = b0 + off
            ok = (b >= 0) & (b < side) & (w != 0)
            r_all.append(pix[ok])
            c_all.append(k * side + b[ok])
            w_all.append(w[ok])
    op = sp.coo_matrix(
        (np.concatenate(w_all), (np.concatenate(r_all), np.concatenate(c_all))),
        shape=(side * side, num_angles * side))
    return op.tocsr()


def radon(img, num_angles: int | None = None) -> Sinogram:
    """Forward-project a square image over ``num_angles`` angles in [0, 180).

    ``num_angles`` defaults to the image width.
    """
    img = as_image(img)
    n = img.shape[0]
    if img.shape[1] != n:
        raise ValueError(f"radon needs a square image, got {img.shape}")
    a = n if num_angles is None else int(num_angles)
    values = (_forward_operator(n, a) @ img.ravel()).reshape(a, n)
    return Sinogram(values, projection_angles(a))


def _fft_length(n: int) -> int:
    return 1 << math.ceil(math.log2(2 * n))


@lru_cache(maxsize=64)
def ramp_response(n: int) -> np.ndarray:
    """Frequency response of the spatial Ram-Lak kernel for length-``n`` projections.

    Kernel taps: 1/4 at offset 0, ``-1/(pi n)^2`` at odd offsets, 0 at even
    offsets; the response approximates ``|f|`` in cycles per bin.
    """
    size = _fft_length(n)
    offsets = np.concatenate((np.arange(1, size // 2 + 1, 2),
                              np.arange(size // 2 - 1, 0, -2)))
    kernel = np.zeros(size)
    kernel[0] = 0.25
    kernel[1::2] = -1.0 / (np.pi * offsets) ** 2
    resp = np.real(np.fft.fft(kernel))
    resp.flags.writeable = False
    return resp


def ramp_filter(projection) -> np.ndarray:
    """Ramp-filter along the last axis (a single projection or a stack)."""
    p = np.asarray(projection, dtype=np.float64)
    n = p.shape[-1]
    if n < 2:
        raise ValueError("projection needs at least 2 bins")
    size = _fft_length(n)
    spec = np.fft.fft(p, n=size, axis=-1) * ramp_response(n)
    return np.real(np.fft.ifft(spec, axis=-1))[..., :n]


def iradon(sino: Sinogram, out_side: int | None = None) -> np.ndarray:
    """Filtered backprojection onto an ``out_side`` square grid (no circle mask).

    The accumulated backprojection is scaled by ``pi / A``: the angular step
    times the ramp filter's ``|f|`` response reproduces unit gain.
    """
    n = sino.num_bins
    if out_side is not None and out_side != n:
        raise ValueError(f"out_side {out_side} must equal the bin count {n}")
    a = sino.num_angles
    expected = projection_angles(a)
    if not np.array_equal(sino.angles, expected):
        raise ValueError("iradon expects uniformly spaced angles k * 180 / A")
    filtered = ramp_filter(sino.values)
    recon = _backprojection_operator(n, a) @ filtered.ravel()
    return (recon * (np.pi / a)).reshape(n, n)
