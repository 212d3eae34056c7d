"""Domain shifts applied to unit-range images, including the simulated ring artifact.

The ring artifact is produced in sinogram space and transferred back as a
difference of two reconstructions, so the reconstruction error shared by
both cancels::

    S = radon(P)                  P: shift- and diagonal-padded image
    R_dist = iradon(S * gains)
    R = iradon(S)
    O_dist = O + crop(R_dist - R)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .imaging import as_image, crop, diagonal_side, pad_for_shift, pad_to_diagonal, rotate90
from .projection import Sinogram, iradon, radon


@dataclass(frozen=True)
class Identity:
    kind: str = field(default="identity", init=False)


@dataclass(frozen=True)
class UniformNoise:
    amplitude: float = 0.35
    kind: str = field(default="uniform_noise", init=False)

    def __post_init__(self):
        if not 0 < self.amplitude < 1:
            raise ValueError(f"noise amplitude must lie in (0, 1), got {self.amplitude}")


@dataclass(frozen=True)
class Rotate90:
    kind: str = field(default="rotate90", init=False)


@dataclass(frozen=True)
class RingArtifact:
    gain_low: float = -0.10
    gain_high: float = 0.10
    max_shift: int = 10
    kind: str = field(default="ring_artifact", init=False)

    def __post_init__(self):
        if not -1 < self.gain_low < self.gain_high < 1:
            raise ValueError(
                f"need -1 < gain_low < gain_high < 1, got {self.gain_low}, {self.gain_high}")
        if self.max_shift < 0:
            raise ValueError("max_shift must be >= 0")


DistortionSpec = Union[Identity, UniformNoise, Rotate90, RingArtifact]

_KINDS = {cls.kind: cls for cls in (Identity, UniformNoise, Rotate90, RingArtifact)}
#: the four distortions with their default parameters, in result-matrix order
DEFAULT_DISTORTIONS: tuple = (Identity(), UniformNoise(), Rotate90(), RingArtifact())


def spec_to_dict(spec: DistortionSpec) -> dict:
    out = {"kind": spec.kind}
    for name in spec.__dataclass_fields__:
        if name != "kind":
            out[name] = getattr(spec, name)
    return out


def spec_from_dict(data: dict) -> DistortionSpec:
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown distortion kind {kind!r}; expected one of {sorted(_KINDS)}")
    return _KINDS[kind](**data)


@dataclass(frozen=True)
class RingParams:
    gains: np.ndarray
    dx: int
    dy: int


def apply_gain(sino: Sinogram, gains) -> Sinogram:
    """Scale every detector channel ``b`` (all angles) by ``gains[b]``."""
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape != (sino.num_bins,):
        raise ValueError(f"expected {sino.num_bins} gains, got shape {gains.shape}")
    return sino.with_values(sino.values * gains)


def ring_bins(image_side: int, dx: int, dy: int) -> int:
    """Detector channel count for an image of ``image_side`` shifted by ``(dx, dy)``."""
    return diagonal_side(2 * max(abs(dx), abs(dy)) + image_side)


def sample_ring_params(spec: RingArtifact, rng: np.random.Generator,
                       image_side: int) -> RingParams:
    """Draw the isocenter shift, then one gain per detector channel.

    The channel count depends on the shift through the padding, hence the
    order of the draws.
    """
    if spec.max_shift > image_side / 2:
        raise ValueError(f"max_shift {spec.max_shift} exceeds half the image side")
    dx, dy = (int(v) for v in rng.integers(-spec.max_shift, spec.max_shift + 1, size=2))
    errors = rng.uniform(spec.gain_low, spec.gain_high, size=ring_bins(image_side, dx, dy))
    return RingParams(gains=1.0 + errors, dx=dx, dy=dy)


def ring_difference(img, params: RingParams, num_angles: int | None = None,
                    full: bool = False) -> np.ndarray:
    """The additive artifact ``R_dist - R`` cropped back to the input frame.

    ``num_angles`` defaults to the width of the unpadded image. With
    ``full=True`` the uncropped difference on the padded grid is returned.
    """
    img = as_image(img)
    padded, plan = pad_for_shift(img, params.dx, params.dy)
    padded = pad_to_diagonal(padded)
    sino = radon(padded, img.shape[1] if num_angles is None else num_angles)
    distorted = iradon(apply_gain(sino, params.gains))
    clean = iradon(sino)
    diff = distorted - clean
    return diff if full else crop(diff, plan)


def ring_artifact(img, params: RingParams, num_angles: int | None = None) -> np.ndarray:
    """Ring-distorted copy of ``img``; not clamped."""
    img = as_image(img)
    return img + ring_difference(img, params, num_angles)


def apply_distortion(img, spec: DistortionSpec, rng: np.random.Generator,
                     num_angles: int | None = None) -> np.ndarray:
    img = as_image(img)
    if isinstance(spec, Identity):
        return img.copy()
    if isinstance(spec, UniformNoise):
        noise = rng.uniform(-spec.amplitude, spec.amplitude, size=img.shape)
        return np.clip(img + noise, 0.0, 1.0)
    if isinstance(spec, Rotate90):
        return rotate90(img)
    if isinstance(spec, RingArtifact):
        params = sample_ring_params(spec, rng, img.shape[0])
        return ring_artifact(img, params, num_angles)
    raise TypeError(f"unsupported distortion {spec!r}")


# -- ring diagnostics ---------------------------------------------------------

def expected_ring_center(image_side: int, dx: int, dy: int) -> tuple[float, float]:
    """(row, col) of the isocenter in the unpadded frame for a shift ``(dx, dy)``."""
    c = (image_side - 1) / 2
    return c - dy, c - dx


def annulus_stats(diff, center) -> tuple[float, float]:
    """Spread of ``diff`` inside 1-pixel annuli around ``center`` = (row, col).

    Returns ``(mean_std, pooled_std)``: the unweighted mean of per-annulus
    standard deviations, and the root of the pixel-weighted mean annular
    variance. Annulus ``k`` holds the pixels whose distance rounds to ``k``.
    """
    diff = as_image(diff)
    yy, xx = np.mgrid[:diff.shape[0], :diff.shape[1]]
    r = np.floor(np.hypot(yy - center[0], xx - center[1]) + 0.5).astype(np.int64).ravel()
    d = diff.ravel()
    count = np.bincount(r)
    keep = count > 0
    mean = np.bincount(r, d)[keep] / count[keep]
    var = np.maximum(np.bincount(r, d * d)[keep] / count[keep] - mean ** 2, 0.0)
    return float(np.sqrt(var).mean()), float(np.sqrt(var @ count[keep] / d.size))


def fit_ring_center(diff, step: float = 0.25) -> tuple[float, float]:
    """Candidate center inside the frame minimizing the pooled annular variance."""
    diff = as_image(diff)
    rows = np.arange(0.0, diff.shape[0] - 1 + step / 2, step)
    cols = np.arange(0.0, diff.shape[1] - 1 + step / 2, step)
    best = min((annulus_stats(diff, (r, c))[1], r, c) for r in rows for c in cols)
    return best[1], best[2]
