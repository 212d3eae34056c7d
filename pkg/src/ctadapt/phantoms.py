"""Test phantoms and a synthetic stand-in for OrganAMNIST.

``organ_slice`` renders 28x28 axial-slice-like images for the 11 organ
classes. Each class is a characteristic structure (bone ring, air-filled
lung, fluid-filled bladder, ...) at a characteristic location, embedded in a
randomly shaped body outline with soft-tissue texture and distractor blobs.
Left/right pairs are mirror images of each other, so orientation matters.
"""
from __future__ import annotations

import numpy as np

ORGAN_NAMES = (
    "bladder", "femur-left", "femur-right", "heart", "kidney-left", "kidney-right",
    "liver", "lung-left", "lung-right", "pancreas", "spleen",
)

# (intensity, semi-axis x, semi-axis y, center x, center y, rotation in degrees)
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0),
)


def _grid(n: int, supersample: int = 1):
    """Pixel-center coordinates on [-1, 1]^2 with y pointing up."""
    s = supersample
    ticks = (np.arange(n * s) + 0.5) / (n * s) * 2 - 1
    x, y = np.meshgrid(ticks, -ticks)
    return x, y


def _ellipse(x, y, a, b, x0, y0, phi_deg):
    phi = np.deg2rad(phi_deg)
    c, s = np.cos(phi), np.sin(phi)
    xr = (x - x0) * c + (y - y0) * s
    yr = -(x - x0) * s + (y - y0) * c
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def _downsample(img: np.ndarray, s: int) -> np.ndarray:
    n = img.shape[0] // s
    return img.reshape(n, s, n, s).mean(axis=(1, 3))


def shepp_logan(n: int = 64, supersample: int = 4) -> np.ndarray:
    """Modified (Toft) Shepp-Logan phantom, area-averaged, values in [0, 1]."""
    x, y = _grid(n, supersample)
    img = np.zeros_like(x)
    for value, a, b, x0, y0, phi in _SHEPP_LOGAN:
        img[_ellipse(x, y, a, b, x0, y0, phi)] += value
    return np.clip(_downsample(img, supersample), 0.0, 1.0)


def _smooth_field(rng: np.random.Generator, n: int, scale: float) -> np.ndarray:
    """Low-frequency random texture via a few random cosines."""
    x, y = _grid(n)
    out = np.zeros((n, n))
    for _ in range(4):
        kx, ky = rng.normal(0, scale, size=2)
        out += np.cos(np.pi * (kx * x + ky * y) + rng.uniform(0, 2 * np.pi))
    return out / 4


def _organ(label: int, x, y, rng: np.random.Generator) -> np.ndarray:
    """Additive intensity map of the class-defining structure."""
    def j(sd=0.08):
        return rng.normal(0, sd)

    z = np.zeros_like(x)
    side = 1.0 if label in (1, 4, 7) else -1.0  # patient left is image right
    if label == 0:  # bladder: fluid-filled sac low in the pelvis, bright wall
        cx, cy, r = j(), -0.2 + j(), 0.42 * (1 + j(0.1))
        z[_ellipse(x, y, r, r * 0.8, cx, cy, 0)] = 0.35
        z[_ellipse(x, y, r * 0.8, r * 0.62, cx, cy, 0)] = -0.25
    elif label in (1, 2):  # femoral head: cortical bone ring on one side
        cx, cy, r = side * 0.45 + j(), j(), 0.32 * (1 + j(0.1))
        z[_ellipse(x, y, r, r, cx, cy, 0)] = 0.55
        z[_ellipse(x, y, r * 0.6, r * 0.6, cx, cy, 0)] = 0.2
    elif label == 3:  # heart: large bright oval, chambers, left of midline
        cx, cy = 0.15 + j(), 0.05 + j()
        z[_ellipse(x, y, 0.55, 0.45, cx, cy, 30 + j(10) * 10)] = 0.3
        z[_ellipse(x, y, 0.2, 0.16, cx + 0.15, cy - 0.05, 0)] = 0.15
    elif label in (4, 5):  # kidney: bean with bright cortex, dark pelvis medially
        cx, cy = side * 0.4 + j(), -0.1 + j()
        z[_ellipse(x, y, 0.24, 0.38, cx, cy, side * 15)] = 0.4
        z[_ellipse(x, y, 0.1, 0.16, cx - side * 0.1, cy, 0)] = -0.2
    elif label == 6:  # liver: large homogeneous wedge on patient right
        z[_ellipse(x, y, 0.8, 0.65, -0.3 + j(), 0.1 + j(), -20 + j(10) * 10)] = 0.25
    elif label in (7, 8):  # lung: air-filled, nearly black region
        cx, cy = side * 0.42 + j(), 0.1 + j()
        z[_ellipse(x, y, 0.34, 0.6, cx, cy, side * 10)] = -0.45
    elif label == 9:  # pancreas: thin elongated strip across the midline
        z[_ellipse(x, y, 0.6, 0.13, j(), j(), 10 + j(10) * 10)] = 0.3
    elif label == 10:  # spleen: crescent on patient left, posterior
        cx, cy = 0.4 + j(), 0.2 + j()
        z[_ellipse(x, y, 0.3, 0.5, cx, cy, -25)] = 0.3
        z[_ellipse(x, y, 0.3, 0.5, cx - 0.18, cy + 0.05, -25)] = 0.0
    return z


# body outline semi-axes, soft-tissue level, organ contrast scale, distractor
# amplitude, pixel noise and the value outside the body
BODY = dict(a=0.95, b=0.9, level=0.7, contrast=0.7, distract=0.15, noise=0.0, air=0.0)


def organ_slice(label: int, rng: np.random.Generator, n: int = 28) -> np.ndarray:
    """One synthetic slice of class ``label`` with unit-range intensities."""
    x, y = _grid(n)
    B = BODY
    body = _ellipse(x, y, B["a"] * (1 + rng.normal(0, 0.04)), B["b"] * (1 + rng.normal(0, 0.04)),
                    rng.normal(0, 0.03), rng.normal(0, 0.03), rng.normal(0, 5))
    img = np.where(body, B["level"] + 0.08 * _smooth_field(rng, n, 2.0), B["air"])
    for _ in range(rng.integers(1, 4)):
        a, b = rng.uniform(0.08, 0.25, size=2)
        img = img + rng.uniform(-B["distract"], B["distract"]) * _ellipse(
            x, y, a, b, *rng.uniform(-0.6, 0.6, size=2), rng.uniform(0, 180))
    img = img + B["contrast"] * _organ(label, x, y, rng) * body
    img = img + rng.normal(0, B["noise"], size=img.shape)
    return np.clip(img, 0.0, 1.0)


def organ_dataset(n_samples: int, seed: int, n: int = 28,
                  class_weights=None) -> tuple[np.ndarray, np.ndarray]:
    """``n_samples`` 8-bit slices and labels; class frequencies follow ``class_weights``."""
    rng = np.random.default_rng(seed)
    if class_weights is None:
        # OrganAMNIST-like imbalance (liver largest, femurs smallest)
        class_weights = np.array([1.9, 1.36, 1.4, 1.4, 3.0, 3.0, 6.16, 3.9, 4.0, 3.0, 3.0])
    p = np.asarray(class_weights, dtype=np.float64)
    labels = rng.choice(len(p), size=n_samples, p=p / p.sum())
    images = np.empty((n_samples, n, n), dtype=np.uint8)
    for i, label in enumerate(labels):
        images[i] = np.floor(organ_slice(int(label), rng, n) * 255 + 0.5).astype(np.uint8)
    return images, labels.astype(np.uint8)
