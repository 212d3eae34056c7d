import numpy as np
import pytest

from ctadapt.distortion import (
    DEFAULT_DISTORTIONS, Identity, RingArtifact, RingParams, Rotate90, UniformNoise,
    annulus_stats, apply_distortion, apply_gain, expected_ring_center, fit_ring_center,
    ring_artifact, ring_bins, ring_difference, sample_ring_params, spec_from_dict, spec_to_dict,
)
from ctadapt.imaging import pad_for_shift, pad_to_diagonal
from ctadapt.phantoms import organ_dataset
from ctadapt.projection import iradon, radon


@pytest.fixture(scope="module")
def slice28():
    images, _ = organ_dataset(1, seed=0)
    return images[0] / 255.0


def five_channel_gains(side, dx, dy, radius=12):
    """-10% on five adjacent channels whose middle sits ``radius`` bins off-center."""
    n = ring_bins(side, dx, dy)
    gains = np.ones(n)
    lo = int(round((n - 1) / 2 - radius - 2))
    gains[lo:lo + 5] = 0.9
    return gains


def test_spec_validation_and_roundtrip():
    with pytest.raises(ValueError):
        UniformNoise(1.2)
    with pytest.raises(ValueError):
        RingArtifact(gain_low=0.1, gain_high=-0.1)
    with pytest.raises(ValueError):
        RingArtifact(max_shift=-1)
    for spec in DEFAULT_DISTORTIONS:
        assert spec_from_dict(spec_to_dict(spec)) == spec
    with pytest.raises(ValueError):
        spec_from_dict({"kind": "motion"})


def test_apply_gain_examples():
    sino = radon(np.random.default_rng(0).random((12, 12)))
    assert np.array_equal(apply_gain(sino, np.ones(12)).values, sino.values)
    g = np.ones(12)
    g[3:8] = 0.9
    out = apply_gain(sino, g).values
    np.testing.assert_array_equal(out[:, 3:8], sino.values[:, 3:8] * 0.9)
    np.testing.assert_array_equal(out[:, :3], sino.values[:, :3])
    np.testing.assert_array_equal(out[:, 8:], sino.values[:, 8:])
    g = np.random.default_rng(1).uniform(0.9, 1.1, 12)
    np.testing.assert_allclose(apply_gain(apply_gain(sino, g), 1 / g).values, sino.values,
                               atol=1e-12)
    with pytest.raises(ValueError):
        apply_gain(sino, np.ones(11))


def test_sample_ring_params_deterministic_and_bounded():
    spec = RingArtifact()
    a = sample_ring_params(spec, np.random.default_rng(5), 28)
    b = sample_ring_params(spec, np.random.default_rng(5), 28)
    assert np.array_equal(a.gains, b.gains) and (a.dx, a.dy) == (b.dx, b.dy)
    assert len(a.gains) == ring_bins(28, a.dx, a.dy)
    for seed in range(20):
        p = sample_ring_params(RingArtifact(max_shift=0), np.random.default_rng(seed), 28)
        assert p.dx == 0 and p.dy == 0


def test_gain_sampler_monte_carlo():
    rng = np.random.default_rng(11)
    gains = np.concatenate([sample_ring_params(RingArtifact(), rng, 28).gains
                            for _ in range(2000)])
    assert len(gains) >= 100_000
    assert abs(gains.mean() - 1.0) <= 0.002
    assert gains.min() >= 0.90 and gains.max() <= 1.10


def test_shift_sampler_covers_range():
    rng = np.random.default_rng(3)
    shifts = np.array([(p.dx, p.dy) for p in
                       (sample_ring_params(RingArtifact(), rng, 28) for _ in range(3000))])
    assert shifts.min() == -10 and shifts.max() == 10


@pytest.mark.parametrize("dx,dy", [(0, 0), (4, -7), (-10, 10)])
def test_identity_gain_gives_exact_zero(slice28, dx, dy):
    params = RingParams(np.ones(ring_bins(28, dx, dy)), dx, dy)
    assert not ring_difference(slice28, params).any()
    assert np.array_equal(ring_artifact(slice28, params), slice28)


def test_mitigation_beats_naive_reconstruction(slice28):
    padded = pad_to_diagonal(pad_for_shift(slice28, 0, 0)[0])
    naive = np.abs(iradon(radon(padded, 28)) - padded).max()
    params = RingParams(np.ones(ring_bins(28, 0, 0)), 0, 0)
    assert naive > 0 and np.abs(ring_artifact(slice28, params) - slice28).max() == 0


def test_rings_are_concentric_about_center(slice28):
    diff = ring_difference(slice28, RingParams(five_channel_gains(28, 0, 0), 0, 0))
    mean_std, _ = annulus_stats(diff, (13.5, 13.5))
    assert mean_std < 0.5 * diff.std()
    row, col = fit_ring_center(diff)
    assert np.hypot(row - 13.5, col - 13.5) <= 1.5


def test_shifted_ring_center(slice28):
    diff = ring_difference(slice28, RingParams(five_channel_gains(28, 5, 5), 5, 5))
    row, col = fit_ring_center(diff)
    er, ec = expected_ring_center(28, 5, 5)
    assert np.hypot(row - er, col - ec) <= 1.5


def test_ring_energy_scales_with_gain_error(slice28):
    params = sample_ring_params(RingArtifact(), np.random.default_rng(8), 28)
    doubled = RingParams(1 + 2 * (params.gains - 1), params.dx, params.dy)
    ratio = np.linalg.norm(ring_difference(slice28, doubled)) / np.linalg.norm(
        ring_difference(slice28, params))
    assert 2 * 0.8 <= ratio <= 2 * 1.2


def test_ring_output_is_not_clamped():
    img = np.ones((28, 28))
    out = apply_distortion(img, RingArtifact(), np.random.default_rng(0))
    assert out.max() > 1.0 and out.min() < 1.0


def test_identity_and_rotate():
    img = np.random.default_rng(4).random((28, 28))
    out = apply_distortion(img, Identity(), None)
    assert np.array_equal(out, img) and out is not img
    assert np.array_equal(apply_distortion(img, Rotate90(), None), np.rot90(img))


def test_uniform_noise_statistics():
    rng = np.random.default_rng(9)
    img = np.full((28, 28), 0.5)
    dev = np.stack([apply_distortion(img, UniformNoise(), rng) - img for _ in range(1000)])
    assert dev.min() >= -0.35 and dev.max() <= 0.35
    assert abs(np.abs(dev).mean() - 0.175) <= 0.01


def test_noise_is_clamped():
    out = apply_distortion(np.ones((28, 28)), UniformNoise(), np.random.default_rng(0))
    assert out.max() <= 1.0 and out.min() >= 0.65


@pytest.mark.parametrize("spec", DEFAULT_DISTORTIONS)
def test_distortions_are_deterministic(slice28, spec):
    a = apply_distortion(slice28, spec, np.random.default_rng(21))
    b = apply_distortion(slice28, spec, np.random.default_rng(21))
    assert np.array_equal(a, b)
