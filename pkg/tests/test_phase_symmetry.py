import numpy as np
import pytest

from errors import DimensionError
from geometry import PolarImage
from phase_symmetry import LogGaborParams, log_gabor_bank, phase_symmetry


def ridge_image(row, shape=(64, 64), sigma=1.5):
    rows = np.arange(shape[0])[:, None]
    return np.exp(-((rows - row) ** 2) / (2.0 * sigma ** 2)) * np.ones((1, shape[1]))


def test_bank_shape_and_range():
    p = LogGaborParams()
    bank = log_gabor_bank(32, 48, p)
    assert bank.shape == (3, 6, 32, 48)
    assert np.all(bank[:, :, 0, 0] == 0.0)
    assert bank.min() >= 0.0 and bank.max() <= 1.0


def test_single_filter_peaks_at_centre_frequency():
    p = LogGaborParams(n_scales=1, n_orientations=1, min_wavelength_px=4.0)
    bank = log_gabor_bank(64, 64, p)
    # fftfreq(64)[16] == 0.25 == 1 / wavelength, on the orientation-0 axis
    assert bank[0, 0, 0, 16] == pytest.approx(1.0)
    assert bank[0, 0].max() == pytest.approx(1.0)


def test_bank_rejects_tiny_lattice():
    with pytest.raises(DimensionError):
        log_gabor_bank(3, 16, LogGaborParams())


@pytest.mark.parametrize("kwargs", [
    {"n_scales": 0},
    {"min_wavelength_px": 1.0},
    {"sigma_onf": 1.2},
    {"noise_t": -1.0},
    {"epsilon": 0.0},
])
def test_invalid_params(kwargs):
    with pytest.raises(ValueError):
        LogGaborParams(**kwargs)


def test_constant_image_gives_zero():
    out = phase_symmetry(np.full((40, 30), 3.7), LogGaborParams())
    assert out.shape == (40, 30)
    assert np.all(out == 0.0)


def test_output_range_on_noise(rng):
    out = phase_symmetry(rng.random((40, 24)), LogGaborParams())
    assert out.shape == (40, 24)
    assert out.min() >= 0.0 and out.max() <= 1.0


@pytest.mark.parametrize("row", [20, 27, 32, 38, 44])
def test_ridge_is_localized(row):
    p = LogGaborParams(noise_t=0.0)
    out = phase_symmetry(ridge_image(row), p)
    peaks = out.argmax(axis=0)
    assert np.all(np.abs(peaks - row) <= 1)


@pytest.mark.parametrize("scale", [0.5, 2.0, 10.0])
def test_contrast_invariance(rng, scale):
    img = ridge_image(30) + 0.1 * rng.random((64, 64))
    p = LogGaborParams()
    base = phase_symmetry(img, p)
    np.testing.assert_allclose(phase_symmetry(scale * img + 0.25, p), base, atol=1e-6)


def test_accepts_polar_image(small_geo):
    data = ridge_image(8, small_geo.shape, sigma=1.0)
    p = LogGaborParams(min_wavelength_px=3.0)
    np.testing.assert_array_equal(phase_symmetry(PolarImage(small_geo, data), p), phase_symmetry(data, p))


def test_rejects_bad_input():
    with pytest.raises(DimensionError):
        phase_symmetry(np.zeros((4, 4, 4)), LogGaborParams())
    bad = np.ones((16, 16))
    bad[3, 3] = np.nan
    with pytest.raises(DimensionError):
        phase_symmetry(bad, LogGaborParams())
