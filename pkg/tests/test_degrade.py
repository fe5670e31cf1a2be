import numpy as np
import pytest

from rflora_mad import degrade, synth
from rflora_mad.config import SynthConfig
from rflora_mad.errors import DegenerateSignalError, InvalidParameterError


def natural_image():
    return synth.gen_bona_fide(SynthConfig(), 3).image


def test_blur_zero_is_identity(rng):
    img = rng.random((20, 20, 3))
    out = degrade.apply_blur(img, 0.0)
    assert out is not img
    np.testing.assert_array_equal(out, img)


def test_blur_constant_unchanged():
    np.testing.assert_allclose(degrade.apply_blur(np.full((16, 16, 3), 0.4), 2.5), 0.4, atol=1e-15)


def test_blur_reduces_checkerboard_variance():
    board = (np.indices((24, 24)).sum(axis=0) % 2).astype(float)
    img = np.repeat(board[..., None], 3, axis=2)
    assert degrade.apply_blur(img, 3.0).var() < img.var()


def test_blur_rejects_negative():
    with pytest.raises(InvalidParameterError):
        degrade.apply_blur(np.zeros((4, 4, 3)), -0.1)


def test_noise_high_snr_near_identity(rng):
    img = natural_image()
    assert np.abs(degrade.apply_noise_snr(img, 120.0, rng) - img).max() < 1e-3


def test_noise_empirical_snr():
    img = np.full((336, 336, 3), 0.5)
    _, noise = degrade.apply_noise_snr(img, 10.0, np.random.default_rng(7), return_noise=True)
    snr = 10 * np.log10(np.mean(img ** 2) / np.mean(noise ** 2))
    assert abs(snr - 10.0) < 0.5


def test_noise_deterministic():
    img = natural_image()
    a = degrade.apply_noise_snr(img, 20.0, np.random.default_rng(3))
    b = degrade.apply_noise_snr(img, 20.0, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_noise_zero_image():
    with pytest.raises(DegenerateSignalError):
        degrade.apply_noise_snr(np.zeros((8, 8, 3)), 10.0, np.random.default_rng(0))


def test_quant_table_scaling():
    np.testing.assert_array_equal(degrade.jpeg_quant_table(50), degrade.LUMA_TABLE)
    assert np.all(degrade.jpeg_quant_table(100) == 1)
    assert degrade.jpeg_quant_table(1).max() == 255
    # q=90: scale 20 -> floor((16*20+50)/100) = 3
    assert degrade.jpeg_quant_table(90)[0, 0] == 3


@pytest.mark.parametrize("q", [10, 50, 90])
def test_jpeg_constant_within_dc_step(q):
    img = np.full((16, 24, 3), 0.3)
    step = degrade.jpeg_quant_table(q)[0, 0]
    # orthonormal 8x8 DCT: the DC coefficient is 8x the block mean
    assert np.abs(degrade.apply_jpeg_like(img, q) - img).max() <= step / 8 / 255 + 1e-12


def test_jpeg_mse_monotone_in_quality():
    img = natural_image()
    mse = {q: np.mean((degrade.apply_jpeg_like(img, q) - img) ** 2) for q in (30, 90)}
    assert mse[30] >= mse[90]


def test_jpeg_quality_100_bound(rng):
    for _ in range(10):
        img = rng.random((40, 40, 3))
        assert np.abs(degrade.apply_jpeg_like(img, 100) - img).max() <= 2 / 255


def test_jpeg_non_multiple_of_eight(rng):
    img = rng.random((13, 10, 3))
    out = degrade.apply_jpeg_like(img, 70)
    assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1


@pytest.mark.parametrize("q", [0, 101])
def test_jpeg_rejects_quality(q):
    with pytest.raises(InvalidParameterError):
        degrade.apply_jpeg_like(np.zeros((8, 8, 3)), q)


def test_outputs_in_unit_range(rng):
    img = rng.random((24, 24, 3))
    for spec in degrade.sweep_conditions():
        out = degrade.apply(spec, img, np.random.default_rng(0))
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_curriculum_ramp():
    s = degrade.CurriculumSchedule(11, 0.3, 0.2)
    assert degrade.curriculum_probability(s, 0) == (0.0, 0.0)
    assert degrade.curriculum_probability(s, 10) == pytest.approx((0.3, 0.2))
    # ten ramp intervals: epoch 5 sits exactly halfway
    assert degrade.curriculum_probability(s, 5) == pytest.approx((0.15, 0.1))
    ps = [degrade.curriculum_probability(s, e)[0] for e in range(11)]
    assert all(a <= b for a, b in zip(ps, ps[1:]))


def test_curriculum_single_epoch_and_range():
    s = degrade.CurriculumSchedule(1, 0.3, 0.3)
    assert degrade.curriculum_probability(s, 0) == (0.3, 0.3)
    with pytest.raises(InvalidParameterError):
        degrade.curriculum_probability(degrade.CurriculumSchedule(5), 5)
    with pytest.raises(InvalidParameterError):
        degrade.CurriculumSchedule(5, 1.5, 0.0)


def test_sweep_conditions():
    conds = degrade.sweep_conditions()
    assert conds[0].label == "clean"
    assert len(conds) == 1 + 4 + 4 + 4
    assert [c.snr_db for c in conds if c.kind == "noise"] == [30.0, 20.0, 10.0, 5.0]
    with pytest.raises(InvalidParameterError):
        degrade.sweep_conditions((), (), ())


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        degrade.DegradationSpec("sharpen")
    with pytest.raises(InvalidParameterError):
        degrade.DegradationSpec("jpeg", jpeg_quality=0)
