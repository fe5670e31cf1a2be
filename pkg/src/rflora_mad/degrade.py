"""Test-time image corruptions and the training degradation curriculum."""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateSignalError, InvalidParameterError

# ITU-T T.81 Annex K luminance quantisation table.
LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)

DEFAULT_BLUR_SIGMAS = (0.0, 1.0, 2.0, 3.0)
DEFAULT_SNRS_DB = (30.0, 20.0, 10.0, 5.0)
DEFAULT_JPEG_QUALITIES = (90, 70, 50, 30)


def _dct_matrix(n=8):
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * x + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    c[0, :] = np.sqrt(1.0 / n)
    return c


_DCT8 = _dct_matrix()


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "none"  # blur | noise | jpeg | none
    blur_sigma: float = 0.0
    snr_db: float = float("inf")
    jpeg_quality: int = 100

    def __post_init__(self):
        if self.kind not in ("blur", "noise", "jpeg", "none"):
            raise InvalidParameterError(f"unknown degradation kind {self.kind!r}")
        if not 1 <= self.jpeg_quality <= 100:
            raise InvalidParameterError(f"jpeg_quality must be in [1, 100], got {self.jpeg_quality}")
        if self.blur_sigma < 0:
            raise InvalidParameterError("blur_sigma must be >= 0")

    @property
    def label(self):
        if self.kind == "blur":
            return f"blur_sigma={self.blur_sigma:g}"
        if self.kind == "noise":
            return f"noise_snr={self.snr_db:g}dB"
        if self.kind == "jpeg":
            return f"jpeg_q={self.jpeg_quality}"
        return "clean"


@dataclass(frozen=True)
class CurriculumSchedule:
    epochs_total: int = 40
    p_noise_max: float = 0.3
    p_jpeg_max: float = 0.3

    def __post_init__(self):
        if self.epochs_total < 1:
            raise InvalidParameterError("epochs_total must be >= 1")
        for p in (self.p_noise_max, self.p_jpeg_max):
            if not 0.0 <= p <= 1.0:
                raise InvalidParameterError("curriculum maxima must be probabilities")


def apply_blur(img, sigma):
    """Per-channel Gaussian blur; sigma = 0 returns the input unchanged."""
    if sigma < 0:
        raise InvalidParameterError(f"sigma must be >= 0, got {sigma}")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    w = _kernels.gaussian_weights(sigma)
    smooth = _kernels.get_backend().gaussian_smooth
    out = np.stack([smooth(np.ascontiguousarray(img[:, :, c]), w) for c in range(img.shape[2])], axis=2)
    return np.clip(out, 0.0, 1.0)


def noise_std_for_snr(img, snr_db):
    power = float(np.mean(np.square(img)))
    if power == 0.0:
        raise DegenerateSignalError("SNR undefined for an all-zero image")
    return np.sqrt(power / 10.0 ** (snr_db / 10.0))


def apply_noise_snr(img, snr_db, rng, return_noise=False):
    """Additive white Gaussian noise at ``snr_db`` relative to the clean signal power."""
    img = np.asarray(img, dtype=np.float64)
    std = noise_std_for_snr(img, snr_db)
    noise = rng.normal(0.0, std, size=img.shape)
    out = np.clip(img + noise, 0.0, 1.0)
    if return_noise:
        return out, noise
    return out


def jpeg_quant_table(quality):
    if not 1 <= quality <= 100:
        raise InvalidParameterError(f"quality must be in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.floor((LUMA_TABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def apply_jpeg_like(img, quality):
    """8x8 block DCT quantisation per channel with the scaled luminance table.

    No chroma subsampling and no entropy coding; the output stays in float.
    """
    q = jpeg_quant_table(quality)
    img = np.asarray(img, dtype=np.float64)
    h, w, ch = img.shape
    ph, pw = (-h) % 8, (-w) % 8
    x = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge") * 255.0 - 128.0
    hb, wb = x.shape[0] // 8, x.shape[1] // 8
    blocks = x.reshape(hb, 8, wb, 8, ch).transpose(0, 2, 4, 1, 3)
    coef = _DCT8 @ blocks @ _DCT8.T
    coef = np.round(coef / q) * q
    rec = _DCT8.T @ coef @ _DCT8
    rec = rec.transpose(0, 3, 1, 4, 2).reshape(hb * 8, wb * 8, ch)[:h, :w]
    return np.clip((rec + 128.0) / 255.0, 0.0, 1.0)


def apply(spec, img, rng=None):
    if spec.kind == "blur":
        return apply_blur(img, spec.blur_sigma)
    if spec.kind == "noise":
        if rng is None:
            raise InvalidParameterError("noise degradation needs a seeded rng")
        return apply_noise_snr(img, spec.snr_db, rng)
    if spec.kind == "jpeg":
        return apply_jpeg_like(img, spec.jpeg_quality)
    return np.asarray(img, dtype=np.float64).copy()


def curriculum_probability(schedule, epoch):
    """Linear ramp of (p_noise, p_jpeg) from 0 at epoch 0 to the maxima at the last epoch."""
    if not 0 <= epoch < schedule.epochs_total:
        raise InvalidParameterError(f"epoch {epoch} outside [0, {schedule.epochs_total})")
    if schedule.epochs_total == 1:
        frac = 1.0
    else:
        frac = epoch / (schedule.epochs_total - 1)
    return schedule.p_noise_max * frac, schedule.p_jpeg_max * frac


def sweep_conditions(blur_sigmas=DEFAULT_BLUR_SIGMAS, snrs_db=DEFAULT_SNRS_DB,
                     jpeg_qualities=DEFAULT_JPEG_QUALITIES):
    """Clean condition followed by every grid point, in table order."""
    if not (len(blur_sigmas) or len(snrs_db) or len(jpeg_qualities)):
        raise InvalidParameterError("degradation grid is empty")
    conds = [DegradationSpec("none")]
    conds += [DegradationSpec("blur", blur_sigma=float(s)) for s in blur_sigmas]
    conds += [DegradationSpec("noise", snr_db=float(s)) for s in snrs_db]
    conds += [DegradationSpec("jpeg", jpeg_quality=int(q)) for q in jpeg_qualities]
    return conds
