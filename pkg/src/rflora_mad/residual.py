"""Laplacian residual maps and patch descriptors.

The pipeline is grey -> Gaussian smoothing -> |4-neighbour Laplacian| ->
min-max normalisation -> per-patch (mean, variance, energy). All filters use
reflect padding (mirror without repeating the edge sample).
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidInputError, InvalidParameterError

EVAL_SIGMA = 1.0
TRAIN_SIGMA_RANGE = (0.6, 1.6)


@dataclass
class ResidualDescriptors:
    grid: tuple
    stats: np.ndarray  # (N_r, 3) rows of (mu, var, energy)
    s_bar: np.ndarray  # (3,)

    @property
    def n_patches(self):
        return self.stats.shape[0]


def _check_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected HxWx3 image, got shape {img.shape}")
    return img


def to_grey(img):
    """BT.601 luminance of an HxWx3 image in [0, 1]."""
    return _kernels.get_backend().to_grey(_check_image(img))


def gaussian_smooth(img, sigma):
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    img = np.asarray(img, dtype=np.float64)
    return _kernels.get_backend().gaussian_smooth(img, _kernels.gaussian_weights(sigma))


def laplacian_magnitude(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise InvalidInputError(f"laplacian needs a 2-D image of at least 3x3, got {img.shape}")
    return _kernels.get_backend().laplacian_abs(img)


def minmax_normalize(raw):
    """Rescale to [0, 1]; a constant map maps to all zeros."""
    return _kernels.get_backend().minmax_normalize(np.asarray(raw, dtype=np.float64))


def _check_patch(shape, p):
    if p < 1 or shape[0] % p or shape[1] % p:
        raise InvalidParameterError(f"map of shape {shape} is not divisible by patch size {p}")


def patch_stats(r_map, p):
    r_map = np.asarray(r_map, dtype=np.float64)
    _check_patch(r_map.shape, p)
    stats = _kernels.get_backend().patch_stats(r_map, p)
    return ResidualDescriptors(
        grid=(r_map.shape[0] // p, r_map.shape[1] // p),
        stats=stats,
        s_bar=stats.mean(axis=0),
    )


def residual_map(img, sigma=EVAL_SIGMA):
    return minmax_normalize(laplacian_magnitude(gaussian_smooth(to_grey(img), sigma)))


def describe(img, p, sigma=EVAL_SIGMA, return_map=False):
    """Residual descriptors of one RGB image, through the fused kernel."""
    img = _check_image(img)
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise InvalidInputError(f"image too small for the laplacian: {img.shape}")
    _check_patch(img.shape, p)
    r_map, stats = _kernels.get_backend().residual_stats(img, _kernels.gaussian_weights(sigma), p)
    desc = ResidualDescriptors(
        grid=(img.shape[0] // p, img.shape[1] // p), stats=stats, s_bar=stats.mean(axis=0)
    )
    if return_map:
        return desc, r_map
    return desc


def describe_batch(images, p, sigmas=None):
    """Stacked (B, N_r, 3) stats and (B, 3) global means for a batch of images."""
    if sigmas is None:
        sigmas = [EVAL_SIGMA] * len(images)
    descs = [describe(img, p, s) for img, s in zip(images, sigmas)]
    return np.stack([d.stats for d in descs]), np.stack([d.s_bar for d in descs]), descs[0].grid


def residual_energy(img, sigma=EVAL_SIGMA):
    """Mean squared raw Laplacian response (before normalisation)."""
    r0 = laplacian_magnitude(gaussian_smooth(to_grey(img), sigma))
    return float(np.mean(r0 * r0))
