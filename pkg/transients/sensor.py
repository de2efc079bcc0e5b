# transients/sensor.py
"""SPAD measurement model applied to rendered cubes: laser pulse shape,
per-photon timing jitter and shot noise. Also temporal rebinning and
per-histogram normalization for exported cubes."""
import logging
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError
from scipy.ndimage import convolve1d, gaussian_filter1d

from .exceptions import SensorModelError

logger = logging.getLogger(__name__)

FWHM_TO_SIGMA = 2.3548

# measured-like pulse: Gaussian core plus an exponential tail
PULSE_CORE_SIGMA = 30e-12
PULSE_TAIL_FRACTION = 0.1
PULSE_TAIL_TAU = 100e-12
JITTER_FWHM = 50e-12
PEAK_COUNT_RANGE = (10.0, 400.0)

KERNEL_SUBSAMPLES = 16

# Philox keys are unsigned; seeds are reduced to their low 64 bits
SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True, eq=False)
class SensorModel:
    pulse_kernel: np.ndarray
    poisson_scale: float = 0.0
    jitter_fwhm: float = 0.0
    background: float = 0.0

    def apply(self, cube, seed, stream=0):
        return apply_sensor_model(cube, self.pulse_kernel, self.poisson_scale,
                                  self.jitter_fwhm, seed, self.background, stream)

    @property
    def presence_threshold(self):
        """Minimum counts for a return to count as present under shot noise."""
        return max(1.0, 3.0 * np.sqrt(self.background))

    @classmethod
    def off(cls):
        return cls(np.array([1.0]))


def pulse_kernel(delta, core_sigma=PULSE_CORE_SIGMA, tail_fraction=PULSE_TAIL_FRACTION,
                 tail_tau=PULSE_TAIL_TAU):
    """Bin-integrated pulse centered on the middle tap, unit sum."""
    half = int(np.ceil(max(4.0 * core_sigma, 5.0 * tail_tau) / delta))
    edges = np.arange(-half, half + 1)
    fine = (edges[:, None] + (np.arange(KERNEL_SUBSAMPLES) + 0.5) / KERNEL_SUBSAMPLES - 0.5) * delta
    core = (1.0 - tail_fraction) * np.exp(-0.5 * (fine / core_sigma) ** 2) / (core_sigma * np.sqrt(2 * np.pi))
    tail = np.where(fine >= 0, tail_fraction * np.exp(-fine / tail_tau) / tail_tau, 0.0)
    kernel = (core + tail).mean(axis=1)
    return kernel / kernel.sum()


def measured_sensor_model(delta, seed, background=0.0):
    """Pulse with tail, peak counts drawn in [10, 400] from the seed, 50 ps jitter."""
    rng = np.random.default_rng(int(seed) & SEED_MASK)
    peak = float(rng.uniform(*PEAK_COUNT_RANGE))
    logger.debug('measured noise preset: peak level %.1f counts', peak)
    return SensorModel(pulse_kernel(delta), peak, JITTER_FWHM, background)


def _pixel_generator(seed, u, v, stream=0):
    # counter-based stream per pixel and capture; the time bin is the position in the stream
    key = int(seed) & SEED_MASK
    return np.random.Generator(np.random.Philox(key=key, counter=[0, stream, v, u]))


def apply_sensor_model(cube, pulse_kernel, poisson_scale, jitter_fwhm, seed, background=0.0, stream=0):
    kernel = np.asarray(pulse_kernel, dtype=float)
    if kernel.ndim != 1 or kernel.size < 1:
        raise SensorModelError('pulse kernel must be a non-empty 1-D array')
    if np.any(kernel < 0) or abs(kernel.sum() - 1.0) > 1e-9:
        raise SensorModelError('pulse kernel must be non-negative and sum to 1')
    if kernel.size > cube.n_t:
        raise SensorModelError(f'pulse kernel ({kernel.size} taps) is longer than the cube ({cube.n_t} bins)')
    if poisson_scale < 0 or jitter_fwhm < 0 or background < 0:
        raise ValidationError('poisson scale, jitter and background must be non-negative')

    data = cube.data
    if kernel.size > 1:
        data = convolve1d(data, kernel, axis=2, mode='constant', cval=0.0)

    peak = cube.two_bounce_peak
    if poisson_scale > 0:
        reference = peak or float(cube.data.max())
        if reference > 0:
            data = data * (poisson_scale / reference)
        peak = poisson_scale

    sigma_bins = jitter_fwhm / FWHM_TO_SIGMA / cube.delta
    if sigma_bins > 0:
        data = gaussian_filter1d(data, sigma_bins, axis=2, mode='constant', cval=0.0)
    data = np.maximum(data, 0.0)

    if poisson_scale > 0:
        rates = data + background
        counts = np.empty_like(rates)
        for v in range(cube.n_y):
            for u in range(cube.n_x):
                counts[v, u] = _pixel_generator(seed, u, v, stream).poisson(rates[v, u])
        data = counts
        logger.info('applied shot noise at peak level %.1f (background %.3g)', poisson_scale, background)

    return cube.with_data(data, peak)


def rebin_cube(cube, factor):
    """Sum ``factor`` adjacent bins; trailing bins that do not fill a group are dropped."""
    factor = int(factor)
    if factor < 1:
        raise ValidationError('rebin factor must be at least 1')
    n_t = cube.n_t // factor
    if n_t < 1:
        raise ValidationError(f'cannot rebin {cube.n_t} bins by {factor}')
    data = cube.data[:, :, :n_t * factor].reshape(cube.n_y, cube.n_x, n_t, factor).sum(axis=3)
    # a merged bin holds at most `factor` fine bins of two-bounce light
    peak = cube.two_bounce_peak * factor if cube.two_bounce_peak else None
    return type(cube)(data, cube.delta * factor, cube.gate_path_min, peak)


def normalize_histograms(cube):
    """Min-max normalize each pixel's histogram to [0, 1]; flat histograms become 0."""
    lo = cube.data.min(axis=2, keepdims=True)
    span = cube.data.max(axis=2, keepdims=True) - lo
    with np.errstate(invalid='ignore', divide='ignore'):
        data = np.where(span > 0, (cube.data - lo) / span, 0.0)
    return cube.with_data(data)
