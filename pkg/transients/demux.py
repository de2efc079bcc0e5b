# transients/demux.py
"""Analytic inverse stages: peak extraction, two-bounce ToF maps,
ellipsoid-constrained depth from scanned or multiplexed captures, shadow
transients and masks, specular detection and anchor rescaling."""
import logging
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scipy.signal import find_peaks

from .datatypes import DepthMap, ShadowMaskSet, TofMapSet
from .exceptions import CubeGeometryMismatchError, RankDeficientAnchorsError
from .geometry import SPEED_OF_LIGHT, dot, ellipsoid_depths, normalize, path_sensitivity

logger = logging.getLogger(__name__)

# estimates whose path changes by less than this per meter of depth are unusable
MIN_SENSITIVITY = 0.5


class Peak(NamedTuple):
    bin: int
    amplitude: float


@dataclass(frozen=True)
class DemuxConfig:
    tolerance_bins: int = 1
    min_amplitude: float = 1e-6
    min_separation_bins: int = 2

    def __post_init__(self):
        if self.tolerance_bins < 0:
            raise ValidationError('tolerance must be non-negative')
        if self.min_separation_bins < 1:
            raise ValidationError('minimum peak separation must be at least one bin')

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'tolerance_bins': settings.LIDARSIM_TOLERANCE_BINS,
            'min_amplitude': settings.LIDARSIM_MIN_AMPLITUDE,
            'min_separation_bins': settings.LIDARSIM_MIN_SEPARATION_BINS,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class SpecularConfig:
    tolerance_bins: int = 1
    min_amplitude: float = 1e-6
    min_spots: int = 3
    grazing_cos: float = 1e-2

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'tolerance_bins': settings.LIDARSIM_TOLERANCE_BINS,
            'min_amplitude': settings.LIDARSIM_MIN_AMPLITUDE,
            'min_spots': settings.LIDARSIM_SPECULAR_MIN_SPOTS,
            'grazing_cos': settings.LIDARSIM_GRAZING_COS,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


# ====================
# PEAKS
# ====================
def extract_peaks(hist, min_amplitude=1e-6, min_separation_bins=2):
    """Local maxima above ``min_amplitude``, greedily thinned.

    Higher peaks suppress any peak closer than ``min_separation_bins``; equal
    heights resolve toward the lower bin. Returned in increasing bin order.
    """
    if min_separation_bins < 1:
        raise ValidationError('minimum peak separation must be at least one bin')
    hist = np.asarray(hist, dtype=float)
    # pad below zero so edge bins can be maxima
    indices, _ = find_peaks(np.pad(hist, 1, constant_values=-1.0))
    indices = indices - 1
    indices = indices[hist[indices] > min_amplitude]
    order = sorted(indices, key=lambda k: (-hist[k], k))
    kept = []
    for k in order:
        if all(abs(k - other) >= min_separation_bins for other in kept):
            kept.append(k)
    return [Peak(int(k), float(hist[k])) for k in sorted(kept)]


def peak_map(cube, min_amplitude=1e-6, min_separation_bins=2):
    """Peak lists for every pixel, as a nested list indexed [row][col]."""
    return [[extract_peaks(cube.data[v, u], min_amplitude, min_separation_bins)
             for u in range(cube.n_x)] for v in range(cube.n_y)]


# ====================
# TIME OF FLIGHT AND DEPTH
# ====================
def two_bounce_tof(depth, rig, spots):
    points = depth.points(rig.camera)
    sources = spots.source_points
    spot_leg = np.linalg.norm(points[None, ...] - sources[:, None, None, :], axis=-1)
    paths = spots.laser_legs[:, None, None] + spot_leg + depth.depth[None, ...]
    return TofMapSet(paths / SPEED_OF_LIGHT)


def _candidates(paths, rig, spots, j, directions):
    """Depth candidates and sensitivities for spot ``j`` given return paths.

    Falls back to the laser-origin ellipsoid when the return may be the
    pixel's own 1-bounce view of the spot: the two-bounce solution is missing,
    or it is ill-conditioned on a pixel that looks straight at the spot.
    """
    camera = rig.camera
    x_c = camera.position
    source = spots.source_points[j]
    depth, _ = ellipsoid_depths(paths - spots.laser_legs[j], source, x_c, directions)
    sens = path_sensitivity(x_c + np.nan_to_num(depth)[..., None] * directions, source, directions)
    pixel = 2.0 * camera.tan_half / camera.n_x
    aligned = directions @ normalize(source - x_c) >= 1.0 / np.sqrt(1.0 + 2.0 * pixel ** 2)
    weak = ~np.isfinite(depth) | ~(depth > 0) | (aligned & (sens < MIN_SENSITIVITY))
    if np.any(weak):
        origin = spots.unfolded_origins[j]
        direct, _ = ellipsoid_depths(paths, origin, x_c, directions)
        direct_sens = path_sensitivity(x_c + np.nan_to_num(direct)[..., None] * directions,
                                       origin, directions)
        depth = np.where(weak, direct, depth)
        sens = np.where(weak, direct_sens, sens)
    sens = np.where(np.isfinite(depth) & (depth > 0), sens, -np.inf)
    return depth, sens


def depth_from_scanned(per_spot_cubes, rig, spots, cfg=None):
    """Bounce-flash depth from sequential single-spot captures.

    Per spot, the latest peak is the two-bounce return; spots are combined by
    keeping the best-conditioned ellipsoid at each pixel.
    """
    cfg = cfg or DemuxConfig()
    if len(per_spot_cubes) != spots.n_spots:
        raise ValidationError(f'{len(per_spot_cubes)} cubes for {spots.n_spots} spots')
    started = time.perf_counter()
    camera = rig.camera
    directions = camera.pixel_directions()
    best_depth = np.full(camera.shape, np.nan)
    best_sens = np.full(camera.shape, -np.inf)
    for j, cube in enumerate(per_spot_cubes):
        latest = np.full(camera.shape, np.nan)
        for v in range(cube.n_y):
            for u in range(cube.n_x):
                peaks = extract_peaks(cube.data[v, u], cfg.min_amplitude, cfg.min_separation_bins)
                if peaks:
                    latest[v, u] = peaks[-1].bin
        paths = cube.gate_path_min + (latest + 0.5) * cube.bin_path
        depth, sens = _candidates(paths, rig, spots, j, directions)
        better = sens > best_sens
        best_depth = np.where(better, depth, best_depth)
        best_sens = np.where(better, sens, best_sens)
    result = DepthMap(best_depth)
    logger.info('scanned depth: %d/%d valid pixels in %.2fs', int(result.valid.sum()),
                result.valid.size, time.perf_counter() - started)
    return result


def depth_from_multiplexed(cube, rig, spots, depth_bin_size=None, max_depth=None, cfg=None):
    """Mode vote over every (peak, spot) depth candidate at each pixel.

    Each peak is inverted through every spot's two-bounce ellipsoid only;
    candidates outside (0, max_depth) are discarded. The winning bin's center
    is returned; ties go to the nearer bin.
    """
    cfg = cfg or DemuxConfig()
    started = time.perf_counter()
    depth_bin_size = depth_bin_size or cube.bin_path
    max_depth = max_depth or cube.gate_path_min + cube.n_t * cube.bin_path
    camera = rig.camera
    directions = camera.pixel_directions()
    sources = spots.source_points[None, :, :]
    legs = spots.laser_legs[None, :]
    out = np.full(camera.shape, np.nan)
    for v in range(cube.n_y):
        for u in range(cube.n_x):
            peaks = extract_peaks(cube.data[v, u], cfg.min_amplitude, cfg.min_separation_bins)
            if not peaks:
                continue
            paths = cube.gate_path_min + (np.array([p.bin for p in peaks]) + 0.5) * cube.bin_path
            # (peaks, spots) grid of ellipsoid solutions
            candidates, _ = ellipsoid_depths(paths[:, None] - legs, sources,
                                             camera.position, directions[v, u])
            candidates = candidates.ravel()
            candidates = candidates[np.isfinite(candidates) & (candidates > 0) & (candidates < max_depth)]
            if candidates.size == 0:
                continue
            bins = np.floor(candidates / depth_bin_size).astype(np.int64)
            values, counts = np.unique(bins, return_counts=True)
            # np.unique sorts, so argmax picks the nearest of the tied bins
            out[v, u] = (values[np.argmax(counts)] + 0.5) * depth_bin_size
    result = DepthMap(out)
    logger.info('multiplexed depth: %d/%d valid pixels in %.2fs', int(result.valid.sum()),
                result.valid.size, time.perf_counter() - started)
    return result


# ====================
# SHADOWS
# ====================
def shadow_transient(measured, calibrated, absolute=False):
    """Light missing from the measurement: calibrated - measured, clamped at 0.

    ``absolute=True`` returns |calibrated - measured| instead.
    """
    if not measured.same_geometry(calibrated):
        raise CubeGeometryMismatchError(
            f'measured {measured.shape} / {measured.delta:g} s / {measured.gate_path_min:g} m does not match '
            f'calibrated {calibrated.shape} / {calibrated.delta:g} s / {calibrated.gate_path_min:g} m')
    residual = calibrated.data - measured.data
    data = np.abs(residual) if absolute else np.maximum(residual, 0.0)
    return calibrated.with_data(data)


def binarize_support(cube, threshold=0.0):
    """Indicator cube of the bins holding more than ``threshold``."""
    return cube.with_data((cube.data > threshold).astype(float))


def windowed_mass(cube, paths, tolerance_bins):
    """Sum of the cube within +-tolerance bins of each path's bin.

    ``paths`` has shape (..., n_y, n_x). Returns the sums and a mask of the
    entries whose path is finite and inside the gate.
    """
    k = np.floor((paths - cube.gate_path_min) / cube.bin_path)
    inside = np.isfinite(k) & (k >= 0) & (k < cube.n_t)
    k = np.where(inside, k, 0).astype(np.int64)
    rows = np.arange(cube.n_y)[:, None]
    cols = np.arange(cube.n_x)[None, :]
    mass = np.zeros(paths.shape)
    for offset in range(-tolerance_bins, tolerance_bins + 1):
        bins = k + offset
        ok = (bins >= 0) & (bins < cube.n_t)
        mass += np.where(ok, cube.data[rows, cols, np.clip(bins, 0, cube.n_t - 1)], 0.0)
    return mass, inside


def demux_shadows(measured, tof, tolerance_bins=1, min_amplitude=1e-6):
    """Per-spot masks: lit where the measurement holds that spot's two-bounce return.

    Pixels whose ToF is invalid or outside the gate are reported lit.
    """
    if tof.shape != measured.shape[:2]:
        raise CubeGeometryMismatchError(f'ToF maps {tof.shape} do not match cube {measured.shape[:2]}')
    mass, inside = windowed_mass(measured, tof.path_lengths, tolerance_bins)
    return ShadowMaskSet(~inside | (mass >= min_amplitude))


def separated_returns(tof, cube, tolerance_bins=1):
    """(spot, row, col) entries whose predicted bin is more than two windows from every other spot's.

    Only there is a spot's window guaranteed to hold none of the other spots' returns.
    """
    k = np.floor((tof.path_lengths - cube.gate_path_min) / cube.bin_path)
    finite = np.isfinite(k)
    separated = finite.copy()
    for j in range(len(k)):
        gaps = np.abs(np.delete(k, j, axis=0) - k[j])
        separated[j] &= np.all(~(gaps <= 2 * tolerance_bins), axis=0)
    return separated


# ====================
# SPECULAR
# ====================
def normals_from_depth(depth, camera):
    """Surface normals from neighbouring unprojected points, facing the camera."""
    points = depth.points(camera)
    d_x = np.gradient(points, axis=1)
    d_y = np.gradient(points, axis=0)
    normals = normalize(np.cross(d_x, d_y))
    facing = dot(normals, camera.position - points)
    return np.where((facing < 0)[..., None], -normals, normals)


def detect_specular(measured, depth, rig, spots, cfg=None):
    """Flag pixels whose missing returns show up late.

    A pixel is specular when (a) at least ``min_spots`` spots predicted to
    light it leave no return near their predicted two-bounce time, and (b)
    mass that no spot's prediction explains arrives after the latest
    predicted time among those missing spots.
    """
    cfg = cfg or SpecularConfig()
    camera = rig.camera
    points = depth.points(camera)
    normals = normals_from_depth(depth, camera)
    tof = two_bounce_tof(depth, rig, spots)
    paths = tof.path_lengths

    sources = spots.source_points
    delta = points[None, ...] - sources[:, None, None, :]
    r = np.linalg.norm(delta, axis=-1)
    w = delta / np.where(r > 0, r, 1.0)[..., None]
    cos_out = np.einsum('jyxi,ji->jyx', w, spots.source_normals)
    cos_in = -dot(w, normals[None, ...])
    predicted_lit = (cos_out >= -cfg.grazing_cos) & (cos_in >= -cfg.grazing_cos)

    mass, inside = windowed_mass(measured, paths, cfg.tolerance_bins)
    missing = predicted_lit & inside & (mass < cfg.min_amplitude)
    condition_a = missing.sum(axis=0) >= cfg.min_spots

    tol = cfg.tolerance_bins
    predicted_bins = np.floor((paths - measured.gate_path_min) / measured.bin_path)
    bins = np.arange(measured.n_t)
    explained = np.zeros(measured.shape, dtype=bool)
    for j in range(spots.n_spots):
        k = np.where(inside[j], predicted_bins[j], -np.inf)[..., None]
        explained |= np.abs(bins - k) <= tol
    latest = np.where(missing, predicted_bins, -np.inf).max(axis=0)
    late = bins > (latest + tol)[..., None]
    unexplained = (measured.data >= cfg.min_amplitude) & ~explained & late
    condition_b = unexplained.any(axis=2)

    mask = condition_a & condition_b & depth.valid
    logger.info('specular detection flagged %d pixel(s)', int(mask.sum()))
    return mask


# ====================
# ANCHORS
# ====================
def fit_anchor_scale(relative, anchors):
    """Least-squares (a, b) with a * relative + b ~ metric at the anchor pixels."""
    if len(anchors) < 2:
        raise RankDeficientAnchorsError('need at least two anchors')
    rel = np.array([relative.depth[row, col] for (row, col), _ in anchors], dtype=float)
    metric = np.array([value for _, value in anchors], dtype=float)
    if not np.all(np.isfinite(rel)):
        raise RankDeficientAnchorsError('anchor pixel has no valid relative depth')
    if np.ptp(rel) == 0:
        raise RankDeficientAnchorsError('all anchors share the same relative depth')
    design = np.column_stack([rel, np.ones_like(rel)])
    (a, b), *_ = np.linalg.lstsq(design, metric, rcond=None)
    return float(a), float(b)


def rescale_with_anchors(relative, anchors):
    a, b = fit_anchor_scale(relative, anchors)
    logger.debug('anchor fit: scale %.6g offset %.6g', a, b)
    return DepthMap(a * relative.depth + b, relative.valid)
