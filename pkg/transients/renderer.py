# transients/renderer.py
"""Deterministic forward model.

Renders multiplexed multi-bounce transient cubes from a scene and a lidar
rig, along with the ground truth the inverse stages are scored against:
G-buffers, traced laser spots and per-spot shadow masks. Also renders the
unit-amplitude calibrated capture and light-in-flight cubes from ToF maps.

Radiometry is the two-surface Lambertian form with inverse-square falloff
on the spot-to-surface leg only. Every deposit is split between the two
nearest bin centers so the total weight is preserved exactly.
"""
import logging
import time
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from .datatypes import CubeConfig, DepthMap, ShadowMaskSet, TransientCube
from .exceptions import GateOverflowError, RendererIntegrityError
from .geometry import SEGMENT_EPS, dot, mirror_point, reflect, visible_segments
from .parallel import ordered_map

logger = logging.getLogger(__name__)

ONE_BOUNCE = 'one_bounce'
TWO_BOUNCE = 'two_bounce'
MIRROR_ONE_BOUNCE = 'mirror_one_bounce'
MIRROR_TWO_BOUNCE = 'mirror_two_bounce'
FAMILIES = (ONE_BOUNCE, TWO_BOUNCE, MIRROR_ONE_BOUNCE, MIRROR_TWO_BOUNCE)
TWO_BOUNCE_FAMILIES = (TWO_BOUNCE, MIRROR_TWO_BOUNCE)


# ====================
# CONFIG AND RECORDS
# ====================
@dataclass(frozen=True)
class RenderConfig:
    cube: CubeConfig
    source_power: float = 1e8
    grazing_cos: float = 1e-2
    families: tuple = FAMILIES
    threads: int = 1

    def __post_init__(self):
        if not self.source_power > 0:
            raise ValidationError('source power must be positive')
        if not (0.0 <= self.grazing_cos < 1.0):
            raise ValidationError('grazing cosine must lie in [0, 1)')
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise ValidationError(f'unknown deposit families: {sorted(unknown)}')

    @classmethod
    def from_settings(cls, cube=None, **overrides):
        values = {
            'cube': cube or CubeConfig.from_settings(),
            'source_power': settings.LIDARSIM_SOURCE_POWER,
            'grazing_cos': settings.LIDARSIM_GRAZING_COS,
            'threads': settings.LIDARSIM_THREADS,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True, eq=False)
class GBuffer:
    """Primary-ray ground truth. Mirror pixels report the mirror surface distance."""
    depth: np.ndarray
    normals: np.ndarray
    specular_mask: np.ndarray
    points: np.ndarray
    albedo: np.ndarray
    valid: np.ndarray
    primitive: np.ndarray
    intensity: np.ndarray = None

    @property
    def shape(self):
        return self.depth.shape

    def depth_map(self):
        return DepthMap(self.depth, self.valid)

    def with_intensity(self, cube):
        return replace(self, intensity=cube.intensity())


@dataclass(frozen=True, eq=False)
class SpotSet:
    """First laser hits. Mirror spots carry the reflected continuation as a
    virtual source; ``laser_legs`` is the full laser path to the effective source."""
    points: np.ndarray
    normals: np.ndarray
    albedo: np.ndarray
    is_mirror: np.ndarray
    virtual_points: np.ndarray
    virtual_normals: np.ndarray
    virtual_albedo: np.ndarray
    laser_legs: np.ndarray
    # laser origin reflected across the mirror for mirror spots, else the origin
    unfolded_origins: np.ndarray

    @property
    def n_spots(self):
        return len(self.points)

    def __len__(self):
        return self.n_spots

    @property
    def source_points(self):
        return np.where(self.is_mirror[:, None], self.virtual_points, self.points)

    @property
    def source_normals(self):
        return np.where(self.is_mirror[:, None], self.virtual_normals, self.normals)

    @property
    def source_albedo(self):
        return np.where(self.is_mirror, self.virtual_albedo, self.albedo)

    def select(self, indices):
        indices = np.asarray(list(indices), dtype=int)
        return SpotSet(**{name: getattr(self, name)[indices] for name in self.__dataclass_fields__})


class Deposits(NamedTuple):
    family: str
    spot: int
    pixels: np.ndarray  # flat pixel index, row * n_x + col
    paths: np.ndarray  # meters
    weights: np.ndarray


# ====================
# PRIMARY RAYS AND SPOTS
# ====================
def render_gbuffer(scene, rig):
    camera = rig.camera
    dirs = camera.pixel_directions().reshape(-1, 3)
    origins = np.broadcast_to(camera.position, dirs.shape)
    batch = scene.intersect(origins, dirs)
    shape = camera.shape
    return GBuffer(
        depth=np.where(batch.hit, batch.distance, np.nan).reshape(shape),
        normals=batch.normals.reshape(shape + (3,)),
        specular_mask=(batch.is_mirror & batch.hit).reshape(shape),
        points=batch.points.reshape(shape + (3,)),
        albedo=batch.albedo.reshape(shape),
        valid=batch.hit.reshape(shape),
        primitive=batch.primitive.reshape(shape),
    )


def trace_spots(scene, rig):
    dirs = rig.spot_dirs
    origins = np.broadcast_to(rig.laser_origin, dirs.shape)
    first = scene.intersect(origins, dirs)
    if not np.all(first.hit):
        raise RendererIntegrityError(
            f'{int((~first.hit).sum())} laser spot ray(s) escaped the room')

    n = len(dirs)
    virtual_points = np.full((n, 3), np.nan)
    virtual_normals = np.full((n, 3), np.nan)
    virtual_albedo = np.full(n, np.nan)
    legs = first.distance.copy()
    unfolded = np.array(np.broadcast_to(rig.laser_origin, (n, 3)))

    mirror = first.is_mirror
    if np.any(mirror):
        bounce_dirs = reflect(dirs[mirror], first.normals[mirror])
        second = scene.intersect(first.points[mirror], bounce_dirs, t_min=SEGMENT_EPS)
        if not np.all(second.hit) or np.any(second.is_mirror):
            raise RendererIntegrityError('mirror spot continuation escaped or hit a second mirror')
        virtual_points[mirror] = second.points
        virtual_normals[mirror] = second.normals
        virtual_albedo[mirror] = second.albedo
        legs[mirror] += second.distance
        unfolded[mirror] = mirror_point(unfolded[mirror], first.points[mirror], first.normals[mirror])
        logger.debug('%d of %d spots land on a mirror', int(mirror.sum()), n)

    return SpotSet(points=first.points, normals=first.normals, albedo=first.albedo,
                   is_mirror=mirror, virtual_points=virtual_points,
                   virtual_normals=virtual_normals, virtual_albedo=virtual_albedo,
                   laser_legs=legs, unfolded_origins=unfolded)


def _pair_geometry(source, source_normal, points, point_normals):
    """Distance and both cosines between one source and many surface points."""
    delta = points - source
    r = np.linalg.norm(delta, axis=-1)
    w = delta / np.where(r > SEGMENT_EPS, r, 1.0)[..., None]
    cos_out = w @ source_normal
    cos_in = -dot(w, point_normals)
    return r, cos_out, cos_in


def one_bounce_pixels(scene, rig, spots, gbuffer):
    """Flat index of the pixel imaging each spot's effective source, or -1."""
    camera = rig.camera
    sources = spots.source_points
    rows, cols = camera.pixel_of(sources)
    seen = (rows >= 0) & visible_segments(
        scene, np.broadcast_to(camera.position, sources.shape), sources)
    flat = np.where(seen, rows * camera.n_x + cols, -1)
    diffuse = ~gbuffer.specular_mask.ravel()
    valid = gbuffer.valid.ravel()
    return np.array([f if f >= 0 and valid[f] and diffuse[f] else -1 for f in flat], dtype=int)


def render_shadow_masks(scene, rig, spots, gbuffer=None, grazing_cos=1e-2):
    """Per-spot visibility of each pixel's primary hit from the spot's effective source."""
    gbuffer = gbuffer or render_gbuffer(scene, rig)
    points = gbuffer.points.reshape(-1, 3)
    normals = gbuffer.normals.reshape(-1, 3)
    valid = gbuffer.valid.ravel()
    forced = one_bounce_pixels(scene, rig, spots, gbuffer)
    sources = spots.source_points
    source_normals = spots.source_normals

    masks = np.ones((spots.n_spots,) + gbuffer.shape, dtype=bool)
    for j in range(spots.n_spots):
        source = sources[j]
        r, cos_out, cos_in = _pair_geometry(source, source_normals[j], points, normals)
        clear = visible_segments(scene, np.broadcast_to(source, points.shape), points)
        lit = clear & (cos_out >= -grazing_cos) & (cos_in >= -grazing_cos)
        lit |= r <= 2.0 * SEGMENT_EPS
        lit |= ~valid
        if forced[j] >= 0:
            lit[forced[j]] = True
        masks[j] = lit.reshape(gbuffer.shape)
    return ShadowMaskSet(masks)


# ====================
# DEPOSITS
# ====================
def _mirror_continuations(scene, rig, gbuffer):
    """Diffuse surface seen in the mirror at each specular pixel."""
    specular = np.flatnonzero(gbuffer.specular_mask.ravel() & gbuffer.valid.ravel())
    if specular.size == 0:
        return None
    points = gbuffer.points.reshape(-1, 3)[specular]
    normals = gbuffer.normals.reshape(-1, 3)[specular]
    view = points - rig.camera.position
    view /= np.linalg.norm(view, axis=1, keepdims=True)
    onward = scene.intersect(points, reflect(view, normals), t_min=SEGMENT_EPS)
    keep = onward.hit & ~onward.is_mirror
    return {
        'pixels': specular[keep],
        'mirror_points': points[keep],
        'points': onward.points[keep],
        'normals': onward.normals[keep],
        'albedo': onward.albedo[keep],
        'onward': onward.distance[keep],
        'camera_leg': gbuffer.depth.ravel()[specular[keep]],
    }


def _check_after_mirror(rig, mirror_points, camera_leg, paths):
    """Every return at a mirror pixel arrives after its diffuse 1-bounce time."""
    diffuse_time = np.linalg.norm(mirror_points - rig.laser_origin, axis=1) + camera_leg
    if np.any(paths <= diffuse_time):
        raise RendererIntegrityError('mirror pixel return precedes its diffuse 1-bounce time')


def _spot_deposits(scene, rig, cfg, spots, gbuffer, masks, forced, mirrored, j):
    camera = rig.camera
    power = cfg.source_power
    g = cfg.grazing_cos
    source = spots.source_points[j]
    source_normal = spots.source_normals[j]
    source_albedo = spots.source_albedo[j]
    leg = spots.laser_legs[j]

    if ONE_BOUNCE in cfg.families and forced[j] >= 0:
        r = np.linalg.norm(source - camera.position)
        cos_out = max((camera.position - source) @ source_normal / r, g)
        yield Deposits(ONE_BOUNCE, j, np.array([forced[j]]), np.array([leg + r]),
                       np.array([power * source_albedo * cos_out / (np.pi * r * r)]))

    if TWO_BOUNCE in cfg.families:
        lit = masks.masks[j].ravel() & gbuffer.valid.ravel() & ~gbuffer.specular_mask.ravel()
        pixels = np.flatnonzero(lit)
        points = gbuffer.points.reshape(-1, 3)[pixels]
        normals = gbuffer.normals.reshape(-1, 3)[pixels]
        r, cos_out, cos_in = _pair_geometry(source, source_normal, points, normals)
        apart = r > 2.0 * SEGMENT_EPS
        pixels, points, normals = pixels[apart], points[apart], normals[apart]
        r, cos_out, cos_in = r[apart], cos_out[apart], cos_in[apart]
        camera_leg = gbuffer.depth.ravel()[pixels]
        towards_camera = (camera.position - points) / camera_leg[:, None]
        cos_view = dot(towards_camera, normals)
        albedo = gbuffer.albedo.ravel()[pixels]
        weights = power * source_albedo * albedo * np.maximum(cos_out, g) * np.maximum(cos_in, g) \
            * np.maximum(cos_view, g) / (np.pi ** 2 * r * r)
        yield Deposits(TWO_BOUNCE, j, pixels, leg + r + camera_leg, weights)

    if spots.is_mirror[j] or mirrored is None:
        return

    if MIRROR_ONE_BOUNCE in cfg.families:
        yield _mirror_one_bounce(scene, rig, cfg, spots, gbuffer, j)

    if MIRROR_TWO_BOUNCE in cfg.families:
        points = mirrored['points']
        r, cos_out, cos_in = _pair_geometry(source, source_normal, points, mirrored['normals'])
        clear = visible_segments(scene, np.broadcast_to(source, points.shape), points)
        reach = clear & (cos_out >= -g) & (cos_in >= -g) & (r > 2.0 * SEGMENT_EPS)
        towards_mirror = mirrored['mirror_points'] - points
        cos_view = dot(towards_mirror, mirrored['normals']) / mirrored['onward']
        weights = power * source_albedo * mirrored['albedo'] * np.maximum(cos_out, g) \
            * np.maximum(cos_in, g) * np.maximum(cos_view, g) / (np.pi ** 2 * r * r)
        paths = leg + r + mirrored['onward'] + mirrored['camera_leg']
        _check_after_mirror(rig, mirrored['mirror_points'][reach], mirrored['camera_leg'][reach],
                            paths[reach])
        yield Deposits(MIRROR_TWO_BOUNCE, j, mirrored['pixels'][reach], paths[reach], weights[reach])


def _mirror_one_bounce(scene, rig, cfg, spots, gbuffer, j):
    """A diffuse spot seen directly through a wall mirror."""
    camera = rig.camera
    source = spots.source_points[j]
    pixels, paths, weights = [], [], []
    for index, prim in enumerate(scene.objects):
        if not prim.is_mirror:
            continue
        panel = prim.shape
        image = mirror_point(source, panel.center, panel.normal)
        towards = image - camera.position
        dist = np.linalg.norm(towards)
        t, _ = panel.intersect(camera.position[None, :], (towards / dist)[None, :], 0.0)
        if not np.isfinite(t[0]) or t[0] >= dist:
            continue
        mirror_hit = camera.position + t[0] * towards / dist
        row, col = camera.pixel_of(mirror_hit)
        if row[0] < 0 or gbuffer.primitive[row[0], col[0]] != index:
            continue
        ends = np.array([[camera.position, mirror_hit], [mirror_hit, source]])
        if not np.all(visible_segments(scene, ends[:, 0], ends[:, 1])):
            continue
        unfolded = dist
        out = (mirror_hit - source) / np.linalg.norm(mirror_hit - source)
        cos_out = max(out @ spots.source_normals[j], cfg.grazing_cos)
        pixels.append(row[0] * camera.n_x + col[0])
        paths.append(spots.laser_legs[j] + np.linalg.norm(source - mirror_hit) + t[0])
        weights.append(cfg.source_power * spots.source_albedo[j] * cos_out / (np.pi * unfolded ** 2))
        _check_after_mirror(rig, mirror_hit[None, :], np.array([t[0]]), np.array([paths[-1]]))
    return Deposits(MIRROR_ONE_BOUNCE, j, np.array(pixels, dtype=int),
                    np.array(paths, dtype=float), np.array(weights, dtype=float))


def enumerate_deposits(scene, rig, cfg, spots=None, gbuffer=None, masks=None):
    """Yield every (family, spot) batch of path deposits in accumulation order."""
    spots = spots if spots is not None else trace_spots(scene, rig)
    gbuffer = gbuffer if gbuffer is not None else render_gbuffer(scene, rig)
    if masks is None:
        masks = render_shadow_masks(scene, rig, spots, gbuffer, cfg.grazing_cos)
    forced = one_bounce_pixels(scene, rig, spots, gbuffer)
    mirrored = _mirror_continuations(scene, rig, gbuffer)
    for j in range(spots.n_spots):
        yield from _spot_deposits(scene, rig, cfg, spots, gbuffer, masks, forced, mirrored, j)


def bin_deposits(cube_cfg, pixels, paths, weights):
    """Split deposits between the two nearest bin centers.

    Returns unique flat cube indices (pixel * n_t + bin) and summed weights.
    """
    n_t = cube_cfg.n_t
    pos = cube_cfg.bin_position(paths)
    outside = ~((pos >= 0) & (pos < n_t))
    if np.any(outside):
        count = int(outside.sum())
        if cube_cfg.gate_policy == 'error':
            raise GateOverflowError(
                f'{count} deposit(s) outside the gate [{cube_cfg.gate_path_min:.4f}, '
                f'{cube_cfg.gate_path_max:.4f}) m', count)
        logger.warning('dropping %d deposit(s) outside the gate', count)
        pixels, pos, weights = pixels[~outside], pos[~outside], weights[~outside]

    frac = pos - 0.5
    k0 = np.floor(frac).astype(np.int64)
    upper = frac - k0
    low_bin = np.clip(k0, 0, n_t - 1)
    high_bin = np.clip(k0 + 1, 0, n_t - 1)
    low_w = np.where(k0 < 0, 0.0, np.where(k0 + 1 >= n_t, 1.0, 1.0 - upper))
    high_w = 1.0 - low_w
    base = np.asarray(pixels, dtype=np.int64) * n_t
    keys = np.concatenate([base + low_bin, base + high_bin])
    values = np.concatenate([weights * low_w, weights * high_w])
    return _accumulate(keys, values)


def _accumulate(keys, values):
    if keys.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    unique, inverse = np.unique(keys, return_inverse=True)
    return unique, np.bincount(inverse.ravel(), weights=values, minlength=len(unique))


def _merge_into(shape, per_spot):
    """Add sparse per-spot contributions in fixed spot order."""
    flat = np.zeros(int(np.prod(shape)))
    for keys, values in per_spot:
        flat[keys] += values
    return flat.reshape(shape)


# ====================
# RENDERS
# ====================
def render_transient(scene, rig, cfg, spots=None, gbuffer=None, masks=None):
    started = time.perf_counter()
    spots = spots if spots is not None else trace_spots(scene, rig)
    gbuffer = gbuffer if gbuffer is not None else render_gbuffer(scene, rig)
    if masks is None:
        masks = render_shadow_masks(scene, rig, spots, gbuffer, cfg.grazing_cos)
    forced = one_bounce_pixels(scene, rig, spots, gbuffer)
    mirrored = _mirror_continuations(scene, rig, gbuffer)

    def render_spot(j):
        all_keys, all_values, peak = [], [], 0.0
        for batch in _spot_deposits(scene, rig, cfg, spots, gbuffer, masks, forced, mirrored, j):
            keys, values = bin_deposits(cfg.cube, batch.pixels, batch.paths, batch.weights)
            all_keys.append(keys)
            all_values.append(values)
            if batch.family in TWO_BOUNCE_FAMILIES and values.size:
                peak = max(peak, float(values.max()))
        if not all_keys:
            return (np.zeros(0, dtype=np.int64), np.zeros(0)), peak
        return _accumulate(np.concatenate(all_keys), np.concatenate(all_values)), peak

    results = ordered_map(render_spot, range(spots.n_spots), cfg.threads)
    data = _merge_into(gbuffer.shape + (cfg.cube.n_t,), [sparse for sparse, _ in results])
    peak = max((p for _, p in results), default=0.0)
    logger.info('rendered %dx%dx%d cube for %d spot(s) in %.2fs',
                gbuffer.shape[1], gbuffer.shape[0], cfg.cube.n_t, spots.n_spots,
                time.perf_counter() - started)
    return TransientCube(data, cfg.cube.delta, cfg.cube.gate_path_min, peak or None)


def _unit_cube(tof, weights, cube_cfg, threads=1):
    n_spots, n_y, n_x = tof.tof.shape
    paths = tof.path_lengths.reshape(n_spots, -1)
    weights = weights.reshape(n_spots, -1)

    def spot_job(j):
        pixels = np.flatnonzero(np.isfinite(paths[j]) & (weights[j] > 0))
        return bin_deposits(cube_cfg, pixels, paths[j][pixels], weights[j][pixels])

    return ordered_map(spot_job, range(n_spots), threads), (n_y, n_x, cube_cfg.n_t)


def render_calibrated(tof, cube_cfg, threads=1):
    """Occlusion-free capture with unit amplitude for every spot and pixel."""
    per_spot, shape = _unit_cube(tof, np.ones(tof.tof.shape), cube_cfg, threads)
    return TransientCube(_merge_into(shape, per_spot), cube_cfg.delta, cube_cfg.gate_path_min)


def render_light_in_flight(tof, shadows, cube_cfg, threads=1):
    """One cube per spot with unit deposits at that spot's lit pixels."""
    if shadows.masks.shape != tof.tof.shape:
        raise ValidationError('shadow masks and ToF maps are not aligned')
    per_spot, shape = _unit_cube(tof, shadows.masks.astype(float), cube_cfg, threads)
    return [TransientCube(_merge_into(shape, [sparse]), cube_cfg.delta, cube_cfg.gate_path_min)
            for sparse in per_spot]


@dataclass(frozen=True, eq=False)
class RenderOutput:
    cube: TransientCube
    gbuffer: GBuffer
    spots: SpotSet
    masks: ShadowMaskSet


def render_scene(scene, rig, cfg):
    """Full forward pass: G-buffer, spots, masks and the multiplexed cube."""
    gbuffer = render_gbuffer(scene, rig)
    spots = trace_spots(scene, rig)
    masks = render_shadow_masks(scene, rig, spots, gbuffer, cfg.grazing_cos)
    cube = render_transient(scene, rig, cfg, spots, gbuffer, masks)
    return RenderOutput(cube, gbuffer.with_intensity(cube), spots, masks)


def render_per_spot(scene, rig, cfg, output=None):
    """Sequential-illumination cubes, one per spot, sharing the multiplexed gate."""
    output = output or render_scene(scene, rig, cfg)
    cubes = []
    for j in range(output.spots.n_spots):
        single = ShadowMaskSet(output.masks.masks[[j]])
        cubes.append(render_transient(scene, rig, cfg, output.spots.select([j]), output.gbuffer, single))
    return cubes
