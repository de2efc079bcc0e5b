# transients/carving.py
"""Occlusion-aware occupancy reconstruction by shadow carving.

Lit (spot, pixel) segments and the camera frustum carve free space;
shadowed segments nominate the cells they cross, and nominees that no
carving removes become occupied. Shadows already explained by surface
orientation or by an observed surface nominate nothing. Everything runs
on a tri-state voxel grid traversed with a vectorized 3-D DDA.
"""
import enum
import logging
import time
from dataclasses import dataclass

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scipy.ndimage import binary_dilation

from .datatypes import DepthMap
from .demux import normals_from_depth
from .exceptions import CarvingError, PoseOutOfBoundsError
from .geometry import Box, Cylinder, Sphere, dot, normalize, slab_interval
from .parallel import chunks, ordered_map
from .rig import Camera, look_rotation

logger = logging.getLogger(__name__)

UNKNOWN_POLICIES = ('occupied', 'empty')
SEGMENT_CHUNK = 16384


class CellState(enum.IntEnum):
    UNKNOWN = 0
    EMPTY = 1
    OCCUPIED = 2


@dataclass(frozen=True)
class GridConfig:
    resolution: tuple = (64, 64, 64)
    unknown_policy: str = 'occupied'
    dilation: int = 1
    threads: int = 1
    grazing_cos: float = 1e-2

    def __post_init__(self):
        resolution = self.resolution
        if np.isscalar(resolution):
            resolution = (int(resolution),) * 3
        object.__setattr__(self, 'resolution', tuple(int(r) for r in resolution))
        if len(self.resolution) != 3 or min(self.resolution) < 1:
            raise ValidationError(f'grid resolution must be three positive integers, got {self.resolution}')
        if self.unknown_policy not in UNKNOWN_POLICIES:
            raise ValidationError(f'unknown-cell policy must be one of {UNKNOWN_POLICIES}')
        if self.dilation < 0:
            raise ValidationError('shell dilation must be non-negative')

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'resolution': settings.LIDARSIM_GRID_RESOLUTION,
            'unknown_policy': settings.LIDARSIM_UNKNOWN_POLICY,
            'threads': settings.LIDARSIM_THREADS,
            'grazing_cos': settings.LIDARSIM_GRAZING_COS,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    states: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.uint8)
        if states.ndim != 3:
            raise ValidationError('occupancy grid must be 3-D')
        if np.any(states > CellState.OCCUPIED):
            raise ValidationError('occupancy grid holds an unknown cell state')
        object.__setattr__(self, 'states', states)
        object.__setattr__(self, 'lo', np.asarray(self.lo, float))
        object.__setattr__(self, 'hi', np.asarray(self.hi, float))
        if np.any(self.hi <= self.lo):
            raise ValidationError('grid bounds must have positive extent')

    @property
    def resolution(self):
        return self.states.shape

    @property
    def voxel_size(self):
        return (self.hi - self.lo) / np.array(self.resolution)

    def blocked(self, unknown_policy='occupied'):
        """Cells that stop a ray: occupied, plus unknown under the 'occupied' policy."""
        if unknown_policy not in UNKNOWN_POLICIES:
            raise ValidationError(f'unknown-cell policy must be one of {UNKNOWN_POLICIES}')
        blocked = self.states == CellState.OCCUPIED
        if unknown_policy == 'occupied':
            blocked |= self.states == CellState.UNKNOWN
        return blocked

    def cells_of(self, points):
        """Flat cell index for each point, clipped into the grid."""
        shape = np.array(self.resolution)
        ijk = np.floor((np.asarray(points, float) - self.lo) / self.voxel_size).astype(np.int64)
        ijk = np.clip(ijk, 0, shape - 1)
        return np.ravel_multi_index(ijk.T, self.resolution)

    def contains(self, point):
        point = np.asarray(point, float)
        return bool(np.all(point > self.lo) and np.all(point < self.hi))

    def same_layout(self, other):
        return (self.resolution == other.resolution and np.allclose(self.lo, other.lo)
                and np.allclose(self.hi, other.hi))

    @classmethod
    def unknown(cls, lo, hi, resolution):
        return cls(np.zeros(resolution, dtype=np.uint8), lo, hi)


# ====================
# 3-D DDA
# ====================
def march_segments(grid, starts, ends, visit, max_steps=None):
    """Walk every segment start[k] -> end[k] through the grid cells it crosses.

    ``visit(rows, cells, t_in, t_out)`` is called once per step with the
    active segment indices, their current flat cell index and the segment
    parameter interval spent inside that cell (0 at start, 1 at end).
    Returning a boolean array from ``visit`` stops those segments early.
    """
    shape = np.array(grid.resolution)
    voxel = grid.voxel_size
    g0 = (np.asarray(starts, float) - grid.lo) / voxel
    g1 = (np.asarray(ends, float) - grid.lo) / voxel
    d = g1 - g0

    t_enter, t_exit, _, _ = slab_interval(g0, d, np.zeros(3), shape.astype(float))
    t_enter = np.maximum(t_enter, 0.0)
    t_exit = np.minimum(t_exit, 1.0)
    active = t_enter < t_exit

    entry_point = g0 + np.where(active, t_enter + 1e-9, 0.0)[:, None] * d
    cell = np.clip(np.floor(entry_point).astype(np.int64), 0, shape - 1)
    step = np.sign(d).astype(np.int64)
    with np.errstate(invalid='ignore', divide='ignore'):
        boundary = cell + (step > 0)
        t_max = np.where(step != 0, (boundary - g0) / d, np.inf)
        t_delta = np.where(step != 0, 1.0 / np.abs(d), np.inf)
    t_cur = t_enter.copy()

    max_steps = max_steps or int(shape.sum()) + 3
    for _ in range(max_steps):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        t_next = np.minimum(t_max[rows].min(axis=1), t_exit[rows])
        flat = np.ravel_multi_index(cell[rows].T, grid.resolution)
        stop = visit(rows, flat, t_cur[rows], t_next)
        axis = np.argmin(t_max[rows], axis=1)
        cell[rows, axis] += step[rows, axis]
        t_cur[rows] = t_max[rows, axis]
        t_max[rows, axis] += t_delta[rows, axis]
        inside = np.all((cell[rows] >= 0) & (cell[rows] < shape), axis=1)
        keep = inside & (t_cur[rows] < t_exit[rows])
        if stop is not None:
            keep &= ~stop
        active[rows] = keep


def _mark_traversed(grid, starts, ends, threads=1):
    """Boolean flat grid of every cell crossed by any of the segments."""
    size = int(np.prod(grid.resolution))

    def job(span):
        start, stop = span
        flags = np.zeros(size, dtype=bool)

        def visit(rows, cells, t_in, t_out):
            flags[cells] = True

        march_segments(grid, starts[start:stop], ends[start:stop], visit)
        return flags

    marked = np.zeros(size, dtype=bool)
    for flags in ordered_map(job, chunks(len(starts), SEGMENT_CHUNK), threads):
        marked |= flags
    return marked


def _crosses(grid, flags, starts, ends, margin, threads=1):
    """Segments that pass through a flagged cell lying more than ``margin`` from both ends."""
    length = np.linalg.norm(ends - starts, axis=1)
    slack = np.minimum(margin / np.maximum(length, 1e-12), 0.5)

    def job(span):
        start, stop = span
        crossed = np.zeros(stop - start, dtype=bool)
        part = slack[start:stop]

        def visit(rows, cells, t_in, t_out):
            hit = flags[cells] & (t_in > part[rows]) & (t_out < 1.0 - part[rows])
            crossed[rows[hit]] = True
            return hit

        march_segments(grid, starts[start:stop], ends[start:stop], visit)
        return crossed

    parts = ordered_map(job, chunks(len(starts), SEGMENT_CHUNK), threads)
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def _explained_darkness(grid, shell, depth, camera, spots, dark_spot, dark_pixel, grid_cfg):
    """Shadowed pairs accounted for without a hidden occluder.

    Either the surface faces away from the spot, or the segment runs through
    an observed surface cell.
    """
    valid = depth.valid.ravel()
    points = depth.points(camera).reshape(-1, 3)[valid][dark_pixel]
    normals = normals_from_depth(depth, camera).reshape(-1, 3)[valid][dark_pixel]
    sources = spots.source_points[dark_spot]
    w = normalize(points - sources)
    cos_out = dot(w, spots.source_normals[dark_spot])
    cos_in = -dot(w, normals)
    facing_away = (cos_out < -grid_cfg.grazing_cos) | (cos_in < -grid_cfg.grazing_cos)

    margin = (grid_cfg.dilation + 1) * float(np.linalg.norm(grid.voxel_size))
    blocked = np.zeros(len(points), dtype=bool)
    rest = np.flatnonzero(~facing_away)
    blocked[rest] = _crosses(grid, shell, sources[rest], points[rest], margin, grid_cfg.threads)
    return facing_away | blocked


# ====================
# CARVING
# ====================
def carve_occupancy(depth, shadows, rig, spots, grid_cfg, bounds):
    """Tri-state occupancy from a depth map and per-spot shadow masks.

    ``bounds`` is the (lo, hi) box the grid covers, normally the room.
    """
    started = time.perf_counter()
    if spots.n_spots == 0 or shadows.n_spots == 0:
        raise CarvingError('carving needs at least one spot and one shadow mask')
    if shadows.n_spots != spots.n_spots:
        raise CarvingError(f'{shadows.n_spots} shadow masks for {spots.n_spots} spots')
    if shadows.shape != depth.shape:
        raise CarvingError(f'shadow masks {shadows.shape} do not match depth {depth.shape}')
    if not np.any(depth.valid):
        raise CarvingError('depth map has no valid pixels')

    lo, hi = (np.asarray(b, float) for b in bounds)
    grid = OccupancyGrid.unknown(lo, hi, grid_cfg.resolution)
    camera = rig.camera
    valid = depth.valid.ravel()
    points = depth.points(camera).reshape(-1, 3)[valid]
    sources = spots.source_points

    shell = np.zeros(grid.states.size, dtype=bool)
    shell[grid.cells_of(points)] = True
    shell[grid.cells_of(sources)] = True
    shell = shell.reshape(grid.resolution)
    protected = shell
    if grid_cfg.dilation > 0:
        protected = binary_dilation(shell, structure=np.ones((3, 3, 3), bool),
                                    iterations=grid_cfg.dilation)
    shell = shell.ravel()
    protected = protected.ravel()

    voxel = float(grid.voxel_size.max())
    directions = camera.pixel_directions().reshape(-1, 3)[valid]
    reach = depth.depth.ravel()[valid] - voxel
    far = reach > 0
    frustum_ends = camera.position + reach[far, None] * directions[far]
    carved = _mark_traversed(grid, np.broadcast_to(camera.position, frustum_ends.shape),
                             frustum_ends, grid_cfg.threads)

    lit = shadows.masks.reshape(spots.n_spots, -1)[:, valid]
    pair_spot, pair_pixel = np.nonzero(lit)
    carved |= _mark_traversed(grid, sources[pair_spot], points[pair_pixel], grid_cfg.threads)

    dark_spot, dark_pixel = np.nonzero(~lit)
    explained = _explained_darkness(grid, shell, depth, camera, spots, dark_spot, dark_pixel, grid_cfg)
    logger.debug('%d of %d shadowed pairs explained by the observed surfaces',
                 int(explained.sum()), len(explained))
    dark_spot, dark_pixel = dark_spot[~explained], dark_pixel[~explained]
    candidates = _mark_traversed(grid, sources[dark_spot], points[dark_pixel], grid_cfg.threads)

    occupied = shell | (candidates & ~carved & ~protected)
    empty = carved & ~protected & ~occupied
    states = np.full(grid.states.size, CellState.UNKNOWN, dtype=np.uint8)
    states[empty] = CellState.EMPTY
    states[occupied] = CellState.OCCUPIED
    result = OccupancyGrid(states.reshape(grid.resolution), lo, hi)
    logger.info('carved %s grid: %d occupied, %d empty, %d unknown (%d lit, %d shadowed pairs) in %.2fs',
                'x'.join(map(str, grid.resolution)), int(occupied.sum()), int(empty.sum()),
                int((states == CellState.UNKNOWN).sum()), len(pair_spot), len(dark_spot),
                time.perf_counter() - started)
    return result


def render_novel_depth(grid, camera, unknown_policy='occupied'):
    """Distance along each pixel ray to the first blocking cell's boundary."""
    if not grid.contains(camera.position):
        raise PoseOutOfBoundsError(f'camera at {camera.position.tolist()} is outside the grid bounds')
    blocked = grid.blocked(unknown_policy).ravel()
    directions = camera.pixel_directions().reshape(-1, 3)
    span = float(np.linalg.norm(grid.hi - grid.lo)) * 2.0
    ends = camera.position + span * directions
    hits = np.full(len(directions), np.nan)

    def visit(rows, cells, t_in, t_out):
        stop = blocked[cells]
        hits[rows[stop]] = t_in[stop] * span
        return stop

    march_segments(grid, np.broadcast_to(camera.position, ends.shape), ends, visit)
    return DepthMap(hits.reshape(camera.shape))


# ====================
# GROUND TRUTH
# ====================
def voxelize_scene(scene, grid_cfg):
    """Occupied wherever a 3x3x3 sub-sample of the cell lies inside a solid."""
    lo, hi = scene.room.lo, scene.room.hi
    grid = OccupancyGrid.unknown(lo, hi, grid_cfg.resolution)
    voxel = grid.voxel_size
    axes = [lo[k] + (np.arange(grid.resolution[k]) + 0.5) * voxel[k] for k in range(3)]
    centers = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, 3)
    occupied = np.zeros(len(centers), dtype=bool)
    offsets = np.array([-1.0, 0.0, 1.0]) / 3.0
    solids = [p.shape for p in scene.objects if isinstance(p.shape, (Box, Sphere, Cylinder))]
    for ox in offsets:
        for oy in offsets:
            for oz in offsets:
                samples = centers + np.array([ox, oy, oz]) * voxel
                for shape in solids:
                    occupied |= shape.contains(samples)
    states = np.where(occupied, CellState.OCCUPIED, CellState.EMPTY).astype(np.uint8)
    return OccupancyGrid(states.reshape(grid.resolution), lo, hi)


def novel_cameras(lo, hi, reference, count=4, n_x=None):
    """Cameras on a ring around the room center at mid height, looking inward."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    center = (lo + hi) / 2.0
    radius = 0.35 * min(hi[0] - lo[0], hi[2] - lo[2])
    cameras = []
    for k in range(count):
        angle = 2.0 * np.pi * (k + 0.5) / count
        position = center + radius * np.array([np.sin(angle), 0.0, -np.cos(angle)])
        rotation = look_rotation(center - position)
        n = n_x or reference.n_x
        cameras.append(Camera(position, rotation, reference.fov_deg, n, n))
    return cameras
