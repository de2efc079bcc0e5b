# transients/procedural.py
"""Random rooms holding a cube, a cylinder and a wall mirror."""
import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from .exceptions import PlacementError
from .rig import look_rotation
from .scene_io import SPEC_VERSION, SceneSpec

logger = logging.getLogger(__name__)

MIRROR_WALLS = ('-x', '+x', '+z')


@dataclass(frozen=True)
class SceneRanges:
    room_x: tuple = (2.5, 4.0)
    room_y: tuple = (2.2, 2.8)
    room_z: tuple = (2.5, 4.0)
    wall_albedo: tuple = (0.5, 0.9)
    object_albedo: tuple = (0.3, 0.9)
    cube_size: tuple = (0.3, 0.6)
    cylinder_radius: tuple = (0.1, 0.25)
    cylinder_height: tuple = (0.4, 1.0)
    mirror_size: tuple = (0.6, 1.2)
    n_cubes: int = 1
    n_cylinders: int = 1
    include_mirror: bool = True
    # camera sits this far in front of the -z wall; objects start min_object_distance beyond it
    camera_standoff: float = 0.3
    min_object_distance: float = 1.0
    wall_margin: float = 0.1
    object_gap: float = 0.05
    laser_offset: float = 0.05
    camera_jitter_m: float = 0.0
    fov_jitter_deg: float = 0.0
    fov_deg: float = 90.0
    resolution: int = 64
    spot_grid: int = 5
    spot_fov_deg: float = 60.0
    max_attempts: int = 100

    def __post_init__(self):
        for name in ('room_x', 'room_y', 'room_z', 'wall_albedo', 'object_albedo', 'cube_size',
                     'cylinder_radius', 'cylinder_height', 'mirror_size'):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValidationError(f'{name} must satisfy 0 < low <= high, got {(lo, hi)}')
        if self.max_attempts < 1:
            raise ValidationError('max_attempts must be at least 1')
        if self.camera_jitter_m < 0 or self.fov_jitter_deg < 0:
            raise ValidationError('jitter must be non-negative')

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'fov_deg': settings.LIDARSIM_FOV_DEG,
            'resolution': settings.LIDARSIM_RESOLUTION,
            'spot_grid': settings.LIDARSIM_SPOT_GRID,
            'spot_fov_deg': settings.LIDARSIM_SPOT_FOV_DEG,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def tabletop(cls, **overrides):
        """Small rooms that fit the short gate of the real-rig preset."""
        values = dict(room_x=(0.9, 1.1), room_y=(0.8, 1.0), room_z=(1.0, 1.2), cube_size=(0.1, 0.2),
                      cylinder_radius=(0.04, 0.08), cylinder_height=(0.15, 0.3), mirror_size=(0.25, 0.4),
                      camera_standoff=0.1, min_object_distance=0.4, wall_margin=0.05, object_gap=0.03,
                      fov_deg=46.0, spot_grid=4, spot_fov_deg=30.0)
        values.update(overrides)
        return cls(**values)


def _overlaps(lo, hi, placed, gap):
    return any(np.all(lo < other_hi + gap) and np.all(hi > other_lo - gap) for other_lo, other_hi in placed)


def _place(rng, ranges, size, dims, placed, what):
    """Rejection-sample the lower corner of an axis-aligned footprint of ``size``."""
    margin = ranges.wall_margin
    z_min = ranges.camera_standoff + ranges.min_object_distance
    for attempt in range(ranges.max_attempts):
        x_hi = dims[0] - margin - size[0]
        z_hi = dims[2] - margin - size[2]
        y_hi = min(dims[1] - margin - size[1], margin + 0.3)
        if x_hi < margin or z_hi < z_min or y_hi < margin / 2:
            raise PlacementError(f'{what} of size {np.round(size, 3).tolist()} does not fit the room')
        lo = np.array([rng.uniform(margin, x_hi), rng.uniform(margin / 2, y_hi), rng.uniform(z_min, z_hi)])
        hi = lo + size
        if not _overlaps(lo, hi, placed, ranges.object_gap):
            if attempt:
                logger.debug('placed %s after %d rejection(s)', what, attempt)
            placed.append((lo, hi))
            return lo, hi
    raise PlacementError(f'could not place {what} without overlapping another object '
                         f'after {ranges.max_attempts} attempts')


def _mirror_block(rng, ranges, dims):
    wall = MIRROR_WALLS[int(rng.integers(len(MIRROR_WALLS)))]
    axis = {'x': 0, 'z': 2}[wall[1]]
    coord = dims[axis] if wall[0] == '+' else 0.0
    along = 2 if axis == 0 else 0
    width = rng.uniform(*ranges.mirror_size)
    height = rng.uniform(*ranges.mirror_size)
    room_w, room_h = dims[along], dims[1]
    margin = ranges.wall_margin
    if width > room_w - 2 * margin or height > room_h - 2 * margin:
        raise PlacementError(f'mirror {width:.2f}x{height:.2f} m does not fit on wall {wall}')
    center = np.zeros(3)
    center[axis] = coord
    center[along] = rng.uniform(margin + width / 2, room_w - margin - width / 2)
    center[1] = rng.uniform(margin + height / 2, room_h - margin - height / 2)
    # panel width runs horizontally along the wall
    return {'type': 'mirror', 'wall': wall, 'center': center.tolist(), 'size': [float(width), float(height)]}


def generate_scene(seed, ranges=None):
    """Deterministic scene for ``seed``: same seed and ranges give an identical spec."""
    ranges = ranges or SceneRanges()
    rng = np.random.default_rng(seed)
    dims = np.array([rng.uniform(*ranges.room_x), rng.uniform(*ranges.room_y), rng.uniform(*ranges.room_z)])
    albedo = [float(a) for a in rng.uniform(*ranges.wall_albedo, size=6)]

    placed = []
    objects = []
    for k in range(ranges.n_cubes):
        edge = rng.uniform(*ranges.cube_size)
        lo, hi = _place(rng, ranges, np.full(3, edge), dims, placed, f'cube {k}')
        objects.append({'type': 'box', 'center': ((lo + hi) / 2).tolist(), 'size': [float(edge)] * 3,
                        'material': {'type': 'diffuse', 'albedo': float(rng.uniform(*ranges.object_albedo))}})
    for k in range(ranges.n_cylinders):
        radius = rng.uniform(*ranges.cylinder_radius)
        height = rng.uniform(*ranges.cylinder_height)
        lo, hi = _place(rng, ranges, np.array([2 * radius, height, 2 * radius]), dims, placed, f'cylinder {k}')
        base = np.array([lo[0] + radius, lo[1], lo[2] + radius])
        objects.append({'type': 'cylinder', 'base': base.tolist(), 'axis': [0.0, 1.0, 0.0],
                        'radius': float(radius), 'height': float(height),
                        'material': {'type': 'diffuse', 'albedo': float(rng.uniform(*ranges.object_albedo))}})
    if ranges.include_mirror:
        objects.append(_mirror_block(rng, ranges, dims))

    jitter = rng.uniform(-ranges.camera_jitter_m, ranges.camera_jitter_m, size=3) if ranges.camera_jitter_m \
        else np.zeros(3)
    jitter[2] = abs(jitter[2])
    position = np.array([dims[0] / 2, dims[1] * 0.5, ranges.camera_standoff]) + jitter
    fov = ranges.fov_deg + (rng.uniform(-ranges.fov_jitter_deg, ranges.fov_jitter_deg)
                            if ranges.fov_jitter_deg else 0.0)
    rotation = look_rotation([0.0, 0.0, 1.0])
    laser = position + rotation[:, 0] * ranges.laser_offset

    data = {
        'version': SPEC_VERSION,
        'seed': int(seed),
        'room': {'min': [0.0, 0.0, 0.0], 'max': dims.tolist(), 'albedo': albedo},
        'objects': objects,
        'rig': {
            'position': position.tolist(),
            'rotation': rotation.tolist(),
            'fov_deg': float(fov),
            'n_x': ranges.resolution,
            'n_y': ranges.resolution,
            'laser_origin': laser.tolist(),
            'spot_grid': [ranges.spot_grid, ranges.spot_grid],
            'spot_fov_deg': ranges.spot_fov_deg,
        },
    }
    spec = SceneSpec(data)
    spec.scene()  # raises ValidationError if anything ended up outside the room
    return spec
