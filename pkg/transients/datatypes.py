# transients/datatypes.py
"""Array containers passed between the renderer, the demultiplexer, the
carver and the file formats.

Images are ``(n_y, n_x)``, cubes ``(n_y, n_x, n_t)``; pixel (u, v) is
column u, row v.
"""
from dataclasses import dataclass

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from .geometry import SPEED_OF_LIGHT

GATE_POLICIES = ('error', 'drop')


@dataclass(frozen=True)
class CubeConfig:
    delta: float  # seconds per bin
    n_t: int
    gate_path_min: float = 1.0  # meters, path length at the start of bin 0
    gate_policy: str = 'error'

    def __post_init__(self):
        if not self.delta > 0:
            raise ValidationError('bin width must be positive')
        if self.n_t < 1:
            raise ValidationError('cube needs at least one time bin')
        if self.gate_path_min < 0:
            raise ValidationError('gate start must be non-negative')
        if self.gate_policy not in GATE_POLICIES:
            raise ValidationError(f'gate policy must be one of {GATE_POLICIES}')

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'delta': settings.LIDARSIM_DELTA_PS * 1e-12,
            'n_t': settings.LIDARSIM_N_BINS,
            'gate_path_min': settings.LIDARSIM_GATE_PATH_MIN_M,
            'gate_policy': settings.LIDARSIM_GATE_POLICY,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def bin_path(self):
        """Path length covered by one bin, c * delta."""
        return SPEED_OF_LIGHT * self.delta

    @property
    def gate_path_max(self):
        return self.gate_path_min + self.n_t * self.bin_path

    def bin_position(self, path):
        """Continuous bin coordinate; bin k spans [k, k + 1)."""
        return (np.asarray(path, float) - self.gate_path_min) / self.bin_path

    def bin_of(self, path):
        return np.floor(self.bin_position(path)).astype(int)

    def bin_center_path(self, k):
        return self.gate_path_min + (np.asarray(k, float) + 0.5) * self.bin_path

    def replace(self, **changes):
        values = {'delta': self.delta, 'n_t': self.n_t,
                  'gate_path_min': self.gate_path_min, 'gate_policy': self.gate_policy}
        values.update(changes)
        return CubeConfig(**values)


@dataclass(frozen=True, eq=False)
class TransientCube:
    data: np.ndarray
    delta: float
    gate_path_min: float
    # brightest two-bounce deposit, kept for the sensor model's rescale
    two_bounce_peak: float = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] < 1:
            raise ValidationError(f'transient cube must be (n_y, n_x, n_t), got {data.shape}')
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise ValidationError('transient cube entries must be finite and non-negative')
        object.__setattr__(self, 'data', data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_y(self):
        return self.data.shape[0]

    @property
    def n_x(self):
        return self.data.shape[1]

    @property
    def n_t(self):
        return self.data.shape[2]

    @property
    def bin_path(self):
        return SPEED_OF_LIGHT * self.delta

    def config(self, gate_policy='error'):
        return CubeConfig(self.delta, self.n_t, self.gate_path_min, gate_policy)

    def same_geometry(self, other):
        return (self.shape == other.shape and self.delta == other.delta
                and self.gate_path_min == other.gate_path_min)

    def intensity(self):
        """Time-integrated image, the sum over bins per pixel."""
        return self.data.sum(axis=2)

    def with_data(self, data, two_bounce_peak=None):
        return TransientCube(data, self.delta, self.gate_path_min, two_bounce_peak)

    @classmethod
    def zeros(cls, cube_cfg, n_y, n_x):
        return cls(np.zeros((n_y, n_x, cube_cfg.n_t)), cube_cfg.delta, cube_cfg.gate_path_min)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Distance along each pixel ray; invalid pixels hold NaN."""
    depth: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        if depth.ndim != 2:
            raise ValidationError(f'depth map must be 2-D, got {depth.shape}')
        valid = np.isfinite(depth) & (np.nan_to_num(depth) > 0)
        if self.valid is not None:
            valid &= np.asarray(self.valid, dtype=bool)
        object.__setattr__(self, 'depth', np.where(valid, depth, np.nan))
        object.__setattr__(self, 'valid', valid)

    @property
    def shape(self):
        return self.depth.shape

    def points(self, camera):
        """World points along the pixel rays, NaN where invalid."""
        return camera.position + self.depth[..., None] * camera.pixel_directions()


@dataclass(frozen=True, eq=False)
class TofMapSet:
    """Two-bounce time of flight per spot, shape (n_spots, n_y, n_x), seconds."""
    tof: np.ndarray

    def __post_init__(self):
        tof = np.asarray(self.tof, dtype=np.float64)
        if tof.ndim != 3:
            raise ValidationError(f'ToF maps must be (n_spots, n_y, n_x), got {tof.shape}')
        object.__setattr__(self, 'tof', tof)

    @property
    def n_spots(self):
        return self.tof.shape[0]

    @property
    def shape(self):
        return self.tof.shape[1:]

    @property
    def path_lengths(self):
        return self.tof * SPEED_OF_LIGHT


@dataclass(frozen=True, eq=False)
class ShadowMaskSet:
    """Per-spot binary masks, shape (n_spots, n_y, n_x); True = lit."""
    masks: np.ndarray

    def __post_init__(self):
        masks = np.asarray(self.masks)
        if masks.ndim != 3:
            raise ValidationError(f'shadow masks must be (n_spots, n_y, n_x), got {masks.shape}')
        object.__setattr__(self, 'masks', masks.astype(bool))

    @property
    def n_spots(self):
        return self.masks.shape[0]

    @property
    def shape(self):
        return self.masks.shape[1:]

    def __len__(self):
        return self.n_spots

    def __getitem__(self, index):
        return self.masks[index]
