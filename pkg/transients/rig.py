# transients/rig.py
"""Pinhole sensor and laser spot grid."""
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from .geometry import as_points, is_unit, normalize


def look_rotation(forward, up=(0.0, 1.0, 0.0)):
    """Rotation whose columns are camera right, up and forward in world space."""
    forward = normalize(np.asarray(forward, float))
    right = np.cross(np.asarray(up, float), forward)
    if np.linalg.norm(right) < 1e-9:
        raise ValidationError('camera up vector is parallel to the view direction')
    right = normalize(right)
    true_up = np.cross(forward, right)
    return np.column_stack([right, true_up, forward])


@dataclass(frozen=True, eq=False)
class Camera:
    position: np.ndarray
    rotation: np.ndarray
    fov_deg: float
    n_x: int
    n_y: int

    def __post_init__(self):
        object.__setattr__(self, 'position', np.asarray(self.position, float))
        rotation = np.asarray(self.rotation, float)
        object.__setattr__(self, 'rotation', rotation)
        if rotation.shape != (3, 3) or not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-9) \
                or np.linalg.det(rotation) < 0:
            raise ValidationError('camera rotation must be a proper orthonormal 3x3 matrix')
        if not (10.0 < self.fov_deg < 170.0):
            raise ValidationError(f'field of view must lie in (10, 170) degrees, got {self.fov_deg}')
        if self.n_x < 1 or self.n_y < 1:
            raise ValidationError('camera needs at least one pixel')

    @property
    def shape(self):
        return (self.n_y, self.n_x)

    @property
    def tan_half(self):
        return np.tan(np.radians(self.fov_deg) / 2.0)

    @property
    def forward(self):
        return self.rotation[:, 2]

    def pixel_directions(self):
        """Unit world directions through every pixel center, shape (n_y, n_x, 3)."""
        cx = (2.0 * (np.arange(self.n_x) + 0.5) / self.n_x - 1.0) * self.tan_half
        cy = (1.0 - 2.0 * (np.arange(self.n_y) + 0.5) / self.n_y) * self.tan_half * self.n_y / self.n_x
        gx, gy = np.meshgrid(cx, cy)
        local = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
        return normalize(local @ self.rotation.T)

    def project(self, points):
        """Continuous pixel coordinates (u, v) of world points and an in-front mask.

        Pixel (u, v) covers [u, u+1) x [v, v+1).
        """
        local = (as_points(points) - self.position) @ self.rotation
        in_front = local[:, 2] > 1e-12
        z = np.where(in_front, local[:, 2], 1.0)
        half_y = self.tan_half * self.n_y / self.n_x
        u = (local[:, 0] / z / self.tan_half + 1.0) * self.n_x / 2.0
        v = (1.0 - local[:, 1] / z / half_y) * self.n_y / 2.0
        return u, v, in_front

    def pixel_of(self, points):
        """Integer (row, col) of the pixel imaging each point, -1 when off-sensor."""
        u, v, in_front = self.project(points)
        col = np.floor(u).astype(int)
        row = np.floor(v).astype(int)
        on = in_front & (col >= 0) & (col < self.n_x) & (row >= 0) & (row < self.n_y)
        return np.where(on, row, -1), np.where(on, col, -1)

    def resized(self, n_x, n_y=None):
        return Camera(self.position, self.rotation, self.fov_deg, n_x, n_y or n_x)


@dataclass(frozen=True, eq=False)
class LidarRig:
    camera: Camera
    laser_origin: np.ndarray
    spot_dirs: np.ndarray
    spot_grid: tuple = None

    def __post_init__(self):
        object.__setattr__(self, 'laser_origin', np.asarray(self.laser_origin, float))
        spot_dirs = as_points(self.spot_dirs)
        object.__setattr__(self, 'spot_dirs', spot_dirs)
        if len(spot_dirs) < 1:
            raise ValidationError('rig needs at least one laser spot')
        if not is_unit(spot_dirs):
            raise ValidationError('laser spot directions must be unit length')
        grid = self.spot_grid or (len(spot_dirs), 1)
        if grid[0] * grid[1] != len(spot_dirs):
            raise ValidationError(f'spot grid {grid} does not match {len(spot_dirs)} directions')
        object.__setattr__(self, 'spot_grid', tuple(int(g) for g in grid))

    @classmethod
    def grid(cls, camera, laser_origin, n_spots_x, n_spots_y=None, spot_fov_deg=60.0):
        """Regular spot grid spanning ``spot_fov_deg`` around the camera's forward axis."""
        n_spots_y = n_spots_y or n_spots_x
        if n_spots_x < 1 or n_spots_y < 1:
            raise ValidationError('spot grid must be at least 1x1')
        tan_half = np.tan(np.radians(spot_fov_deg) / 2.0)
        sx = (2.0 * (np.arange(n_spots_x) + 0.5) / n_spots_x - 1.0) * tan_half
        sy = (1.0 - 2.0 * (np.arange(n_spots_y) + 0.5) / n_spots_y) * tan_half
        gx, gy = np.meshgrid(sx, sy)
        local = np.stack([gx.ravel(), gy.ravel(), np.ones(gx.size)], axis=-1)
        dirs = normalize(local @ camera.rotation.T)
        return cls(camera, laser_origin, dirs, (n_spots_x, n_spots_y))

    @property
    def n_spots(self):
        return len(self.spot_dirs)

    def select_spots(self, indices):
        indices = list(indices)
        return LidarRig(self.camera, self.laser_origin, self.spot_dirs[indices], (len(indices), 1))

    def with_camera(self, camera):
        return LidarRig(camera, self.laser_origin, self.spot_dirs, self.spot_grid)
