# transients/geometry.py
"""Vector math, ray-primitive intersection, mutual visibility and the
closed-form ellipsoid depth inversion behind all two-bounce reasoning.

Everything is vectorized over rays: origins and directions are ``(N, 3)``
float arrays. Scenes are immutable once built, so every function here is
safe to call from several threads at once.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from django.core.exceptions import ValidationError

from .exceptions import DegenerateGeometryError, DegenerateSegmentError, NoSolutionError

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0  # m/s

SEGMENT_EPS = 1e-6  # endpoint offset for shadow rays
TIE_EPS = 1e-9  # hits closer than this are coincident; lower list index wins
PARALLEL_EPS = 1e-12
UNIT_TOL = 1e-9
COPLANAR_TOL = 1e-6

WALL_NAMES = ('-x', '+x', '-y', '+y', '-z', '+z')


# ====================
# VECTOR HELPERS
# ====================
def as_points(values):
    """Return ``values`` as a float ``(N, 3)`` array (a single point becomes N=1)."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[-1] != 3:
        raise ValidationError(f'expected 3-vectors, got shape {arr.shape}')
    return arr


def normalize(vectors):
    vectors = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    with np.errstate(invalid='ignore', divide='ignore'):
        return vectors / norms


def is_unit(vectors, tol=UNIT_TOL):
    return bool(np.all(np.abs(np.linalg.norm(np.asarray(vectors, float), axis=-1) - 1.0) <= tol))


def dot(a, b):
    return np.einsum('...i,...i->...', a, b)


def reflect(directions, normals):
    """Law of reflection, d' = d - 2 (d.n) n."""
    return directions - 2.0 * dot(directions, normals)[..., None] * normals


def mirror_point(points, plane_point, plane_normal):
    """Mirror image of ``points`` across the plane through ``plane_point``."""
    offset = dot(points - plane_point, plane_normal)
    return points - 2.0 * offset[..., None] * plane_normal


def _face_against(normals, directions):
    flip = dot(normals, directions) > 0.0
    return np.where(flip[:, None], -normals, normals)


# ====================
# MATERIALS
# ====================
@dataclass(frozen=True)
class Diffuse:
    albedo: float

    def __post_init__(self):
        if not (0.0 < self.albedo <= 1.0):
            raise ValidationError(f'albedo must lie in (0, 1], got {self.albedo}')

    is_mirror = False


@dataclass(frozen=True)
class Mirror:
    is_mirror = True
    albedo = 1.0


# ====================
# SHAPES
# ====================
@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box given by its center and full edge lengths."""
    center: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'center', np.asarray(self.center, float))
        object.__setattr__(self, 'size', np.asarray(self.size, float))
        if np.any(self.size <= 0):
            raise ValidationError('box extents must be positive')

    @property
    def lo(self):
        return self.center - self.size / 2.0

    @property
    def hi(self):
        return self.center + self.size / 2.0

    def bounds(self):
        return self.lo, self.hi

    def contains(self, points):
        points = as_points(points)
        return np.all((points > self.lo) & (points < self.hi), axis=1)

    def intersect(self, origins, directions, t_min):
        t_near, t_far, near_axis, far_axis = slab_interval(origins, directions, self.lo, self.hi)
        use_near = t_near >= t_min
        t = np.where(use_near, t_near, t_far)
        axis = np.where(use_near, near_axis, far_axis)
        hit = (t_far >= np.maximum(t_near, t_min)) & np.isfinite(t)
        t = np.where(hit, t, np.inf)
        normals = _axis_normals(directions, axis)
        return t, normals


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, 'center', np.asarray(self.center, float))
        if self.radius <= 0:
            raise ValidationError('sphere radius must be positive')

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def contains(self, points):
        return np.linalg.norm(as_points(points) - self.center, axis=1) < self.radius

    def intersect(self, origins, directions, t_min):
        oc = origins - self.center
        b = dot(oc, directions)
        c = dot(oc, oc) - self.radius ** 2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        t1 = -b - root
        t2 = -b + root
        t = np.where(t1 >= t_min, t1, np.where(t2 >= t_min, t2, np.inf))
        t = np.where(disc >= 0.0, t, np.inf)
        with np.errstate(invalid='ignore'):
            points = origins + np.where(np.isfinite(t), t, 0.0)[:, None] * directions
        normals = (points - self.center) / self.radius
        return t, _face_against(normals, directions)


@dataclass(frozen=True, eq=False)
class Cylinder:
    """Finite solid cylinder: disc of ``radius`` at ``base`` swept ``height`` along ``axis``."""
    base: np.ndarray
    axis: np.ndarray
    radius: float
    height: float

    def __post_init__(self):
        object.__setattr__(self, 'base', np.asarray(self.base, float))
        object.__setattr__(self, 'axis', np.asarray(self.axis, float))
        if self.radius <= 0 or self.height <= 0:
            raise ValidationError('cylinder radius and height must be positive')
        if not is_unit(self.axis):
            raise ValidationError('cylinder axis must be unit length')

    def bounds(self):
        top = self.base + self.height * self.axis
        # disc extent along each world axis is r * sqrt(1 - a_k^2)
        spread = self.radius * np.sqrt(np.clip(1.0 - self.axis ** 2, 0.0, 1.0))
        return np.minimum(self.base, top) - spread, np.maximum(self.base, top) + spread

    def contains(self, points):
        rel = as_points(points) - self.base
        along = rel @ self.axis
        radial = rel - along[:, None] * self.axis
        return (along > 0) & (along < self.height) & (np.linalg.norm(radial, axis=1) < self.radius)

    def intersect(self, origins, directions, t_min):
        a = self.axis
        w = origins - self.base
        d_along = directions @ a
        w_along = w @ a
        d_perp = directions - d_along[:, None] * a
        w_perp = w - w_along[:, None] * a

        qa = dot(d_perp, d_perp)
        qb = dot(d_perp, w_perp)
        qc = dot(w_perp, w_perp) - self.radius ** 2
        disc = qb * qb - qa * qc
        candidates = np.full((len(origins), 4), np.inf)
        lateral = (qa > PARALLEL_EPS) & (disc >= 0.0)
        with np.errstate(invalid='ignore', divide='ignore'):
            root = np.sqrt(np.maximum(disc, 0.0))
            for col, sign in ((0, -1.0), (1, 1.0)):
                t = (-qb + sign * root) / qa
                s = w_along + t * d_along
                ok = lateral & (s >= 0.0) & (s <= self.height) & (t >= t_min)
                candidates[:, col] = np.where(ok, t, np.inf)
            capped = np.abs(d_along) > PARALLEL_EPS
            for col, level in ((2, 0.0), (3, self.height)):
                t = (level - w_along) / d_along
                radial = w_perp + t[:, None] * d_perp
                ok = capped & (dot(radial, radial) <= self.radius ** 2) & (t >= t_min)
                candidates[:, col] = np.where(ok, t, np.inf)

        which = np.argmin(candidates, axis=1)
        t = candidates[np.arange(len(origins)), which]
        finite_t = np.where(np.isfinite(t), t, 0.0)
        radial = w_perp + finite_t[:, None] * d_perp
        lateral_normals = normalize(radial)
        cap_normals = np.where((which == 2)[:, None], -a, a)
        normals = np.where((which < 2)[:, None], lateral_normals, cap_normals)
        normals = np.nan_to_num(normals)
        return t, _face_against(normals, directions)


@dataclass(frozen=True, eq=False)
class Panel:
    """Two-sided rectangle with half-sizes along ``u_axis`` and ``v_axis``."""
    center: np.ndarray
    normal: np.ndarray
    up: np.ndarray
    size: tuple

    u_axis: np.ndarray = field(init=False)
    v_axis: np.ndarray = field(init=False)

    def __post_init__(self):
        center = np.asarray(self.center, float)
        normal = np.asarray(self.normal, float)
        if not is_unit(normal):
            raise ValidationError('panel normal must be unit length')
        up = np.asarray(self.up, float)
        v_axis = up - (up @ normal) * normal
        if np.linalg.norm(v_axis) < 1e-9:
            raise ValidationError('panel up vector is parallel to its normal')
        v_axis = v_axis / np.linalg.norm(v_axis)
        width, height = (float(s) for s in self.size)
        if width <= 0 or height <= 0:
            raise ValidationError('panel extents must be positive')
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'normal', normal)
        object.__setattr__(self, 'up', up)
        object.__setattr__(self, 'size', (width, height))
        object.__setattr__(self, 'v_axis', v_axis)
        object.__setattr__(self, 'u_axis', np.cross(v_axis, normal))

    def corners(self):
        hu = self.u_axis * self.size[0] / 2.0
        hv = self.v_axis * self.size[1] / 2.0
        return np.array([self.center + su * hu + sv * hv for su in (-1, 1) for sv in (-1, 1)])

    def bounds(self):
        corners = self.corners()
        return corners.min(axis=0), corners.max(axis=0)

    def contains(self, points):
        return np.zeros(len(as_points(points)), dtype=bool)

    def intersect(self, origins, directions, t_min):
        denom = directions @ self.normal
        parallel = np.abs(denom) < PARALLEL_EPS
        with np.errstate(invalid='ignore', divide='ignore'):
            t = ((self.center - origins) @ self.normal) / denom
        t = np.where(parallel, np.inf, t)
        finite_t = np.where(np.isfinite(t), t, 0.0)
        local = origins + finite_t[:, None] * directions - self.center
        inside = (np.abs(local @ self.u_axis) <= self.size[0] / 2.0) & \
            (np.abs(local @ self.v_axis) <= self.size[1] / 2.0)
        t = np.where(inside & (t >= t_min), t, np.inf)
        normals = np.broadcast_to(self.normal, origins.shape)
        return t, _face_against(normals, directions)


def slab_interval(origins, directions, lo, hi):
    parallel = directions == 0.0
    inside_slab = (origins >= lo) & (origins <= hi)
    with np.errstate(invalid='ignore', divide='ignore'):
        inv = 1.0 / directions
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    t0 = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), t0)
    t1 = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), t1)
    t_lo = np.minimum(t0, t1)
    t_hi = np.maximum(t0, t1)
    return t_lo.max(axis=1), t_hi.min(axis=1), t_lo.argmax(axis=1), t_hi.argmin(axis=1)


def _axis_normals(directions, axis):
    rows = np.arange(len(directions))
    normals = np.zeros_like(directions)
    normals[rows, axis] = -np.sign(directions[rows, axis])
    return normals


# ====================
# SCENE
# ====================
@dataclass(frozen=True)
class Primitive:
    shape: object
    material: object

    @property
    def is_mirror(self):
        return self.material.is_mirror


@dataclass(frozen=True, eq=False)
class Room:
    """Axis-aligned room interior; walls ordered -x, +x, -y, +y, -z, +z."""
    lo: np.ndarray
    hi: np.ndarray
    albedos: tuple = (0.8,) * 6

    def __post_init__(self):
        object.__setattr__(self, 'lo', np.asarray(self.lo, float))
        object.__setattr__(self, 'hi', np.asarray(self.hi, float))
        object.__setattr__(self, 'albedos', tuple(float(a) for a in self.albedos))
        if np.any(self.hi <= self.lo):
            raise ValidationError('room extents must be positive')
        if len(self.albedos) != 6:
            raise ValidationError('room needs one albedo per wall (6)')
        for albedo in self.albedos:
            Diffuse(albedo)

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, points, margin=0.0):
        points = as_points(points)
        return np.all((points >= self.lo + margin) & (points <= self.hi - margin), axis=1)

    def intersect_inside(self, origins, directions):
        _, t_far, _, far_axis = slab_interval(origins, directions, self.lo, self.hi)
        rows = np.arange(len(origins))
        wall = 2 * far_axis + (directions[rows, far_axis] > 0)
        return t_far, _axis_normals(directions, far_axis), wall

    def wall_plane(self, wall):
        """Return (axis, coordinate, inward normal) for a wall index."""
        axis, upper = divmod(wall, 2)
        normal = np.zeros(3)
        normal[axis] = -1.0 if upper else 1.0
        return axis, (self.hi if upper else self.lo)[axis], normal


@dataclass(frozen=True)
class HitBatch:
    """Nearest hits for N rays. ``primitive`` is -1 for room walls and on a miss."""
    hit: np.ndarray
    distance: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    albedo: np.ndarray
    is_mirror: np.ndarray
    primitive: np.ndarray
    wall: np.ndarray

    def __len__(self):
        return len(self.hit)


@dataclass(frozen=True)
class Hit:
    point: np.ndarray
    normal: np.ndarray
    distance: float
    material: object


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, 'origin', np.asarray(self.origin, float))
        object.__setattr__(self, 'direction', np.asarray(self.direction, float))
        if self.t_min < 0 or not self.t_max > self.t_min:
            raise ValidationError('ray needs 0 <= t_min < t_max')
        if not is_unit(self.direction):
            raise ValidationError('ray direction must be unit length')


@dataclass(frozen=True, eq=False)
class Scene:
    room: Room
    objects: tuple = ()
    max_primitives: int = 8

    def __post_init__(self):
        object.__setattr__(self, 'objects', tuple(self.objects))
        if len(self.objects) > self.max_primitives:
            raise ValidationError(
                f'scene has {len(self.objects)} primitives, the cap is {self.max_primitives}')
        for index, primitive in enumerate(self.objects):
            self._validate_primitive(index, primitive)

    def _validate_primitive(self, index, primitive):
        lo, hi = primitive.shape.bounds()
        if isinstance(primitive.shape, Panel):
            wall = self.wall_of(primitive.shape)
            if primitive.is_mirror and wall is None:
                raise ValidationError(f'mirror panel {index} is not flush with a wall')
            inside = np.all(lo >= self.room.lo - COPLANAR_TOL) and np.all(hi <= self.room.hi + COPLANAR_TOL)
            if wall is None:
                inside = inside and np.all(lo > self.room.lo) and np.all(hi < self.room.hi)
        else:
            inside = np.all(lo > self.room.lo) and np.all(hi < self.room.hi)
        if not inside:
            raise ValidationError(f'primitive {index} is not strictly inside the room')

    def wall_of(self, panel):
        """Index of the wall a panel lies flush against, or None."""
        for wall in range(6):
            axis, coord, normal = self.room.wall_plane(wall)
            if abs(abs(panel.normal @ normal) - 1.0) > UNIT_TOL:
                continue
            if np.all(np.abs(panel.corners()[:, axis] - coord) <= COPLANAR_TOL):
                return wall
        return None

    @property
    def mirrors(self):
        return [p for p in self.objects if p.is_mirror]

    def intersect(self, origins, directions, t_min=0.0, t_max=np.inf, include_room=True):
        origins = as_points(origins)
        directions = as_points(directions)
        n = len(origins)
        best = np.full(n, np.inf)
        normals = np.zeros((n, 3))
        primitive = np.full(n, -1)
        albedo = np.zeros(n)
        mirror = np.zeros(n, dtype=bool)
        wall = np.full(n, -1)

        for index, prim in enumerate(self.objects):
            t, prim_normals = prim.shape.intersect(origins, directions, t_min)
            closer = (t <= t_max) & (t < best - TIE_EPS)
            best = np.where(closer, t, best)
            normals[closer] = prim_normals[closer]
            primitive[closer] = index
            albedo[closer] = prim.material.albedo
            mirror[closer] = prim.is_mirror

        if include_room:
            t, wall_normals, wall_index = self.room.intersect_inside(origins, directions)
            closer = (t >= t_min) & (t <= t_max) & (t < best - TIE_EPS)
            best = np.where(closer, t, best)
            normals[closer] = wall_normals[closer]
            primitive[closer] = -1
            albedo[closer] = np.asarray(self.room.albedos)[wall_index[closer]]
            mirror[closer] = False
            wall[closer] = wall_index[closer]

        hit = np.isfinite(best)
        points = origins + np.where(hit, best, 0.0)[:, None] * directions
        return HitBatch(hit=hit, distance=best, points=points, normals=normals,
                        albedo=albedo, is_mirror=mirror, primitive=primitive, wall=wall)


# ====================
# OPERATIONS
# ====================
def intersect_ray(scene, ray):
    """Nearest hit of a single ray, or ``None`` for a miss."""
    batch = scene.intersect(ray.origin, ray.direction, ray.t_min, ray.t_max)
    if not batch.hit[0]:
        return None
    if batch.primitive[0] >= 0:
        material = scene.objects[batch.primitive[0]].material
    else:
        material = Diffuse(batch.albedo[0])
    return Hit(point=batch.points[0], normal=batch.normals[0],
               distance=float(batch.distance[0]), material=material)


def visible_segments(scene, a, b):
    """Vectorized mutual visibility over the open segments a[k] -> b[k].

    Only scene objects can block: both endpoints are inside the convex room.
    Segments shorter than twice the endpoint offset count as visible.
    """
    a = as_points(a)
    b = as_points(b)
    delta = b - a
    length = np.linalg.norm(delta, axis=1)
    short = length <= 2.0 * SEGMENT_EPS
    safe_length = np.where(short, 1.0, length)
    directions = delta / safe_length[:, None]
    clear = np.ones(len(a), dtype=bool)
    for prim in scene.objects:
        t, _ = prim.shape.intersect(a, directions, SEGMENT_EPS)
        clear &= ~(t <= safe_length - SEGMENT_EPS)
    return clear | short


def visible(scene, a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if np.array_equal(a, b):
        raise DegenerateSegmentError('visibility segment has identical endpoints')
    return bool(visible_segments(scene, a, b)[0])


def ellipsoid_depths(path_length, focus, origin, directions):
    """Vectorized ellipsoid inversion.

    Solves |p - focus| + |p - origin| = path_length for p = origin + t * d.
    Returns ``(t, status)`` where status is 0 for a solution, 1 for a
    degenerate denominator and 2 when no non-negative solution exists.
    """
    path_length = np.asarray(path_length, float)
    directions = np.asarray(directions, float)
    offset = np.asarray(focus, float) - np.asarray(origin, float)
    spread = dot(offset, offset)
    denom = path_length - dot(directions, offset)
    degenerate = np.abs(denom) <= 1e-9
    with np.errstate(invalid='ignore', divide='ignore'):
        t = (path_length ** 2 - spread) / (2.0 * denom)
    bad = ~degenerate & ((denom < 0) | ~(t >= 0))
    status = np.where(degenerate, 1, np.where(bad, 2, 0))
    return np.where(status == 0, t, np.nan), status


def ellipsoid_depth(path_length, x_i, x_c, pixel_dir):
    """Depth along ``pixel_dir`` from ``x_c`` on the ellipsoid with foci x_i, x_c.

    ``path_length`` is the two-bounce path with the laser leg already removed.
    """
    t, status = ellipsoid_depths(path_length, x_i, x_c, pixel_dir)
    status = int(np.asarray(status).reshape(-1)[0])
    if status == 1:
        raise DegenerateGeometryError('pixel ray passes through the virtual source')
    if status == 2:
        raise NoSolutionError(f'no non-negative depth for path {path_length}')
    return float(np.asarray(t).reshape(-1)[0])


def path_sensitivity(points, focus, directions):
    """d(path)/d(depth) at ``points`` on rays with ``directions``; in [0, 2]."""
    towards = normalize(points - np.asarray(focus, float))
    return 1.0 + np.nan_to_num(dot(directions, towards), nan=-1.0)
