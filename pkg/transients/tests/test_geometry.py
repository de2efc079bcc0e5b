import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from transients.exceptions import DegenerateGeometryError, DegenerateSegmentError, NoSolutionError
from transients.geometry import (
    Box,
    Cylinder,
    Diffuse,
    Mirror,
    Panel,
    Primitive,
    Ray,
    Room,
    Scene,
    Sphere,
    ellipsoid_depth,
    intersect_ray,
    mirror_point,
    path_sensitivity,
    reflect,
    visible,
)

from .fixtures import mirror_scene


def cubic_room():
    return Room([-2.0, -2.0, -2.0], [2.0, 2.0, 2.0])


class IntersectRayTests(SimpleTestCase):

    def test_wall_hit_in_empty_room(self):
        hit = intersect_ray(Scene(cubic_room()), Ray([0, 0, 0], [0, 0, 1]))
        self.assertAlmostEqual(hit.distance, 2.0)
        np.testing.assert_allclose(hit.normal, [0, 0, -1])
        np.testing.assert_allclose(hit.point, [0, 0, 2])

    def test_box_face_hit(self):
        scene = Scene(cubic_room(), [Primitive(Box([0, 0, 1.5], [1, 1, 1]), Diffuse(0.5))])
        hit = intersect_ray(scene, Ray([0, 0, 0], [0, 0, 1]))
        self.assertAlmostEqual(hit.distance, 1.0)
        np.testing.assert_allclose(hit.normal, [0, 0, -1])
        self.assertEqual(hit.material.albedo, 0.5)

    def test_cylinder_side_hit(self):
        scene = Scene(cubic_room(), [Primitive(Cylinder([0, -0.5, 0], [0, 1, 0], 0.3, 1.0), Diffuse(0.5))])
        hit = intersect_ray(scene, Ray([0, 0, -1.5], [0, 0, 1]))
        self.assertAlmostEqual(hit.distance, 1.2)
        np.testing.assert_allclose(hit.normal, [0, 0, -1], atol=1e-12)

    def test_ray_limited_by_t_max_misses(self):
        self.assertIsNone(intersect_ray(Scene(cubic_room()), Ray([0, 0, 0], [0, 0, 1], t_max=1.0)))

    def test_random_hits_lie_on_their_surfaces(self):
        sphere = Sphere([0.5, 0.2, 0.8], 0.4)
        scene = Scene(cubic_room(), [Primitive(sphere, Diffuse(0.5))])
        rng = np.random.default_rng(3)
        dirs = rng.normal(size=(2000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.zeros_like(dirs)
        batch = scene.intersect(origins, dirs)
        self.assertTrue(batch.hit.all())
        on_sphere = batch.primitive == 0
        self.assertGreater(on_sphere.sum(), 0)
        np.testing.assert_allclose(np.linalg.norm(batch.points[on_sphere] - sphere.center, axis=1), 0.4)
        walls = ~on_sphere
        np.testing.assert_allclose(np.abs(batch.points[walls]).max(axis=1), 2.0)
        # the nearest hit is never farther than the sphere's own hit
        t_sphere, _ = sphere.intersect(origins, dirs, 0.0)
        self.assertTrue(np.all(batch.distance <= t_sphere + 1e-12))


def _against(normals, directions):
    flip = np.einsum('ij,ij->i', normals, directions) > 0
    return np.where(flip[:, None], -normals, normals)


def _nearest(candidates):
    """Stack of (t, normals) pairs -> nearest t >= 0 and its normal per ray."""
    ts = np.stack([np.where(t >= 0, t, np.inf) for t, _ in candidates], axis=1)
    which = np.argmin(ts, axis=1)
    rows = np.arange(len(ts))
    normals = np.stack([n for _, n in candidates], axis=1)[rows, which]
    return ts[rows, which], normals


def room_oracle(room, o, d):
    with np.errstate(divide='ignore', invalid='ignore'):
        t = np.where(d > 0, (room.hi - o) / d, np.where(d < 0, (room.lo - o) / d, np.inf))
    axis = np.argmin(t, axis=1)
    rows = np.arange(len(o))
    normals = np.zeros_like(o)
    normals[rows, axis] = -np.sign(d[rows, axis])
    return t[rows, axis], normals


def box_oracle(box, o, d):
    candidates = []
    for k in range(3):
        others = [a for a in range(3) if a != k]
        for plane in (box.lo[k], box.hi[k]):
            with np.errstate(divide='ignore', invalid='ignore'):
                t = (plane - o[:, k]) / d[:, k]
            p = o + np.nan_to_num(t, posinf=0.0, neginf=0.0)[:, None] * d
            on_face = np.all((p[:, others] >= box.lo[others]) & (p[:, others] <= box.hi[others]), axis=1)
            normal = np.zeros_like(o)
            normal[:, k] = 1.0
            candidates.append((np.where(on_face & np.isfinite(t), t, np.inf), _against(normal, d)))
    return _nearest(candidates)


def sphere_oracle(sphere, o, d):
    oc = o - sphere.center
    b = np.einsum('ij,ij->i', oc, d)
    disc = b ** 2 - (np.einsum('ij,ij->i', oc, oc) - sphere.radius ** 2)
    root = np.sqrt(np.where(disc >= 0, disc, np.nan))
    candidates = []
    for t in (-b - root, -b + root):
        t = np.where(np.isfinite(t), t, np.inf)
        p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        candidates.append((t, _against((p - sphere.center) / sphere.radius, d)))
    return _nearest(candidates)


def cylinder_oracle(cyl, o, d):
    a = cyl.axis
    rel = o - cyl.base
    d_perp = d - np.outer(d @ a, a)
    r_perp = rel - np.outer(rel @ a, a)
    qa = np.einsum('ij,ij->i', d_perp, d_perp)
    qb = np.einsum('ij,ij->i', d_perp, r_perp)
    qc = np.einsum('ij,ij->i', r_perp, r_perp) - cyl.radius ** 2
    disc = qb ** 2 - qa * qc
    candidates = []
    with np.errstate(divide='ignore', invalid='ignore'):
        for sign in (-1.0, 1.0):
            t = (-qb + sign * np.sqrt(np.where(disc >= 0, disc, np.nan))) / qa
            t = np.where(np.isfinite(t), t, np.inf)
            p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
            along = (p - cyl.base) @ a
            radial = (p - cyl.base) - np.outer(along, a)
            ok = (along >= 0) & (along <= cyl.height)
            normal = radial / np.linalg.norm(radial, axis=1, keepdims=True)
            candidates.append((np.where(ok, t, np.inf), _against(np.nan_to_num(normal), d)))
        for level in (0.0, cyl.height):
            t = (level - rel @ a) / (d @ a)
            t = np.where(np.isfinite(t), t, np.inf)
            p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
            radial = (p - cyl.base) - np.outer((p - cyl.base) @ a, a)
            ok = np.linalg.norm(radial, axis=1) <= cyl.radius
            candidates.append((np.where(ok, t, np.inf), _against(np.broadcast_to(a, o.shape).copy(), d)))
    return _nearest(candidates)


def panel_oracle(panel, o, d):
    with np.errstate(divide='ignore', invalid='ignore'):
        t = ((panel.center - o) @ panel.normal) / (d @ panel.normal)
    t = np.where(np.isfinite(t), t, np.inf)
    local = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d - panel.center
    inside = (np.abs(local @ panel.u_axis) <= panel.size[0] / 2) & \
        (np.abs(local @ panel.v_axis) <= panel.size[1] / 2)
    normal = _against(np.broadcast_to(panel.normal, o.shape).copy(), d)
    return _nearest([(np.where(inside, t, np.inf), normal)])


class IntersectRayOracleTests(SimpleTestCase):
    """10^4 random rays per primitive type against closed-form per-face solutions."""

    n_rays = 10_000

    def check(self, shape, oracle, seed):
        room = cubic_room()
        scene = Scene(room, [Primitive(shape, Diffuse(0.5))])
        rng = np.random.default_rng(seed)
        origins = rng.uniform(-1.9, 1.9, size=(3 * self.n_rays, 3))
        origins = origins[~shape.contains(origins)][:self.n_rays]
        directions = rng.normal(size=origins.shape)
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        t_max = rng.uniform(0.1, 6.0, size=len(origins))

        t_prim, n_prim = oracle(shape, origins, directions)
        t_room, n_room = room_oracle(room, origins, directions)
        on_prim = t_prim < t_room
        expected_t = np.where(on_prim, t_prim, t_room)
        expected_n = np.where(on_prim[:, None], n_prim, n_room)
        self.assertGreater(on_prim.sum(), 100)

        misses = 0
        for k in range(len(origins)):
            hit = intersect_ray(scene, Ray(origins[k], directions[k], t_max=t_max[k]))
            if expected_t[k] > t_max[k]:
                self.assertIsNone(hit)
                misses += 1
                continue
            self.assertIsNotNone(hit)
            self.assertAlmostEqual(hit.distance, expected_t[k], delta=1e-9)
            np.testing.assert_allclose(hit.normal, expected_n[k], atol=1e-9)
            self.assertEqual(hit.material.albedo, 0.5 if on_prim[k] else 0.8)
        self.assertGreater(misses, 500)

    def test_box(self):
        self.check(Box([0.3, -0.2, 0.5], [0.8, 0.6, 1.0]), box_oracle, 21)

    def test_sphere(self):
        self.check(Sphere([0.5, 0.2, 0.8], 0.6), sphere_oracle, 22)

    def test_cylinder(self):
        axis = np.array([0.3, 1.0, 0.2])
        self.check(Cylinder([-0.3, -0.8, 0.2], axis / np.linalg.norm(axis), 0.4, 1.2), cylinder_oracle, 23)

    def test_panel(self):
        normal = np.array([0.2, 0.1, -1.0])
        self.check(Panel([0.0, 0.0, 0.5], normal / np.linalg.norm(normal), [0, 1, 0], (1.2, 0.8)),
                   panel_oracle, 24)


class VisibilityTests(SimpleTestCase):

    def test_opposite_walls_of_empty_room_see_each_other(self):
        self.assertTrue(visible(Scene(cubic_room()), [-2, 0, 0], [2, 0, 0]))

    def test_cube_bisecting_the_segment_blocks_it(self):
        scene = Scene(cubic_room(), [Primitive(Box([0, 0, 0], [1, 1, 1]), Diffuse(0.5))])
        self.assertFalse(visible(scene, [-2, 0, 0], [2, 0, 0]))

    def test_identical_endpoints_are_rejected(self):
        with self.assertRaises(DegenerateSegmentError):
            visible(Scene(cubic_room()), [0, 0, 0], [0, 0, 0])

    def test_point_on_a_surface_is_not_self_occluded(self):
        scene = Scene(cubic_room(), [Primitive(Box([0, 0, 1.5], [1, 1, 1]), Diffuse(0.5))])
        self.assertTrue(visible(scene, [0, 0, 0], [0, 0, 1.0]))


class EllipsoidDepthTests(SimpleTestCase):

    def test_off_axis_focus(self):
        self.assertAlmostEqual(ellipsoid_depth(2 + np.sqrt(2), [1, 0, 1], [0, 0, 0], [0, 0, 1]), 2.0)

    def test_confocal_case(self):
        rng = np.random.default_rng(0)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        self.assertAlmostEqual(ellipsoid_depth(4.0, [0, 0, 0], [0, 0, 0], direction), 2.0)

    def test_focus_on_the_pixel_ray(self):
        self.assertAlmostEqual(ellipsoid_depth(3.0, [0, 0, 1], [0, 0, 0], [0, 0, 1]), 2.0)

    def test_ray_through_the_virtual_source_is_degenerate(self):
        with self.assertRaises(DegenerateGeometryError):
            ellipsoid_depth(1.0, [0, 0, 1], [0, 0, 0], [0, 0, 1])

    def test_path_shorter_than_focal_distance_has_no_solution(self):
        with self.assertRaises(NoSolutionError):
            ellipsoid_depth(1.0, [0, 0, 2], [0, 0, 0], [1, 0, 0])

    def test_matches_brute_force_search(self):
        rng = np.random.default_rng(11)
        grid = np.arange(0.0, 6.0, 1e-4)
        for _ in range(200):
            focus = rng.uniform(-1.5, 1.5, size=3)
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            t_true = rng.uniform(0.2, 4.0)
            point = t_true * direction
            path = np.linalg.norm(point - focus) + t_true
            solved = ellipsoid_depth(path, focus, [0, 0, 0], direction)
            residual = np.abs(np.linalg.norm(grid[:, None] * direction - focus, axis=1) + grid - path)
            self.assertLess(abs(solved - grid[np.argmin(residual)]), 5e-4)
            self.assertAlmostEqual(solved, t_true, places=6)

    def test_path_sensitivity_range(self):
        dirs = np.array([[0, 0, 1.0], [0, 0, 1.0]])
        points = np.array([[0, 0, 2.0], [0, 0, 2.0]])
        np.testing.assert_allclose(path_sensitivity(points, [0, 0, 0], dirs), [2.0, 2.0])
        np.testing.assert_allclose(path_sensitivity(points[:1], [0, 0, 3], dirs[:1]), [0.0])


class SceneValidationTests(SimpleTestCase):

    def test_primitive_cap(self):
        boxes = [Primitive(Box([0, 0, 0], [0.1, 0.1, 0.1]), Diffuse(0.5)) for _ in range(3)]
        with self.assertRaises(ValidationError):
            Scene(cubic_room(), boxes, max_primitives=2)

    def test_object_must_be_inside_the_room(self):
        with self.assertRaises(ValidationError):
            Scene(cubic_room(), [Primitive(Box([1.9, 0, 0], [0.5, 0.5, 0.5]), Diffuse(0.5))])

    def test_mirror_must_be_flush_with_a_wall(self):
        panel = Panel([1.5, 0, 0], [-1, 0, 0], [0, 1, 0], (1, 1))
        with self.assertRaises(ValidationError):
            Scene(cubic_room(), [Primitive(panel, Mirror())])

    def test_wall_mirror_is_accepted(self):
        scene = mirror_scene()
        self.assertEqual(len(scene.mirrors), 1)
        self.assertEqual(scene.wall_of(scene.objects[0].shape), 1)

    def test_albedo_range(self):
        with self.assertRaises(ValidationError):
            Diffuse(1.5)


class ReflectionTests(SimpleTestCase):

    def test_reflect_and_mirror_point(self):
        np.testing.assert_allclose(reflect(np.array([1.0, 0, 1.0]), np.array([-1.0, 0, 0])), [-1, 0, 1])
        np.testing.assert_allclose(mirror_point(np.array([1.0, 2, 3]), np.array([2.0, 0, 0]),
                                                np.array([-1.0, 0, 0])), [3, 2, 3])
