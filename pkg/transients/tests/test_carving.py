import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from scipy.ndimage import binary_erosion

from transients.carving import (
    CellState,
    GridConfig,
    OccupancyGrid,
    carve_occupancy,
    march_segments,
    novel_cameras,
    render_novel_depth,
    voxelize_scene,
)
from transients.datatypes import DepthMap, ShadowMaskSet
from transients.exceptions import CarvingError, PoseOutOfBoundsError
from transients.metrics import voxel_iou
from transients.renderer import render_gbuffer, render_shadow_masks, trace_spots
from transients.rig import Camera, look_rotation

from . import fixtures


def ground_truth_inputs(scene, rig):
    spots = trace_spots(scene, rig)
    gbuffer = render_gbuffer(scene, rig)
    masks = render_shadow_masks(scene, rig, spots, gbuffer)
    return gbuffer.depth_map(), masks, spots


def walk(grid, start, end):
    cells, intervals = [], []

    def visit(rows, flat, t_in, t_out):
        cells.extend(flat.tolist())
        intervals.extend(zip(t_in.tolist(), t_out.tolist()))

    march_segments(grid, np.array([start], float), np.array([end], float), visit)
    return cells, intervals


class MarchSegmentsTests(SimpleTestCase):

    def setUp(self):
        self.grid = OccupancyGrid.unknown([0, 0, 0], [1, 1, 1], (4, 4, 4))

    def test_axis_aligned_walk(self):
        cells, intervals = walk(self.grid, [0.01, 0.6, 0.6], [0.99, 0.6, 0.6])
        self.assertEqual(cells, [i * 16 + 2 * 4 + 2 for i in range(4)])
        self.assertAlmostEqual(sum(b - a for a, b in intervals), 1.0)

    def test_random_walks_step_one_face_at_a_time(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            start, end = rng.uniform(0.02, 0.98, size=(2, 3))
            cells, intervals = walk(self.grid, start, end)
            ijk = np.array(np.unravel_index(cells, self.grid.resolution)).T
            self.assertEqual(cells[0], self.grid.cells_of([start])[0])
            self.assertEqual(cells[-1], self.grid.cells_of([end])[0])
            self.assertTrue(np.all(np.abs(np.diff(ijk, axis=0)).sum(axis=1) == 1))
            for (_, out), (nxt, _) in zip(intervals, intervals[1:]):
                self.assertAlmostEqual(out, nxt)

    def test_segment_outside_the_grid_visits_nothing(self):
        cells, _ = walk(self.grid, [2, 2, 2], [3, 3, 3])
        self.assertEqual(cells, [])


class CarveOccupancyTests(SimpleTestCase):

    def test_empty_room_occupies_only_the_observed_shell(self):
        scene = fixtures.empty_room()
        rig = fixtures.rig(n=8, spots=2)
        depth, masks, spots = ground_truth_inputs(scene, rig)
        grid = carve_occupancy(depth, masks, rig, spots, GridConfig(16), (scene.room.lo, scene.room.hi))
        points = depth.points(rig.camera).reshape(-1, 3)[depth.valid.ravel()]
        shell = set(grid.cells_of(points).tolist()) | set(grid.cells_of(spots.source_points).tolist())
        occupied = set(np.flatnonzero(grid.states.ravel() == CellState.OCCUPIED).tolist())
        self.assertEqual(occupied, shell)
        self.assertTrue(np.any(grid.states == CellState.EMPTY))

    def test_occluder_interior_is_never_carved(self):
        scene = fixtures.occluder_scene()
        rig = fixtures.rig(n=12, spots=3)
        depth, masks, spots = ground_truth_inputs(scene, rig)
        grid = carve_occupancy(depth, masks, rig, spots, GridConfig(16), (scene.room.lo, scene.room.hi))
        # cells fully inside the box, away from its lit front face
        interior = grid.states[6:10, 6:10, 9:11]
        self.assertFalse(np.any(interior == CellState.EMPTY))
        box = scene.objects[0].shape
        voxel = grid.voxel_size
        ijk = np.argwhere(grid.states == CellState.OCCUPIED)
        centers = grid.lo + (ijk + 0.5) * voxel
        near_box = np.all((centers > box.lo - voxel) & (centers < box.hi + voxel), axis=1)
        self.assertTrue(near_box.any())

    def test_hidden_box_behind_a_plate(self):
        scene = fixtures.hidden_box_scene()
        rig = fixtures.hidden_box_rig(n=64, spots=5)
        depth, masks, spots = ground_truth_inputs(scene, rig)
        bounds = (scene.room.lo, scene.room.hi)
        grid = carve_occupancy(depth, masks, rig, spots, GridConfig(64), bounds)
        truth = voxelize_scene(scene, GridConfig(64))
        self.assertGreaterEqual(voxel_iou(grid, truth), 0.5)
        # cells whose whole neighbourhood is solid are never carved
        solid = binary_erosion(truth.states == CellState.OCCUPIED, structure=np.ones((3, 3, 3), bool))
        self.assertTrue(solid.any())
        self.assertFalse(np.any(grid.states[solid] == CellState.EMPTY))

    def test_mask_count_must_match_the_spots(self):
        scene = fixtures.empty_room()
        rig = fixtures.rig(n=8, spots=2)
        depth, masks, spots = ground_truth_inputs(scene, rig)
        with self.assertRaises(CarvingError):
            carve_occupancy(depth, ShadowMaskSet(masks.masks[:1]), rig, spots, GridConfig(8),
                            (scene.room.lo, scene.room.hi))

    def test_mask_shape_must_match_the_depth(self):
        scene = fixtures.empty_room()
        rig = fixtures.rig(n=8, spots=2)
        depth, masks, spots = ground_truth_inputs(scene, rig)
        small = ShadowMaskSet(np.ones((spots.n_spots, 4, 4), dtype=bool))
        with self.assertRaises(CarvingError):
            carve_occupancy(depth, small, rig, spots, GridConfig(8), (scene.room.lo, scene.room.hi))

    def test_depth_without_valid_pixels(self):
        scene = fixtures.empty_room()
        rig = fixtures.rig(n=8, spots=2)
        _, masks, spots = ground_truth_inputs(scene, rig)
        with self.assertRaises(CarvingError):
            carve_occupancy(DepthMap(np.full((8, 8), np.nan)), masks, rig, spots, GridConfig(8),
                            (scene.room.lo, scene.room.hi))

    def test_grid_config(self):
        self.assertEqual(GridConfig(16).resolution, (16, 16, 16))
        with self.assertRaises(ValidationError):
            GridConfig(0)
        with self.assertRaises(ValidationError):
            GridConfig(8, unknown_policy='maybe')


class NovelDepthTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.scene = fixtures.empty_room()
        cls.rig = fixtures.rig(n=8, spots=2)
        depth, masks, spots = ground_truth_inputs(cls.scene, cls.rig)
        cls.truth = depth
        cls.grid = carve_occupancy(depth, masks, cls.rig, spots, GridConfig(16),
                                   (cls.scene.room.lo, cls.scene.room.hi))

    def test_reference_pose_stops_at_or_before_the_surface(self):
        novel = render_novel_depth(self.grid, self.rig.camera, 'empty')
        self.assertTrue(novel.valid.all())
        self.assertTrue(np.all(novel.depth <= self.truth.depth + 1e-9))
        diagonal = float(np.linalg.norm(self.grid.voxel_size))
        self.assertLessEqual(np.mean(self.truth.depth - novel.depth), 2 * diagonal)

    def test_unknown_cells_block_under_the_occupied_policy(self):
        optimistic = render_novel_depth(self.grid, self.rig.camera, 'empty')
        cautious = render_novel_depth(self.grid, self.rig.camera, 'occupied')
        self.assertTrue(cautious.valid.all())
        self.assertTrue(np.all(cautious.depth <= optimistic.depth + 1e-9))

    def test_camera_outside_the_grid(self):
        camera = Camera([5.0, 5.0, 5.0], look_rotation([0.0, 0.0, 1.0]), 60.0, 4, 4)
        with self.assertRaises(PoseOutOfBoundsError):
            render_novel_depth(self.grid, camera)

    def test_novel_cameras_sit_inside_the_room(self):
        cameras = novel_cameras(self.scene.room.lo, self.scene.room.hi, self.rig.camera, count=4, n_x=6)
        self.assertEqual(len(cameras), 4)
        for camera in cameras:
            self.assertTrue(self.grid.contains(camera.position))
            self.assertEqual(camera.shape, (6, 6))
            self.assertEqual(render_novel_depth(self.grid, camera, 'empty').shape, (6, 6))


class VoxelizeSceneTests(SimpleTestCase):

    def test_empty_room_has_no_solids(self):
        grid = voxelize_scene(fixtures.empty_room(), GridConfig(8))
        self.assertTrue(np.all(grid.states == CellState.EMPTY))

    def test_box_covers_the_cells_it_overlaps(self):
        grid = voxelize_scene(fixtures.occluder_scene(), GridConfig(16))
        occupied = grid.states == CellState.OCCUPIED
        # x, y cells 5..10 and z cells 8..11 reach a sub-sample inside the box
        self.assertEqual(int(occupied.sum()), 6 * 6 * 4)
        self.assertTrue(occupied[5:11, 5:11, 8:12].all())

    def test_mirrors_are_not_solid(self):
        grid = voxelize_scene(fixtures.mirror_scene(), GridConfig(8))
        self.assertFalse(np.any(grid.states == CellState.OCCUPIED))
