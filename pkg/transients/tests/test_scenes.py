import json
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from transients.exceptions import PlacementError
from transients.geometry import Box, Cylinder, Panel
from transients.procedural import SceneRanges, generate_scene
from transients.scene_io import SceneSpec, load_scene

from . import fixtures


class GenerateSceneTests(SimpleTestCase):

    def test_same_seed_same_scene(self):
        self.assertEqual(generate_scene(7).to_json(), generate_scene(7).to_json())
        self.assertNotEqual(generate_scene(7).to_json(), generate_scene(8).to_json())

    def test_default_contents(self):
        kinds = [block['type'] for block in generate_scene(3).data['objects']]
        self.assertEqual(kinds, ['box', 'cylinder', 'mirror'])

    def test_fifty_seeds_stay_in_range(self):
        ranges = SceneRanges()
        for seed in range(50):
            spec = generate_scene(seed, ranges)
            dims = np.array(spec.data['room']['max'])
            self.assertTrue(ranges.room_x[0] <= dims[0] <= ranges.room_x[1])
            self.assertTrue(ranges.room_y[0] <= dims[1] <= ranges.room_y[1])
            self.assertTrue(ranges.room_z[0] <= dims[2] <= ranges.room_z[1])
            scene = spec.scene()
            shapes = [prim.shape for prim in scene.objects]
            self.assertIsInstance(shapes[0], Box)
            self.assertIsInstance(shapes[1], Cylinder)
            self.assertIsInstance(shapes[2], Panel)
            self.assertTrue(ranges.cube_size[0] <= shapes[0].size[0] <= ranges.cube_size[1])
            rig = spec.rig()
            for shape in shapes[:2]:
                self.assertFalse(shape.contains(rig.camera.position)[0])
            self.assertEqual(spec.seed, seed)

    def test_tabletop_rooms(self):
        ranges = SceneRanges.tabletop()
        for seed in range(20):
            spec = generate_scene(seed, ranges)
            self.assertLessEqual(max(spec.data['room']['max']), 1.2)
            self.assertEqual(spec.data['rig']['spot_grid'], [4, 4])

    def test_room_too_small_for_the_objects(self):
        ranges = SceneRanges(room_x=(0.5, 0.5), room_z=(0.5, 0.5))
        with self.assertRaises(PlacementError):
            generate_scene(0, ranges)

    def test_ranges_are_validated(self):
        with self.assertRaises(ValidationError):
            SceneRanges(room_x=(4.0, 2.0))
        with self.assertRaises(ValidationError):
            SceneRanges(max_attempts=0)


class SceneFileTests(SimpleTestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_save_and_load(self):
        path = self.root / 'scene.json'
        fixtures.occluder_spec().save(path)
        spec, scene, rig = load_scene(path)
        self.assertEqual(len(scene.objects), 1)
        self.assertEqual(rig.camera.shape, (8, 8))
        self.assertEqual(rig.n_spots, 4)
        np.testing.assert_allclose(rig.laser_origin, fixtures.LASER_ORIGIN)

    def test_rig_overrides(self):
        path = self.root / 'scene.json'
        fixtures.empty_room_spec().save(path)
        _, _, rig = load_scene(path, resolution=16, spots=3)
        self.assertEqual(rig.camera.shape, (16, 16))
        self.assertEqual(rig.n_spots, 9)

    def test_invalid_json(self):
        with self.assertRaises(ValidationError):
            SceneSpec.from_json('{not json')

    def test_missing_blocks_and_bad_version(self):
        data = fixtures.scene_data()
        del data['rig']
        with self.assertRaises(ValidationError):
            SceneSpec(data)
        data = fixtures.scene_data()
        data['version'] = 99
        with self.assertRaises(ValidationError):
            SceneSpec(data)

    def test_unknown_object_type(self):
        spec = SceneSpec(fixtures.scene_data(objects=[{'type': 'torus'}]))
        with self.assertRaises(ValidationError):
            spec.scene()

    def test_camera_outside_the_room(self):
        data = fixtures.scene_data()
        data['rig']['position'] = [5.0, 1.0, 0.3]
        path = self.root / 'scene.json'
        path.write_text(json.dumps(data))
        with self.assertRaises(ValidationError):
            load_scene(path)

    def test_schema_file_ships_with_the_app(self):
        schema = Path(__file__).resolve().parents[1] / 'schemas' / 'scene.schema.json'
        self.assertIn('room', json.loads(schema.read_text())['properties'])
