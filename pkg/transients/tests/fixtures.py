# transients/tests/fixtures.py
"""Small scenes and rigs shared by the test modules."""
import numpy as np

from transients.datatypes import CubeConfig
from transients.geometry import Box, Diffuse, Mirror, Panel, Primitive, Room, Scene
from transients.procedural import SceneRanges, generate_scene
from transients.renderer import RenderConfig, SpotSet
from transients.rig import Camera, LidarRig, look_rotation
from transients.scene_io import SceneSpec

ROOM_LO = (0.0, 0.0, 0.0)
ROOM_HI = (2.0, 2.0, 3.0)
CAMERA_POSITION = (1.0, 1.0, 0.3)
LASER_ORIGIN = (1.05, 1.0, 0.3)


def room():
    return Room(ROOM_LO, ROOM_HI, (0.8,) * 6)


def empty_room():
    return Scene(room())


def occluder_scene():
    """A 0.6 m cube in the middle of the view."""
    return Scene(room(), [Primitive(Box([1.0, 1.0, 1.8], [0.6, 0.6, 0.6]), Diffuse(0.6))])


def mirror_panel():
    return Panel([2.0, 1.0, 1.8], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], (1.0, 1.0))


def mirror_scene():
    """Empty room with a 1 m mirror flush on the +x wall."""
    return Scene(room(), [Primitive(mirror_panel(), Mirror())])


def camera(n=8, fov_deg=60.0):
    return Camera(CAMERA_POSITION, look_rotation([0.0, 0.0, 1.0]), fov_deg, n, n)


def rig(n=8, spots=2, fov_deg=60.0, spot_fov_deg=30.0):
    return LidarRig.grid(camera(n, fov_deg), LASER_ORIGIN, spots, spots, spot_fov_deg)


def cube_config(**changes):
    values = dict(delta=128e-12, n_t=637, gate_path_min=1.0, gate_policy='error')
    values.update(changes)
    return CubeConfig(**values)


def render_config(threads=1, **changes):
    return RenderConfig(cube_config(**changes), source_power=1e8, grazing_cos=1e-2, threads=threads)


def make_spots(points, normals, legs, unfolded=None):
    """Diffuse spots given directly, without tracing."""
    points = np.asarray(points, float)
    n = len(points)
    return SpotSet(
        points=points,
        normals=np.asarray(normals, float),
        albedo=np.full(n, 0.8),
        is_mirror=np.zeros(n, dtype=bool),
        virtual_points=np.full((n, 3), np.nan),
        virtual_normals=np.full((n, 3), np.nan),
        virtual_albedo=np.full(n, np.nan),
        laser_legs=np.asarray(legs, float),
        unfolded_origins=np.zeros((n, 3)) if unfolded is None else np.asarray(unfolded, float),
    )


def scene_data(objects=(), n=8, spots=2):
    return {
        'version': 1,
        'seed': None,
        'room': {'min': list(ROOM_LO), 'max': list(ROOM_HI), 'albedo': [0.8] * 6},
        'objects': list(objects),
        'rig': {
            'position': list(CAMERA_POSITION),
            'rotation': look_rotation([0.0, 0.0, 1.0]).tolist(),
            'fov_deg': 60.0,
            'n_x': n,
            'n_y': n,
            'laser_origin': list(LASER_ORIGIN),
            'spot_grid': [spots, spots],
            'spot_fov_deg': 30.0,
        },
    }


def empty_room_spec(**kwargs):
    return SceneSpec(scene_data(**kwargs))


def occluder_spec(**kwargs):
    box = {'type': 'box', 'center': [1.0, 1.0, 1.8], 'size': [0.6, 0.6, 0.6],
           'material': {'type': 'diffuse', 'albedo': 0.6}}
    return SceneSpec(scene_data(objects=[box], **kwargs))


HIDDEN_CAMERA = (1.0, 0.45, 0.3)
HIDDEN_LASER = (1.05, 0.45, 0.3)


def hidden_box_scene():
    """A thin plate near the floor hiding a small cube from the camera."""
    plate = Box([1.0, 0.38, 1.145], [0.75, 0.74, 0.03])
    hidden = Box([1.0, 0.11, 2.0], [0.2, 0.2, 0.2])
    return Scene(room(), [Primitive(plate, Diffuse(0.6)), Primitive(hidden, Diffuse(0.6))])


def hidden_box_rig(n=64, spots=5):
    view = Camera(HIDDEN_CAMERA, look_rotation([0.0, 0.0, 1.0]), 60.0, n, n)
    return LidarRig.grid(view, HIDDEN_LASER, spots, spots, 90.0)


def diffuse_procedural_spec(seed, resolution=64, spot_grid=5):
    """Procedural room with its cube and cylinder but no mirror."""
    ranges = SceneRanges(include_mirror=False, resolution=resolution, spot_grid=spot_grid)
    return generate_scene(seed, ranges)
