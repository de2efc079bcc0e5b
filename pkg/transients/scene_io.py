# transients/scene_io.py
"""SceneSpec: the JSON description of a room, its contents and the rig.

Specs are plain JSON trees (see ``schemas/scene.schema.json``); this module
checks them, turns them into ``Scene`` / ``LidarRig`` objects and writes them
back out canonically (sorted keys) so equal specs are byte-identical.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from .geometry import WALL_NAMES, Box, Cylinder, Diffuse, Mirror, Panel, Primitive, Room, Scene, Sphere
from .rig import Camera, LidarRig

logger = logging.getLogger(__name__)

SPEC_VERSION = 1
SCHEMA_PATH = Path(__file__).resolve().parent / 'schemas' / 'scene.schema.json'

OBJECT_FIELDS = {
    'box': ('center', 'size'),
    'sphere': ('center', 'radius'),
    'cylinder': ('base', 'axis', 'radius', 'height'),
    'panel': ('center', 'normal', 'up', 'size'),
    'mirror': ('wall', 'center', 'size'),
}
RIG_FIELDS = ('position', 'rotation', 'fov_deg', 'n_x', 'n_y', 'laser_origin', 'spot_grid', 'spot_fov_deg')


def _require(block, keys, where):
    if not isinstance(block, dict):
        raise ValidationError(f'{where} must be an object')
    missing = [k for k in keys if k not in block]
    if missing:
        raise ValidationError(f'{where} is missing {", ".join(missing)}')


def _vector(value, where, length=3):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (length,) or not np.all(np.isfinite(arr)):
        raise ValidationError(f'{where} must be {length} finite numbers')
    return arr


def wall_up(wall):
    return np.array([0.0, 0.0, 1.0]) if wall in ('-y', '+y') else np.array([0.0, 1.0, 0.0])


def _material(block, where):
    if block is None:
        return Diffuse(0.7)
    _require(block, ('type',), where)
    if block['type'] == 'mirror':
        return Mirror()
    if block['type'] == 'diffuse':
        _require(block, ('albedo',), where)
        return Diffuse(float(block['albedo']))
    raise ValidationError(f'{where}: unknown material type {block["type"]!r}')


def _primitive(block, room, index):
    where = f'objects[{index}]'
    _require(block, ('type',), where)
    kind = block['type']
    if kind not in OBJECT_FIELDS:
        raise ValidationError(f'{where}: unknown object type {kind!r}')
    _require(block, OBJECT_FIELDS[kind], where)
    material = _material(block.get('material'), f'{where}.material')
    if kind == 'box':
        shape = Box(_vector(block['center'], f'{where}.center'), _vector(block['size'], f'{where}.size'))
    elif kind == 'sphere':
        shape = Sphere(_vector(block['center'], f'{where}.center'), float(block['radius']))
    elif kind == 'cylinder':
        shape = Cylinder(_vector(block['base'], f'{where}.base'), _vector(block['axis'], f'{where}.axis'),
                         float(block['radius']), float(block['height']))
    elif kind == 'panel':
        shape = Panel(_vector(block['center'], f'{where}.center'), _vector(block['normal'], f'{where}.normal'),
                      _vector(block['up'], f'{where}.up'), tuple(block['size']))
    else:
        wall = block['wall']
        if wall not in WALL_NAMES:
            raise ValidationError(f'{where}: unknown wall {wall!r}')
        _, _, normal = room.wall_plane(WALL_NAMES.index(wall))
        shape = Panel(_vector(block['center'], f'{where}.center'), normal, wall_up(wall), tuple(block['size']))
        material = Mirror()
    return Primitive(shape, material)


@dataclass(frozen=True, eq=False)
class SceneSpec:
    data: dict

    def __post_init__(self):
        validate_scene_spec(self.data)

    @property
    def seed(self):
        return self.data.get('seed')

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True) + '\n'

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f'scene file is not valid JSON: {exc}')
        return cls(data)

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())

    def room(self):
        block = self.data['room']
        return Room(_vector(block['min'], 'room.min'), _vector(block['max'], 'room.max'),
                    tuple(block.get('albedo', (0.8,) * 6)))

    def scene(self, max_primitives=8):
        room = self.room()
        objects = [_primitive(block, room, i) for i, block in enumerate(self.data.get('objects', []))]
        return Scene(room, objects, max_primitives)

    def rig(self, resolution=None, spots=None, fov_deg=None, spot_fov_deg=None):
        """LidarRig from the rig block; keyword overrides replace the stored values."""
        block = self.data['rig']
        n_x = int(resolution or block['n_x'])
        n_y = int(resolution or block['n_y'])
        camera = Camera(_vector(block['position'], 'rig.position'),
                        np.asarray(block['rotation'], dtype=float),
                        float(fov_deg or block['fov_deg']), n_x, n_y)
        grid = (spots, spots) if spots else tuple(block['spot_grid'])
        return LidarRig.grid(camera, _vector(block['laser_origin'], 'rig.laser_origin'),
                             int(grid[0]), int(grid[1]), float(spot_fov_deg or block['spot_fov_deg']))


def validate_scene_spec(data):
    _require(data, ('room', 'objects', 'rig'), 'scene')
    if data.get('version', SPEC_VERSION) != SPEC_VERSION:
        raise ValidationError(f'scene version {data.get("version")} is not supported')
    _require(data['room'], ('min', 'max'), 'room')
    albedo = data['room'].get('albedo', [0.8] * 6)
    if len(albedo) != 6:
        raise ValidationError('room.albedo needs one value per wall (6)')
    if not isinstance(data['objects'], list):
        raise ValidationError('objects must be a list')
    _require(data['rig'], RIG_FIELDS, 'rig')
    rotation = np.asarray(data['rig']['rotation'], dtype=float)
    if rotation.shape != (3, 3):
        raise ValidationError('rig.rotation must be a 3x3 matrix')
    if len(data['rig']['spot_grid']) != 2:
        raise ValidationError('rig.spot_grid must be [n_spots_x, n_spots_y]')


def load_scene(path, max_primitives=8, **rig_overrides):
    """(SceneSpec, Scene, LidarRig) from a scene file."""
    spec = SceneSpec.load(path)
    scene = spec.scene(max_primitives)
    rig = spec.rig(**rig_overrides)
    check_placement(scene, rig)
    logger.debug('loaded scene %s with %d object(s)', path, len(scene.objects))
    return spec, scene, rig


def check_placement(scene, rig):
    """Camera and laser must sit inside the room and outside every object."""
    if not scene.room.contains(rig.camera.position, margin=1e-6):
        raise ValidationError('camera must be inside the room')
    if not scene.room.contains(rig.laser_origin, margin=1e-6):
        raise ValidationError('laser origin must be inside the room')
    for prim in scene.objects:
        if prim.shape.contains(rig.camera.position)[0] or prim.shape.contains(rig.laser_origin)[0]:
            raise ValidationError('camera or laser origin lies inside an object')
