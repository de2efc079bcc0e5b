# transients/formats.py
"""On-disk formats.

Cubes, depth maps, ToF maps and occupancy grids share one little-endian
binary layout: a 40-byte header (8-byte magic, u32 version, u32 n_x, n_y,
n_t, f64 delta_ps, f64 gate_path_min_m) and a row-major payload. Masks are
8-bit PGM, light-in-flight frames 8-bit PNG, everything else JSON.
"""
import hashlib
import json
import logging
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .carving import CellState, OccupancyGrid
from .datatypes import DepthMap, TofMapSet, TransientCube
from .exceptions import (
    BadMagicError,
    ManifestMismatchError,
    TransientFormatError,
    TruncatedFileError,
    VersionMismatchError,
)
from .renderer import SpotSet

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADER = struct.Struct('<8sI3I2d')

TRANSIENT_MAGIC = b'SB3DTRNS'
DEPTH_MAGIC = b'SB3DDPTH'
TOF_MAGIC = b'SB3DTOFM'
GRID_MAGIC = b'SB3DGRID'

MANIFEST_NAME = 'manifest.json'


# ====================
# SHARED BINARY LAYOUT
# ====================
def _write_binary(path, magic, payload, dims, delta_ps=0.0, gate=0.0):
    n_x, n_y, n_t = dims
    header = HEADER.pack(magic, FORMAT_VERSION, n_x, n_y, n_t, float(delta_ps), float(gate))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(header)
        f.write(payload)


def _read_binary(path, magic, itemsize):
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < HEADER.size:
        raise TruncatedFileError(f'{path}: {len(raw)} bytes is shorter than the {HEADER.size}-byte header')
    found, version, n_x, n_y, n_t, delta_ps, gate = HEADER.unpack_from(raw)
    if found != magic:
        raise BadMagicError(f'{path}: expected magic {magic!r}, found {found!r}')
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f'{path}: format version {version}, expected {FORMAT_VERSION}')
    expected = itemsize * n_x * n_y * n_t
    payload = raw[HEADER.size:]
    if len(payload) < expected:
        raise TruncatedFileError(f'{path}: payload is {len(payload)} bytes, expected {expected}')
    if len(payload) > expected:
        raise TransientFormatError(f'{path}: {len(payload) - expected} trailing bytes after the payload')
    return payload, (n_x, n_y, n_t), delta_ps, gate


def _f32(array):
    return np.ascontiguousarray(array, dtype='<f4').tobytes()


# ====================
# CUBES, DEPTH, TOF
# ====================
def write_transient(path, cube):
    delta_ps = round(cube.delta * 1e12, 6)
    _write_binary(path, TRANSIENT_MAGIC, _f32(cube.data), (cube.n_x, cube.n_y, cube.n_t),
                  delta_ps, cube.gate_path_min)


def read_transient(path):
    payload, (n_x, n_y, n_t), delta_ps, gate = _read_binary(path, TRANSIENT_MAGIC, 4)
    data = np.frombuffer(payload, dtype='<f4').reshape(n_y, n_x, n_t).astype(np.float64)
    return TransientCube(data, delta_ps / 1e12, gate)


def write_depth(path, depth):
    n_y, n_x = depth.shape
    _write_binary(path, DEPTH_MAGIC, _f32(depth.depth), (n_x, n_y, 1))


def read_depth(path):
    payload, (n_x, n_y, _), _, _ = _read_binary(path, DEPTH_MAGIC, 4)
    depth = np.frombuffer(payload, dtype='<f4').reshape(n_y, n_x).astype(np.float64)
    return DepthMap(depth)


def write_tof(path, tof):
    # stored (y, x, spot) like a cube whose bins are spots
    n_spots, n_y, n_x = tof.tof.shape
    _write_binary(path, TOF_MAGIC, _f32(np.moveaxis(tof.tof, 0, -1)), (n_x, n_y, n_spots))


def read_tof(path):
    payload, (n_x, n_y, n_spots), _, _ = _read_binary(path, TOF_MAGIC, 4)
    data = np.frombuffer(payload, dtype='<f4').reshape(n_y, n_x, n_spots).astype(np.float64)
    return TofMapSet(np.moveaxis(data, -1, 0))


# ====================
# OCCUPANCY GRIDS
# ====================
def _grid_sidecar(path):
    path = Path(path)
    return path.with_name(path.name + '.json')


def write_grid(path, grid):
    gx, gy, gz = grid.resolution
    _write_binary(path, GRID_MAGIC, np.ascontiguousarray(grid.states, dtype=np.uint8).tobytes(), (gx, gy, gz))
    sidecar = {
        'lo': grid.lo.tolist(),
        'hi': grid.hi.tolist(),
        'resolution': [gx, gy, gz],
        'order': 'x, y, z row-major',
        'states': {str(int(s)): s.name.lower() for s in CellState},
    }
    _grid_sidecar(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def read_grid(path):
    payload, (gx, gy, gz), _, _ = _read_binary(path, GRID_MAGIC, 1)
    try:
        sidecar = json.loads(_grid_sidecar(path).read_text())
    except FileNotFoundError:
        raise TransientFormatError(f'{path}: bounds sidecar {_grid_sidecar(path).name} is missing')
    states = np.frombuffer(payload, dtype=np.uint8).reshape(gx, gy, gz)
    return OccupancyGrid(states.copy(), sidecar['lo'], sidecar['hi'])


# ====================
# IMAGES
# ====================
def write_mask(path, mask):
    """Binary mask as an 8-bit PGM (0 / 255)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = Image.fromarray(np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8), mode='L')
    image.save(path, format='PPM')


def read_mask(path):
    with Image.open(path) as image:
        return np.array(image.convert('L')) > 127


def write_lif_frames(directory, cubes, prefix='frame'):
    """Time slices of the summed light-in-flight cubes as 8-bit PNGs.

    Every frame is scaled by its own maximum; the scale is written to
    ``frames.json`` so values can be recovered.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    total = np.sum([cube.data for cube in cubes], axis=0)
    reference = cubes[0]
    busy = np.flatnonzero(total.reshape(-1, reference.n_t).max(axis=0) > 0)
    frames = []
    if busy.size:
        for k in range(int(busy[0]), int(busy[-1]) + 1):
            frame = total[:, :, k]
            peak = float(frame.max())
            scaled = np.zeros(frame.shape, np.uint8) if peak <= 0 else \
                np.round(frame / peak * 255.0).astype(np.uint8)
            name = f'{prefix}_{k:04d}.png'
            Image.fromarray(scaled, mode='L').save(directory / name, format='PNG')
            frames.append({
                'file': name,
                'bin': k,
                'path_m': reference.gate_path_min + (k + 0.5) * reference.bin_path,
                'time_s': (reference.gate_path_min / reference.bin_path + k + 0.5) * reference.delta,
                'max': peak,
            })
    metadata = {
        'normalization': 'per-frame max mapped to 255',
        'n_spots': len(cubes),
        'delta_ps': round(reference.delta * 1e12, 6),
        'gate_path_min_m': reference.gate_path_min,
        'frames': frames,
    }
    (directory / 'frames.json').write_text(json.dumps(metadata, indent=2, sort_keys=True))
    logger.info('wrote %d light-in-flight frame(s) to %s', len(frames), directory)
    return [directory / f['file'] for f in frames]


# ====================
# SPOTS
# ====================
def _vec(value):
    return None if value is None or not np.all(np.isfinite(value)) else [float(x) for x in value]


def write_spots(path, spots):
    records = []
    for j in range(spots.n_spots):
        records.append({
            'index': j,
            'point': _vec(spots.points[j]),
            'normal': _vec(spots.normals[j]),
            'albedo': float(spots.albedo[j]),
            'is_mirror': bool(spots.is_mirror[j]),
            'virtual_point': _vec(spots.virtual_points[j]),
            'virtual_normal': _vec(spots.virtual_normals[j]),
            'virtual_albedo': float(spots.virtual_albedo[j]) if spots.is_mirror[j] else None,
            'laser_leg': float(spots.laser_legs[j]),
            'unfolded_origin': _vec(spots.unfolded_origins[j]),
        })
    Path(path).write_text(json.dumps({'spots': records}, indent=2, sort_keys=True))


def read_spots(path):
    records = json.loads(Path(path).read_text())['spots']

    def column(key, width=3):
        fill = [np.nan] * width if width else np.nan
        return np.array([fill if r[key] is None else r[key] for r in records], dtype=float)

    return SpotSet(
        points=column('point'), normals=column('normal'), albedo=column('albedo', 0),
        is_mirror=np.array([r['is_mirror'] for r in records], dtype=bool),
        virtual_points=column('virtual_point'), virtual_normals=column('virtual_normal'),
        virtual_albedo=column('virtual_albedo', 0), laser_legs=column('laser_leg', 0),
        unfolded_origins=column('unfolded_origin'),
    )


# ====================
# MANIFEST
# ====================
def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(directory, paths=None):
    """Hash every artifact under ``directory`` (or just ``paths``) into manifest.json."""
    directory = Path(directory)
    if paths is None:
        paths = [p for p in directory.rglob('*') if p.is_file() and p.name != MANIFEST_NAME]
    entries = []
    for path in sorted(Path(p) for p in paths):
        entries.append({
            'path': path.relative_to(directory).as_posix(),
            'bytes': path.stat().st_size,
            'sha256': sha256_file(path),
        })
    entries.sort(key=lambda e: e['path'])
    manifest = directory / MANIFEST_NAME
    manifest.write_text(json.dumps({'version': FORMAT_VERSION, 'artifacts': entries}, indent=2, sort_keys=True))
    return manifest


def verify_manifest(directory):
    """Re-hash every listed artifact; returns how many were checked."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    problems = []
    for entry in manifest['artifacts']:
        path = directory / entry['path']
        if not path.is_file():
            problems.append(f'{entry["path"]}: missing')
        elif sha256_file(path) != entry['sha256']:
            problems.append(f'{entry["path"]}: hash mismatch')
    if problems:
        raise ManifestMismatchError('; '.join(problems))
    return len(manifest['artifacts'])
