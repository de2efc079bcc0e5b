# transients/pipeline.py
"""The render -> demux -> reconstruct -> eval stages as the CLI runs them,
with capture presets and the file layout of every stage's outputs."""
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from . import formats
from .carving import GridConfig, carve_occupancy, novel_cameras, render_novel_depth, voxelize_scene
from .datatypes import CubeConfig, ShadowMaskSet
from .demux import (
    DemuxConfig,
    SpecularConfig,
    depth_from_multiplexed,
    depth_from_scanned,
    demux_shadows,
    detect_specular,
    two_bounce_tof,
)
from .metrics import MetricConfig, MetricsReport, depth_metrics, loss_diagnostics, mask_metrics, reconstruction_metrics
from .parallel import ordered_map
from .procedural import SceneRanges, generate_scene
from .renderer import RenderConfig, render_calibrated, render_gbuffer, render_light_in_flight, render_per_spot, \
    render_scene, trace_spots
from .scene_io import SceneSpec, check_placement
from .sensor import SensorModel, measured_sensor_model, rebin_cube

logger = logging.getLogger(__name__)

NOISE_MODES = ('off', 'paper')
MAX_SEED = (1 << 64) - 1


# ====================
# PRESETS
# ====================
@dataclass(frozen=True)
class Preset:
    name: str
    resolution: int
    spots: int
    delta_ps: float
    n_bins: int
    fov_deg: float
    spot_fov_deg: float
    # render this many times finer, then sum back to delta_ps
    rebin: int = 1
    gate_path_min: float = 1.0
    gate_policy: str = None
    ranges: SceneRanges = field(default_factory=SceneRanges)


PRESETS = {
    'desk': Preset('desk', 64, 5, 128.0, 637, 90.0, 60.0),
    'paper': Preset('paper', 256, 5, 128.0, 637, 90.0, 60.0),
    # real rig: 4x4 galvo spots over a 46 degree field, 8 ps renders summed to 32 ps;
    # the short gate simply does not record longer paths
    'real': Preset('real', 64, 4, 32.0, 375, 46.0, 30.0, rebin=4, gate_path_min=0.5, gate_policy='drop',
                   ranges=SceneRanges.tabletop()),
}


@dataclass(frozen=True)
class RunOptions:
    seed: int = 0
    noise: str = 'off'
    resolution: int = None
    spots: int = None
    fov_deg: float = None
    spot_fov_deg: float = None
    cube: CubeConfig = None
    rebin: int = 1
    threads: int = 1
    ranges: SceneRanges = field(default_factory=SceneRanges)
    background: float = 0.0

    def __post_init__(self):
        if self.noise not in NOISE_MODES:
            raise ValidationError(f'noise must be one of {NOISE_MODES}')
        if not 0 <= self.seed <= MAX_SEED:
            raise ValidationError(f'seed must be in [0, 2**64 - 1], got {self.seed}')

    @classmethod
    def from_options(cls, options):
        """Merge CLI options over the chosen preset (or the settings defaults)."""
        name = options.get('preset')
        if name:
            if name not in PRESETS:
                raise ValidationError(f'unknown preset {name!r}; choose from {sorted(PRESETS)}')
            preset = PRESETS[name]
        else:
            preset = None

        def pick(key, preset_value, default):
            value = options.get(key)
            if value is not None:
                return value
            return preset_value if preset else default

        resolution = pick('res', preset and preset.resolution, None)
        spots = pick('spots', preset and preset.spots, None)
        delta_ps = pick('delta_ps', preset and preset.delta_ps, settings.LIDARSIM_DELTA_PS)
        n_bins = pick('bins', preset and preset.n_bins, settings.LIDARSIM_N_BINS)
        gate_policy = options.get('gate_policy') or (preset and preset.gate_policy) or settings.LIDARSIM_GATE_POLICY
        gate = preset.gate_path_min if preset else settings.LIDARSIM_GATE_PATH_MIN_M
        cube = CubeConfig(float(delta_ps) * 1e-12, int(n_bins), gate, gate_policy)
        ranges = preset.ranges if preset else SceneRanges.from_settings()
        ranges = replace(ranges, resolution=resolution or ranges.resolution, spot_grid=spots or ranges.spot_grid)
        return cls(
            seed=int(options.get('seed') or 0),
            noise=options.get('noise') or 'off',
            resolution=resolution,
            spots=spots,
            fov_deg=preset.fov_deg if preset else None,
            spot_fov_deg=preset.spot_fov_deg if preset else None,
            cube=cube,
            rebin=preset.rebin if preset else 1,
            threads=settings.LIDARSIM_THREADS,
            ranges=ranges,
        )

    @property
    def render_cube(self):
        if self.rebin == 1:
            return self.cube
        return self.cube.replace(delta=self.cube.delta / self.rebin, n_t=self.cube.n_t * self.rebin)

    def render_config(self, threads=None):
        return RenderConfig.from_settings(cube=self.render_cube, threads=threads or self.threads)

    def sensor(self, seed=None):
        if self.noise == 'paper':
            return measured_sensor_model(self.cube.delta, self.seed if seed is None else seed, self.background)
        return SensorModel.off()

    def min_amplitude(self):
        if self.noise == 'paper':
            return self.sensor().presence_threshold
        return settings.LIDARSIM_MIN_AMPLITUDE

    def demux_config(self):
        return DemuxConfig.from_settings(min_amplitude=self.min_amplitude())

    def specular_config(self):
        return SpecularConfig.from_settings(min_amplitude=self.min_amplitude())

    def rig(self, spec, resolution=None):
        return spec.rig(resolution=resolution or self.resolution, spots=self.spots,
                        fov_deg=self.fov_deg, spot_fov_deg=self.spot_fov_deg)

    def scene_and_rig(self, spec, resolution=None):
        scene = spec.scene(settings.LIDARSIM_MAX_PRIMITIVES)
        rig = self.rig(spec, resolution)
        check_placement(scene, rig)
        return scene, rig


# ====================
# FILE LAYOUT
# ====================
def render_paths(out):
    """Where ``render`` puts its artifacts, keyed by role."""
    out = Path(out)
    stem = out.name[:-len(out.suffix)] if out.suffix else out.name
    base = out.parent
    return {
        'transient': out,
        'depth': base / f'{stem}_depth.sb3d',
        'tof': base / f'{stem}_tof.sb3d',
        'specular': base / f'{stem}_specular.pgm',
        'masks': base / f'{stem}_masks',
        'spots': base / f'{stem}_spots.json',
        'calibrated': base / f'{stem}_calibrated.sb3d',
        'per_spot': base / f'{stem}_spots',
    }


def write_masks(directory, masks):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for j in range(masks.n_spots):
        path = directory / f'mask_{j:03d}.pgm'
        formats.write_mask(path, masks.masks[j])
        paths.append(path)
    return paths


def read_masks(directory):
    paths = sorted(Path(directory).glob('mask_*.pgm'))
    if not paths:
        raise ValidationError(f'no mask_*.pgm files in {directory}')
    return ShadowMaskSet(np.stack([formats.read_mask(p) for p in paths]))


def load_spots(scene, rig, spot_file=None):
    if spot_file:
        spots = formats.read_spots(spot_file)
        if spots.n_spots != rig.n_spots:
            logger.warning('spot file lists %d spots, rig has %d', spots.n_spots, rig.n_spots)
        return spots
    return trace_spots(scene, rig)


# ====================
# STAGES
# ====================
def _measure(cube, opts, sensor, stream=0):
    if opts.rebin > 1:
        cube = rebin_cube(cube, opts.rebin)
    return sensor.apply(cube, opts.seed, stream)


def calibrated_capture(tof, opts):
    """Unoccluded reference cube under the capture's own gate policy."""
    return render_calibrated(tof, opts.cube)


def run_render(spec, out, opts, per_spot=False, calibrated=False, threads=None):
    started = time.perf_counter()
    scene, rig = opts.scene_and_rig(spec)
    cfg = opts.render_config(threads)
    output = render_scene(scene, rig, cfg)
    paths = render_paths(out)
    written = []

    # one photon level per capture, shared by the per-spot cubes
    sensor = opts.sensor()
    cube = _measure(output.cube, opts, sensor)
    formats.write_transient(paths['transient'], cube)
    depth = output.gbuffer.depth_map()
    formats.write_depth(paths['depth'], depth)
    tof = two_bounce_tof(depth, rig, output.spots)
    formats.write_tof(paths['tof'], tof)
    formats.write_mask(paths['specular'], output.gbuffer.specular_mask)
    formats.write_spots(paths['spots'], output.spots)
    written += [paths[k] for k in ('transient', 'depth', 'tof', 'specular', 'spots')]
    written += write_masks(paths['masks'], output.masks)

    if per_spot:
        paths['per_spot'].mkdir(parents=True, exist_ok=True)
        for j, single in enumerate(render_per_spot(scene, rig, cfg, output)):
            path = paths['per_spot'] / f'spot_{j:03d}.sb3d'
            single = single.with_data(single.data, output.cube.two_bounce_peak)
            formats.write_transient(path, _measure(single, opts, sensor, stream=1 + j))
            written.append(path)
    if calibrated:
        formats.write_transient(paths['calibrated'], calibrated_capture(tof, opts))
        written.append(paths['calibrated'])

    logger.info('render of %s finished in %.2fs (%d artifacts)', paths['transient'],
                time.perf_counter() - started, len(written))
    return written


def run_demux(transients, spec, out, opts, mode='multiplexed', depth_path=None, spot_file=None):
    cubes = [formats.read_transient(p) for p in transients]
    first = cubes[0]
    if any(not c.same_geometry(first) for c in cubes):
        raise ValidationError('all transient files must share one cube geometry')
    if first.n_x != first.n_y:
        raise ValidationError('only square sensors are supported by the CLI')
    scene, rig = opts.scene_and_rig(spec, resolution=first.n_x)
    spots = load_spots(scene, rig, spot_file)
    cfg = opts.demux_config()

    if mode == 'scanned':
        depth = depth_from_scanned(cubes, rig, spots, cfg)
        measured = first.with_data(np.sum([c.data for c in cubes], axis=0))
    elif mode == 'multiplexed':
        if len(cubes) != 1:
            raise ValidationError('multiplexed mode takes exactly one transient file')
        depth = depth_from_multiplexed(first, rig, spots, max_depth=scene.room.diagonal, cfg=cfg)
        measured = first
    else:
        raise ValidationError(f'unknown demux mode {mode!r}')

    reference = formats.read_depth(depth_path) if depth_path else depth
    tof = two_bounce_tof(reference, rig, spots)
    masks = demux_shadows(measured, tof, cfg.tolerance_bins, cfg.min_amplitude)
    specular = detect_specular(measured, reference, rig, spots, opts.specular_config())

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_depth(out / 'depth.sb3d', depth)
    formats.write_tof(out / 'tof.sb3d', tof)
    formats.write_mask(out / 'specular.pgm', specular)
    written = [out / 'depth.sb3d', out / 'tof.sb3d', out / 'specular.pgm']
    written += write_masks(out / 'masks', masks)
    return written


def run_reconstruct(depth_path, masks_dir, spec, out, opts, views=4, unknown_policy=None,
                    grid_resolution=None, spot_file=None):
    depth = formats.read_depth(depth_path)
    masks = read_masks(masks_dir)
    scene, rig = opts.scene_and_rig(spec, resolution=depth.shape[1])
    spots = load_spots(scene, rig, spot_file)
    grid_cfg = GridConfig.from_settings(resolution=grid_resolution, unknown_policy=unknown_policy,
                                        threads=opts.threads)
    grid = carve_occupancy(depth, masks, rig, spots, grid_cfg, (scene.room.lo, scene.room.hi))

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_grid(out / 'grid.sb3d', grid)
    formats.write_grid(out / 'grid_gt.sb3d', voxelize_scene(scene, grid_cfg))
    written = [out / 'grid.sb3d', out / 'grid_gt.sb3d']
    cameras = novel_cameras(scene.room.lo, scene.room.hi, rig.camera, views)
    poses = []
    for k, camera in enumerate(cameras):
        predicted = render_novel_depth(grid, camera, grid_cfg.unknown_policy)
        truth = render_gbuffer(scene, rig.with_camera(camera)).depth_map()
        formats.write_depth(out / f'novel_{k:02d}.sb3d', predicted)
        formats.write_depth(out / f'novel_{k:02d}_gt.sb3d', truth)
        written += [out / f'novel_{k:02d}.sb3d', out / f'novel_{k:02d}_gt.sb3d']
        poses.append({'position': camera.position.tolist(), 'rotation': camera.rotation.tolist(),
                      'fov_deg': camera.fov_deg, 'n_x': camera.n_x, 'n_y': camera.n_y})
    (out / 'novel_cameras.json').write_text(json.dumps({'cameras': poses}, indent=2, sort_keys=True))
    written.append(out / 'novel_cameras.json')
    return written


def run_eval(out, pred_depth=None, gt_depth=None, transient=None, pred_masks=None, gt_masks=None,
             pred_grid=None, gt_grid=None, novel_pred=(), novel_gt=()):
    cfg = MetricConfig.from_settings()
    report = MetricsReport()
    if pred_depth and gt_depth:
        pred, gt = formats.read_depth(pred_depth), formats.read_depth(gt_depth)
        report.depth_mae, report.boundary_f1 = depth_metrics(pred, gt, cfg)
        if transient:
            intensity = formats.read_transient(transient).intensity()
            report.l_data, report.l_smooth = loss_diagnostics(pred, gt, intensity, cfg)
    if pred_masks and gt_masks:
        pred_set, gt_set = _mask_stack(pred_masks), _mask_stack(gt_masks)
        if len(pred_set) != len(gt_set):
            raise ValidationError(f'{len(pred_set)} predicted masks for {len(gt_set)} ground-truth masks')
        pairs = [mask_metrics(p, g) for p, g in zip(pred_set, gt_set)]
        report.mask_pixel_mae = float(np.mean([p[0] for p in pairs]))
        report.mask_iou = float(np.mean([p[1] for p in pairs]))
    if pred_grid and gt_grid:
        grid_report = reconstruction_metrics(
            formats.read_grid(pred_grid), formats.read_grid(gt_grid),
            [formats.read_depth(p) for p in novel_pred], [formats.read_depth(p) for p in novel_gt],
            cfg)
        report.voxel_iou = grid_report.voxel_iou
        if not (pred_depth and gt_depth):
            report.depth_mae, report.boundary_f1 = grid_report.depth_mae, grid_report.boundary_f1
    MetricsReport(**vars(report))  # range check
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    return report


def _mask_stack(path):
    path = Path(path)
    if path.is_dir():
        return read_masks(path).masks
    return formats.read_mask(path)[None, ...]


def run_lif(tof_path, masks_dir, out, opts):
    tof = formats.read_tof(tof_path)
    masks = read_masks(masks_dir)
    cubes = render_light_in_flight(tof, masks, opts.cube, opts.threads)
    return formats.write_lif_frames(out, cubes)


def run_dataset(n, seed, out, opts):
    """Generate and render ``n`` scenes (seeds seed .. seed+n-1) and hash them into a manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    def one(index):
        scene_seed = (seed + index) & MAX_SEED
        directory = out / f'scene_{scene_seed:05d}'
        spec = generate_scene(scene_seed, opts.ranges)
        spec.save(directory / 'scene.json')
        per_scene = replace(opts, seed=scene_seed)
        run_render(spec, directory / 'transient.sb3d', per_scene, threads=1)
        return directory

    directories = ordered_map(one, range(n), opts.threads)
    manifest = formats.write_manifest(out)
    logger.info('dataset of %d scene(s) written to %s', len(directories), out)
    return manifest


def load_spec(path):
    return SceneSpec.load(path)
