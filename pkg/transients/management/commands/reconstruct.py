from ...carving import UNKNOWN_POLICIES
from ...decorators import pipeline_errors
from ...pipeline import load_spec, run_reconstruct
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Carve an occupancy grid from depth and shadow masks and render novel views'

    def add_stage_arguments(self, parser):
        parser.add_argument('--depth', required=True)
        parser.add_argument('--masks', required=True, help='directory of mask_*.pgm files')
        parser.add_argument('--scene', required=True)
        parser.add_argument('--spot-file')
        parser.add_argument('--out', required=True, help='output directory')
        parser.add_argument('--views', type=int, default=4)
        parser.add_argument('--grid', type=int, help='voxels per side')
        parser.add_argument('--unknown-policy', choices=UNKNOWN_POLICIES)

    @pipeline_errors
    def handle(self, *args, **options):
        opts = self.run_options(options)
        spec = load_spec(options['scene'])
        self.report(run_reconstruct(options['depth'], options['masks'], spec, options['out'], opts,
                                    views=options['views'], unknown_policy=options['unknown_policy'],
                                    grid_resolution=options['grid'], spot_file=options['spot_file']))
