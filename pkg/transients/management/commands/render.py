from ...decorators import pipeline_errors
from ...pipeline import load_spec, run_render
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Render the multiplexed transient cube and ground truth for one scene'

    def add_stage_arguments(self, parser):
        parser.add_argument('--scene', required=True, help='scene JSON file')
        parser.add_argument('--out', required=True, help='transient cube to write (.sb3d)')
        parser.add_argument('--per-spot', action='store_true', help='also write one cube per laser spot')
        parser.add_argument('--calibrated', action='store_true', help='also write the unoccluded reference cube')

    @pipeline_errors
    def handle(self, *args, **options):
        opts = self.run_options(options)
        spec = load_spec(options['scene'])
        self.report(run_render(spec, options['out'], opts, per_spot=options['per_spot'],
                               calibrated=options['calibrated']))
