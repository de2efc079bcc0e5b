from ...decorators import pipeline_errors
from ...pipeline import load_spec, run_demux
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Recover depth, two-bounce ToF, shadow masks and specular pixels from transients'

    def add_stage_arguments(self, parser):
        parser.add_argument('--transient', nargs='+', required=True,
                            help='one multiplexed cube, or one cube per spot in scanned mode')
        parser.add_argument('--scene', required=True, help='scene JSON holding the rig')
        parser.add_argument('--spot-file', help='spots.json from render; traced from the scene otherwise')
        parser.add_argument('--mode', choices=('scanned', 'multiplexed'), default='multiplexed')
        parser.add_argument('--depth', help='known depth map to demultiplex against')
        parser.add_argument('--out', required=True, help='output directory')

    @pipeline_errors
    def handle(self, *args, **options):
        opts = self.run_options(options)
        spec = load_spec(options['scene'])
        self.report(run_demux(options['transient'], spec, options['out'], opts, mode=options['mode'],
                              depth_path=options['depth'], spot_file=options['spot_file']))
