from ...decorators import pipeline_errors
from ...pipeline import run_lif
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Write light-in-flight frames from a two-bounce ToF map and shadow masks'

    def add_stage_arguments(self, parser):
        parser.add_argument('--tof', required=True)
        parser.add_argument('--masks', required=True)
        parser.add_argument('--out', required=True, help='frame directory')

    @pipeline_errors
    def handle(self, *args, **options):
        opts = self.run_options(options)
        self.report(run_lif(options['tof'], options['masks'], options['out'], opts))
