import logging

from django.core.exceptions import ValidationError

from ...decorators import pipeline_errors
from ...formats import verify_manifest
from ...pipeline import run_dataset
from ..base import PipelineCommand

logger = logging.getLogger(__name__)


class Command(PipelineCommand):
    help = 'Generate and render a reproducible set of random scenes'

    def add_stage_arguments(self, parser):
        parser.add_argument('--n', type=int, default=1, help='number of scenes')
        parser.add_argument('--out', required=True, help='dataset directory')
        parser.add_argument('--verify', action='store_true', help='re-hash an existing dataset instead')

    @pipeline_errors
    def handle(self, *args, **options):
        if options['verify']:
            count = verify_manifest(options['out'])
            self.stdout.write(f'{count} artifact(s) match the manifest')
            return
        if options['n'] < 1:
            raise ValidationError('--n must be at least 1')
        opts = self.run_options(options)
        self.stdout.write(str(run_dataset(options['n'], opts.seed, options['out'], opts)))
