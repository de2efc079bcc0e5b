from django.core.exceptions import ValidationError

from ...decorators import pipeline_errors
from ...pipeline import run_eval
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Score predictions against ground truth and write a JSON report'

    def add_stage_arguments(self, parser):
        parser.add_argument('--pred-depth')
        parser.add_argument('--gt-depth')
        parser.add_argument('--transient', help='cube whose intensity weights the smoothness term')
        parser.add_argument('--pred-masks', help='mask directory or single PGM')
        parser.add_argument('--gt-masks')
        parser.add_argument('--pred-grid')
        parser.add_argument('--gt-grid')
        parser.add_argument('--novel', nargs='*', default=[], help='predicted novel-view depth maps')
        parser.add_argument('--novel-gt', nargs='*', default=[])
        parser.add_argument('--out', required=True, help='report JSON')

    @pipeline_errors
    def handle(self, *args, **options):
        pairs = [('pred_depth', 'gt_depth'), ('pred_masks', 'gt_masks'), ('pred_grid', 'gt_grid')]
        if not any(options[a] and options[b] for a, b in pairs):
            raise ValidationError('nothing to evaluate: pass a matching prediction and ground truth')
        run_eval(options['out'], pred_depth=options['pred_depth'], gt_depth=options['gt_depth'],
                 transient=options['transient'], pred_masks=options['pred_masks'], gt_masks=options['gt_masks'],
                 pred_grid=options['pred_grid'], gt_grid=options['gt_grid'], novel_pred=options['novel'],
                 novel_gt=options['novel_gt'])
        self.stdout.write(options['out'])
