# transients/management/base.py
"""Shared flags for the pipeline commands."""
from django.core.management.base import BaseCommand

from ..pipeline import NOISE_MODES, PRESETS, RunOptions
from ..datatypes import GATE_POLICIES


class PipelineCommand(BaseCommand):
    # skip Django's system checks; nothing here touches models or URLs
    requires_system_checks = []

    def add_arguments(self, parser):
        group = parser.add_argument_group('capture')
        group.add_argument('--seed', type=int, default=0, help='seed for noise and scene generation')
        group.add_argument('--noise', choices=NOISE_MODES, default='off')
        group.add_argument('--bins', type=int, help='number of time bins')
        group.add_argument('--delta-ps', type=float, help='bin width in picoseconds')
        group.add_argument('--res', type=int, help='sensor resolution (square)')
        group.add_argument('--preset', choices=sorted(PRESETS))
        group.add_argument('--spots', type=int, help='laser spots per side')
        group.add_argument('--gate-policy', choices=GATE_POLICIES)
        self.add_stage_arguments(parser)

    def add_stage_arguments(self, parser):
        pass

    def run_options(self, options):
        return RunOptions.from_options(options)

    def report(self, paths):
        for path in paths:
            self.stdout.write(str(path))
