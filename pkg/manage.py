#!/usr/bin/env python
"""Command-line entry point: ``python manage.py <render|dataset|demux|reconstruct|eval|lif> ...``."""
import logging
import os
import sys

SUBCOMMANDS = ('render', 'dataset', 'demux', 'reconstruct', 'eval', 'lif')
# Django built-ins still reachable through the same entry point
PASSTHROUGH = ('test', 'check', 'shell')

USAGE = f"""usage: manage.py <subcommand> [options]

subcommands: {', '.join(SUBCOMMANDS)}
run 'manage.py <subcommand> --help' for the options of one subcommand
"""


def cli_dispatch(argv):
    """Run one pipeline subcommand and return its exit code (0 ok, 1 pipeline error, 2 bad input)."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'lidarsim.settings')
    try:
        import django
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    if len(argv) < 2 or argv[1] not in SUBCOMMANDS + PASSTHROUGH:
        sys.stderr.write(USAGE)
        return 0 if len(argv) > 1 and argv[1] in ('-h', '--help', 'help') else 2
    django.setup()
    try:
        execute_from_command_line(list(argv))
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else (0 if code is None else 1)
    except Exception:
        logging.getLogger('transients').exception('unhandled error in %s', argv[1])
        return 1
    return 0


def main():
    sys.exit(cli_dispatch(sys.argv))


if __name__ == '__main__':
    main()
