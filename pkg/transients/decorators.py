# transients/decorators.py
import functools
import logging

from django.core.exceptions import ValidationError
from django.core.management.base import CommandError

from .exceptions import LidarSimError

logger = logging.getLogger(__name__)

USAGE_ERROR = 2
PIPELINE_ERROR = 1


def _message(exc):
    if isinstance(exc, ValidationError):
        return '; '.join(exc.messages)
    return str(exc)


def pipeline_errors(handle):
    """Turn bad input into exit code 2 and pipeline failures into exit code 1."""
    @functools.wraps(handle)
    def wrapper(self, *args, **options):
        try:
            return handle(self, *args, **options)
        except ValidationError as exc:
            logger.error('invalid input: %s', _message(exc))
            raise CommandError(_message(exc), returncode=USAGE_ERROR)
        except (FileNotFoundError, IsADirectoryError) as exc:
            logger.error('missing input: %s', exc)
            raise CommandError(str(exc), returncode=USAGE_ERROR)
        except LidarSimError as exc:
            logger.error('%s: %s', type(exc).__name__, exc)
            raise CommandError(f'{type(exc).__name__}: {exc}', returncode=PIPELINE_ERROR)

    return wrapper
