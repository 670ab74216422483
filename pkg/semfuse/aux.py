import logging
import os
import re
import numpy as np

sec_min = 60  # 1 minute in seconds
sec_hour = 3600  # 1 hour in seconds

default_voxel = 0.008  # TSDF voxel size (m)
default_trunc = 0.04  # TSDF truncation distance (m)
default_downsample = 0.02  # labeled cloud voxel size (m)
default_max_depth = 6.0  # maximum integrated depth (m)
default_weight_cap = 255
default_occlusion_tol = 0.05  # m
default_min_votes = 2.0
depth_scale = 1000.  # depth PNG units per meter (mm)
unknown_color = (255, 0, 255)
frame_stem = '{:06d}'
log_env_var = 'SEMFUSE_LOG'


# -----------------------------------------------------------------------------
#                               Errors
class SemfuseError(Exception):
    """Base class of all errors raised by semfuse."""


class SpaceMismatchError(SemfuseError, ValueError):
    pass


class DimensionMismatchError(SemfuseError, ValueError):
    pass


class InvalidInputError(SemfuseError, ValueError):
    pass


class GraphError(SemfuseError, ValueError):
    pass


class SceneLockedError(SemfuseError, RuntimeError):
    pass


class MissingArtifactError(SemfuseError, FileNotFoundError):
    """A required input file or directory does not exist."""

    def __init__(self, artifact, detail=''):
        self.artifact = str(artifact)
        msg = 'missing artifact: {:s}'.format(self.artifact)
        if detail:
            msg += ' ({:s})'.format(detail)
        super().__init__(msg)


def require(path, detail=''):
    if not os.path.exists(path):
        raise MissingArtifactError(path, detail)
    return path


# -----------------------------------------------------------------------------
#                               Logging
_log_format = '%(asctime)s %(levelname)-7s %(name)s: %(message)s'


def setup_logging(level=None):
    """Configures the ``semfuse`` logger.

    :param level: logging level name or number. If ``None`` the environment
        variable ``SEMFUSE_LOG`` is used (default: WARNING).
    :return: the configured logger
    """
    logger = logging.getLogger('semfuse')
    if level is None:
        level = os.environ.get(log_env_var, 'WARNING')
    bad_level = False
    if isinstance(level, str):
        value = logging.getLevelName(level.strip().upper())
        if not isinstance(value, int):
            bad_level = True
            value = logging.WARNING
        level = value
    logger.setLevel(level)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_log_format))
        logger.addHandler(handler)
    if bad_level:
        logger.warning('invalid %s value, using WARNING', log_env_var)
    return logger


# -----------------------------------------------------------------------------
#                               Parsing
_hours_re = re.compile(r'^\s*(?:(\d+(?:\.\d*)?)\s*h)?'
                       r'\s*(?:(\d+(?:\.\d*)?)\s*m)?'
                       r'\s*(?:(\d+(?:\.\d*)?)\s*s)?\s*$')


def parse_hours(t):
    """Duration in hours. Accepts numbers (hours) or strings like '4h',
    '30m', '1h30m'."""
    if not isinstance(t, str):
        return float(t)
    match = _hours_re.match(t)
    if match is None or not any(match.groups()):
        raise InvalidInputError('invalid duration: {!r}'.format(t))
    h, m, s = (float(x) if x else 0. for x in match.groups())
    return h + (m*sec_min + s)/sec_hour


# -----------------------------------------------------------------------------
#                               Comparisons
def are_close(x, y, tol=1.e-10):
    return abs(x-y) < tol


def are_close_arr(x, y, tol=1.e-10):
    x = np.asarray(x)
    y = np.asarray(y)
    if x.size == 0 and y.size == 0:
        return True
    return np.abs(x-y).max() < tol
