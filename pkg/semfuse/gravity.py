"""Quarter-turn gravity alignment of image frames.

The world z axis is the sky direction. For each frame the sky direction is
projected onto the image plane and compared with image-up ``(0, -1)``; the
frame is then rotated by ``k`` quarter turns so that the sky points
approximately up.
"""
from dataclasses import dataclass
import numpy as np
from .aux import InvalidInputError
from .fileio import write_json, read_json
from .labelspace import LabelMap
__docformat__ = 'reStructuredText en'

two_pi = 2*np.pi
half_pi = 0.5*np.pi
_degenerate_norm = 1.e-6
_sky = np.array((0., 0., 1.))


@dataclass(frozen=True)
class GravityInfo:
    """
    :ivar alpha: angle in [0, 2pi) between the projected sky direction and
        image-up, measured counter-clockwise on screen
    :ivar k: number of clockwise quarter turns to apply to the image
    """
    alpha: float
    k: int


def circular_distance(a, b):
    d = np.abs(np.mod(a - b, two_pi))
    return np.minimum(d, two_pi - d)


def quarter_turns(alpha):
    r"""Quarter-turn count :math:`k = \arg\min_s d(s\pi/2, \alpha)` with the
    circular distance :math:`d`. Ties resolve to the smaller ``s``."""
    s = np.arange(4)
    return int(np.argmin(circular_distance(s*half_pi, alpha)))


def sky_angle(pose):
    """Angle between projected sky and image-up, or ``None`` when the camera
    looks straight up or down."""
    sky_cam = pose.rot.inv().apply(_sky)
    x, y = sky_cam[0], sky_cam[1]
    if np.hypot(x, y) < _degenerate_norm:
        return None
    # on screen (y down) counter-clockwise angle from (0, -1) to (x, y)
    return float(np.mod(np.arctan2(-x, -y), two_pi))


def compute_alignment(pose):
    """Gravity alignment of one frame.

    :param pose: camera-to-world pose
    :type pose: semfuse.geometry.Pose
    :return: alpha and quarter-turn count (``k=0`` for degenerate views)
    :rtype: GravityInfo
    """
    alpha = sky_angle(pose)
    if alpha is None:
        return GravityInfo(0., 0)
    return GravityInfo(alpha, quarter_turns(alpha))


def residual_angle(pose, k):
    """Angle between projected sky and image-up after rotating the frame by
    ``k`` quarter turns."""
    alpha = sky_angle(pose)
    if alpha is None:
        return 0.
    return float(circular_distance(alpha, k*half_pi))


def _check_k(k):
    if k not in (0, 1, 2, 3):
        raise InvalidInputError('k must be 0, 1, 2 or 3, got {!r}'.format(k))


def rotate_quarter(img, k):
    """Rotates an image or label map by ``k`` clockwise quarter turns.

    The rotation is a lossless index permutation. For ``k=1`` the pixel at
    ``(r, c)`` of an ``H x W`` grid moves to ``(c, H-1-r)``.

    :param img: label map or array (rows, columns[, channels])
    :param k: quarter turns in {0, 1, 2, 3}
    :return: rotated object of the same type
    """
    _check_k(k)
    if isinstance(img, LabelMap):
        return img.with_data(np.rot90(img.data, -k))
    return np.ascontiguousarray(np.rot90(img, -k, axes=(0, 1)))


def unrotate_labels(lm, k):
    """Inverse of :py:func:`rotate_quarter`."""
    _check_k(k)
    return rotate_quarter(lm, (4 - k) % 4)


def mirror(img):
    """Horizontal mirror (self-inverse)."""
    if isinstance(img, LabelMap):
        return img.with_data(img.data[:, ::-1])
    return np.ascontiguousarray(img[:, ::-1])


def write_gravity_json(path, frames):
    write_json(path, [dict(frame=f.index, alpha=f.gravity.alpha,
                           k=f.gravity.k) for f in frames])


def read_gravity_json(path):
    """Dictionary ``frame index -> GravityInfo``."""
    return {int(d['frame']): GravityInfo(float(d['alpha']), int(d['k']))
            for d in read_json(path)}
