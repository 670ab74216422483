"""Camera intrinsics and poses.

Camera frame convention: x right, y down, z forward (OpenCV). Pixel ``(u, v)``
is column ``u``, row ``v``; pixel centers sit on integer coordinates.
"""
from dataclasses import dataclass, field
import numpy as np
from scipy.spatial.transform import Rotation
from .aux import InvalidInputError
__docformat__ = 'reStructuredText en'


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics (pixels)."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError('focal lengths must be positive')
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError('image size must be positive')
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInputError('principal point outside the image')

    @property
    def shape(self):
        return self.height, self.width

    def scaled(self, width, height):
        """Intrinsics of the same camera at another resolution."""
        sx = width/self.width
        sy = height/self.height
        return Intrinsics(self.fx*sx, self.fy*sy, self.cx*sx, self.cy*sy,
                          int(width), int(height))

    def project(self, points_cam):
        """Projects camera-frame points (n, 3).

        :return: u, v (floats), z
        """
        z = points_cam[:, 2]
        with np.errstate(divide='ignore', invalid='ignore'):
            u = self.fx*points_cam[:, 0]/z + self.cx
            v = self.fy*points_cam[:, 1]/z + self.cy
        return u, v, z

    def pixel_rays(self):
        """Camera-frame ray directions with unit z for every pixel,
        shape (height, width, 3)."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        rays = np.empty((self.height, self.width, 3))
        rays[..., 0] = (u - self.cx)/self.fx
        rays[..., 1] = (v - self.cy)/self.fy
        rays[..., 2] = 1.
        return rays


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world pose.

    :ivar rotation: unit quaternion ``(x, y, z, w)`` (scalar last, as in
        :py:class:`scipy.spatial.transform.Rotation`)
    :ivar translation: camera center in world coordinates (m)
    :ivar timestamp: seconds
    """
    rotation: np.ndarray
    translation: np.ndarray
    timestamp: float = 0.
    _rot: Rotation = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm < 1.e-12:
            raise InvalidInputError('invalid rotation quaternion')
        q = q/norm
        # canonical sign: w >= 0
        if q[3] < 0:
            q = -q
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, 'rotation', q)
        object.__setattr__(self, 'translation', t)
        object.__setattr__(self, 'timestamp', float(self.timestamp))
        object.__setattr__(self, '_rot', Rotation.from_quat(q))

    @classmethod
    def from_rotation(cls, rot, translation, timestamp=0.):
        return cls(rot.as_quat(), translation, timestamp)

    @classmethod
    def from_matrix(cls, matrix, timestamp=0.):
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(Rotation.from_matrix(matrix[:3, :3]).as_quat(),
                   matrix[:3, 3], timestamp)

    @classmethod
    def look_at(cls, eye, target, up=(0., 0., 1.), timestamp=0.):
        """Camera at ``eye`` looking at ``target`` with image-up as close as
        possible to the world vector ``up``."""
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, up)
        if np.linalg.norm(x) < 1.e-9:
            x = np.cross(z, (1., 0., 0.) if abs(z[0]) < 0.9 else (0., 1., 0.))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        mat = np.column_stack((x, y, z))
        return cls(Rotation.from_matrix(mat).as_quat(), eye, timestamp)

    @property
    def rot(self):
        return self._rot

    def matrix(self):
        mat = np.eye(4)
        mat[:3, :3] = self._rot.as_matrix()
        mat[:3, 3] = self.translation
        return mat

    def world_to_camera(self, points):
        """Transforms world points (n, 3) into the camera frame."""
        return self._rot.inv().apply(np.asarray(points) - self.translation)

    def camera_to_world(self, points):
        return self._rot.apply(points) + self.translation


def pose_distance(pose_a, pose_b):
    """Geodesic rotation angle (rad) and translation distance (m)."""
    angle = (pose_a.rot.inv()*pose_b.rot).magnitude()
    shift = pose_a.translation - pose_b.translation
    return angle, float(np.linalg.norm(shift))
