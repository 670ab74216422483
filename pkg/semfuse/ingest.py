"""Loading of raw multi-rate RGB-D recordings and their synchronization to
the color stream.

Raw scene directory::

    color/%06d.png      8-bit RGB, ~30 FPS
    depth/%06d.png      16-bit millimeters, ~60 FPS
    pose/%06d.txt       4x4 camera-to-world, ~10 FPS
    intrinsics.txt      fx fy cx cy width height (color camera)
    timestamps.json     {"color": [...], "depth": [...], "pose": [...]}

The synchronized scene mirrors the layout under ``synced/`` with one depth
and pose file per color frame.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import logging
import os
import shutil
import numpy as np
from scipy.spatial.transform import Rotation, Slerp
from .aux import InvalidInputError, MissingArtifactError, require
from .fileio import (frame_name, frame_indices, read_json, write_json,
                     read_depth_png, write_depth_png, read_pose_txt,
                     write_pose_txt, read_intrinsics_txt,
                     write_intrinsics_txt, image_size)
from .geometry import Intrinsics, Pose
from .gravity import compute_alignment, write_gravity_json, read_gravity_json
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)
synced_dir = 'synced'


# -----------------------------------------------------------------------------
#                               Types
@dataclass(frozen=True)
class RawRecording:
    """Multi-rate streams of one recording.

    :ivar color: list of ``(timestamp, image path)``
    :ivar depth: list of ``(timestamp, depth)``; depth is a PNG path
        (millimeters) or an array in meters
    :ivar poses: list of :py:class:`semfuse.geometry.Pose`
    :ivar intrinsics: color camera intrinsics
    :ivar depth_intrinsics: depth camera intrinsics (optional)
    """
    color: list
    depth: list
    poses: list
    intrinsics: Intrinsics
    depth_intrinsics: Intrinsics = None
    scene_id: str = ''

    def validate(self):
        for name, times in (('color', [c[0] for c in self.color]),
                            ('depth', [d[0] for d in self.depth]),
                            ('pose', [p.timestamp for p in self.poses])):
            if len(times) == 0:
                raise InvalidInputError('empty {:s} stream'.format(name))
            if np.any(np.diff(times) <= 0):
                raise InvalidInputError('{:s} timestamps are not strictly '
                                        'increasing'.format(name))


@dataclass(frozen=True, eq=False)
class Frame:
    """Synchronized RGB-D frame. ``depth`` is in meters at color resolution;
    it may be left as ``None`` and read lazily from ``depth_path``."""
    index: int
    timestamp: float
    color_path: str
    pose: Pose
    depth: np.ndarray = None
    depth_path: str = None
    gravity: object = None

    def depth_map(self):
        if self.depth is not None:
            return self.depth
        if self.depth_path is None:
            raise MissingArtifactError(
                'depth of frame {:d}'.format(self.index))
        return read_depth_png(self.depth_path)


@dataclass(frozen=True, eq=False)
class Scene:
    id: str
    frames: tuple
    intrinsics: Intrinsics
    mesh_path: str = None
    gt_path: str = None
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, f in enumerate(self.frames):
            if f.index != k:
                raise InvalidInputError('frame indices must be contiguous '
                                        'from 0')

    def __len__(self):
        return len(self.frames)


# -----------------------------------------------------------------------------
#                       Depth resizing, pose interpolation
def resize_depth(depth, target_w, target_h):
    """Nearest-neighbor resize of a depth grid. No depth value is invented;
    invalid pixels (0) stay invalid.

    :param depth: depth grid (rows x columns) in meters
    :param target_w: output width
    :param target_h: output height
    :return: resized depth grid
    """
    depth = np.asarray(depth)
    if depth.ndim != 2 or depth.shape[0] == 0 or depth.shape[1] == 0:
        raise InvalidInputError('source depth must be a non-empty grid')
    if target_w <= 0 or target_h <= 0:
        raise InvalidInputError('target dimensions must be positive')
    src_h, src_w = depth.shape
    rows = ((np.arange(target_h) + 0.5)*src_h/target_h).astype(np.int64)
    cols = ((np.arange(target_w) + 0.5)*src_w/target_w).astype(np.int64)
    np.clip(rows, 0, src_h - 1, out=rows)
    np.clip(cols, 0, src_w - 1, out=cols)
    return depth[rows[:, None], cols[None, :]]


def interpolate_pose(poses, t):
    """Pose at time ``t``: slerp of the rotation and linear interpolation of
    the translation on the bracketing segment.

    :param poses: poses sorted by timestamp (at least 2)
    :param t: query time within the span of ``poses``
    :return: interpolated pose (exact sample pose at sample times)
    """
    if len(poses) < 2:
        raise InvalidInputError('at least 2 poses are needed')
    times = np.array([p.timestamp for p in poses])
    if not times[0] <= t <= times[-1]:
        raise InvalidInputError('t={:.6f} outside pose span [{:.6f}, {:.6f}]'
                                .format(t, times[0], times[-1]))
    k = int(np.searchsorted(times, t))
    if times[k] == t:
        p = poses[k]
        return Pose(p.rotation, p.translation, t)
    p0, p1 = poses[k-1], poses[k]
    t0, t1 = times[k-1], times[k]
    slerp = Slerp([t0, t1], Rotation.concatenate([p0.rot, p1.rot]))
    theta = (t - t0)/(t1 - t0)
    translation = (1. - theta)*p0.translation + theta*p1.translation
    return Pose(slerp([t])[0].as_quat(), translation, t)


def nearest_index(times, t):
    """Index of the sample of ``times`` (sorted) closest to ``t``; ties go
    to the earlier sample."""
    k = int(np.searchsorted(times, t))
    if k == 0:
        return 0
    if k == len(times):
        return len(times) - 1
    return k - 1 if t - times[k-1] <= times[k] - t else k


# -----------------------------------------------------------------------------
#                               Synchronization
def synchronize(raw, workers=None, out_dir=None):
    """Synchronizes a raw recording to its color stream.

    :param raw: raw recording
    :param workers: number of threads used to load and resize depth frames
    :param out_dir: if given, every frame is written there as soon as it is
        synchronized and kept in memory without its depth grid
    :type raw: RawRecording
    :return: scene with one frame per color frame inside the pose span
    :rtype: Scene
    """
    raw.validate()
    if len(raw.poses) < 2:
        raise InvalidInputError('no pose coverage: fewer than 2 poses')
    t_first = raw.poses[0].timestamp
    t_last = raw.poses[-1].timestamp
    depth_times = np.array([d[0] for d in raw.depth])
    width, height = raw.intrinsics.width, raw.intrinsics.height

    kept = [(k, t, path) for k, (t, path) in enumerate(raw.color)
            if t_first <= t <= t_last]
    n_dropped = len(raw.color) - len(kept)
    if not kept:
        raise InvalidInputError('no color frame inside the pose span')
    if n_dropped:
        logger.warning('%s: dropping %d color frame(s) outside pose coverage',
                       raw.scene_id or 'scene', n_dropped)

    def make_frame(item):
        index, (color_index, t, color_path) = item
        d_index = nearest_index(depth_times, t)
        depth = raw.depth[d_index][1]
        if isinstance(depth, (str, os.PathLike)):
            depth = read_depth_png(depth)
        depth = resize_depth(depth, width, height)
        pose = interpolate_pose(raw.poses, t)
        frame = Frame(index, t, color_path, pose, depth=depth,
                      gravity=compute_alignment(pose))
        if out_dir is not None:
            frame = write_frame(frame, out_dir)
        return frame, abs(t - depth_times[d_index]), color_index

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(make_frame, enumerate(kept)))
    frames = tuple(r[0] for r in results)
    max_gap = max(r[1] for r in results)
    manifest = dict(n_color=len(raw.color), n_depth=len(raw.depth),
                    n_pose=len(raw.poses), n_frames=len(frames),
                    n_dropped=n_dropped, max_depth_gap=float(max_gap),
                    color_source=[r[2] for r in results],
                    timestamps=[f.timestamp for f in frames])
    logger.info('%s: %d frames synchronized, max depth gap %.4f s',
                raw.scene_id or 'scene', len(frames), max_gap)
    scene = Scene(raw.scene_id, frames, raw.intrinsics, manifest=manifest)
    if out_dir is not None:
        write_scene_info(scene, out_dir)
    return scene


# -----------------------------------------------------------------------------
#                               Scene I/O
def load_raw_recording(scene_dir):
    """Reads a raw recording from a scene directory (see module docstring)."""
    stamps = read_json(require(os.path.join(scene_dir, 'timestamps.json')))
    for key in ('color', 'depth', 'pose'):
        if key not in stamps:
            raise InvalidInputError('timestamps.json: missing {:s} stream'
                                    .format(key))

    def stream(sub, times, suffix='.png'):
        directory = require(os.path.join(scene_dir, sub))
        indices = frame_indices(directory, suffix)
        if len(indices) != len(times):
            raise InvalidInputError('{:s}: {:d} files but {:d} timestamps'
                                    .format(sub, len(indices), len(times)))
        return [(float(t), os.path.join(directory, frame_name(k, suffix)))
                for t, k in zip(times, indices)]

    color = stream('color', stamps['color'])
    depth = stream('depth', stamps['depth'])
    poses = [Pose.from_matrix(read_pose_txt(path), t)
             for t, path in stream('pose', stamps['pose'], '.txt')]
    intrinsics = Intrinsics(*read_intrinsics_txt(
        require(os.path.join(scene_dir, 'intrinsics.txt'))))
    depth_k = os.path.join(scene_dir, 'depth_intrinsics.txt')
    depth_intrinsics = (Intrinsics(*read_intrinsics_txt(depth_k))
                        if os.path.exists(depth_k) else None)
    scene_id = os.path.basename(os.path.normpath(scene_dir))
    return RawRecording(color, depth, poses, intrinsics, depth_intrinsics,
                        scene_id)


def write_frame(frame, out_dir):
    """Writes one synchronized frame (color copy, depth in millimeters,
    pose) and returns it with its depth replaced by the written file."""
    color_out = os.path.join(out_dir, 'color', frame_name(frame.index))
    depth_out = os.path.join(out_dir, 'depth', frame_name(frame.index))
    os.makedirs(os.path.dirname(color_out), exist_ok=True)
    if os.path.abspath(frame.color_path) != os.path.abspath(color_out):
        shutil.copyfile(frame.color_path, color_out)
    write_depth_png(depth_out, frame.depth_map())
    write_pose_txt(os.path.join(out_dir, 'pose',
                                frame_name(frame.index, '.txt')),
                   frame.pose.matrix())
    return replace(frame, color_path=color_out, depth=None,
                   depth_path=depth_out)


def write_scene_info(scene, out_dir):
    """Writes intrinsics, gravity and manifest of a synchronized scene."""
    k = scene.intrinsics
    write_intrinsics_txt(os.path.join(out_dir, 'intrinsics.txt'),
                         k.fx, k.fy, k.cx, k.cy, k.width, k.height)
    if all(f.gravity is not None for f in scene.frames):
        write_gravity_json(os.path.join(out_dir, 'gravity.json'),
                           scene.frames)
    manifest = dict(scene.manifest)
    manifest.setdefault('timestamps', [f.timestamp for f in scene.frames])
    manifest['scene'] = scene.id
    write_json(os.path.join(out_dir, 'manifest.json'), manifest)


def load_scene(scene_dir):
    """Reads the synchronized scene of a scene directory. Depth is loaded
    lazily.

    :param scene_dir: scene directory containing ``synced/``
    """
    root = os.path.join(scene_dir, synced_dir)
    require(root, 'run the sync stage first')
    intrinsics = Intrinsics(*read_intrinsics_txt(
        require(os.path.join(root, 'intrinsics.txt'))))
    manifest_path = os.path.join(root, 'manifest.json')
    manifest = read_json(manifest_path) if os.path.exists(manifest_path) \
        else dict()
    gravity_path = os.path.join(root, 'gravity.json')
    gravity = read_gravity_json(gravity_path) \
        if os.path.exists(gravity_path) else dict()
    indices = frame_indices(os.path.join(root, 'color'))
    times = manifest.get('timestamps', [])
    frames = []
    for index in indices:
        t = times[index] if index < len(times) else float(index)
        pose = Pose.from_matrix(read_pose_txt(
            os.path.join(root, 'pose', frame_name(index, '.txt'))), t)
        frames.append(Frame(
            len(frames), t, os.path.join(root, 'color', frame_name(index)),
            pose, depth_path=os.path.join(root, 'depth', frame_name(index)),
            gravity=gravity.get(index, compute_alignment(pose))))
    if frames and image_size(frames[0].color_path) != (intrinsics.width,
                                                       intrinsics.height):
        raise InvalidInputError('synced color size differs from intrinsics')
    mesh_path = os.path.join(scene_dir, 'mesh.ply')
    gt_path = os.path.join(scene_dir, 'labels_gt.ply')
    return Scene(os.path.basename(os.path.normpath(scene_dir)), tuple(frames),
                 intrinsics,
                 mesh_path=mesh_path if os.path.exists(mesh_path) else None,
                 gt_path=gt_path if os.path.exists(gt_path) else None,
                 manifest=manifest)
