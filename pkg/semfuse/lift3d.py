"""Per-point voting of frame labels onto 3D points.

A point votes in a frame when it projects inside the image and its depth
agrees with the observed depth of that pixel.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
import os
import numpy as np
from .aux import (default_occlusion_tol, InvalidInputError,
                  SpaceMismatchError, DimensionMismatchError)
from .consensus import ConsensusMap, consensus_dir, read_consensus_top1
from .fileio import frame_indices, write_json
from .fusion3d import (LabeledCloud, TriangleMesh, read_labeled_cloud,
                       write_labeled_cloud)
from .ingest import load_scene
from .labelspace import LabelMap
from .votes import tally, top2
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)
_frames_per_batch = 32


@dataclass(frozen=True)
class LiftConfig:
    """
    :ivar occlusion_tol: largest accepted gap (m) between the depth of a
        point and the observed depth
    :ivar min_frame_votes: points with fewer votes stay unlabeled
    :ivar boundary_margin: pixels ignored along the image border
    :ivar stride: only every ``stride``-th frame votes
    """
    occlusion_tol: float = default_occlusion_tol
    min_frame_votes: int = 1
    boundary_margin: int = 0
    stride: int = 1
    workers: int = None

    def __post_init__(self):
        if not self.occlusion_tol > 0:
            raise InvalidInputError('occlusion_tol must be positive')
        if self.min_frame_votes < 0 or self.boundary_margin < 0:
            raise InvalidInputError('min_frame_votes and boundary_margin '
                                    'must be non-negative')
        if self.stride < 1:
            raise InvalidInputError('stride must be >= 1')


def visible_pixels(points, pose, depth, intrinsics,
                   tol=default_occlusion_tol, margin=0):
    """Vectorized visibility test.

    Points are read at their nearest pixel. A point closer than one pixel
    footprint (depth over focal length) to a label boundary may take the
    label on the other side when the depth there is continuous.

    :param points: world points (n, 3)
    :param pose: camera-to-world pose of the frame
    :param depth: observed depth (m) at the intrinsics' resolution
    :param intrinsics: camera intrinsics
    :param tol: occlusion tolerance (m)
    :param margin: border pixels excluded
    :return: indices of the visible points, their rows and columns
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    u, v, z = intrinsics.project(pose.world_to_camera(points))
    col = np.floor(u + 0.5)
    row = np.floor(v + 0.5)
    ok = ((z > 0) & (col >= margin) & (col < intrinsics.width - margin) &
          (row >= margin) & (row < intrinsics.height - margin))
    idx = np.flatnonzero(ok)
    row = row[idx].astype(np.int64)
    col = col[idx].astype(np.int64)
    d = depth[row, col]
    keep = (d > 0) & (np.abs(d - z[idx]) <= tol)
    return idx[keep], row[keep], col[keep]


def visible(point, frame, intrinsics, tol=default_occlusion_tol, margin=0):
    """Pixel ``(u, v)`` (column, row) where ``point`` is seen in ``frame``,
    or ``None`` when it is behind the camera, outside the image, over an
    invalid depth pixel or occluded."""
    idx, row, col = visible_pixels(np.reshape(point, (1, 3)), frame.pose,
                                   frame.depth_map(), intrinsics, tol, margin)
    if idx.size == 0:
        return None
    return int(col[0]), int(row[0])


def _top1_grid(labels):
    if isinstance(labels, ConsensusMap):
        return np.asarray(labels.top1), labels.space
    if isinstance(labels, LabelMap):
        return labels.data, labels.space
    return np.asarray(labels), None


def lift_votes(points, frames, labels, intrinsics, cfg=LiftConfig()):
    """Per-point vote tally.

    :param points: world points (n, 3)
    :param frames: frames (pose and depth)
    :param labels: per frame consensus map, label map or label grid
    :return: sparse matrix ``points x label id`` of vote counts, label space
        name of the frame labels
    """
    if len(frames) != len(labels):
        raise DimensionMismatchError('{:d} frames but {:d} label maps'.format(
            len(frames), len(labels)))
    if not len(frames):
        raise InvalidInputError('no frames')
    grids = [_top1_grid(lm) for lm in labels]
    spaces = {s for _, s in grids if s is not None}
    if len(spaces) > 1:
        raise SpaceMismatchError('frame labels in several spaces: {:s}'.format(
            ', '.join(sorted(spaces))))
    for g, _ in grids:
        if g.shape != intrinsics.shape:
            raise DimensionMismatchError('label map {:s} does not match the '
                                         'intrinsics'.format(str(g.shape)))
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    chosen = list(range(0, len(frames), cfg.stride))

    def work(k):
        f = frames[k]
        idx, row, col = visible_pixels(points, f.pose, f.depth_map(),
                                       intrinsics, cfg.occlusion_tol,
                                       cfg.boundary_margin)
        lab = grids[k][0][row, col]
        keep = lab != 0
        return idx[keep], lab[keep]

    votes = tally([], [], 1., n)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for a in range(0, len(chosen), _frames_per_batch):
            parts = list(pool.map(work, chosen[a:a + _frames_per_batch]))
            rows = np.concatenate([p[0] for p in parts])
            labs = np.concatenate([p[1] for p in parts])
            batch = tally(rows, labs, 1., n)
            width = max(votes.shape[1], batch.shape[1])
            votes.resize((n, width))
            batch.resize((n, width))
            votes = votes + batch
    return votes.tocsr(), (spaces.pop() if spaces else '')


def lift(points, frames, labels, intrinsics, cfg=LiftConfig()):
    """Labels 3D points by majority vote of the frame labels.

    Only the top-1 label of a consensus map votes, once per frame in which
    the point is visible. Ties go to the smaller id; points with fewer than
    ``cfg.min_frame_votes`` votes stay unlabeled.

    :param points: labeled cloud or mesh geometry (its labels are replaced)
    :param frames: frames (pose and depth)
    :param labels: per frame consensus map (or label map)
    :param intrinsics: intrinsics of the frames
    :type cfg: LiftConfig
    :rtype: semfuse.fusion3d.LabeledCloud
    """
    if isinstance(points, TriangleMesh):
        cloud = LabeledCloud.from_mesh(points)
    elif isinstance(points, LabeledCloud):
        cloud = points
    else:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cloud = LabeledCloud.unlabeled(points,
                                       np.tile((0., 0., 1.), (len(points), 1)))
    votes, space = lift_votes(cloud.points, frames, labels, intrinsics, cfg)
    return _labeled(cloud, votes, space, cfg)


def _labeled(cloud, votes, space, cfg):
    t1, v1, t2, v2 = top2(votes)
    total = np.asarray(votes.sum(axis=1)).ravel()
    weak = total < cfg.min_frame_votes
    for arr in (t1, v1, t2, v2):
        arr[weak] = 0
    return LabeledCloud(cloud.points, cloud.normals, t1, v1.astype(np.int64),
                        t2, v2.astype(np.int64), space)


def lift_stats(votes, cloud):
    """Vote histogram (total votes -> number of points) and unlabeled share."""
    total = np.rint(np.asarray(votes.sum(axis=1)).ravel()).astype(np.int64)
    hist = np.bincount(total) if total.size else np.zeros(0, dtype=np.int64)
    n = len(cloud)
    n_unlabeled = int(np.sum(np.asarray(cloud.label) == 0))
    return dict(n_points=n, n_unlabeled=n_unlabeled,
                unlabeled_percent=100.*n_unlabeled/n if n else 0.,
                votes_histogram={str(k): int(c) for k, c in enumerate(hist)
                                 if c})


# -----------------------------------------------------------------------------
#                               Scene stage
def lift_scene(scene_dir, cfg=LiftConfig(), space=''):
    """Lifts ``consensus/`` onto the points of ``cloud.ply`` and writes
    ``labels.ply`` and ``lift_stats.json``.

    :return: labeled cloud
    """
    scene = load_scene(scene_dir)
    cloud = read_labeled_cloud(os.path.join(scene_dir, 'cloud.ply'), space)
    directory = os.path.join(scene_dir, consensus_dir)
    available = set(frame_indices(directory))
    frames = [f for f in scene.frames if f.index in available]
    if len(frames) < len(scene.frames):
        logger.warning('%s: no consensus for %d frame(s)', scene.id,
                       len(scene.frames) - len(frames))
    if not frames:
        raise InvalidInputError('{:s}: no frame has a consensus'.format(
            scene.id))
    labels = [read_consensus_top1(directory, f.index, space) for f in frames]
    votes, _ = lift_votes(cloud.points, frames, labels, scene.intrinsics, cfg)
    out = _labeled(cloud, votes, space, cfg)
    write_labeled_cloud(os.path.join(scene_dir, 'labels.ply'), out)
    stats = lift_stats(votes, out)
    write_json(os.path.join(scene_dir, 'lift_stats.json'), stats)
    logger.info('%s: lifted %d frames onto %d points, %.1f%% unlabeled',
                scene.id, len(frames), len(out), stats['unlabeled_percent'])
    return out
