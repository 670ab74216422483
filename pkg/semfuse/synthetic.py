"""Synthetic scenes with exact geometry and labels.

Scenes are unions of axis-aligned boxes (seen from outside, or from inside
for a room) and spheres; every box face carries a label. Views are ray cast
analytically, which gives noise-free depth and label maps. Simulated
"models" decode the labels from the flat-shaded color frames and corrupt
them with independent pixel noise plus a systematic class swap.

Command line (used by the bundled pipeline configuration)::

    python -m semfuse.synthetic scene <scene_dir> [--seed S] [--frames N]
    python -m semfuse.synthetic predict --input DIR --output DIR --model M
    python -m semfuse.synthetic geometry --scene DIR --kind normals|hha \\
        --output DIR
    python -m semfuse.synthetic groundtruth --scene DIR
"""
from dataclasses import dataclass, asdict
import argparse
import logging
import os
import sys
import zlib
import numpy as np
from scipy.spatial.transform import Rotation
from .aux import InvalidInputError, setup_logging, depth_scale
from .fileio import (frame_name, frame_indices, read_color, write_color,
                     write_depth_png, write_label_png, write_pose_txt,
                     write_intrinsics_txt, write_json, read_json, write_csv,
                     read_depth_png, read_pose_txt, read_intrinsics_txt)
from .fusion3d import read_labeled_cloud, write_labeled_cloud, LabeledCloud
from .geometry import Intrinsics, Pose
from .ingest import Frame, interpolate_pose
from .labelspace import make_label_space
from .render import default_colormap, colorize
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)
_eps = 1.e-12

room_classes = ('floor', 'ceiling', 'wall', 'table', 'chair', 'cabinet',
                'bed', 'sofa')
# half size x, half size y, height
_furniture = {'table': (0.35, 0.25, 0.75), 'chair': (0.22, 0.22, 0.9),
              'cabinet': (0.3, 0.2, 1.2), 'bed': (0.35, 0.3, 0.5),
              'sofa': (0.35, 0.25, 0.8)}
# systematic class swap (source id -> predicted id) of each simulated model
demo_models = {'gsam': (1, 3), 'mask3d': (4, 5), 'ovseg': (3, 1),
               'internimage': (6, 7), 'cmx': (8, 4)}
default_noise = 0.3
color_fps = 30.
depth_fps = 60.
pose_fps = 10.


# -----------------------------------------------------------------------------
#                               Primitives
@dataclass(frozen=True)
class Box:
    """Axis-aligned box. ``labels`` holds the labels of the faces
    x-min, x-max, y-min, y-max, z-min, z-max. With ``inside=True`` the box is
    seen from inside (a room)."""
    lo: tuple
    hi: tuple
    labels: tuple
    inside: bool = False

    def __post_init__(self):
        if len(self.labels) != 6:
            raise InvalidInputError('a box needs 6 face labels')
        if not np.all(np.asarray(self.hi) > np.asarray(self.lo)):
            raise InvalidInputError('box corners out of order')


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    label: int = 1


def _hit_box(box, origin, dirs):
    lo = np.asarray(box.lo, dtype=np.float64)
    hi = np.asarray(box.hi, dtype=np.float64)
    d = np.where(np.abs(dirs) < _eps, _eps, dirs)
    t1 = (lo - origin)/d
    t2 = (hi - origin)/d
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    t_near = near.max(axis=1)
    t_far = far.min(axis=1)
    rows = np.arange(len(d))
    if box.inside:
        axis = far.argmin(axis=1)
        side = (d[rows, axis] > 0).astype(int)
        t = np.where((t_near <= t_far) & (t_far > 0), t_far, np.inf)
    else:
        axis = near.argmax(axis=1)
        side = (d[rows, axis] < 0).astype(int)
        t = np.where((t_near <= t_far) & (t_near > 0), t_near, np.inf)
    return t, np.asarray(box.labels)[2*axis + side]


def _hit_sphere(sphere, origin, dirs):
    oc = origin - np.asarray(sphere.center, dtype=np.float64)
    a = np.einsum('ij,ij->i', dirs, dirs)
    b = 2.*dirs @ oc
    c = oc @ oc - sphere.radius**2
    disc = b*b - 4.*a*c
    root = np.sqrt(np.maximum(disc, 0.))
    t0 = (-b - root)/(2.*a)
    t1 = (-b + root)/(2.*a)
    t = np.where(t0 > 0, t0, t1)
    t = np.where((disc >= 0) & (t > 0), t, np.inf)
    return t, np.full(len(dirs), sphere.label)


def _hit(prim, origin, dirs):
    if isinstance(prim, Box):
        return _hit_box(prim, origin, dirs)
    return _hit_sphere(prim, origin, dirs)


def render_view(primitives, pose, intrinsics):
    """Ray cast of one view.

    :return: depth (m, 0 where nothing is hit) and label grid (uint16)
    """
    rays = intrinsics.pixel_rays().reshape(-1, 3)
    dirs = pose.rot.apply(rays)
    best = np.full(len(dirs), np.inf)
    labels = np.zeros(len(dirs), dtype=np.uint16)
    for prim in primitives:
        t, lab = _hit(prim, pose.translation, dirs)
        closer = t < best
        best[closer] = t[closer]
        labels[closer] = lab[closer]
    # rays have unit camera z, so the ray parameter is the depth
    depth = np.where(np.isfinite(best), best, 0.)
    return depth.reshape(intrinsics.shape), labels.reshape(intrinsics.shape)


def _box_face_distance(box, points):
    lo = np.asarray(box.lo, dtype=np.float64)
    hi = np.asarray(box.hi, dtype=np.float64)
    dist = np.empty((len(points), 6))
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        q = points[:, others]
        outside = np.maximum(np.maximum(lo[others] - q, q - hi[others]), 0.)
        lateral = np.sum(outside**2, axis=1)
        for side, plane in enumerate((lo[axis], hi[axis])):
            dist[:, 2*axis + side] = np.sqrt(
                (points[:, axis] - plane)**2 + lateral)
    return dist


def surface_labels(primitives, points):
    """Label of the surface closest to every point."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    best = np.full(len(points), np.inf)
    labels = np.zeros(len(points), dtype=np.int64)
    for prim in primitives:
        if isinstance(prim, Box):
            dist = _box_face_distance(prim, points)
            face = dist.argmin(axis=1)
            d = dist[np.arange(len(points)), face]
            lab = np.asarray(prim.labels)[face]
        else:
            d = np.abs(np.linalg.norm(points - prim.center, axis=1) -
                       prim.radius)
            lab = np.full(len(points), prim.label)
        closer = d < best
        best[closer] = d[closer]
        labels[closer] = lab[closer]
    return labels


def labeled_cube(size=1., center=(0., 0., 0.)):
    """Cube whose 6 faces carry the labels 1 to 6."""
    c = np.asarray(center, dtype=np.float64)
    h = 0.5*size
    return Box(tuple(c - h), tuple(c + h), (1, 2, 3, 4, 5, 6))


def face_samples(box, n=5, margin=0.15):
    """Grid of ``n x n`` points on every face of a box, kept ``margin``
    away from the edges, and their face labels."""
    lo = np.asarray(box.lo, dtype=np.float64)
    hi = np.asarray(box.hi, dtype=np.float64)
    pts, labels = [], []
    for axis in range(3):
        a, b = [x for x in range(3) if x != axis]
        ga = np.linspace(lo[a] + margin, hi[a] - margin, n)
        gb = np.linspace(lo[b] + margin, hi[b] - margin, n)
        ua, ub = np.meshgrid(ga, gb, indexing='ij')
        for side, plane in enumerate((lo[axis], hi[axis])):
            p = np.empty((n*n, 3))
            p[:, axis] = plane
            p[:, a] = ua.ravel()
            p[:, b] = ub.ravel()
            pts.append(p)
            labels.append(np.full(n*n, box.labels[2*axis + side]))
    return np.vstack(pts), np.concatenate(labels)


# -----------------------------------------------------------------------------
#                               Trajectories
def orbit_poses(center, radius, n, elevation=0.35, roll=0., t0=0.,
                dt=1./color_fps):
    """``n`` cameras on a circle around ``center`` looking at it, with
    elevations alternating between ``elevation`` and ``-elevation``."""
    center = np.asarray(center, dtype=np.float64)
    poses = []
    for k in range(n):
        az = 2.*np.pi*k/n
        el = elevation if k % 2 == 0 else -elevation
        eye = center + radius*np.array((np.cos(az)*np.cos(el),
                                        np.sin(az)*np.cos(el), np.sin(el)))
        p = Pose.look_at(eye, center, timestamp=t0 + k*dt)
        if roll:
            p = Pose.from_rotation(p.rot*Rotation.from_rotvec((0., 0., roll)),
                                   p.translation, p.timestamp)
        poses.append(p)
    return poses


def room_keyframes(duration, pitch=-0.35, height=1.4, radius=0.2,
                   rolled=True):
    """Pose stream (``pose_fps``) of a camera turning once around the room
    center. With ``rolled`` the second half of the turn is taken in portrait
    orientation."""
    n_keys = int(np.ceil(duration*pose_fps - 1.e-9)) + 1
    t_last = (n_keys - 1)/pose_fps
    poses = []
    for k in range(n_keys):
        t = k/pose_fps
        yaw = 2.*np.pi*t/t_last if t_last > 0 else 0.
        eye = np.array((radius*np.cos(yaw), radius*np.sin(yaw), height))
        look = np.array((np.cos(yaw)*np.cos(pitch), np.sin(yaw)*np.cos(pitch),
                         np.sin(pitch)))
        p = Pose.look_at(eye, eye + look, timestamp=t)
        if rolled and 2*k >= n_keys:
            p = Pose.from_rotation(
                p.rot*Rotation.from_rotvec((0., 0., 0.5*np.pi)), eye, t)
        poses.append(p)
    return poses


# -----------------------------------------------------------------------------
#                               Scenes
def room_scene(seed=0):
    """Box room (5 x 4 x 2.5 m) with five pieces of furniture placed at
    random around its center.

    :return: primitives and label space
    """
    rng = np.random.default_rng(seed)
    space = make_label_space('synthetic', room_classes)
    floor, ceiling, wall = (space.id_of(c) for c in ('floor', 'ceiling',
                                                     'wall'))
    prims = [Box((-2.5, -2., 0.), (2.5, 2., 2.5),
                 (wall, wall, wall, wall, floor, ceiling), inside=True)]
    for k, name in enumerate(sorted(_furniture)):
        hx, hy, h = _furniture[name]
        az = 2.*np.pi*k/len(_furniture) + rng.uniform(-0.2, 0.2)
        r = rng.uniform(1.2, 1.5)
        c = np.array((r*np.cos(az), r*np.sin(az)))
        prims.append(Box((c[0] - hx, c[1] - hy, 0.), (c[0] + hx, c[1] + hy, h),
                         (space.id_of(name),)*6))
    return prims, space


def room_intrinsics(width=128, height=96, focal=70.):
    return Intrinsics(focal*width/128., focal*width/128., 0.5*(width - 1),
                      0.5*(height - 1), width, height)


def make_frames(primitives, poses, intrinsics):
    """In-memory frames rendered at the given poses, with their
    ground-truth label maps."""
    frames, labels = [], []
    for k, p in enumerate(poses):
        depth, lab = render_view(primitives, p, intrinsics)
        frames.append(Frame(k, p.timestamp, '', p, depth=depth))
        labels.append(lab)
    return frames, labels


# -----------------------------------------------------------------------------
#                               Simulated models
def _rng(seed, model, index):
    return np.random.default_rng([int(seed), zlib.crc32(model.encode()),
                                  int(index)])


def simulate_prediction(labels, n_classes, rng, noise=default_noise,
                        swap=None):
    """Corrupted copy of a label grid.

    :param labels: ground-truth label grid
    :param n_classes: random labels are drawn from ``1..n_classes``
    :param rng: random generator
    :param noise: fraction of pixels replaced by a random label
    :param swap: ``(source, target)`` ids; every ``source`` pixel is
        predicted as ``target``
    """
    out = np.array(labels, dtype=np.uint16)
    if swap is not None:
        out[np.asarray(labels) == swap[0]] = swap[1]
    hit = rng.random(out.shape) < noise
    out[hit] = rng.integers(1, n_classes + 1, size=int(hit.sum()))
    return out


def _color_codes(colors):
    return {(r << 16) | (g << 8) | b: cid for cid, (r, g, b) in colors.items()}


def decode_labels(rgb, colors):
    """Label grid of a flat-shaded color frame (unknown colors give 0)."""
    rgb = np.asarray(rgb, dtype=np.int64)
    code = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    out = np.zeros(code.shape, dtype=np.uint16)
    for c, cid in _color_codes(colors).items():
        out[code == c] = cid
    return out


def predict_directory(input_dir, output_dir, model, seed=0,
                      noise=default_noise, swap=None,
                      n_classes=len(room_classes)):
    """Simulated model run over a directory of color frames.

    :return: number of frames
    """
    colors = default_colormap(n_classes)
    indices = frame_indices(input_dir)
    for index in indices:
        gt = decode_labels(read_color(os.path.join(input_dir,
                                                   frame_name(index))), colors)
        pred = simulate_prediction(gt, n_classes, _rng(seed, model, index),
                                   noise, swap)
        write_label_png(os.path.join(output_dir, frame_name(index)), pred)
    return len(indices)


# -----------------------------------------------------------------------------
#                       Geometry channels (normals, HHA)
def depth_normals(depth, intrinsics):
    """Camera-frame unit normals (facing the camera) from a depth grid; zero
    where the depth is invalid."""
    pts = intrinsics.pixel_rays()*depth[..., None]
    n = -np.cross(np.gradient(pts, axis=1), np.gradient(pts, axis=0))
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > _eps)
    n[depth <= 0] = 0.
    return n


def geometry_image(depth, pose, intrinsics, kind='normals'):
    """8-bit normals image, or HHA-like image (disparity, height, angle
    with the vertical)."""
    n = depth_normals(depth, intrinsics)
    valid = depth > 0
    img = np.zeros(depth.shape + (3,), dtype=np.uint8)
    if kind == 'normals':
        img[valid] = np.rint((n[valid] + 1.)*127.5).astype(np.uint8)
        return img
    if kind != 'hha':
        raise InvalidInputError('unknown geometry kind {!r}'.format(kind))
    pts = pose.camera_to_world((intrinsics.pixel_rays() *
                                depth[..., None]).reshape(-1, 3))
    height = pts[:, 2].reshape(depth.shape)
    up = pose.rot.apply(n.reshape(-1, 3))[:, 2].reshape(depth.shape)
    disparity = np.divide(1., depth, out=np.zeros_like(depth), where=valid)
    floor = height[valid].min() if valid.any() else 0.
    channels = (np.clip(disparity*100., 0, 255),
                np.clip((height - floor)*100., 0, 255),
                np.degrees(np.arccos(np.clip(up, -1., 1.)))*255./180.)
    for c, values in enumerate(channels):
        img[..., c][valid] = np.rint(values[valid]).astype(np.uint8)
    return img


def write_geometry(scene_dir, output_dir, kind='normals'):
    """Geometry images of every synchronized frame of a scene."""
    synced = os.path.join(scene_dir, 'synced')
    k = Intrinsics(*read_intrinsics_txt(os.path.join(synced,
                                                     'intrinsics.txt')))
    indices = frame_indices(os.path.join(synced, 'depth'))
    for index in indices:
        depth = read_depth_png(os.path.join(synced, 'depth',
                                            frame_name(index)))
        pose = Pose.from_matrix(read_pose_txt(os.path.join(
            synced, 'pose', frame_name(index, '.txt'))))
        write_color(os.path.join(output_dir, frame_name(index)),
                    geometry_image(depth, pose, k, kind))
    return len(indices)


# -----------------------------------------------------------------------------
#                               Scene directories
def _primitives_doc(primitives):
    doc = []
    for p in primitives:
        d = asdict(p)
        d['type'] = 'box' if isinstance(p, Box) else 'sphere'
        doc.append(d)
    return doc


def load_primitives(scene_dir):
    prims = []
    for d in read_json(os.path.join(scene_dir, 'synthetic.json'))[
            'primitives']:
        d = dict(d)
        kind = d.pop('type')
        if kind == 'box':
            prims.append(Box(tuple(d['lo']), tuple(d['hi']),
                             tuple(d['labels']), d['inside']))
        else:
            prims.append(Sphere(tuple(d['center']), d['radius'], d['label']))
    return prims


def write_raw_recording(scene_dir, primitives, n_frames=24, intrinsics=None,
                        depth_size=None, colors=None, rolled=True):
    """Writes a raw multi-rate recording: color at 30 FPS, depth at 60 FPS
    (half resolution), poses at 10 FPS.

    :return: color frame timestamps
    """
    k = intrinsics or room_intrinsics()
    dw, dh = depth_size or (k.width//2, k.height//2)
    kd = k.scaled(dw, dh)
    duration = (n_frames - 1)/color_fps
    keys = room_keyframes(duration, rolled=rolled)
    t_color = [j/color_fps for j in range(n_frames)]
    n_depth = int(np.floor(keys[-1].timestamp*depth_fps + 1.e-9)) + 1
    t_depth = [j/depth_fps for j in range(n_depth)]
    colors = colors or default_colormap(max(
        max(p.labels) if isinstance(p, Box) else p.label for p in primitives))
    for j, t in enumerate(t_color):
        _, lab = render_view(primitives, interpolate_pose(keys, t), k)
        write_color(os.path.join(scene_dir, 'color', frame_name(j)),
                    colorize(lab, colors))
    for j, t in enumerate(t_depth):
        depth, _ = render_view(primitives, interpolate_pose(
            keys, min(t, keys[-1].timestamp)), kd)
        write_depth_png(os.path.join(scene_dir, 'depth', frame_name(j)),
                        depth)
    for j, p in enumerate(keys):
        write_pose_txt(os.path.join(scene_dir, 'pose', frame_name(j, '.txt')),
                       p.matrix())
    write_intrinsics_txt(os.path.join(scene_dir, 'intrinsics.txt'),
                         k.fx, k.fy, k.cx, k.cy, k.width, k.height)
    write_intrinsics_txt(os.path.join(scene_dir, 'depth_intrinsics.txt'),
                         kd.fx, kd.fy, kd.cx, kd.cy, kd.width, kd.height)
    write_json(os.path.join(scene_dir, 'timestamps.json'),
               dict(color=t_color, depth=t_depth,
                    pose=[p.timestamp for p in keys]))
    return t_color


def demo_pipeline(seed=0, noise=default_noise):
    """Pipeline configuration running the simulated models."""
    predict = ('{python} -m semfuse.synthetic predict --input {input_dir} '
               '--output {output_dir} --model %s --seed %d --noise %g '
               '--swap %d:%d')
    tasks = dict()
    for model, (a, b) in demo_models.items():
        tasks[model] = dict(command=predict % (model, seed, noise, a, b),
                            gravity_align=True,
                            mirror_tta=model in ('gsam', 'ovseg'))
    for kind, task in (('normals', 'omnidata'), ('hha', 'hha')):
        tasks[task] = dict(command='{python} -m semfuse.synthetic geometry '
                                   '--scene {scene_dir} --kind %s '
                                   '--output {output_dir}' % kind)
    return dict(label_space='labels.csv', colormap='colors.csv',
                max_parallel=2, vote=dict(min_votes=2.),
                fusion=dict(voxel_size=0.05, truncation=0.15,
                            downsample=0.1),
                lift=dict(occlusion_tol=0.1), tasks=tasks)


def write_demo_scene(scene_dir, seed=0, n_frames=24, noise=default_noise):
    """Raw recording of a furnished room plus its label space, colormap and
    ``pipeline.json``.

    :return: primitives of the scene
    """
    prims, space = room_scene(seed)
    colors = default_colormap(space.max_id)
    write_raw_recording(scene_dir, prims, n_frames, colors=colors)
    write_csv(os.path.join(scene_dir, 'labels.csv'), ('id', 'name', 'synkey'),
              [(c, n, '' if c == 0 else n + '.n.01')
               for c, n, _ in space.classes])
    write_csv(os.path.join(scene_dir, 'colors.csv'), ('id', 'r', 'g', 'b'),
              [(c,) + rgb for c, rgb in sorted(colors.items())])
    write_json(os.path.join(scene_dir, 'synthetic.json'),
               dict(seed=seed, primitives=_primitives_doc(prims)))
    write_json(os.path.join(scene_dir, 'pipeline.json'),
               demo_pipeline(seed, noise))
    logger.info('synthetic scene written to %s', scene_dir)
    return prims


def write_ground_truth(scene_dir):
    """Writes ``labels_gt.ply``: the points of ``labels.ply`` (or
    ``cloud.ply``) labeled with their closest surface."""
    src = os.path.join(scene_dir, 'labels.ply')
    if not os.path.exists(src):
        src = os.path.join(scene_dir, 'cloud.ply')
    cloud = read_labeled_cloud(src)
    labels = surface_labels(load_primitives(scene_dir), cloud.points)
    zeros = np.zeros(len(cloud), dtype=np.int64)
    counts = (labels != 0).astype(np.int64)
    write_labeled_cloud(os.path.join(scene_dir, 'labels_gt.ply'),
                        LabeledCloud(cloud.points, cloud.normals, labels,
                                     counts, zeros, zeros))
    return len(cloud)


# -----------------------------------------------------------------------------
#                               Command line
def _swap(text):
    try:
        a, b = text.split(':')
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError('expected SOURCE:TARGET')


def main(argv=None):
    parser = argparse.ArgumentParser(prog='python -m semfuse.synthetic',
                                     description='Synthetic scenes and '
                                                 'simulated models.')
    sub = parser.add_subparsers(dest='command', required=True)
    p = sub.add_parser('scene', help='write a synthetic raw scene')
    p.add_argument('scene_dir')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--frames', type=int, default=24)
    p.add_argument('--noise', type=float, default=default_noise)
    p = sub.add_parser('predict', help='simulated model')
    p.add_argument('--input', required=True)
    p.add_argument('--output', required=True)
    p.add_argument('--model', required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--noise', type=float, default=default_noise)
    p.add_argument('--swap', type=_swap, default=None)
    p.add_argument('--classes', type=int, default=len(room_classes))
    p = sub.add_parser('geometry', help='normals or HHA images')
    p.add_argument('--scene', required=True)
    p.add_argument('--kind', choices=('normals', 'hha'), default='normals')
    p.add_argument('--output', required=True)
    p = sub.add_parser('groundtruth', help='write labels_gt.ply')
    p.add_argument('--scene', required=True)
    args = parser.parse_args(argv)
    setup_logging()

    if args.command == 'scene':
        write_demo_scene(args.scene_dir, args.seed, args.frames, args.noise)
    elif args.command == 'predict':
        n = predict_directory(args.input, args.output, args.model, args.seed,
                              args.noise, args.swap, args.classes)
        logger.info('%s: %d frames predicted', args.model, n)
    elif args.command == 'geometry':
        write_geometry(args.scene, args.output, args.kind)
    else:
        write_ground_truth(args.scene)
    return 0


if __name__ == '__main__':
    sys.exit(main())
