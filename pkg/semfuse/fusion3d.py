"""TSDF fusion of synchronized depth frames, marching-cubes mesh extraction
and voxel downsampling of (labeled) point clouds.

Voxel ``(i, j, k)`` of a volume has its center at
``origin + voxel_size*(i, j, k)``.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import itertools
import logging
import numpy as np
from scipy.ndimage import map_coordinates
from skimage import measure
from .aux import (default_voxel, default_trunc, default_max_depth,
                  default_weight_cap, default_downsample, InvalidInputError,
                  DimensionMismatchError)
from .fileio import write_ply, read_ply
from .votes import tally, top2
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)
_slab = 16  # voxel planes per integration work unit
_block = 16  # voxels per block side in the block-sparse layout
_unit_tol = 1.e-9


# -----------------------------------------------------------------------------
#                               Types
@dataclass(frozen=True)
class FusionConfig:
    voxel_size: float = default_voxel
    truncation: float = default_trunc
    max_depth: float = default_max_depth
    weight_cap: int = default_weight_cap
    downsample: float = default_downsample
    padding: float = 0.05
    max_voxels: int = 400_000_000
    workers: int = None

    def __post_init__(self):
        if self.voxel_size <= 0 or self.downsample <= 0:
            raise InvalidInputError('voxel sizes must be positive')
        if self.truncation < self.voxel_size:
            raise InvalidInputError('truncation must be >= voxel size')
        if self.max_depth <= 0 or not 1 <= self.weight_cap <= 255:
            raise InvalidInputError('invalid max depth or weight cap')


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    normals: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if n.shape != v.shape:
            raise DimensionMismatchError('one normal per vertex expected')
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise InvalidInputError('face index out of range')
        object.__setattr__(self, 'vertices', v)
        object.__setattr__(self, 'normals', n)
        object.__setattr__(self, 'faces', f)

    def __len__(self):
        return len(self.vertices)


@dataclass(frozen=True, eq=False)
class LabeledCloud:
    """Points with normals and top-2 labels with their vote counts."""
    points: np.ndarray
    normals: np.ndarray
    label: np.ndarray
    label_count: np.ndarray
    label2: np.ndarray
    label2_count: np.ndarray
    space: str = ''

    def __post_init__(self):
        n = len(self.points)
        for name in ('normals', 'label', 'label_count', 'label2',
                     'label2_count'):
            if len(getattr(self, name)) != n:
                raise DimensionMismatchError(
                    '{:s}: expected {:d} entries'.format(name, n))
        if np.any(np.asarray(self.label_count) <
                  np.asarray(self.label2_count)):
            raise InvalidInputError('top1 count below top2 count')

    def __len__(self):
        return len(self.points)

    @classmethod
    def unlabeled(cls, points, normals, space=''):
        n = len(points)
        zeros = np.zeros(n, dtype=np.int64)
        return cls(np.asarray(points, dtype=np.float64).reshape(-1, 3),
                   np.asarray(normals, dtype=np.float64).reshape(-1, 3),
                   zeros, zeros.copy(), zeros.copy(), zeros.copy(), space)

    @classmethod
    def from_mesh(cls, mesh, space=''):
        return cls.unlabeled(mesh.vertices, mesh.normals, space)


# -----------------------------------------------------------------------------
#                               TSDF volume
def _empty_block():
    return (np.ones((_block,)*3, dtype=np.float32),
            np.zeros((_block,)*3, dtype=np.uint8))


class TsdfVolume:
    """Truncated signed distance volume.

    The grid is stored densely, or in blocks of ``16^3`` voxels allocated
    when a frame first observes one of their voxels (``sparse=True``). Each
    voxel holds a truncated signed distance in [-1, 1] (units of the
    truncation distance) and an integer weight; weight 0 means never
    observed.
    """

    def __init__(self, origin, dims, voxel_size=default_voxel,
                 truncation=default_trunc, max_depth=default_max_depth,
                 weight_cap=default_weight_cap, sparse=False, workers=None):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise InvalidInputError('dims must be 3 positive integers')
        if voxel_size <= 0 or truncation < voxel_size:
            raise InvalidInputError('truncation must be >= voxel size > 0')
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.dims = dims
        self.voxel_size = float(voxel_size)
        self.truncation = float(truncation)
        self.max_depth = float(max_depth)
        self.weight_cap = int(weight_cap)
        self.sparse = bool(sparse)
        self.workers = workers
        if self.sparse:
            self._blocks = dict()
        else:
            self._tsdf = np.ones(dims, dtype=np.float32)
            self._weight = np.zeros(dims, dtype=np.uint8)

    @classmethod
    def from_bounds(cls, bounds, cfg=FusionConfig()):
        """Volume covering ``bounds`` (2 x 3: min and max corner). The
        block-sparse layout is used when the dense grid would exceed
        ``cfg.max_voxels``."""
        bounds = np.asarray(bounds, dtype=np.float64)
        dims = np.ceil((bounds[1] - bounds[0])/cfg.voxel_size).astype(int) + 1
        n_voxels = int(np.prod(dims))
        sparse = n_voxels > cfg.max_voxels
        logger.info('TSDF volume %s (%d voxels, %s)', tuple(dims), n_voxels,
                    'block-sparse' if sparse else 'dense')
        return cls(bounds[0], dims, cfg.voxel_size, cfg.truncation,
                   cfg.max_depth, cfg.weight_cap, sparse, cfg.workers)

    @property
    def bounds(self):
        return np.vstack((self.origin, self.origin +
                          self.voxel_size*(np.array(self.dims) - 1)))

    # --------------------------- storage access ---------------------------
    def grids(self):
        """Dense tsdf and weight grids (assembled for the sparse layout)."""
        if not self.sparse:
            return self._tsdf, self._weight
        tsdf = np.ones(self.dims, dtype=np.float32)
        weight = np.zeros(self.dims, dtype=np.uint8)
        for key, (t, w) in self._blocks.items():
            sl = self._block_slices(key)
            shape = tuple(s.stop - s.start for s in sl)
            tsdf[sl] = t[:shape[0], :shape[1], :shape[2]]
            weight[sl] = w[:shape[0], :shape[1], :shape[2]]
        return tsdf, weight

    @property
    def n_blocks(self):
        return len(self._blocks) if self.sparse else 0

    def _block_slices(self, key, clip=True):
        if clip:
            return tuple(slice(k*_block, min((k + 1)*_block, d))
                         for k, d in zip(key, self.dims))
        return tuple(slice(k*_block, (k + 1)*_block) for k in key)

    def _voxel_centers(self, index_slices):
        ranges = [np.arange(s.start, s.stop) for s in index_slices]
        ii, jj, kk = np.meshgrid(*ranges, indexing='ij')
        idx = np.stack((ii, jj, kk), axis=-1).reshape(-1, 3)
        return self.origin + self.voxel_size*idx

    # ----------------------------- integration ----------------------------
    def integrate(self, depth, pose, intrinsics):
        """Fuses one depth frame (see :py:func:`integrate_frame`)."""
        depth = np.asarray(depth, dtype=np.float64)
        if depth.shape != intrinsics.shape:
            raise DimensionMismatchError(
                'depth {:s} does not match intrinsics {:s}'.format(
                    str(depth.shape), str(intrinsics.shape)))
        valid = (depth > 0) & (depth <= self.max_depth)
        if not valid.any():
            return self
        depth = np.where(valid, depth, 0.)
        if self.sparse:
            units = []
            for key in self._frustum_blocks(depth, pose, intrinsics):
                block = self._blocks.get(key)
                if block is None:
                    block = _empty_block()
                units.append((block, self._block_slices(key, clip=False),
                              key))
        else:
            units = []
            for a in range(0, self.dims[0], _slab):
                sl = (slice(a, min(a + _slab, self.dims[0])),
                      slice(0, self.dims[1]), slice(0, self.dims[2]))
                units.append(((self._tsdf[sl], self._weight[sl]), sl, None))

        def work(unit):
            (tsdf, weight), sl, _ = unit
            return self._update(tsdf, weight, self._voxel_centers(sl), depth,
                                pose, intrinsics)

        # every unit owns a disjoint, contiguous part of the grid
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            observed = list(pool.map(work, units))
        if self.sparse:
            for (block, _, key), seen in zip(units, observed):
                if seen and key not in self._blocks:
                    self._blocks[key] = block
        return self

    def _frustum_blocks(self, depth, pose, intrinsics):
        """Keys of the blocks meeting the bounding box of the view frustum,
        cut at the largest depth plus the truncation distance."""
        z = depth.max() + self.truncation
        cam = np.zeros((5, 3))
        k = 1
        for u in (-0.5, intrinsics.width - 0.5):
            for v in (-0.5, intrinsics.height - 0.5):
                cam[k] = ((u - intrinsics.cx)/intrinsics.fx*z,
                          (v - intrinsics.cy)/intrinsics.fy*z, z)
                k += 1
        pts = pose.camera_to_world(cam)
        lo = np.floor((pts.min(axis=0) - self.origin)/self.voxel_size) - 1
        hi = np.ceil((pts.max(axis=0) - self.origin)/self.voxel_size) + 1
        n_blocks = np.ceil(np.array(self.dims)/_block).astype(np.int64)
        lo = np.clip(lo.astype(np.int64)//_block, 0, n_blocks - 1)
        hi = np.clip(hi.astype(np.int64)//_block, 0, n_blocks - 1)
        return list(itertools.product(*(range(int(a), int(b) + 1)
                                        for a, b in zip(lo, hi))))

    def _update(self, tsdf, weight, centers, depth, pose, intrinsics):
        """Updates the voxels of one work unit; returns whether any voxel
        was observed."""
        pts = pose.world_to_camera(centers)
        u, v, z = intrinsics.project(pts)
        col = np.floor(u + 0.5)
        row = np.floor(v + 0.5)
        ok = ((z > 0) & (col >= 0) & (col < intrinsics.width) &
              (row >= 0) & (row < intrinsics.height))
        flat = np.flatnonzero(ok)
        d = depth[row[flat].astype(np.int64), col[flat].astype(np.int64)]
        sdf = d - z[flat]
        use = (d > 0) & (sdf >= -self.truncation)
        flat = flat[use]
        sample = np.clip(sdf[use]/self.truncation, -1., 1.).astype(np.float32)
        t = tsdf.reshape(-1)
        w = weight.reshape(-1)
        w_old = w[flat].astype(np.float32)
        t[flat] = (t[flat]*w_old + sample)/(w_old + np.float32(1.))
        w[flat] = np.minimum(w_old + 1, self.weight_cap).astype(np.uint8)
        return flat.size > 0

    # ----------------------------- extraction -----------------------------
    def extract_mesh(self):
        """Marching cubes mesh (see :py:func:`extract_mesh`)."""
        if not self.sparse:
            v, f = _marching_cubes(self._tsdf, self._weight)
            return self._mesh(v, _gradient_normals(self._tsdf, v, f), f)
        verts, normals, faces = [], [], []
        n = 0
        for key in sorted(self._blocks):
            start = np.array(key)*_block
            # one voxel of margin for the cubes and the normals
            lo = np.maximum(start - 1, 0)
            hi = np.minimum(start + _block + 2, self.dims)
            sl = tuple(slice(a, b) for a, b in zip(lo, hi))
            tsdf, weight = self._gather(sl)
            region = tuple(slice(a - b, min(a + _block, d - 1) - b)
                           for a, b, d in zip(start, lo, self.dims))
            v, f = _marching_cubes(tsdf, weight, region)
            if len(v):
                normals.append(_gradient_normals(tsdf, v, f))
                verts.append(v + lo)
                faces.append(f + n)
                n += len(v)
        if not verts:
            return self._mesh(np.zeros((0, 3)), np.zeros((0, 3)),
                              np.zeros((0, 3), dtype=np.int64))
        v, nr, f = _merge_vertices(np.vstack(verts), np.vstack(normals),
                                   np.vstack(faces))
        return self._mesh(v, nr, f)

    def _mesh(self, verts, normals, faces):
        return TriangleMesh(self.origin + self.voxel_size*verts, normals,
                            faces)

    def _gather(self, sl):
        shape = tuple(s.stop - s.start for s in sl)
        tsdf = np.ones(shape, dtype=np.float32)
        weight = np.zeros(shape, dtype=np.uint8)
        lo = [s.start//_block for s in sl]
        hi = [(s.stop - 1)//_block for s in sl]
        for i in range(lo[0], hi[0] + 1):
            for j in range(lo[1], hi[1] + 1):
                for k in range(lo[2], hi[2] + 1):
                    block = self._blocks.get((i, j, k))
                    if block is None:
                        continue
                    src = []
                    dst = []
                    for b, s in zip((i, j, k), sl):
                        a0 = max(s.start, b*_block)
                        a1 = min(s.stop, (b + 1)*_block)
                        src.append(slice(a0 - b*_block, a1 - b*_block))
                        dst.append(slice(a0 - s.start, a1 - s.start))
                    tsdf[tuple(dst)] = block[0][tuple(src)]
                    weight[tuple(dst)] = block[1][tuple(src)]
        return tsdf, weight

    def sample(self, points):
        """Trilinear tsdf values at world points (1 outside the grid)."""
        tsdf, _ = self.grids()
        coords = ((np.asarray(points) - self.origin)/self.voxel_size).T
        return map_coordinates(tsdf, coords, order=1, mode='constant',
                               cval=1.)


def _marching_cubes(tsdf, weight, region=None):
    """Marching cubes on cubes whose 8 corners are observed. Returns
    vertices in voxel index coordinates and faces.

    :param region: slices restricting the lower corners of the cubes
    """
    empty = np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    if min(tsdf.shape) < 2:
        return empty
    obs = weight > 0
    cube = np.zeros(obs.shape, dtype=bool)
    c = obs[:-1, :-1, :-1].copy()
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                c &= obs[di:obs.shape[0] - 1 + di, dj:obs.shape[1] - 1 + dj,
                         dk:obs.shape[2] - 1 + dk]
    cube[:-1, :-1, :-1] = c
    if region is not None:
        keep = np.zeros_like(cube)
        keep[region] = True
        cube &= keep
    if not cube.any():
        return empty
    values = tsdf[obs]
    if values.min() > 0 or values.max() < 0:
        return empty
    try:
        verts, faces, _, _ = measure.marching_cubes(
            tsdf, level=0., mask=cube, allow_degenerate=False)
    except (ValueError, RuntimeError):
        return empty
    return verts.astype(np.float64), faces.astype(np.int64)


def _merge_vertices(verts, normals, faces):
    key = np.round(verts*1.e6).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True,
                                  return_inverse=True)
    return verts[first], normals[first], inverse.reshape(-1)[faces]


def _gradient_normals(tsdf, verts, faces):
    """Unit normals from central differences of the trilinear tsdf field at
    the vertices (index coordinates)."""
    if len(verts) == 0:
        return np.zeros((0, 3))
    grad = np.empty_like(verts)
    for a in range(3):
        e = np.zeros(3)
        e[a] = 1.
        fwd = map_coordinates(tsdf, (verts + e).T, order=1, mode='nearest')
        bwd = map_coordinates(tsdf, (verts - e).T, order=1, mode='nearest')
        grad[:, a] = 0.5*(fwd - bwd)
    return _unit_or_face_normals(grad, verts, faces)


def _unit_or_face_normals(vectors, verts, faces):
    norm = np.linalg.norm(vectors, axis=1)
    bad = norm < _unit_tol
    if bad.any():
        tri = verts[faces]
        fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        acc = np.zeros_like(verts)
        for a in range(3):
            np.add.at(acc, faces[:, a], fn)
        vectors = np.where(bad[:, None], acc, vectors)
        norm = np.linalg.norm(vectors, axis=1)
        still = norm < _unit_tol
        vectors[still] = (0., 0., 1.)
        norm[still] = 1.
    return vectors/norm[:, None]


# -----------------------------------------------------------------------------
#                           Module-level operations
def view_frustum(depth, pose, intrinsics, max_depth=default_max_depth):
    """World coordinates of the camera center and the 4 image corners at the
    largest valid depth of the frame (at most ``max_depth``)."""
    valid = depth[(depth > 0) & (depth <= max_depth)]
    if valid.size == 0:
        return np.zeros((0, 3))
    d = valid.max()
    w, h = intrinsics.width - 1, intrinsics.height - 1
    corners = np.array([[0, 0], [w, 0], [0, h], [w, h]], dtype=np.float64)
    rays = np.column_stack(((corners[:, 0] - intrinsics.cx)/intrinsics.fx,
                            (corners[:, 1] - intrinsics.cy)/intrinsics.fy,
                            np.ones(4)))
    pts = np.vstack((np.zeros(3), rays*d))
    return pose.camera_to_world(pts)


def volume_bounds(frames, intrinsics, max_depth=default_max_depth,
                  padding=0.05):
    """Axis-aligned bounds (2 x 3) of all camera frusta, padded by a fraction
    of the extent on every side."""
    pts = [view_frustum(f.depth_map(), f.pose, intrinsics, max_depth)
           for f in frames]
    pts = np.vstack([p for p in pts if len(p)] or [np.zeros((0, 3))])
    if len(pts) == 0:
        raise InvalidInputError('no valid depth in any frame')
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = padding*np.maximum(hi - lo, 1.e-3)
    return np.vstack((lo - pad, hi + pad))


def integrate_frame(vol, depth, pose, intrinsics):
    """Projective TSDF update with one depth frame.

    For each voxel projecting onto a pixel with valid depth ``d`` (0 < d <=
    max depth): ``sdf = d - z``; voxels with ``sdf >= -truncation`` average
    in ``clip(sdf/truncation, -1, 1)`` with weight 1; weights are capped.

    :param vol: volume (updated in place and returned)
    :param depth: depth grid (m) matching the intrinsics
    :param pose: camera-to-world pose
    :param intrinsics: camera intrinsics
    :type vol: TsdfVolume
    :rtype: TsdfVolume
    """
    return vol.integrate(depth, pose, intrinsics)


def extract_mesh(vol):
    """Marching cubes over observed cubes (weight > 0 on all 8 corners),
    vertices by linear interpolation along edges, normals from the tsdf
    gradient.

    :type vol: TsdfVolume
    :rtype: TriangleMesh
    """
    return vol.extract_mesh()


def fuse_scene(scene, cfg=FusionConfig()):
    """Bounds from the camera frusta, then integration of every frame in
    order.

    :rtype: TsdfVolume
    """
    bounds = volume_bounds(scene.frames, scene.intrinsics, cfg.max_depth,
                           cfg.padding)
    vol = TsdfVolume.from_bounds(bounds, cfg)
    for f in scene.frames:
        vol.integrate(f.depth_map(), f.pose, scene.intrinsics)
    logger.info('%s: fused %d frames', scene.id or 'scene', len(scene.frames))
    return vol


def downsample(cloud, voxel=default_downsample):
    """One point per occupied voxel: centroid, normalized mean normal and
    majority labels (ties to the smaller id).

    :param cloud: labeled cloud or triangle mesh
    :param voxel: voxel size (m)
    :rtype: LabeledCloud
    """
    if voxel <= 0:
        raise InvalidInputError('voxel size must be positive')
    if isinstance(cloud, TriangleMesh):
        cloud = LabeledCloud.from_mesh(cloud)
    if len(cloud) == 0:
        return cloud
    pts = np.asarray(cloud.points, dtype=np.float64)
    keys = np.floor(pts/voxel).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n = int(inverse.max()) + 1
    count = np.bincount(inverse, minlength=n).astype(np.float64)
    centroid = np.column_stack([np.bincount(inverse, pts[:, a], n)
                                for a in range(3)])/count[:, None]
    normals = np.asarray(cloud.normals, dtype=np.float64)
    mean_n = np.column_stack([np.bincount(inverse, normals[:, a], n)
                              for a in range(3)])
    norm = np.linalg.norm(mean_n, axis=1)
    bad = norm < _unit_tol
    if bad.any():
        # representative: lexicographically smallest member position
        order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], inverse))
        first = order[np.r_[True, inverse[order][1:] != inverse[order][:-1]]]
        rep = normals[first]
        mean_n[bad] = rep[bad]
        norm[bad] = np.linalg.norm(rep[bad], axis=1)
    mean_n /= norm[:, None]
    t1, v1, t2, v2 = top2(tally(inverse, cloud.label, 1., n))
    return LabeledCloud(centroid, mean_n, t1, v1.astype(np.int64), t2,
                        v2.astype(np.int64), cloud.space)


# -----------------------------------------------------------------------------
#                               PLY I/O
def write_mesh(path, mesh):
    v = mesh.vertices.astype(np.float32)
    n = mesh.normals.astype(np.float32)
    write_ply(path, [('x', v[:, 0]), ('y', v[:, 1]), ('z', v[:, 2]),
                     ('nx', n[:, 0]), ('ny', n[:, 1]), ('nz', n[:, 2])],
              faces=mesh.faces)


def read_mesh(path):
    vertex, faces = read_ply(path)
    v = np.column_stack([vertex[c] for c in ('x', 'y', 'z')])
    names = vertex.dtype.names
    if all(c in names for c in ('nx', 'ny', 'nz')):
        n = np.column_stack([vertex[c] for c in ('nx', 'ny', 'nz')])
        n = n/np.maximum(np.linalg.norm(n, axis=1), _unit_tol)[:, None]
    else:
        n = np.tile((0., 0., 1.), (len(v), 1))
    if faces is None:
        faces = np.zeros((0, 3), dtype=np.int64)
    return TriangleMesh(v, n, faces)


def write_labeled_cloud(path, cloud):
    p = np.asarray(cloud.points, dtype=np.float32)
    n = np.asarray(cloud.normals, dtype=np.float32)
    counts = [np.clip(np.rint(np.asarray(c)), 0, 65535).astype(np.uint16)
              for c in (cloud.label_count, cloud.label2_count)]
    write_ply(path, [('x', p[:, 0]), ('y', p[:, 1]), ('z', p[:, 2]),
                     ('nx', n[:, 0]), ('ny', n[:, 1]), ('nz', n[:, 2]),
                     ('label', np.asarray(cloud.label, dtype=np.uint16)),
                     ('label_count', counts[0]),
                     ('label2', np.asarray(cloud.label2, dtype=np.uint16)),
                     ('label2_count', counts[1])])


def read_labeled_cloud(path, space=''):
    """Reads a labeled cloud PLY; a plain mesh/cloud PLY gives an unlabeled
    cloud."""
    vertex, _ = read_ply(path)
    names = vertex.dtype.names
    p = np.column_stack([vertex[c] for c in ('x', 'y', 'z')]).astype(
        np.float64)
    if all(c in names for c in ('nx', 'ny', 'nz')):
        n = np.column_stack([vertex[c] for c in ('nx', 'ny', 'nz')]).astype(
            np.float64)
    else:
        n = np.tile((0., 0., 1.), (len(p), 1))

    def column(name):
        if name in names:
            return vertex[name].astype(np.int64)
        return np.zeros(len(p), dtype=np.int64)

    return LabeledCloud(p, n, column('label'), column('label_count'),
                        column('label2'), column('label2_count'), space)
