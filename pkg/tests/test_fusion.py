import numpy as np
import pytest
from scipy.spatial import cKDTree
from semfuse.aux import (DimensionMismatchError, InvalidInputError,
                         are_close_arr)
from semfuse.fusion3d import (FusionConfig, LabeledCloud, TriangleMesh,
                              TsdfVolume, downsample, extract_mesh,
                              fuse_scene, integrate_frame, read_labeled_cloud,
                              read_mesh, volume_bounds, write_labeled_cloud,
                              write_mesh)
from semfuse.geometry import Intrinsics, Pose
from semfuse.ingest import Frame, Scene
from semfuse.synthetic import Sphere, orbit_poses, render_view

identity = (0., 0., 0., 1.)


def _plane_scene():
    k = Intrinsics(60., 60., 31.5, 23.5, 64, 48)
    shifts = [(0., 0.), (0.05, 0.), (-0.05, 0.), (0., 0.05), (0., -0.05)]
    frames = [Frame(i, float(i), '', Pose(identity, (x, y, 0.)),
                    depth=np.ones(k.shape))
              for i, (x, y) in enumerate(shifts)]
    return Scene('plane', tuple(frames), k)


# -------------------------------------------------------------
#       ****     TEST: plane and sphere reconstruction      ****
# -------------------------------------------------------------
def test_fronto_parallel_plane():
    scene = _plane_scene()
    vol = fuse_scene(scene, FusionConfig())
    mesh = vol.extract_mesh()
    assert len(mesh) > 1000
    assert np.abs(mesh.vertices[:, 2] - 1.).max() <= 0.008
    # normals face the cameras
    assert np.median(mesh.normals[:, 2]) < -0.9
    tsdf, weight = vol.grids()
    assert tsdf.dtype == np.float32 and weight.dtype == np.uint8
    assert weight.max() == 5
    assert tsdf.min() >= -1. and tsdf.max() <= 1.


def test_sphere_from_orbit():
    k = Intrinsics(300., 300., 159.5, 119.5, 320, 240)
    sphere = Sphere((0., 0., 0.), 0.5)
    cfg = FusionConfig(voxel_size=0.008, truncation=0.04)
    vol = TsdfVolume.from_bounds([[-0.6]*3, [0.6]*3], cfg)
    for pose in orbit_poses((0., 0., 0.), 1.5, 20, elevation=0.6):
        depth, _ = render_view([sphere], pose, k)
        integrate_frame(vol, depth, pose, k)
    mesh = extract_mesh(vol)
    radius = np.linalg.norm(mesh.vertices, axis=1)
    assert len(mesh) > 1000
    assert np.sqrt(np.mean((radius - 0.5)**2)) <= 0.008
    outward = np.einsum('ij,ij->i', mesh.normals,
                        mesh.vertices/radius[:, None])
    assert np.median(outward) > 0.9


def test_weights_are_capped():
    scene = _plane_scene()
    cfg = FusionConfig(voxel_size=0.02, truncation=0.06, weight_cap=3)
    vol = fuse_scene(scene, cfg)
    _, weight = vol.grids()
    assert weight.max() == 3


def test_sparse_layout_matches_dense():
    scene = _plane_scene()
    dense = fuse_scene(scene, FusionConfig(voxel_size=0.02, truncation=0.06))
    sparse = fuse_scene(scene, FusionConfig(voxel_size=0.02, truncation=0.06,
                                            max_voxels=1000))
    assert not dense.sparse and sparse.sparse and sparse.n_blocks > 0
    # free space in front of the surface is observed in both layouts
    for a, b in zip(dense.grids(), sparse.grids()):
        assert np.array_equal(a, b)
    m_dense = dense.extract_mesh()
    m_sparse = sparse.extract_mesh()
    assert len(m_sparse) == len(m_dense)
    dist, _ = cKDTree(m_dense.vertices).query(m_sparse.vertices)
    assert dist.max() < 1.e-6
    assert np.abs(m_sparse.vertices[:, 2] - 1.).max() <= 0.008
    pts = np.array([[0., 0., 1.], [0.1, 0.1, 0.98], [0., 0., 0.5]])
    assert are_close_arr(dense.sample(pts), sparse.sample(pts), 1.e-6)


def test_sparse_sphere_grids_match_dense():
    k = Intrinsics(80., 80., 39.5, 29.5, 80, 60)
    sphere = Sphere((0., 0., 0.), 0.5)
    bounds = [[-0.7]*3, [0.7]*3]
    dense = TsdfVolume.from_bounds(bounds, FusionConfig(0.03, 0.09))
    sparse = TsdfVolume.from_bounds(bounds, FusionConfig(0.03, 0.09,
                                                         max_voxels=1000))
    for pose in orbit_poses((0., 0., 0.), 1.5, 6):
        depth, _ = render_view([sphere], pose, k)
        integrate_frame(dense, depth, pose, k)
        integrate_frame(sparse, depth, pose, k)
    assert sparse.sparse
    for a, b in zip(dense.grids(), sparse.grids()):
        assert np.array_equal(a, b)
    assert len(sparse.extract_mesh()) == len(dense.extract_mesh())


# -------------------------------------------------------------
#       ****     TEST: integration rules      ****
# -------------------------------------------------------------
def _slab_volume(sparse=False):
    """Volume in front of the identity camera of the plane scene."""
    cfg = FusionConfig(voxel_size=0.02, truncation=0.06,
                       max_voxels=1000 if sparse else 10**9)
    return TsdfVolume.from_bounds([[-0.2, -0.2, 0.5], [0.2, 0.2, 1.5]], cfg)


@pytest.mark.parametrize('sparse', [False, True])
def test_invalid_depth_is_a_no_op(sparse):
    k = _plane_scene().intrinsics
    pose = Pose(identity, (0., 0., 0.))
    vol = _slab_volume(sparse)
    integrate_frame(vol, np.zeros(k.shape), pose, k)
    integrate_frame(vol, np.full(k.shape, 50.), pose, k)
    tsdf, weight = vol.grids()
    assert np.all(tsdf == 1.) and not weight.any()
    assert vol.n_blocks == 0
    assert len(extract_mesh(vol)) == 0
    with pytest.raises(DimensionMismatchError):
        integrate_frame(vol, np.ones((2, 2)), pose, k)


@pytest.mark.parametrize('sparse', [False, True])
def test_same_frame_twice_doubles_weights(sparse):
    k = _plane_scene().intrinsics
    pose = Pose(identity, (0., 0., 0.))
    vol = _slab_volume(sparse)
    integrate_frame(vol, np.ones(k.shape), pose, k)
    tsdf1, weight1 = (g.copy() for g in vol.grids())
    integrate_frame(vol, np.ones(k.shape), pose, k)
    tsdf2, weight2 = vol.grids()
    assert weight1.max() == 1
    assert np.array_equal(weight2, 2*weight1)
    assert are_close_arr(tsdf2, tsdf1, 1.e-6)


def test_voxels_behind_the_band_are_untouched():
    k = _plane_scene().intrinsics
    vol = _slab_volume()
    integrate_frame(vol, np.ones(k.shape), Pose(identity, (0., 0., 0.)), k)
    tsdf, weight = vol.grids()
    z = vol.origin[2] + vol.voxel_size*np.arange(vol.dims[2])
    xy = vol.origin[0] + vol.voxel_size*np.arange(vol.dims[0])
    center = np.abs(xy) <= 0.1
    core = np.ix_(center, center, np.ones(len(z), dtype=bool))
    tsdf, weight = tsdf[core], weight[core]
    behind = z > 1.07
    front = z < 0.93
    assert not weight[..., behind].any()
    assert np.all(tsdf[..., behind] == 1.)
    # free space clamps to +1 with weight 1
    assert np.all(weight[..., front] == 1)
    assert np.all(tsdf[..., front] == 1.)
    band = np.abs(z - 1.) < 0.05
    assert np.all(weight[..., band] == 1)
    assert np.all(np.abs(tsdf[..., band]) < 1.)


def test_unobserved_volume_has_empty_mesh():
    for sparse in (False, True):
        mesh = _slab_volume(sparse).extract_mesh()
        assert len(mesh) == 0 and mesh.faces.shape == (0, 3)


def test_volume_bounds_cover_frusta():
    scene = _plane_scene()
    lo, hi = volume_bounds(scene.frames, scene.intrinsics)
    assert np.all(lo < (-0.5, -0.4, 0.)) and np.all(hi > (0.5, 0.4, 1.))
    empty = Frame(0, 0., '', Pose(identity, (0., 0., 0.)),
                  depth=np.zeros(scene.intrinsics.shape))
    with pytest.raises(InvalidInputError):
        volume_bounds([empty], scene.intrinsics)


def test_fusion_config_checks():
    with pytest.raises(InvalidInputError):
        FusionConfig(voxel_size=0.05, truncation=0.01)
    with pytest.raises(InvalidInputError):
        FusionConfig(downsample=0.)


# -------------------------------------------------------------
#       ****     TEST: downsampling      ****
# -------------------------------------------------------------
def test_downsample_one_point_per_voxel():
    pts = np.array([[0.01, 0.01, 0.01], [0.03, 0.01, 0.01],
                    [0.11, 0.01, 0.01], [0.13, 0.03, 0.01]])
    normals = np.array([[0., 0., 1.], [0., 1., 0.], [1., 0., 0.],
                        [1., 0., 0.]])
    cloud = LabeledCloud(pts, normals, np.array([2, 2, 5, 3]),
                         np.ones(4, dtype=int), np.zeros(4, dtype=int),
                         np.zeros(4, dtype=int))
    out = downsample(cloud, 0.1)
    assert len(out) == 2
    order = np.argsort(out.points[:, 0])
    assert are_close_arr(out.points[order[0]], (0.02, 0.01, 0.01))
    assert are_close_arr(out.points[order[1]], (0.12, 0.02, 0.01))
    assert are_close_arr(np.linalg.norm(out.normals, axis=1), 1.)
    assert are_close_arr(out.normals[order[0]], (0., 0.5**0.5, 0.5**0.5))
    # majority, ties to the smaller id
    assert out.label[order[0]] == 2 and out.label_count[order[0]] == 2
    assert out.label[order[1]] == 3 and out.label2[order[1]] == 5


def test_downsample_opposite_normals_use_representative():
    pts = np.array([[0.01, 0.01, 0.01], [0.02, 0.01, 0.01]])
    normals = np.array([[0., 0., 1.], [0., 0., -1.]])
    mesh = TriangleMesh(pts, normals, np.zeros((0, 3), dtype=int))
    out = downsample(mesh, 0.1)
    assert len(out) == 1
    assert are_close_arr(out.normals[0], (0., 0., 1.))
    with pytest.raises(InvalidInputError):
        downsample(mesh, 0.)


def _random_cloud(rng, n=400):
    pts = rng.uniform(0., 0.5, size=(n, 3))
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    zeros = np.zeros(n, dtype=int)
    return LabeledCloud(pts, normals, rng.integers(0, 4, size=n),
                        zeros, zeros, zeros)


def _by_voxel(cloud, voxel):
    keys = np.floor(cloud.points/voxel).astype(np.int64)
    return np.lexsort(keys.T[::-1])


def test_downsample_matches_hash_grid():
    rng = np.random.default_rng(12)
    cloud = _random_cloud(rng)
    voxel = 0.1
    cells = dict()
    for i, p in enumerate(cloud.points):
        cells.setdefault(tuple(np.floor(p/voxel).astype(int)), []).append(i)
    out = downsample(cloud, voxel)
    assert len(out) == len(cells)
    for j in range(len(out)):
        members = cells[tuple(np.floor(out.points[j]/voxel).astype(int))]
        assert are_close_arr(out.points[j], cloud.points[members].mean(axis=0))
        counts = dict()
        for label in cloud.label[members]:
            if label:
                counts[label] = counts.get(label, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        assert out.label[j] == (ranked[0][0] if ranked else 0)
        assert out.label_count[j] == (ranked[0][1] if ranked else 0)
        assert out.label2[j] == (ranked[1][0] if len(ranked) > 1 else 0)


def test_downsample_ignores_point_order():
    rng = np.random.default_rng(13)
    cloud = _random_cloud(rng)
    ref = downsample(cloud, 0.1)
    order = rng.permutation(len(cloud))
    shuffled = LabeledCloud(cloud.points[order], cloud.normals[order],
                            cloud.label[order], cloud.label_count[order],
                            cloud.label2[order], cloud.label2_count[order])
    out = downsample(shuffled, 0.1)
    a = _by_voxel(ref, 0.1)
    b = _by_voxel(out, 0.1)
    assert are_close_arr(ref.points[a], out.points[b])
    assert are_close_arr(ref.normals[a], out.normals[b])
    for name in ('label', 'label_count', 'label2', 'label2_count'):
        assert np.array_equal(getattr(ref, name)[a], getattr(out, name)[b])


# -------------------------------------------------------------
#       ****     TEST: PLY files      ****
# -------------------------------------------------------------
def test_mesh_and_cloud_ply(tmp_path):
    verts = np.array([[0., 0., 0.], [1., 0., 0.], [0., 1., 0.],
                      [0., 0., 1.]])
    normals = np.tile((0., 0., 1.), (4, 1))
    faces = np.array([[0, 1, 2], [0, 1, 3]])
    write_mesh(tmp_path / 'mesh.ply', TriangleMesh(verts, normals, faces))
    mesh = read_mesh(tmp_path / 'mesh.ply')
    assert np.array_equal(mesh.faces, faces)
    assert are_close_arr(mesh.vertices, verts)
    cloud = LabeledCloud(verts, normals, np.array([1, 2, 0, 70000 % 65536]),
                         np.array([3, 1, 0, 2]), np.array([2, 0, 0, 1]),
                         np.array([1, 0, 0, 1]), 'space')
    write_labeled_cloud(tmp_path / 'labels.ply', cloud)
    back = read_labeled_cloud(tmp_path / 'labels.ply', 'space')
    assert back.space == 'space'
    for name in ('label', 'label_count', 'label2', 'label2_count'):
        assert np.array_equal(getattr(back, name), getattr(cloud, name))
    # a plain mesh reads as an unlabeled cloud
    plain = read_labeled_cloud(tmp_path / 'mesh.ply')
    assert len(plain) == 4 and not plain.label.any()
