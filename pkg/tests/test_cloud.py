"""Neural point cloud: knn, interpolation, SDF/radiance heads, IO."""

import numpy as np
import pytest

import pointfield.autodiff as ad
import pointfield.cloud as pc
from pointfield.autodiff import Tape, Tensor
from pointfield.cloud import Model, ModelConfig, NeuralPointCloud


def grid_cloud(n=5, feature_dim=8, seed=0):
    rng = np.random.default_rng(seed)
    g = np.linspace(-1, 1, n)
    pts = np.stack(np.meshgrid(g, g, g), axis=-1).reshape(-1, 3).astype(np.float32)
    feats = rng.normal(0, 0.1, (len(pts), feature_dim)).astype(np.float32)
    normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1)).astype(np.float32)
    return NeuralPointCloud(pts, feats, normals)


def test_knn_matches_bruteforce():
    cloud = grid_cloud()
    q = np.array([[0.1, 0.2, -0.3], [0.9, 0.9, 0.9]], np.float32)
    res = pc.knn_query(cloud, q)
    for row, x in enumerate(q):
        d = np.linalg.norm(cloud.positions - x, axis=1)
        near = np.argsort(d)[: cloud.k]
        near = near[d[near] <= cloud.radius]
        got = set(res.indices[row][res.valid[row]].tolist())
        assert got == set(near.tolist())


def test_knn_free_space():
    cloud = grid_cloud()
    res = pc.knn_query(cloud, np.array([[50.0, 0.0, 0.0]], np.float32))
    assert not res.any_valid[0]


def test_norm_weights_sum_to_one():
    cloud = grid_cloud()
    q = pc.knn_query(cloud, np.random.default_rng(1).uniform(-1, 1, (20, 3)).astype(np.float32))
    sums = q.norm_weights.sum(axis=1)
    assert np.allclose(sums[q.any_valid], 1.0, atol=1e-5)


def test_plane_offsets_signed_distance():
    cloud = grid_cloud()  # all normals +z
    x = np.array([[0.0, 0.0, 0.37]], np.float32)
    q = pc.knn_query(cloud, x)
    with Tape():
        rel = Tensor(q.rel)
        off = pc.plane_offsets(cloud, q, rel).data
    # every neighbor plane is z = z_i; offset = x_z - z_i
    zi = cloud.positions[q.indices[0], 2]
    assert np.allclose(off[0][q.valid[0]], 0.37 - zi[q.valid[0]], atol=1e-5)


def test_predict_sdf_plane_field():
    """Zero-initialized sdf head + plane offsets = interpolated plane distance."""
    cfg = ModelConfig(feature_dim=8)
    model = Model.create(cfg, np.random.default_rng(0))
    cloud = grid_cloud(feature_dim=8)
    x = np.array([[0.0, 0.0, 0.25], [0.3, -0.2, -0.4]], np.float32)
    q = pc.knn_query(cloud, x)
    with Tape():
        f_ix, _, _, rel = pc.aggregate_features(cloud, model, q)
        d = pc.predict_sdf(model, q, f_ix, plane=pc.plane_offsets(cloud, q, rel)).data
    zi = cloud.positions[q.indices, 2]
    plane = x[:, None, 2] - zi
    expect = (q.norm_weights * plane).sum(axis=1)
    assert np.allclose(d, expect, atol=1e-5)


def test_interpolate_point_normal_unit():
    cloud = grid_cloud()
    q = pc.knn_query(cloud, np.array([[0.1, 0.0, 0.1]], np.float32))
    with Tape():
        n, degen = pc.interpolate_point_normal(cloud, q)
    assert not degen[0]
    assert np.allclose(np.linalg.norm(n.data[0]), 1.0, atol=1e-5)
    assert np.allclose(n.data[0], [0, 0, 1], atol=1e-5)


def test_predict_radiance_shapes_and_ranges():
    cfg = ModelConfig(feature_dim=8)
    model = Model.create(cfg, np.random.default_rng(0))
    cloud = grid_cloud(feature_dim=8)
    x = np.random.default_rng(3).uniform(-0.5, 0.5, (6, 3)).astype(np.float32)
    q = pc.knn_query(cloud, x)
    view = np.tile([0.0, 1.0, 0.0], (6, 1)).astype(np.float32)
    normals = np.tile([0.0, 0.0, 1.0], (6, 1)).astype(np.float32)
    with Tape():
        _, f_x, _, _ = pc.aggregate_features(cloud, model, q)
        c_d, c_s, c = pc.predict_radiance(model, f_x, view, normals)
    assert c_d.shape == (6, 3) and c.shape == (6, 3)
    assert np.all(c_d.data >= 0) and np.all(c_d.data <= 1)
    assert np.all(c_s.data >= 0)
    assert np.allclose(c.data, c_d.data + c_s.data, atol=1e-6)


def test_occupancy_grid_covers_points():
    cloud = grid_cloud()
    assert cloud.occupied_at(cloud.positions).all()
    assert not cloud.occupied_at(np.array([[40.0, 40.0, 40.0]]))[0]


def test_set_points_rebuilds_index():
    cloud = grid_cloud()
    v0 = cloud.version
    shifted = cloud.positions + np.array([10.0, 0, 0], np.float32)
    cloud.set_points(shifted)
    assert cloud.version > v0
    assert cloud.occupied_at(shifted[:5]).all()
    assert not cloud.occupied_at(shifted[:5] - np.array([10.0, 0, 0], np.float32)).any()


def test_renormalize():
    cloud = grid_cloud()
    cloud.normals.data = cloud.normals.data * 3.0
    cloud.renormalize()
    assert np.allclose(np.linalg.norm(cloud.normals.data, axis=1), 1.0, atol=1e-5)


def test_cloud_save_load_roundtrip(tmp_path):
    cloud = grid_cloud(n=3)
    pc.save_cloud(tmp_path / "c.ply", cloud)
    back = pc.load_cloud(tmp_path / "c.ply")
    assert np.array_equal(back.positions, cloud.positions)
    assert np.array_equal(back.features.data, cloud.features.data)
    assert np.array_equal(back.normals.data, cloud.normals.data)


def test_model_create_sdf_head_zeroed():
    cfg = ModelConfig(feature_dim=8)
    model = Model.create(cfg, np.random.default_rng(0))
    last = max(int(k[5]) for k in model.params if k.startswith("sdf.W"))
    assert not model.params[f"sdf.W{last}"].data.any()
    assert not model.params[f"sdf.b{last}"].data.any()


def test_model_beta_positive():
    cfg = ModelConfig(feature_dim=8, beta_init=0.03)
    model = Model.create(cfg, np.random.default_rng(0))
    with Tape():
        assert abs(model.beta().item() - 0.03) < 1e-5
