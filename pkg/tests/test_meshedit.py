"""Mesh extraction, point-to-mesh binding, deformation transfer, rigid edits."""

import numpy as np
import pytest

import pointfield.meshedit as me
from pointfield.cloud import NeuralPointCloud
from pointfield.meshedit import (EditSelection, TopologyMismatchError,
                                 TriangleMesh, apply_rigid_edit,
                                 closest_point_on_triangles,
                                 quaternion_to_matrix, register_points,
                                 transfer_deformation)


def icosphere_mesh(subdiv=24):
    """Lat-long sphere triangulation, radius 1."""
    th = np.linspace(0, np.pi, subdiv)
    ph = np.linspace(0, 2 * np.pi, subdiv, endpoint=False)
    tt, pp = np.meshgrid(th, ph, indexing="ij")
    verts = np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp),
                      np.cos(tt)], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(subdiv - 1):
        for j in range(subdiv):
            a = i * subdiv + j
            b = i * subdiv + (j + 1) % subdiv
            c = (i + 1) * subdiv + j
            d = (i + 1) * subdiv + (j + 1) % subdiv
            faces.append([a, b, c])
            faces.append([b, d, c])
    return TriangleMesh(verts.astype(np.float64), np.asarray(faces, np.int64))


def sphere_cloud(n=400, seed=0, feature_dim=4):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    feats = rng.normal(0, 0.1, (n, feature_dim)).astype(np.float32)
    return NeuralPointCloud(d.astype(np.float32), feats, d.astype(np.float32))


def rigid_pose(seed=3):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    rot = quaternion_to_matrix(q)
    t = rng.normal(size=3) * 0.5
    return rot, t


def test_face_frames_orthonormal():
    mesh = icosphere_mesh()
    frames = mesh.face_frames()
    eye = np.einsum("nik,njk->nij", frames, frames)
    assert np.allclose(eye, np.eye(3), atol=1e-8)


def test_closest_point_cases():
    tri = np.array([[[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]])
    # above the interior
    c, b = closest_point_on_triangles(np.array([[0.2, 0.2, 1.0]]), tri)
    assert np.allclose(c[0], [0.2, 0.2, 0.0], atol=1e-12)
    assert abs(b[0].sum() - 1.0) < 1e-12
    # beyond a vertex
    c, _ = closest_point_on_triangles(np.array([[-1.0, -1.0, 0.0]]), tri)
    assert np.allclose(c[0], [0, 0, 0], atol=1e-12)
    # beyond an edge
    c, _ = closest_point_on_triangles(np.array([[0.5, -1.0, 0.0]]), tri)
    assert np.allclose(c[0], [0.5, 0, 0], atol=1e-12)


def test_registration_identity_exact():
    mesh = icosphere_mesh()
    cloud = sphere_cloud()
    before = cloud.positions.copy()
    reg = register_points(cloud, mesh)
    assert reg.registered.all()
    transfer_deformation(reg, mesh, mesh, cloud)
    assert np.abs(cloud.positions - before).max() <= 1e-6


def test_registration_rigidity():
    mesh = icosphere_mesh()
    cloud = sphere_cloud(seed=1)
    before = cloud.positions.astype(np.float64).copy()
    normals_before = cloud.normals.data.copy()
    reg = register_points(cloud, mesh)
    rot, t = rigid_pose()
    moved = TriangleMesh(mesh.vertices @ rot.T + t, mesh.faces.copy())
    transfer_deformation(reg, mesh, moved, cloud)
    expect = before @ rot.T + t
    assert np.abs(cloud.positions - expect).max() <= 1e-5
    # normals rotate with the same rigid motion
    assert np.abs(cloud.normals.data - normals_before @ rot.T).max() <= 1e-4


def test_transfer_preserves_features():
    mesh = icosphere_mesh()
    cloud = sphere_cloud(seed=2)
    feats = cloud.features.data.copy()
    reg = register_points(cloud, mesh)
    rot, t = rigid_pose(5)
    moved = TriangleMesh(mesh.vertices @ rot.T + t, mesh.faces.copy())
    transfer_deformation(reg, mesh, moved, cloud)
    assert np.array_equal(cloud.features.data, feats)


def test_topology_mismatch_raises():
    mesh = icosphere_mesh()
    cloud = sphere_cloud()
    reg = register_points(cloud, mesh)
    bad = TriangleMesh(mesh.vertices.copy(), mesh.faces[:-1].copy())
    with pytest.raises(TopologyMismatchError):
        transfer_deformation(reg, mesh, bad, cloud)


def test_unregistered_points_untouched():
    mesh = icosphere_mesh()
    cloud = sphere_cloud(seed=4)
    far = cloud.positions.copy()
    far[0] = [50.0, 0.0, 0.0]
    cloud.set_points(far)
    reg = register_points(cloud, mesh, radius=0.5)
    assert not reg.registered[0]
    rot, t = rigid_pose(6)
    moved = TriangleMesh(mesh.vertices @ rot.T + t, mesh.faces.copy())
    transfer_deformation(reg, mesh, moved, cloud)
    assert np.allclose(cloud.positions[0], [50.0, 0.0, 0.0])


def test_apply_rigid_edit_roundtrip():
    cloud = sphere_cloud(seed=7)
    before_p = cloud.positions.copy()
    before_n = cloud.normals.data.copy()
    idx = np.arange(0, 100)
    rot = quaternion_to_matrix([np.cos(0.3), 0.0, 0.0, np.sin(0.3)])
    pivot = np.array([0.1, -0.2, 0.3])
    sel = EditSelection(idx, rot, np.array([0.5, 0, 0]), scale=2.0, pivot=pivot)
    apply_rigid_edit(cloud, sel)
    inv = EditSelection(idx, rot.T, -np.asarray([0.5, 0, 0]) @ rot / 2.0,
                        scale=0.5, pivot=pivot)
    # invert: p' = s R (p - c) + c + t  =>  p = R^T ((p' - t - c) / s) + c
    expect = (before_p[idx].astype(np.float64) - pivot) @ rot.T * 2.0 + pivot + [0.5, 0, 0]
    assert np.allclose(cloud.positions[idx], expect, atol=1e-5)
    assert np.allclose(cloud.normals.data[idx], before_n[idx] @ rot.T, atol=1e-6)
    # untouched points stay put
    assert np.array_equal(cloud.positions[200:], before_p[200:])


def test_edit_selection_validation():
    with pytest.raises(ValueError):
        EditSelection(np.array([0]), np.eye(3) * 2.0, np.zeros(3))
    with pytest.raises(ValueError):
        EditSelection(np.array([0]), np.eye(3), np.zeros(3), scale=-1.0)


def test_quaternion_to_matrix_identity_and_unit():
    assert np.allclose(quaternion_to_matrix([1, 0, 0, 0]), np.eye(3))
    q = np.array([0.3, 0.5, -0.2, 0.7])
    r = quaternion_to_matrix(q)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(r) - 1.0) < 1e-12


def test_mesh_obj_roundtrip(tmp_path):
    mesh = icosphere_mesh(8)
    me.save_mesh_obj(tmp_path / "m.obj", mesh)
    back = me.load_mesh_obj(tmp_path / "m.obj")
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-6)
    assert np.array_equal(back.faces, mesh.faces)


def test_mesh_ply_roundtrip(tmp_path):
    mesh = icosphere_mesh(8)
    me.save_mesh_ply(tmp_path / "m.ply", mesh)
    back = me.load_mesh_ply(tmp_path / "m.ply")
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-6)
    assert np.array_equal(back.faces, mesh.faces)


def test_extract_mesh_sphere(micro_model):
    model, cloud = micro_model
    mesh = me.extract_mesh(model, cloud, resolution=48)
    assert len(mesh.vertices) > 100
    assert len(mesh.faces) > 100
    from pointfield import scenes as sc
    # marching-cubes vertices sit near the learned zero set; at init that is
    # the sampled scene surface
    import pointfield.renderer as rd
    d = rd.predict_sdf_at(model, cloud, mesh.vertices.astype(np.float32))
    cov = np.abs(d) < 100
    assert np.abs(d[cov]).mean() < 0.05


def test_selection_from_spec_box():
    cloud = sphere_cloud(seed=8)
    sel = me.selection_from_spec(cloud, {"box": [[-2, -2, -2], [2, 2, 0]],
                                         "translation": [1, 0, 0]})
    assert np.all(cloud.positions[sel.indices, 2] <= 0)
    assert len(sel.indices) > 0
