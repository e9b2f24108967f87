"""Environment probe, shadow maps, BRDF and shading invariants."""

import numpy as np
import pytest

import pointfield.autodiff as ad
import pointfield.illumination as il
from pointfield.autodiff import Tape, Tensor
from pointfield.cloud import Model, ModelConfig


def test_solid_angles_sum_to_4pi():
    dw = il.probe_solid_angles()
    assert abs(dw.sum() - 4 * np.pi) < 1e-4
    assert np.all(dw > 0)


def test_probe_directions_unit_and_layout():
    d = il.probe_directions()
    assert d.shape == (il.PROBE_ROWS * il.PROBE_COLS, 3)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-6)
    # first row near the +z pole, last near -z
    assert d[: il.PROBE_COLS, 2].min() > 0.9
    assert d[-il.PROBE_COLS:, 2].max() < -0.9


def test_direction_texel_roundtrip():
    d = il.probe_directions()
    r, c = il.direction_to_texel(d)
    rows, cols = np.divmod(np.arange(len(d)), il.PROBE_COLS)
    assert np.array_equal(r, rows)
    assert np.array_equal(c, cols)


def test_probe_save_load(tmp_path):
    vals = np.random.default_rng(0).random((il.PROBE_ROWS, il.PROBE_COLS, 3)).astype(np.float32)
    probe = il.LightProbe(vals)
    probe.save(tmp_path / "p.pfm")
    back = il.LightProbe.load(tmp_path / "p.pfm")
    assert np.array_equal(back.values, vals)
    assert (tmp_path / "p.json").exists()


def test_env_eval_positive():
    model = Model.create(ModelConfig(feature_dim=8), np.random.default_rng(0))
    with Tape():
        e = il.env_eval(model, il.probe_directions()).data
    assert np.all(e > 0)
    probe = il.rasterize_probe(model)
    assert probe.values.shape == (il.PROBE_ROWS, il.PROBE_COLS, 3)


# --- BRDF invariants -------------------------------------------------------

def test_brdf_head_on_lambertian():
    """s = 0, head-on: f = a/pi exactly (Fresnel 0 at vh=1... checked s=0)."""
    a = np.array([[0.6, 0.5, 0.4]])
    n = v = l = np.array([[0.0, 0.0, 1.0]])
    out = il.brdf_eval_np(a, np.zeros((1, 3)), np.array([0.5]), n, v, l)
    spec_part = out - a / np.pi
    assert np.abs(spec_part).max() < 1e-6


def test_brdf_reciprocity():
    rng = np.random.default_rng(3)
    n = np.array([[0.0, 0.0, 1.0]])

    def updir():
        d = rng.normal(size=3)
        d[2] = abs(d[2]) + 0.2
        return (d / np.linalg.norm(d))[None]

    v, l = updir(), updir()
    a = np.array([[0.3, 0.3, 0.3]])
    s = np.array([[0.5, 0.5, 0.5]])
    r = np.array([0.3])
    f_vl = il.brdf_eval_np(a, s, r, n, v, l)
    f_lv = il.brdf_eval_np(a, s, r, n, l, v)
    assert np.allclose(f_vl, f_lv, atol=1e-7)


def test_brdf_energy_dense_quadrature():
    """Directional albedo <= 1 for a white specular lobe over a dense grid."""
    rows, cols = 256, 512
    omegas = il.probe_directions(rows, cols)
    dw = il.probe_solid_angles(rows, cols)
    up = omegas[:, 2] > 0
    n = np.array([[0.0, 0.0, 1.0]])
    v = np.array([[np.sin(0.4), 0.0, np.cos(0.4)]])
    for rough in (0.1, 0.4, 0.9):
        fr = il.brdf_eval_np(np.zeros(3), np.ones((1, 3)), np.array([rough]),
                             n, np.repeat(v, up.sum(), 0), omegas[up])
        cos = omegas[up, 2]
        total = (fr[:, 0] * cos * dw[up]).sum()
        assert total <= 1.0 + 5e-2, f"roughness {rough}: {total}"


def test_brdf_tensor_matches_numpy():
    rng = np.random.default_rng(5)
    n = np.tile([0.0, 0.0, 1.0], (4, 1)).astype(np.float32)
    v = rng.normal(size=(4, 3))
    v[:, 2] = np.abs(v[:, 2]) + 0.5
    v = (v / np.linalg.norm(v, axis=1, keepdims=True)).astype(np.float32)
    l = il.probe_directions()[:40]
    s = rng.random((4, 3)).astype(np.float32)
    r = rng.uniform(0.1, 0.9, (4, 1)).astype(np.float32)
    with Tape():
        fr_t = il.brdf_fr_t(Tensor(s), Tensor(r), n, v, l).data
    for i in range(4):
        fr_np = il.brdf_eval_np(np.zeros(3), s[i], r[i], n[i][None],
                                np.repeat(v[i][None], len(l), 0), l)
        assert np.allclose(fr_t[i], fr_np, atol=2e-5)


def test_shade_linearity_in_env():
    rng = np.random.default_rng(6)
    omegas = il.probe_directions()
    dw = il.probe_solid_angles()
    n = np.tile([0.0, 0.0, 1.0], (3, 1)).astype(np.float32)
    v = n.copy()
    vis = np.ones((3, len(omegas)), np.float32)
    env = rng.random((len(omegas), 3)).astype(np.float32)
    a = Tensor(rng.random((3, 3)).astype(np.float32))
    s = Tensor(rng.random((3, 3)).astype(np.float32))
    r = Tensor(rng.uniform(0.2, 0.8, (3, 1)).astype(np.float32))
    with Tape():
        d1, s1 = il.shade_t(n, v, omegas, dw, Tensor(env), vis, a, s, r)
        d2, s2 = il.shade_t(n, v, omegas, dw, Tensor(2 * env), vis, a, s, r)
    assert np.allclose(d2.data, 2 * d1.data, atol=1e-5)
    assert np.allclose(s2.data, 2 * s1.data, atol=1e-5)


def test_shade_lambertian_energy():
    """White env E=1, full visibility, s=0: out = albedo within 2%."""
    a = np.array([[0.25, 0.5, 0.75]])
    n = np.array([[0.0, 0.0, 1.0]])
    probe = np.ones((il.PROBE_ROWS * il.PROBE_COLS, 3), np.float32)
    vis = np.ones((1, len(probe)), np.float32)
    out = il.shade_np(None, n, n, probe, vis, a, np.zeros((1, 3)), np.array([0.9]))
    assert np.abs(out - a).max() < 0.02 * a.max()


def test_shade_np_matches_shade_t():
    rng = np.random.default_rng(7)
    omegas = il.probe_directions()
    dw = il.probe_solid_angles()
    n = np.tile([0.0, 0.0, 1.0], (2, 1)).astype(np.float32)
    v = np.array([[0.2, 0.1, 0.97], [0.0, 0.0, 1.0]], np.float32)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    env = rng.random((len(omegas), 3)).astype(np.float32)
    vis = (rng.random((2, len(omegas))) > 0.3).astype(np.float32)
    a = rng.random((2, 3)).astype(np.float32)
    s = rng.random((2, 3)).astype(np.float32)
    r = rng.uniform(0.2, 0.8, 2).astype(np.float32)
    d_np, s_np = il.shade_np(None, n, v, env, vis, a, s, r, split=True)
    with Tape():
        d_t, s_t = il.shade_t(n, v, omegas, dw, Tensor(env), vis,
                              Tensor(a), Tensor(s), Tensor(r[:, None]))
    assert np.allclose(d_np, d_t.data, atol=2e-5)
    assert np.allclose(s_np, s_t.data, atol=2e-5)


# --- shadow maps -----------------------------------------------------------

@pytest.fixture(scope="module")
def depth_set(request):
    micro_model = request.getfixturevalue("micro_model")
    model, cloud = micro_model
    return il.render_light_depths(model, cloud, res=24, samples=24)


def test_shadow_outside_footprint_lit(depth_set):
    far = np.array([[100.0, 100.0, 100.0]])
    lit = il.shadow_test(depth_set, far, np.array([0, 5, 100]))
    assert lit.all()


def test_shadow_test_against_oracle(micro_dataset, depth_set):
    from pointfield import scenes as sc
    scene = micro_dataset.scene
    pos, nrm = sc.sample_surface(scene, 60, seed=9)
    # test only strongly lit texels (bias-region agreement is what matters)
    bright = np.flatnonzero(scene.probe.values.reshape(-1, 3).sum(axis=1) > 0)
    omegas = il.probe_directions()[bright]
    facing = (nrm @ omegas.T) > 0.3
    lit_pred = il.shadow_test(depth_set, pos + nrm * 0.01, bright)
    lit_true = sc.oracle_visibility(scene, pos, omegas)
    agree = (lit_pred == lit_true)[facing]
    assert agree.mean() > 0.85


def test_resample_probe_identity():
    vals = np.random.default_rng(1).random((il.PROBE_ROWS, il.PROBE_COLS, 3)).astype(np.float32)
    out = il._resample_probe(vals, il.PROBE_ROWS, il.PROBE_COLS)
    assert np.array_equal(out, vals)
