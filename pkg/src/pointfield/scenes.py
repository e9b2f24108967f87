"""Analytic test scenes: exact SDF primitives with CSG, a sphere-traced
ground-truth PBR renderer, dataset generation, and shared metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cloud as pc
from . import illumination as il
from .imaging import (Camera, linear_to_srgb, look_at, normal_mae, psnr,
                      read_pfm, read_png, srgb_to_linear, write_pfm, write_png)

BACKGROUND = np.zeros(3, np.float32)


# ---------------------------------------------------------------------------
# materials and primitives
# ---------------------------------------------------------------------------

@dataclass
class BrdfSample:
    albedo: tuple = (0.8, 0.8, 0.8)
    specular: tuple = (0.04, 0.04, 0.04)
    roughness: float = 0.8


@dataclass
class Primitive:
    """One analytic SDF shape; op 'union' or 'subtract' against the running CSG."""
    kind: str                 # sphere | box | torus | plane
    params: dict = field(default_factory=dict)
    material: BrdfSample = field(default_factory=BrdfSample)
    op: str = "union"

    def sdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, np.float64)
        p = self.params
        if self.kind == "sphere":
            return np.linalg.norm(x - p["center"], axis=-1) - p["radius"]
        if self.kind == "box":
            q = np.abs(x - p["center"]) - np.asarray(p["half"], np.float64)
            outer = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            inner = np.minimum(q.max(axis=-1), 0.0)
            return outer + inner
        if self.kind == "torus":
            rel = x - p["center"]
            ring = np.hypot(rel[..., 0], rel[..., 1]) - p["major"]
            return np.hypot(ring, rel[..., 2]) - p["minor"]
        if self.kind == "plane":
            n = np.asarray(p["normal"], np.float64)
            return x @ n - p["offset"]
        raise ValueError(f"unknown primitive kind {self.kind!r}")

    def normal(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, np.float64)
        p = self.params
        if self.kind == "sphere":
            rel = x - p["center"]
            return rel / np.maximum(np.linalg.norm(rel, axis=-1, keepdims=True), 1e-12)
        if self.kind == "plane":
            n = np.asarray(p["normal"], np.float64)
            return np.broadcast_to(n, x.shape).copy()
        if self.kind == "torus":
            rel = x - p["center"]
            rho = np.maximum(np.hypot(rel[..., 0], rel[..., 1]), 1e-12)
            ring = rho - p["major"]
            g = np.empty_like(rel)
            g[..., 0] = rel[..., 0] / rho * ring
            g[..., 1] = rel[..., 1] / rho * ring
            g[..., 2] = rel[..., 2]
            return g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
        if self.kind == "box":
            rel = x - p["center"]
            q = np.abs(rel) - np.asarray(p["half"], np.float64)
            g = np.maximum(q, 0.0) * np.sign(rel)
            # on the surface or inside the outer gradient vanishes: use the
            # nearest-face axis instead
            face = np.argmax(q, axis=-1)
            inner = np.zeros_like(g)
            np.put_along_axis(inner, face[..., None], 1.0, axis=-1)
            inner *= np.where(np.sign(rel) == 0, 1.0, np.sign(rel))
            degenerate = np.linalg.norm(g, axis=-1) < 1e-9
            g = np.where(degenerate[..., None], inner, g)
            return g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
        raise ValueError(self.kind)

    def to_dict(self) -> dict:
        params = {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                  for k, v in self.params.items()}
        return {"kind": self.kind, "params": params, "op": self.op,
                "material": {"albedo": list(self.material.albedo),
                             "specular": list(self.material.specular),
                             "roughness": self.material.roughness}}

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        m = d["material"]
        return cls(d["kind"], d["params"],
                   BrdfSample(tuple(m["albedo"]), tuple(m["specular"]), m["roughness"]),
                   d.get("op", "union"))


@dataclass
class AnalyticScene:
    name: str
    primitives: list
    probe: il.LightProbe
    bbox: tuple  # (lo (3,), hi (3,))

    def to_dict(self) -> dict:
        return {"name": self.name,
                "primitives": [p.to_dict() for p in self.primitives],
                "probe": self.probe.values.tolist(),
                "bbox": [list(self.bbox[0]), list(self.bbox[1])]}

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticScene":
        return cls(d["name"], [Primitive.from_dict(p) for p in d["primitives"]],
                   il.LightProbe(np.asarray(d["probe"], np.float32)),
                   (np.asarray(d["bbox"][0]), np.asarray(d["bbox"][1])))


def scene_sdf(scene: AnalyticScene, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed distance and owning primitive id for each query point."""
    x = np.asarray(x, np.float64)
    d = np.full(x.shape[:-1], np.inf)
    pid = np.full(x.shape[:-1], -1, np.int64)
    for i, prim in enumerate(scene.primitives):
        di = prim.sdf(x)
        if prim.op == "union":
            closer = di < d
            d = np.where(closer, di, d)
            pid = np.where(closer, i, pid)
        elif prim.op == "subtract":
            d = np.maximum(d, -di)
        else:
            raise ValueError(f"unknown CSG op {prim.op!r}")
    return d, pid


def scene_normal(scene: AnalyticScene, x: np.ndarray, pid: np.ndarray | None = None) -> np.ndarray:
    """Analytic surface normal taken from the owning primitive (CSG-aware
    via central differences when a subtraction owns the surface)."""
    x = np.asarray(x, np.float64)
    if pid is None:
        _, pid = scene_sdf(scene, x)
    if any(p.op == "subtract" for p in scene.primitives):
        h = 1e-5
        g = np.empty_like(x)
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            g[..., a] = scene_sdf(scene, x + e)[0] - scene_sdf(scene, x - e)[0]
        return g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
    n = np.zeros_like(x)
    for i, prim in enumerate(scene.primitives):
        mask = pid == i
        if mask.any():
            n[mask] = prim.normal(x[mask])
    return n


def scene_materials(scene: AnalyticScene, pid: np.ndarray):
    """Per-query albedo/specular/roughness arrays from primitive ids."""
    n = len(pid)
    albedo = np.zeros((n, 3), np.float32)
    spec = np.zeros((n, 3), np.float32)
    rough = np.full((n, 1), 1.0, np.float32)
    for i, prim in enumerate(scene.primitives):
        mask = pid == i
        if mask.any():
            albedo[mask] = prim.material.albedo
            spec[mask] = prim.material.specular
            rough[mask] = prim.material.roughness
    return albedo, spec, rough


# ---------------------------------------------------------------------------
# sphere tracing
# ---------------------------------------------------------------------------

def sphere_trace(scene: AnalyticScene, origins: np.ndarray, dirs: np.ndarray,
                 t_max: float = 20.0, max_steps: int = 160,
                 eps: float = 1e-4) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (t, hit mask, primitive id); non-converged rays are misses."""
    origins = np.asarray(origins, np.float64)
    dirs = np.asarray(dirs, np.float64)
    n = len(origins)
    t = np.zeros(n)
    hit = np.zeros(n, bool)
    live = np.ones(n, bool)
    for _ in range(max_steps):
        x = origins[live] + dirs[live] * t[live, None]
        d, _ = scene_sdf(scene, x)
        idx = np.flatnonzero(live)
        converged = d < eps
        hit[idx[converged]] = True
        t[idx] += np.maximum(d, 0.0)
        done = converged | (t[idx] > t_max)
        live[idx[done]] = False
        if not live.any():
            break
    pid = np.full(n, -1, np.int64)
    if hit.any():
        x = origins[hit] + dirs[hit] * t[hit, None]
        _, pid[hit] = scene_sdf(scene, x)
    return t, hit, pid


def oracle_visibility(scene: AnalyticScene, x: np.ndarray, dirs: np.ndarray,
                      lift: float = 1e-3, t_max: float = 20.0) -> np.ndarray:
    """Ray-marched visibility: (N, L) bool, True when the shadow ray escapes."""
    x = np.asarray(x, np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, np.float64).reshape(-1, 3)
    n, n_l = len(x), len(dirs)
    nrm = scene_normal(scene, x)
    starts = np.repeat(x + nrm * lift, n_l, axis=0)
    rays = np.tile(dirs, (n, 1))
    _, hit, _ = sphere_trace(scene, starts, rays, t_max=t_max)
    return ~hit.reshape(n, n_l)


def ray_sphere_occluded(center, radius: float, origins: np.ndarray,
                        dirs: np.ndarray) -> np.ndarray:
    """Closed-form ray/sphere intersection test (forward hits only)."""
    rel = np.asarray(origins, np.float64) - np.asarray(center, np.float64)
    b = np.sum(rel * dirs, axis=-1)
    c = np.sum(rel * rel, axis=-1) - radius * radius
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    t_far = -b + root
    return (disc > 0) & (t_far > 0)


# ---------------------------------------------------------------------------
# oracle rendering
# ---------------------------------------------------------------------------

def oracle_render(scene: AnalyticScene, camera: Camera,
                  want_visibility: bool = False) -> dict:
    """Ground-truth sphere-traced PBR render under the scene's probe.

    Shadow rays are marched only toward texels carrying radiance; dark texels
    contribute nothing regardless of visibility.
    """
    origins, dirs = camera.rays()
    t, hit, pid = sphere_trace(scene, origins, dirs)
    h, w = camera.height, camera.width
    lin = np.tile(BACKGROUND, (len(dirs), 1)).astype(np.float32)
    normal = np.zeros((len(dirs), 3), np.float32)
    depth = np.full(len(dirs), np.inf, np.float32)
    probe_flat = scene.probe.values.reshape(-1, 3)
    lit_texels = np.flatnonzero(probe_flat.sum(axis=1) > 0)
    omegas = il.probe_directions()
    vis_full = None
    if hit.any():
        x = origins[hit] + dirs[hit] * t[hit, None]
        n = scene_normal(scene, x, pid[hit])
        albedo, spec, rough = scene_materials(scene, pid[hit])
        vis = np.ones((hit.sum(), len(omegas)), bool)
        if lit_texels.size:
            vis[:, lit_texels] = oracle_visibility(scene, x, omegas[lit_texels])
        lin[hit] = il.shade_np(x, n, -dirs[hit].astype(np.float64), probe_flat,
                               vis, albedo, spec, rough)
        normal[hit] = n.astype(np.float32)
        depth[hit] = t[hit]
        if want_visibility:
            vis_full = np.ones((len(dirs), len(omegas)), bool)
            vis_full[hit] = vis
    out = {
        "rgb_linear": lin.reshape(h, w, 3),
        "rgb": linear_to_srgb(lin).reshape(h, w, 3).astype(np.float32),
        "depth": depth.reshape(h, w),
        "normal": normal.reshape(h, w, 3),
        "hit": hit.reshape(h, w),
    }
    if want_visibility:
        out["visibility"] = vis_full.reshape(h, w, -1) if vis_full is not None else None
    return out


# ---------------------------------------------------------------------------
# camera rigs and surface sampling
# ---------------------------------------------------------------------------

def ring_cameras(scene: AnalyticScene, n: int, resolution: int,
                 elevations=(25.0, 50.0), distance_scale: float = 2.6) -> list[Camera]:
    lo, hi = np.asarray(scene.bbox[0]), np.asarray(scene.bbox[1])
    center = (lo + hi) / 2.0
    dist = distance_scale * float(np.linalg.norm(hi - lo)) / 2.0
    cams = []
    for i in range(n):
        az = 2.0 * np.pi * i / n
        el = np.radians(elevations[i % len(elevations)])
        eye = center + dist * np.array([np.cos(az) * np.cos(el),
                                        np.sin(az) * np.cos(el), np.sin(el)])
        focal = 1.1 * resolution
        cams.append(Camera(focal, resolution, resolution, look_at(eye, center)))
    return cams


def sample_surface(scene: AnalyticScene, n_points: int, seed: int = 0,
                   tol: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """Newton-projected rejection sampling of the SDF zero set."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(scene.bbox[0]), np.asarray(scene.bbox[1])
    pts = []
    while sum(len(p) for p in pts) < n_points:
        x = rng.uniform(lo, hi, size=(4 * n_points, 3))
        d, _ = scene_sdf(scene, x)
        x = x[np.abs(d) < 0.25 * np.linalg.norm(hi - lo)]
        for _ in range(12):
            d, pid = scene_sdf(scene, x)
            x = x - scene_normal(scene, x, pid) * d[:, None]
        d, _ = scene_sdf(scene, x)
        ok = np.abs(d) < tol
        inside = np.all((x >= lo) & (x <= hi), axis=-1)
        pts.append(x[ok & inside])
    x = np.concatenate(pts)[:n_points]
    return x.astype(np.float32), scene_normal(scene, x).astype(np.float32)


# ---------------------------------------------------------------------------
# dataset generation / loading
# ---------------------------------------------------------------------------

class Dataset:
    """Posed oracle renders plus the surface-sampled initial point cloud."""

    def __init__(self, scene: AnalyticScene, cameras: list[Camera],
                 images: list[np.ndarray], depths: list[np.ndarray],
                 normals: list[np.ndarray], n_train: int,
                 init_positions: np.ndarray, init_normals: np.ndarray):
        self.scene = scene
        self.cameras = cameras
        self.images = images      # sRGB float (H,W,3)
        self.depths = depths
        self.normals = normals
        self.n_train = n_train
        self.init_positions = init_positions
        self.init_normals = init_normals

    def train_views(self):
        return list(zip(self.cameras[:self.n_train], self.images[:self.n_train]))

    def test_views(self):
        return list(zip(self.cameras[self.n_train:], self.images[self.n_train:]))

    def make_cloud(self, feature_dim: int, seed: int = 0, k: int = 8,
                   radius_scale: float = 4.0) -> pc.NeuralPointCloud:
        rng = np.random.default_rng(seed)
        feats = rng.normal(0.0, 0.1, (len(self.init_positions), feature_dim))
        return pc.NeuralPointCloud(self.init_positions, feats.astype(np.float32),
                                   self.init_normals.copy(), k=k,
                                   radius_scale=radius_scale)


def make_dataset(scene: AnalyticScene, n_train: int = 24, n_test: int = 8,
                 resolution: int = 256, n_points: int = 6000, seed: int = 0,
                 out_dir=None) -> Dataset:
    cameras = ring_cameras(scene, n_train, resolution)
    # test rig interleaved at offset azimuths
    test_cams = ring_cameras(scene, n_test, resolution, elevations=(35.0,),
                             distance_scale=2.6)
    cameras = cameras + test_cams
    images, depths, normals = [], [], []
    for cam in cameras:
        res = oracle_render(scene, cam)
        images.append(res["rgb"])
        depths.append(res["depth"])
        normals.append(res["normal"])
    pos, nrm = sample_surface(scene, n_points, seed=seed)
    ds = Dataset(scene, cameras, images, depths, normals, n_train, pos, nrm)
    if out_dir is not None:
        save_dataset(ds, out_dir)
    return ds


def save_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(exist_ok=True)
    (out / "normal").mkdir(exist_ok=True)
    meta = {"scene": ds.scene.to_dict(), "n_train": ds.n_train,
            "cameras": [c.to_dict() for c in ds.cameras]}
    (out / "scene.json").write_text(json.dumps(meta))
    for i, (img, dep, nrm) in enumerate(zip(ds.images, ds.depths, ds.normals)):
        write_png(out / "images" / f"{i:03d}.png", img)
        write_pfm(out / "depth" / f"{i:03d}.pfm", np.where(np.isfinite(dep), dep, 0.0))
        write_pfm(out / "normal" / f"{i:03d}.pfm", nrm)
    ply = pc.NeuralPointCloud(ds.init_positions,
                              np.zeros((len(ds.init_positions), 1), np.float32),
                              ds.init_normals)
    pc.save_cloud(out / "init_points.ply", ply)


def load_dataset(path) -> Dataset:
    out = Path(path)
    meta = json.loads((out / "scene.json").read_text())
    scene = AnalyticScene.from_dict(meta["scene"])
    cameras = [Camera.from_dict(c) for c in meta["cameras"]]
    images, depths, normals = [], [], []
    for i in range(len(cameras)):
        images.append(read_png(out / "images" / f"{i:03d}.png").astype(np.float32))
        depths.append(read_pfm(out / "depth" / f"{i:03d}.pfm"))
        normals.append(read_pfm(out / "normal" / f"{i:03d}.pfm"))
    init = pc.load_cloud(out / "init_points.ply")
    return Dataset(scene, cameras, images, depths, normals, meta["n_train"],
                   init.positions, init.normals.data)


# ---------------------------------------------------------------------------
# stock scenes
# ---------------------------------------------------------------------------

def _probe_from_lights(lights: list[tuple], ambient: float = 0.0) -> il.LightProbe:
    """lights: list of (direction, rgb radiance); each lands in one texel."""
    values = np.full((il.PROBE_ROWS, il.PROBE_COLS, 3), ambient, np.float32)
    for direction, radiance in lights:
        d = np.asarray(direction, np.float64)
        d = d / np.linalg.norm(d)
        r, c = il.direction_to_texel(d[None])
        values[r[0], c[0]] = radiance
    return il.LightProbe(values)


def sphere_on_plane() -> AnalyticScene:
    prims = [
        Primitive("sphere", {"center": [0.0, 0.0, 0.5], "radius": 0.5},
                  BrdfSample((0.75, 0.35, 0.25), (0.04, 0.04, 0.04), 0.8)),
        Primitive("box", {"center": [0.0, 0.0, -0.1], "half": [1.4, 1.4, 0.1]},
                  BrdfSample((0.45, 0.5, 0.55), (0.04, 0.04, 0.04), 0.9)),
    ]
    lights = [([0.4, 0.3, 0.85], (72.0, 72.0, 68.0)),
              ([-0.6, 0.2, 0.75], (32.0, 34.0, 37.0)),
              ([0.1, -0.7, 0.7], (24.0, 24.0, 27.0)),
              ([-0.2, -0.3, 0.93], (20.0, 20.0, 20.0)),
              ([0.8, -0.2, 0.55], (16.0, 16.0, 16.0))]
    return AnalyticScene("sphere_on_plane", prims, _probe_from_lights(lights),
                         (np.array([-1.5, -1.5, -0.25]), np.array([1.5, 1.5, 1.1])))


def two_material_spheres() -> AnalyticScene:
    prims = [
        Primitive("sphere", {"center": [-0.55, 0.0, 0.45], "radius": 0.45},
                  BrdfSample((0.7, 0.3, 0.25), (0.04, 0.04, 0.04), 0.9)),
        Primitive("sphere", {"center": [0.55, 0.0, 0.45], "radius": 0.45},
                  BrdfSample((0.25, 0.35, 0.7), (0.9, 0.9, 0.9), 0.12)),
        Primitive("box", {"center": [0.0, 0.0, -0.1], "half": [1.5, 1.2, 0.1]},
                  BrdfSample((0.5, 0.5, 0.5), (0.04, 0.04, 0.04), 0.9)),
    ]
    lights = [([0.3, 0.4, 0.85], (64.0, 64.0, 61.0)),
              ([-0.5, -0.3, 0.8], (40.0, 40.0, 43.0)),
              ([0.7, -0.4, 0.6], (28.0, 28.0, 28.0))]
    return AnalyticScene("two_material_spheres", prims, _probe_from_lights(lights),
                         (np.array([-1.6, -1.3, -0.25]), np.array([1.6, 1.3, 1.0])))


def torus_three_lights() -> AnalyticScene:
    prims = [
        Primitive("torus", {"center": [0.0, 0.0, 0.3], "major": 0.6, "minor": 0.22},
                  BrdfSample((0.7, 0.6, 0.3), (0.06, 0.06, 0.06), 0.55)),
        Primitive("box", {"center": [0.0, 0.0, -0.1], "half": [1.4, 1.4, 0.1]},
                  BrdfSample((0.45, 0.45, 0.5), (0.04, 0.04, 0.04), 0.9)),
    ]
    # three well-separated bright texels; everything else dark
    lights = [([0.55, 0.25, 0.8], (58.0, 54.0, 50.0)),
              ([-0.6, 0.45, 0.66], (44.0, 48.0, 52.0)),
              ([0.05, -0.75, 0.66], (48.0, 48.0, 48.0))]
    return AnalyticScene("torus_three_lights", prims, _probe_from_lights(lights),
                         (np.array([-1.5, -1.5, -0.25]), np.array([1.5, 1.5, 0.9])))


STOCK_SCENES = {
    "sphere_on_plane": sphere_on_plane,
    "two_material_spheres": two_material_spheres,
    "torus_three_lights": torus_three_lights,
}

__all__ = [
    "AnalyticScene", "BrdfSample", "Dataset", "Primitive", "STOCK_SCENES",
    "load_dataset", "make_dataset", "normal_mae", "oracle_render",
    "oracle_visibility", "psnr", "ray_sphere_occluded", "ring_cameras",
    "sample_surface", "save_dataset", "scene_normal", "scene_sdf",
    "sphere_on_plane", "sphere_trace", "torus_three_lights",
    "two_material_spheres",
]
