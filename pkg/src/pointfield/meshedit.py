"""Geometry editing: marching-cubes mesh extraction, point-to-mesh
registration, deformation transfer, and direct rigid point edits."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import cloud as pc
from . import renderer as rd


class EmptyMeshError(Exception):
    pass


class TopologyMismatchError(Exception):
    pass


# ---------------------------------------------------------------------------
# triangle mesh
# ---------------------------------------------------------------------------

@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V,3) float64
    faces: np.ndarray     # (F,3) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face indices out of range")
        self._drop_degenerate()

    def _drop_degenerate(self) -> None:
        v = self.vertices[self.faces]
        area2 = np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=-1)
        self.faces = self.faces[area2 > 1e-14]

    def face_normals(self) -> np.ndarray:
        v = self.vertices[self.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)

    def face_frames(self) -> np.ndarray:
        """Per-face orthonormal frame (F,3,3): rows e1 (first edge), e2, n."""
        v = self.vertices[self.faces]
        e1 = v[:, 1] - v[:, 0]
        e1 = e1 / np.maximum(np.linalg.norm(e1, axis=-1, keepdims=True), 1e-12)
        n = self.face_normals()
        e2 = np.cross(n, e1)
        return np.stack([e1, e2, n], axis=1)

    def vertex_normals(self) -> np.ndarray:
        fn = self.face_normals()
        out = np.zeros_like(self.vertices)
        for c in range(3):
            np.add.at(out, self.faces[:, c], fn)
        return out / np.maximum(np.linalg.norm(out, axis=-1, keepdims=True), 1e-12)


def extract_mesh(model: pc.Model, cloud: pc.NeuralPointCloud,
                 resolution: int = 128, pad: float | None = None) -> TriangleMesh:
    """Marching cubes over a dense SDF grid; free cells hold the +large sentinel."""
    from skimage import measure
    pad = 2.0 * cloud.radius if pad is None else pad
    lo, hi = cloud.bounds(pad=pad)
    axes = [np.linspace(lo[a], hi[a], resolution, dtype=np.float32) for a in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    sdf = rd.predict_sdf_at(model, cloud, grid).reshape(resolution, resolution, resolution)
    if sdf.min() >= 0 or sdf.max() <= 0:
        raise EmptyMeshError("SDF grid has no zero crossing")
    spacing = [(hi[a] - lo[a]) / (resolution - 1) for a in range(3)]
    verts, faces, _, _ = measure.marching_cubes(sdf, level=0.0, spacing=spacing)
    return TriangleMesh(verts + lo, faces)


# ---------------------------------------------------------------------------
# closest point on triangle (Ericson), vectorized over pairs
# ---------------------------------------------------------------------------

def closest_point_on_triangles(p: np.ndarray, tri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """p: (M,3); tri: (M,3,3). Returns (closest points (M,3), barycentric (M,3))."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, axis=-1)
    d2 = np.sum(ac * ap, axis=-1)
    bp = p - b
    d3 = np.sum(ab * bp, axis=-1)
    d4 = np.sum(ac * bp, axis=-1)
    cp = p - c
    d5 = np.sum(ab * cp, axis=-1)
    d6 = np.sum(ac * cp, axis=-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = np.maximum(va + vb + vc, 1e-30)
    v = np.clip(vb / denom, 0.0, 1.0)
    w = np.clip(vc / denom, 0.0, 1.0)
    bary = np.stack([1.0 - v - w, v, w], axis=-1)
    # corner / edge regions override the interior solution
    reg_a = (d1 <= 0) & (d2 <= 0)
    reg_b = (d3 >= 0) & (d4 <= d3)
    reg_c = (d6 >= 0) & (d5 <= d6)
    t_ab = np.where(d1 - d3 != 0, d1 / np.maximum(d1 - d3, 1e-30), 0.0)
    reg_ab = ~reg_a & ~reg_b & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    t_ac = np.where(d2 - d6 != 0, d2 / np.maximum(d2 - d6, 1e-30), 0.0)
    reg_ac = ~reg_a & ~reg_c & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    t_bc = (d4 - d3) / np.maximum((d4 - d3) + (d5 - d6), 1e-30)
    reg_bc = ~reg_b & ~reg_c & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    bary[reg_a] = [1.0, 0.0, 0.0]
    bary[reg_b] = [0.0, 1.0, 0.0]
    bary[reg_c] = [0.0, 0.0, 1.0]
    for reg, t, cols in ((reg_ab, t_ab, (0, 1)), (reg_ac, t_ac, (0, 2)),
                         (reg_bc, t_bc, (1, 2))):
        if reg.any():
            bb = np.zeros((int(reg.sum()), 3))
            bb[:, cols[0]] = 1.0 - np.clip(t[reg], 0.0, 1.0)
            bb[:, cols[1]] = np.clip(t[reg], 0.0, 1.0)
            bary[reg] = bb
    closest = np.einsum("mk,mkd->md", bary, tri)
    return closest, bary


# ---------------------------------------------------------------------------
# registration + deformation transfer
# ---------------------------------------------------------------------------

@dataclass
class PointRegistration:
    face: np.ndarray          # (N,) face id, -1 when unregistered
    bary: np.ndarray          # (N,3) clamped barycentric coordinates
    offset_local: np.ndarray  # (N,3) offset in the face frame; [...,2] = signed
                              # distance along the face normal
    registered: np.ndarray    # (N,) bool

    @property
    def signed_distance(self) -> np.ndarray:
        return self.offset_local[:, 2]


def register_points(cloud: pc.NeuralPointCloud, mesh: TriangleMesh,
                    radius: float | None = None, candidates: int = 32) -> PointRegistration:
    """Bind each point to its nearest mesh face (deterministic tie-break on
    the smallest face index). Points farther than the registration radius
    from every face are flagged unregistered and left untouched later."""
    p = cloud.positions.astype(np.float64)
    if radius is None:
        radius = 3.0 * cloud.radius / cloud.radius_scale
    tris = mesh.vertices[mesh.faces]
    centroids = tris.mean(axis=1)
    k = min(candidates, len(centroids))
    _, cand = cKDTree(centroids).query(p, k=k)
    cand = cand.reshape(len(p), k)
    n_pts = len(p)
    best_d = np.full(n_pts, np.inf)
    best_face = np.full(n_pts, -1, np.int64)
    best_bary = np.zeros((n_pts, 3))
    best_closest = np.zeros((n_pts, 3))
    for j in range(k):
        fid = cand[:, j]
        closest, bary = closest_point_on_triangles(p, tris[fid])
        d = np.linalg.norm(p - closest, axis=-1)
        better = (d < best_d - 1e-12) | ((np.abs(d - best_d) <= 1e-12) & (fid < best_face))
        best_d = np.where(better, d, best_d)
        best_face = np.where(better, fid, best_face)
        best_bary[better] = bary[better]
        best_closest[better] = closest[better]
    registered = best_d <= radius
    frames = mesh.face_frames()[np.maximum(best_face, 0)]
    offset = np.einsum("nd,nkd->nk", p - best_closest, frames)
    offset[~registered] = 0.0
    best_face[~registered] = -1
    return PointRegistration(best_face, best_bary, offset, registered)


def transfer_deformation(reg: PointRegistration, mesh: TriangleMesh,
                         deformed: TriangleMesh, cloud: pc.NeuralPointCloud) -> dict:
    """Move points with the deforming mesh (anchor + face-frame offset);
    rotate point normals by each face's frame rotation. Features unchanged."""
    if mesh.faces.shape != deformed.faces.shape or not np.array_equal(mesh.faces, deformed.faces):
        raise TopologyMismatchError("deformed mesh must share face topology")
    positions = cloud.positions.astype(np.float64).copy()
    normals = cloud.normals.data.astype(np.float64).copy()
    idx = np.flatnonzero(reg.registered)
    if idx.size:
        fid = reg.face[idx]
        tri_new = deformed.vertices[deformed.faces[fid]]
        anchor = np.einsum("nk,nkd->nd", reg.bary[idx], tri_new)
        frames_old = mesh.face_frames()[fid]
        frames_new = deformed.face_frames()[fid]
        positions[idx] = anchor + np.einsum("nk,nkd->nd", reg.offset_local[idx], frames_new)
        # rotation taking the old frame to the new one
        rot = np.einsum("nki,nkj->nij", frames_new, frames_old)
        normals[idx] = np.einsum("nij,nj->ni", rot, normals[idx])
    cloud.set_points(positions.astype(np.float32), normals.astype(np.float32))
    return {"moved": int(idx.size), "unregistered": int((~reg.registered).sum())}


# ---------------------------------------------------------------------------
# direct rigid edits
# ---------------------------------------------------------------------------

@dataclass
class EditSelection:
    indices: np.ndarray        # point ids
    rotation: np.ndarray       # (3,3) in SO(3)
    translation: np.ndarray    # (3,)
    scale: float = 1.0
    pivot: np.ndarray | None = None  # rotation/scale center; default selection centroid

    def __post_init__(self):
        self.indices = np.asarray(self.indices, np.int64).reshape(-1)
        self.rotation = np.asarray(self.rotation, np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, np.float64).reshape(3)
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.pivot is not None:
            self.pivot = np.asarray(self.pivot, np.float64).reshape(3)


def apply_rigid_edit(cloud: pc.NeuralPointCloud, sel: EditSelection) -> dict:
    """positions -> s*R*(p - pivot) + pivot + t; normals -> R*n; features kept."""
    idx = sel.indices
    if idx.size == 0:
        return {"moved": 0}
    p = cloud.positions.astype(np.float64)
    pivot = p[idx].mean(axis=0) if sel.pivot is None else sel.pivot
    moved = sel.scale * (p[idx] - pivot) @ sel.rotation.T + pivot + sel.translation
    positions = p.copy()
    positions[idx] = moved
    normals = cloud.normals.data.astype(np.float64).copy()
    normals[idx] = normals[idx] @ sel.rotation.T
    cloud.set_points(positions.astype(np.float32), normals.astype(np.float32))
    return {"moved": int(idx.size)}


def quaternion_to_matrix(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) -> rotation matrix."""
    w, x, y, z = np.asarray(q, np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------------------
# mesh I/O and edit job files
# ---------------------------------------------------------------------------

def save_mesh_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces + 1:
            fh.write(f"f {f[0]} {f[1]} {f[2]}\n")


def load_mesh_obj(path) -> TriangleMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(tok.split("/")[0]) - 1 for tok in parts[1:4]])
    return TriangleMesh(np.array(verts), np.array(faces))


def save_mesh_ply(path, mesh: TriangleMesh) -> None:
    v = mesh.vertices.astype("<f4")
    f = mesh.faces.astype("<i4")
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(v)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              f"element face {len(f)}\n"
              "property list uchar int vertex_indices\nend_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(v.tobytes())
        counts = np.full((len(f), 1), 3, "u1")
        rows = np.empty(len(f), dtype=[("n", "u1"), ("idx", "<i4", 3)])
        rows["n"] = 3
        rows["idx"] = f
        fh.write(rows.tobytes())
        del counts


def load_mesh_ply(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        header = b""
        while not header.endswith(b"end_header\n"):
            header += fh.readline()
        lines = header.decode().splitlines()
        nv = int([ln for ln in lines if ln.startswith("element vertex")][0].split()[-1])
        nf = int([ln for ln in lines if ln.startswith("element face")][0].split()[-1])
        verts = np.frombuffer(fh.read(nv * 12), "<f4").reshape(nv, 3)
        rows = np.frombuffer(fh.read(nf * 13), dtype=[("n", "u1"), ("idx", "<i4", 3)])
    return TriangleMesh(verts.astype(np.float64), rows["idx"].astype(np.int64))


def load_mesh(path) -> TriangleMesh:
    path = str(path)
    return load_mesh_obj(path) if path.endswith(".obj") else load_mesh_ply(path)


def save_mesh(path, mesh: TriangleMesh) -> None:
    path = str(path)
    if path.endswith(".obj"):
        save_mesh_obj(path, mesh)
    else:
        save_mesh_ply(path, mesh)


def load_edit_job(path) -> dict:
    """Edit job JSON: either {'mesh':..., 'deformed':...} for Alg.-1 transfer
    or {'edits': [{'indices'|'box', 'quaternion', 'translation', 'scale'}]}."""
    job = json.loads(Path(path).read_text())
    if "mesh" in job and "deformed" in job:
        return {"kind": "deform", "mesh": job["mesh"], "deformed": job["deformed"]}
    if "edits" in job:
        return {"kind": "rigid", "edits": job["edits"]}
    raise ValueError("edit job must contain mesh/deformed paths or an edits list")


def selection_from_spec(cloud: pc.NeuralPointCloud, spec: dict) -> EditSelection:
    if "indices" in spec:
        idx = np.asarray(spec["indices"], np.int64)
    elif "box" in spec:
        lo = np.asarray(spec["box"][0], np.float64)
        hi = np.asarray(spec["box"][1], np.float64)
        idx = np.flatnonzero(np.all((cloud.positions >= lo) & (cloud.positions <= hi), axis=1))
    else:
        raise ValueError("selection needs 'indices' or 'box'")
    rot = quaternion_to_matrix(spec.get("quaternion", [1.0, 0.0, 0.0, 0.0]))
    return EditSelection(idx, rot, np.asarray(spec.get("translation", [0, 0, 0]), np.float64),
                         float(spec.get("scale", 1.0)),
                         np.asarray(spec["pivot"], np.float64) if "pivot" in spec else None)
