"""Neural point cloud: positions with learned features/normals, spatial index,
inverse-distance feature aggregation, and the SDF / radiance heads."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from . import nn
from .autodiff import Tensor

# SDF value reported for query points with no neighbors (free space)
FREE_SPACE_SDF = 1.0e3


@dataclass
class ModelConfig:
    feature_dim: int = 32
    cond_dim: int = 64
    hidden_dim: int = 64
    feat_layers: int = 3
    head_layers: int = 2
    k_neighbors: int = 8
    radius_scale: float = 4.0  # query radius = radius_scale * mean point spacing
    pe_position: int = 5
    pe_view: int = 4
    pe_light: int = 3
    env_hidden: int = 64
    beta_init: float = 0.03
    roughness_floor: float = 0.01

    def mlp_specs(self) -> dict[str, nn.MlpSpec]:
        pos_in = self.feature_dim + nn.encoded_width(3, self.pe_position)
        spec_in = self.cond_dim + nn.encoded_width(3, self.pe_view) + 3 + 1
        h = self.hidden_dim
        return {
            "feat": nn.MlpSpec([pos_in] + [self.cond_dim] * self.feat_layers),
            "sdf": nn.MlpSpec([self.cond_dim, h, 1]),
            "rad_d": nn.MlpSpec([self.cond_dim] + [h] * self.head_layers + [3], "sigmoid"),
            "rad_s": nn.MlpSpec([spec_in] + [h] * self.head_layers + [3], "softplus"),
            "brdf_a": nn.MlpSpec([self.cond_dim] + [h] * self.head_layers + [3], "sigmoid"),
            "brdf_s": nn.MlpSpec([self.cond_dim] + [h] * self.head_layers + [3], "sigmoid"),
            "brdf_r": nn.MlpSpec([self.cond_dim] + [h] * self.head_layers + [1], "sigmoid"),
            "env": nn.MlpSpec([nn.encoded_width(3, self.pe_light), self.env_hidden,
                               self.env_hidden, 3], "exponential"),
        }


# parameters owned by stage 1 (frozen during lighting decomposition)
STAGE1_PREFIXES = ("feat.", "sdf.", "rad_d.", "rad_s.", "beta_raw", "points.")
STAGE2_PREFIXES = ("brdf_a.", "brdf_s.", "brdf_r.", "env.")


class Model:
    """All MLP weights plus the density sharpness parameter beta."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.specs = cfg.mlp_specs()
        self.params = params

    @classmethod
    def create(cls, cfg: ModelConfig, rng: np.random.Generator) -> "Model":
        params: dict[str, Tensor] = {}
        for prefix, spec in cfg.mlp_specs().items():
            params.update(nn.init_mlp(spec, rng, prefix))
        beta_raw = float(np.log(np.expm1(cfg.beta_init)))
        params["beta_raw"] = Tensor(np.float32(beta_raw), requires_grad=True, name="beta_raw")
        # the SDF head learns a residual on the tangent-plane offset: start at 0
        last = len(cfg.mlp_specs()["sdf"].widths) - 2
        params[f"sdf.W{last}"].data[:] = 0.0
        return cls(cfg, params)

    def beta(self) -> Tensor:
        return ad.softplus(self.params["beta_raw"])

    def forward(self, name: str, x: Tensor) -> Tensor:
        return nn.mlp_forward(self.specs[name], self.params, x, name)

    def init_brdf_albedo_from_diffuse(self) -> None:
        """Copy diffuse radiance head weights into the albedo head."""
        for key in list(self.params):
            if key.startswith("rad_d."):
                target = "brdf_a." + key[len("rad_d."):]
                self.params[target].data = self.params[key].data.copy()

    def stage_params(self, stage: int) -> dict[str, Tensor]:
        prefixes = STAGE1_PREFIXES if stage == 1 else STAGE2_PREFIXES
        return {k: v for k, v in self.params.items() if k.startswith(prefixes)}


@dataclass
class QueryResult:
    indices: np.ndarray        # (N, k) int64, clamped to 0 where invalid
    valid: np.ndarray          # (N, k) bool
    rel: np.ndarray            # (N, k, 3) x - p_i (zero where invalid)
    weights: np.ndarray        # (N, k) inverse distances, 0 where invalid
    norm_weights: np.ndarray   # (N, k) normalized, rows sum to 1 when any valid
    any_valid: np.ndarray      # (N,) bool


class NeuralPointCloud:
    """Explicit geometry: per-point position, learned feature, learned unit
    normal, and the recorded max compositing weight used for pruning."""

    def __init__(self, positions: np.ndarray, features: np.ndarray,
                 normals: np.ndarray, k: int = 8, radius_scale: float = 4.0,
                 radius: float | None = None):
        self.positions = np.asarray(positions, np.float32).reshape(-1, 3)
        self.features = Tensor(features, requires_grad=True, name="points.features")
        self.normals = Tensor(normals, requires_grad=True, name="points.normals")
        self.max_weight = np.zeros(len(self.positions), np.float32)
        self.k = k
        self.radius_scale = radius_scale
        self._fixed_radius = radius
        self.version = 0
        self.rebuild_index()

    def __len__(self) -> int:
        return len(self.positions)

    # ---- spatial index -------------------------------------------------
    def rebuild_index(self) -> None:
        self._tree = cKDTree(self.positions)
        if self._fixed_radius is not None:
            self.radius = float(self._fixed_radius)
        else:
            d, _ = self._tree.query(self.positions, k=2)
            self.radius = float(self.radius_scale * np.mean(d[:, 1]))
        self._build_grid()
        self.version += 1

    def _build_grid(self) -> None:
        cell = self.radius
        lo = self.positions.min(axis=0) - 2 * cell
        hi = self.positions.max(axis=0) + 2 * cell
        dims = np.maximum(np.ceil((hi - lo) / cell).astype(int), 1)
        occ = np.zeros(dims, bool)
        ijk = np.clip(((self.positions - lo) / cell).astype(int), 0, dims - 1)
        occ[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = True
        # dilate by one cell so any sample within R of a point is flagged
        from scipy.ndimage import binary_dilation
        self.occupancy = binary_dilation(occ, iterations=1)
        self.grid_origin = lo.astype(np.float32)
        self.grid_cell = np.float32(cell)
        self.grid_dims = dims
        self.point_cell_counts = np.zeros(dims, np.int64)
        np.add.at(self.point_cell_counts, (ijk[:, 0], ijk[:, 1], ijk[:, 2]), 1)

    def occupied_at(self, x: np.ndarray) -> np.ndarray:
        ijk = ((x - self.grid_origin) / self.grid_cell).astype(int)
        inside = np.all((ijk >= 0) & (ijk < self.grid_dims), axis=-1)
        ijk = np.clip(ijk, 0, self.grid_dims - 1)
        return inside & self.occupancy[ijk[..., 0], ijk[..., 1], ijk[..., 2]]

    def bounds(self, pad: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        return (self.positions.min(axis=0) - pad, self.positions.max(axis=0) + pad)

    # ---- geometry edits ------------------------------------------------
    def set_points(self, positions: np.ndarray, normals: np.ndarray | None = None) -> None:
        assert positions.shape == self.positions.shape
        self.positions = np.asarray(positions, np.float32)
        if normals is not None:
            self.normals.data = np.asarray(normals, np.float32)
        self.rebuild_index()

    def renormalize(self) -> None:
        n = self.normals.data
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        self.normals.data = (n / np.maximum(norms, 1e-8)).astype(np.float32)

    def param_dict(self) -> dict[str, Tensor]:
        return {"points.features": self.features, "points.normals": self.normals}


def knn_query(cloud: NeuralPointCloud, x: np.ndarray) -> QueryResult:
    """Up to k nearest points within the query radius; empty rows mean free space."""
    x = np.asarray(x, np.float32).reshape(-1, 3)
    k = min(cloud.k, len(cloud))
    dist, idx = cloud._tree.query(x, k=k, distance_upper_bound=cloud.radius)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    valid = np.isfinite(dist)
    idx = np.where(valid, idx, 0).astype(np.int64)
    w = np.where(valid, 1.0 / np.maximum(dist, 1e-8), 0.0).astype(np.float32)
    wsum = w.sum(axis=1, keepdims=True)
    norm_w = np.where(wsum > 0, w / np.maximum(wsum, 1e-12), 0.0).astype(np.float32)
    rel = np.where(valid[..., None], x[:, None, :] - cloud.positions[idx], 0.0).astype(np.float32)
    return QueryResult(idx, valid, rel, w, norm_w, valid.any(axis=1))


def _differentiable_weights(q: QueryResult, rel: Tensor) -> tuple[Tensor, Tensor]:
    """Recompute inverse-distance weights from differentiable offsets."""
    dist = ad.sqrt(ad.tsum(ad.mul(rel, rel), axis=-1))
    w = ad.div(1.0, ad.maximum(dist, 1e-8))
    w = ad.where(q.valid, w, ad.ensure_tensor(np.zeros(1, np.float32)))
    wsum = ad.maximum(ad.tsum(w, axis=1, keepdims=True), 1e-12)
    return w, ad.div(w, wsum)


def aggregate_features(cloud: NeuralPointCloud, model: Model, q: QueryResult,
                       x: Tensor | None = None) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Per-neighbor conditioned features and their inverse-distance blend.

    Returns (f_ix (N,k,c), f_x (N,c), norm_weights (N,k), rel (N,k,3)). Pass a
    differentiable x to let gradients flow into the query position (used for
    SDF normals).
    """
    n, k = q.indices.shape
    cfg = model.cfg
    if x is not None:
        p = cloud.positions[q.indices]  # (N,k,3) constant
        rel = ad.sub(ad.reshape(x, (n, 1, 3)), Tensor(p))
        rel = ad.where(q.valid[..., None], rel, ad.ensure_tensor(np.zeros(1, np.float32)))
        _, norm_w = _differentiable_weights(q, rel)
    else:
        rel = Tensor(q.rel)
        norm_w = Tensor(q.norm_weights)
    enc = nn.positional_encode(ad.reshape(rel, (n * k, 3)), cfg.pe_position)
    f_i = ad.take_rows(cloud.features, q.indices.reshape(-1))
    f_ix = model.forward("feat", ad.concatenate([f_i, enc], axis=-1))
    f_ix = ad.reshape(f_ix, (n, k, cfg.cond_dim))
    f_x = ad.tsum(ad.mul(f_ix, ad.reshape(norm_w, (n, k, 1))), axis=1)
    return f_ix, f_x, norm_w, rel


def plane_offsets(cloud: NeuralPointCloud, q: QueryResult, rel: Tensor) -> Tensor:
    """Signed distance of the query to each neighbor's tangent plane,
    n_i . (x - p_i); point normals enter as constants (geometry scaffold)."""
    n_i = cloud.normals.data[q.indices]  # (N,k,3) constant
    off = ad.tsum(ad.mul(rel, Tensor(n_i)), axis=-1)
    return ad.where(q.valid, off, ad.ensure_tensor(np.zeros(1, np.float32)))


def predict_sdf(model: Model, q: QueryResult, f_ix: Tensor,
                norm_weights: Tensor | None = None,
                plane: Tensor | None = None) -> Tensor:
    """Interpolated SDF d(x); rows with no neighbors get the free-space sentinel.

    Per-neighbor prediction is a learned residual on top of the tangent-plane
    offset when `plane` is given, so the field starts as a local signed
    distance and stays metrically calibrated.
    """
    n, k = q.indices.shape
    d_i = model.forward("sdf", ad.reshape(f_ix, (n * k, model.cfg.cond_dim)))
    d_i = ad.reshape(d_i, (n, k))
    if plane is not None:
        d_i = ad.add(d_i, plane)
    w = norm_weights if norm_weights is not None else Tensor(q.norm_weights)
    d = ad.tsum(ad.mul(d_i, w), axis=1)
    if not q.any_valid.all():
        d = ad.where(q.any_valid, d, ad.ensure_tensor(np.float32(FREE_SPACE_SDF)))
    return d


def predict_radiance(model: Model, f_x: Tensor, view: np.ndarray,
                     normal: np.ndarray | Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Diffuse + specular radiance (Eq. 8-style decomposition)."""
    view = np.asarray(view, np.float32)
    n_t = ad.ensure_tensor(normal)
    c_d = model.forward("rad_d", f_x)
    enc_v = nn.positional_encode(Tensor(view), model.cfg.pe_view)
    vdotn = ad.tsum(ad.mul(n_t, Tensor(view)), axis=-1, keepdims=True)
    c_s = model.forward("rad_s", ad.concatenate([f_x, enc_v, n_t, vdotn], axis=-1))
    return c_d, c_s, ad.add(c_d, c_s)


def interpolate_point_normal(cloud: NeuralPointCloud, q: QueryResult,
                             differentiable: bool = True) -> tuple[Tensor, np.ndarray]:
    """Inverse-distance blend of neighboring point normals, renormalized.

    Returns (normals (N,3), degenerate mask) -- degenerate rows (antipodal
    cancellation or empty query) must fall back to the gradient normal.
    """
    n, k = q.indices.shape
    src = cloud.normals if differentiable else Tensor(cloud.normals.data)
    n_i = ad.take_rows(src, q.indices.reshape(-1))
    n_i = ad.reshape(n_i, (n, k, 3))
    blended = ad.tsum(ad.mul(n_i, Tensor(q.norm_weights[..., None])), axis=1)
    length = np.linalg.norm(blended.data, axis=-1)
    degenerate = (length < 1e-6) | ~q.any_valid
    safe = ad.maximum(ad.sqrt(ad.tsum(ad.mul(blended, blended), axis=-1, keepdims=True)), 1e-8)
    return ad.div(blended, safe), degenerate


# ---------------------------------------------------------------------------
# Point-cloud file I/O: PLY (x,y,z,nx,ny,nz) + sidecar feature blob
# ---------------------------------------------------------------------------

_FEAT_MAGIC = b"PFFB"


def save_cloud(ply_path, cloud: NeuralPointCloud) -> None:
    pos, nrm = cloud.positions, cloud.normals.data
    m = len(pos)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {m}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        "end_header\n"
    )
    rows = np.hstack([pos, nrm]).astype("<f4")
    with open(ply_path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rows.tobytes())
    feat = cloud.features.data
    with open(str(ply_path) + ".feat", "wb") as fh:
        fh.write(_FEAT_MAGIC)
        fh.write(struct.pack("<III", 1, feat.shape[0], feat.shape[1]))
        fh.write(np.ascontiguousarray(feat, "<f4").tobytes())


def load_cloud(ply_path, k: int = 8, radius_scale: float = 4.0) -> NeuralPointCloud:
    with open(ply_path, "rb") as fh:
        header = b""
        while not header.endswith(b"end_header\n"):
            header += fh.readline()
        m = int([ln for ln in header.decode().splitlines()
                 if ln.startswith("element vertex")][0].split()[-1])
        rows = np.frombuffer(fh.read(m * 24), dtype="<f4").reshape(m, 6)
    with open(str(ply_path) + ".feat", "rb") as fh:
        if fh.read(4) != _FEAT_MAGIC:
            raise nn.ConfigurationError(f"{ply_path}.feat: bad feature blob")
        _, count, dim = struct.unpack("<III", fh.read(12))
        feat = np.frombuffer(fh.read(4 * count * dim), dtype="<f4").reshape(count, dim)
    return NeuralPointCloud(rows[:, :3].copy(), feat.copy(), rows[:, 3:].copy(),
                            k=k, radius_scale=radius_scale)
