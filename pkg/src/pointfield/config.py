"""Pipeline configuration: strict JSON parsing (unknown keys rejected)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .cloud import ModelConfig


class ConfigError(Exception):
    pass


def _from_dict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        f = names[key]
        if dataclasses.is_dataclass(f.type) or (isinstance(f.type, str) and f.type in _NESTED):
            sub = _NESTED[f.type] if isinstance(f.type, str) else f.type
            kwargs[key] = _from_dict(sub, value, f"{where}.{key}")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


@dataclass
class Stage1Config:
    iterations: int = 4000
    rays_per_iter: int = 320
    samples_per_ray: int = 40
    lambda_n: float = 1e-3
    lambda_s: float = 2e-3
    lambda_d: float = 5e-3
    cauchy_c: float = 0.1
    fd_pairs: int = 512          # short-baseline continuity probes per step (0 off)
    fd_epsilon: float = 0.01     # probe step length
    lambda_fd: float = 1e-1      # slope-consistency weight for the probes
    anchor_points: int = 256     # cloud points pinned to the zero level set (0 off)
    lambda_anchor: float = 1e-1
    warmup_iters: int = 800      # diffuse-only branch training
    normal_switch_iters: int = 2000  # gradient -> interpolated normal for R_s
    lr_mlp: float = 5e-4
    lr_points: float = 2e-3
    lr_sdf: float = 5e-4     # sdf residual head (small values keep the plane prior)
    lr_normals: float = 2e-4  # point normals (they anchor the local plane basis)
    prune_every: int = 0         # 0 disables; paper scale is every 10k
    grow_every: int = 0          # 0 disables; paper scale is every 40k
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_n", "lambda_s", "lambda_d"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.warmup_iters < max(self.iterations, 1) and self.iterations > 0:
            raise ConfigError("warmup_iters must be < iterations")


@dataclass
class Stage2Config:
    iterations: int = 1500
    rays_per_iter: int = 512
    lambda_c: float = 1.0
    lambda_g: float = 1.0
    lambda_l: float = 0.0        # optional diffuse supervision, default off
    lambda_e: float = 0.1        # probe energy sparsity (suppresses texels
                                 # the observations leave unconstrained)
    lr_brdf: float = 5e-4
    lr_env: float = 1e-3
    light_map_res: int = 96
    light_map_samples: int = 48  # ray samples per light depth pixel
    shadow_bias_scale: float = 1.5  # bias = scale * 2 * mean sample spacing
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_c", "lambda_g", "lambda_l", "lambda_e"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass
class PruneConfig:
    sdf_confidence: float = 0.99
    weight_threshold: float = 0.02
    recording_window: int = 1000
    max_removal_fraction: float = 0.5

    def __post_init__(self):
        if not 0.5 < self.sdf_confidence < 1.0:
            raise ConfigError("sdf_confidence must be in (0.5, 1)")
        if not 0.0 < self.weight_threshold < 1.0:
            raise ConfigError("weight_threshold must be in (0, 1)")


@dataclass
class GrowConfig:
    sdf_threshold: float = 0.05
    point_threshold: int = 8
    k_sparsest: int = 3

    def __post_init__(self):
        if self.sdf_threshold <= 0 or self.point_threshold <= 0 or self.k_sparsest <= 0:
            raise ConfigError("grow thresholds must be positive")


@dataclass
class RenderConfig:
    samples_per_ray: int = 48
    chunk: int = 4096
    background: list = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class PipelineConfig:
    scene: str = ""
    output_dir: str = "out"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    prune: PruneConfig = field(default_factory=PruneConfig)
    grow: GrowConfig = field(default_factory=GrowConfig)
    render: RenderConfig = field(default_factory=RenderConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return _from_dict(cls, data, "config")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        cfg = cls.from_dict(json.loads(Path(path).read_text()))
        # scene is either a stock scene name (validated downstream) or a path
        if cfg.scene and ("/" in cfg.scene or "\\" in cfg.scene):
            if not Path(cfg.scene).exists():
                raise ConfigError(f"scene path does not exist: {cfg.scene}")
        return cfg

    def to_dict(self) -> dict:
        return _to_dict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


_NESTED = {
    "ModelConfig": ModelConfig,
    "Stage1Config": Stage1Config,
    "Stage2Config": Stage2Config,
    "PruneConfig": PruneConfig,
    "GrowConfig": GrowConfig,
    "RenderConfig": RenderConfig,
}
