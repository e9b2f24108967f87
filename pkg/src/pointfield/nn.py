"""MLPs, positional encoding, Adam, and the binary checkpoint container."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ConfigurationError(Exception):
    """Shape or spec mismatch when wiring networks together."""


class DivergedTrainingError(Exception):
    """Raised when a NaN gradient or loss is encountered."""


OUTPUT_ACTIVATIONS = ("none", "sigmoid", "exponential", "softplus")


@dataclass
class MlpSpec:
    widths: list[int]  # input width, hidden widths..., output width
    output_activation: str = "none"
    activation: str = "relu"

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ConfigurationError("MlpSpec needs at least one hidden layer")
        if any(w <= 0 for w in self.widths):
            raise ConfigurationError(f"widths must be positive, got {self.widths}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"unknown output activation {self.output_activation!r}")

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]


def positional_encode(x: Tensor | np.ndarray, levels: int) -> Tensor:
    """concat(x, sin(2^k pi x), cos(2^k pi x)) for k = 0..levels-1, per component."""
    x = ad.ensure_tensor(x)
    parts = [x]
    for k in range(levels):
        scaled = ad.mul(x, float(2**k * np.pi))
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    if len(parts) == 1:
        return x
    return ad.concatenate(parts, axis=-1)


def encoded_width(dim: int, levels: int) -> int:
    return dim * (1 + 2 * levels)


def init_mlp(spec: MlpSpec, rng: np.random.Generator, prefix: str) -> dict[str, Tensor]:
    """Uniform Kaiming-style fan-in init; biases zero. Names are '{prefix}.W{i}'."""
    params: dict[str, Tensor] = {}
    for i, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)
        params[f"{prefix}.W{i}"] = Tensor(w, requires_grad=True, name=f"{prefix}.W{i}")
        params[f"{prefix}.b{i}"] = Tensor(
            np.zeros(fan_out, np.float32), requires_grad=True, name=f"{prefix}.b{i}"
        )
    return params


def mlp_forward(spec: MlpSpec, params: dict[str, Tensor], x: Tensor, prefix: str) -> Tensor:
    if x.shape[-1] != spec.in_width:
        raise ConfigurationError(
            f"{prefix}: input width {x.shape[-1]} != spec input width {spec.in_width}"
        )
    h = x
    n_layers = len(spec.widths) - 1
    for i in range(n_layers):
        h = ad.add(ad.matmul(h, params[f"{prefix}.W{i}"]), params[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            h = ad.relu(h)
    if spec.output_activation == "sigmoid":
        h = ad.sigmoid(h)
    elif spec.output_activation == "exponential":
        h = ad.exp(h)
    elif spec.output_activation == "softplus":
        h = ad.softplus(h)
    return h


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor],
              lr_overrides: dict[str, float] | None = None) -> None:
    """Bias-corrected Adam update in place; skips params without gradients.

    lr_overrides maps name prefixes to learning rates (longest match wins).
    """
    for name, p in params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise DivergedTrainingError(f"NaN/inf gradient for parameter {name!r}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        lr = state.lr
        if lr_overrides:
            best = -1
            for pref, val in lr_overrides.items():
                if name.startswith(pref) and len(pref) > best:
                    best, lr = len(pref), val
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(np.float32)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# Checkpoint container (see docs/checkpoint_format.md for the byte layout)
# ---------------------------------------------------------------------------

_MAGIC = b"PFCK"
_VERSION = 1


def _write_blob(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_blob(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", fh.read(2))
    name = fh.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
    return name, data.astype(np.float32)


def save_checkpoint(path, params: dict[str, Tensor], optimizer: AdamState | None = None,
                    meta: dict[str, float] | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        meta = meta or {}
        fh.write(struct.pack("<I", len(meta)))
        for k, val in sorted(meta.items()):
            _write_blob(fh, k, np.asarray(val, np.float32))
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            _write_blob(fh, name, params[name].data)
        if optimizer is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", optimizer.step_count))
            fh.write(struct.pack("<4f", optimizer.lr, optimizer.beta1,
                                 optimizer.beta2, optimizer.eps))
            fh.write(struct.pack("<I", len(optimizer.m)))
            for name in sorted(optimizer.m):
                _write_blob(fh, "m:" + name, optimizer.m[name])
                _write_blob(fh, "v:" + name, optimizer.v[name])


def load_checkpoint(path) -> tuple[dict[str, Tensor], AdamState | None, dict[str, float]]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigurationError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
        (n_meta,) = struct.unpack("<I", fh.read(4))
        meta = {}
        for _ in range(n_meta):
            k, v = _read_blob(fh)
            meta[k] = float(v.reshape(()))
        (n_params,) = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(n_params):
            name, data = _read_blob(fh)
            params[name] = Tensor(data, requires_grad=True, name=name)
        (has_opt,) = struct.unpack("<B", fh.read(1))
        optimizer = None
        if has_opt:
            (step_count,) = struct.unpack("<Q", fh.read(8))
            lr, b1, b2, eps = struct.unpack("<4f", fh.read(16))
            optimizer = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step_count=step_count)
            (n_state,) = struct.unpack("<I", fh.read(4))
            for _ in range(n_state):
                mname, m = _read_blob(fh)
                vname, v = _read_blob(fh)
                optimizer.m[mname[2:]] = m.copy()
                optimizer.v[vname[2:]] = v.copy()
    return params, optimizer, meta
