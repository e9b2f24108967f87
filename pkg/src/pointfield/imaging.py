"""Cameras, ray generation, tone mapping, and PNG/PFM image I/O."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass
class Camera:
    focal: float
    width: int
    height: int
    c2w: np.ndarray  # (4,4) rigid camera-to-world
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, np.float64)
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        r = self.c2w[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-5):
            raise ValueError("camera rotation is not orthonormal")
        if self.cx is None:
            self.cx = self.width / 2.0
        if self.cy is None:
            self.cy = self.height / 2.0

    def rays(self, pixels: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """World-space ray origins and unit directions.

        pixels: (N,2) array of (col,row) coords, or None for the full image
        in row-major order. Convention: +x right, +y down, camera looks +z.
        """
        if pixels is None:
            cols, rows = np.meshgrid(np.arange(self.width), np.arange(self.height))
            pixels = np.stack([cols.ravel(), rows.ravel()], axis=-1)
        pixels = np.asarray(pixels, np.float64)
        x = (pixels[:, 0] + 0.5 - self.cx) / self.focal
        y = (pixels[:, 1] + 0.5 - self.cy) / self.focal
        dirs_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
        dirs = dirs_cam @ self.c2w[:3, :3].T
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        origins = np.broadcast_to(self.c2w[:3, 3], dirs.shape)
        return origins.astype(np.float32), dirs.astype(np.float32)

    def project(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points -> (pixel coords (N,2), camera-frame depth (N,))."""
        x = np.asarray(x, np.float64).reshape(-1, 3)
        w2c_r = self.c2w[:3, :3].T
        cam = (x - self.c2w[:3, 3]) @ w2c_r.T
        z = cam[:, 2]
        u = cam[:, 0] / np.maximum(z, 1e-9) * self.focal + self.cx - 0.5
        v = cam[:, 1] / np.maximum(z, 1e-9) * self.focal + self.cy - 0.5
        return np.stack([u, v], axis=-1), z

    def to_dict(self) -> dict:
        return {"focal": self.focal, "width": self.width, "height": self.height,
                "c2w": self.c2w.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["focal"], d["width"], d["height"], np.array(d["c2w"]))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world with +z forward, +x right, +y down (image convention)."""
    eye = np.asarray(eye, np.float64)
    fwd = np.asarray(target, np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, np.float64)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-8:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = right, down, fwd, eye
    return c2w


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1.0 / 2.4) - 0.055)


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def write_png(path, img: np.ndarray) -> None:
    """img: float in [0,1] (H,W,3) or (H,W), already sRGB-encoded."""
    arr = (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr).save(str(path))


def read_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(str(path)).convert("RGB"), np.float32)
    return arr / 255.0


def write_pfm(path, img: np.ndarray) -> None:
    img = np.asarray(img, np.float32)
    color = img.ndim == 3 and img.shape[2] == 3
    with open(path, "wb") as fh:
        fh.write(b"PF\n" if color else b"Pf\n")
        h, w = img.shape[:2]
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")  # little-endian, top-down stored bottom-up per spec
        fh.write(np.flipud(img).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        color = kind == b"PF"
        w, h = map(int, fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype)
        shape = (h, w, 3) if color else (h, w)
        return np.flipud(data.reshape(shape)).astype(np.float32).copy()


def psnr(a: np.ndarray, b: np.ndarray, cap: float = 99.0) -> float:
    """Peak signal-to-noise ratio in dB for [0,1]-valued images."""
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse <= 0:
        return cap
    return min(cap, 10.0 * np.log10(1.0 / mse))


def normal_mae(pred: np.ndarray, true: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean angular error between unit normal maps, in degrees."""
    dots = np.sum(pred * true, axis=-1)
    ang = np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))
    if mask is not None:
        ang = ang[mask]
    return float(np.mean(ang)) if ang.size else 0.0
