"""Pose-control and pixel-fidelity metrics.

Rotation error is the geodesic angle between rotations, translation error the
Euclidean gap between positions, both averaged over frames.  PSNR and SSIM
follow their standard single-scale definitions (SSIM: 11x11 Gaussian window,
sigma 1.5).
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .geometry import Rotation3, rotation_matrix
from .plucker import CameraPose

IMAGE_MAGIC = b"IMGF"
IMAGE_VERSION = 1

PoseSequence = list[tuple[Rotation3, np.ndarray]]


def poses_from_route(frames: list[CameraPose]) -> PoseSequence:
    """Convert route frames to (rotation, translation) pairs."""
    return [
        (rotation_matrix(p.orientation), np.array(p.position)) for p in frames
    ]


def _check_lengths(gt: PoseSequence, est: PoseSequence) -> None:
    if len(gt) != len(est):
        raise ValueError(
            f"pose sequences differ in length: {len(gt)} vs {len(est)}"
        )
    if not gt:
        raise ValueError("pose sequences are empty")


def rotation_error(gt: PoseSequence, est: PoseSequence) -> float:
    """Mean geodesic angle (radians) between paired rotations."""
    _check_lengths(gt, est)
    total = 0.0
    for (rg, _), (re, _) in zip(gt, est):
        c = (np.trace(rg.matrix.T @ re.matrix) - 1.0) / 2.0
        total += math.acos(min(1.0, max(-1.0, c)))
    return total / len(gt)


def translation_error(gt: PoseSequence, est: PoseSequence, normalize: bool = False) -> float:
    """Mean Euclidean distance between paired translations.

    With ``normalize`` both trajectories are first scaled about the origin so
    their total path length is 1, making the comparison scale-free.
    """
    _check_lengths(gt, est)
    t_gt = np.array([t for _, t in gt])
    t_est = np.array([t for _, t in est])
    if normalize:
        for name, t in (("ground truth", t_gt), ("estimate", t_est)):
            length = float(np.sum(np.linalg.norm(np.diff(t, axis=0), axis=1)))
            if length <= 0.0:
                raise ValueError(f"cannot normalize zero-length {name} trajectory")
            t /= length
    return float(np.mean(np.linalg.norm(t_gt - t_est, axis=1)))


def _check_images(a: np.ndarray, b: np.ndarray, max_value: float) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ValueError(f"images must be HxW or HxWxC, got shape {a.shape}")
    for name, img in (("first", a), ("second", b)):
        if img.size == 0:
            raise ValueError(f"{name} image is empty")
        lo, hi = float(img.min()), float(img.max())
        if lo < 0.0 or hi > max_value:
            raise ValueError(
                f"{name} image values [{lo}, {hi}] outside [0, {max_value}]"
            )


def psnr(a, b, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_images(a, b, max_value)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse)


_WINDOW = 11
_SIGMA = 1.5


def _gaussian_kernel() -> np.ndarray:
    offsets = np.arange(_WINDOW) - (_WINDOW - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * _SIGMA * _SIGMA))
    return g / g.sum()


_KERNEL = _gaussian_kernel()


def _window_mean(img: np.ndarray) -> np.ndarray:
    # separable Gaussian over fully-contained (valid) windows
    from numpy.lib.stride_tricks import sliding_window_view

    t = sliding_window_view(img, _WINDOW, axis=0) @ _KERNEL
    return sliding_window_view(t, _WINDOW, axis=1) @ _KERNEL


def _ssim_channel(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> float:
    mu_a = _window_mean(a)
    mu_b = _window_mean(b)
    var_a = _window_mean(a * a) - mu_a * mu_a
    var_b = _window_mean(b * b) - mu_b * mu_b
    cov = _window_mean(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, max_value: float = 1.0) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows.

    Stabilizers are the usual (0.01 * max)^2 and (0.03 * max)^2.  Multichannel
    images are averaged over channels.  Images smaller than the window are
    rejected.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_images(a, b, max_value)
    if a.shape[0] < _WINDOW or a.shape[1] < _WINDOW:
        raise ValueError(
            f"image {a.shape[:2]} smaller than the {_WINDOW}x{_WINDOW} window"
        )
    c1 = (0.01 * max_value) ** 2
    c2 = (0.03 * max_value) ** 2
    if a.ndim == 2:
        return _ssim_channel(a, b, c1, c2)
    vals = [
        _ssim_channel(a[..., c], b[..., c], c1, c2) for c in range(a.shape[2])
    ]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Image files
# ---------------------------------------------------------------------------


def write_image_binary(data, max_value: float, path) -> None:
    """Raw float image: "IMGF" magic, dims, channels, max value, float32 data."""
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError(f"image must be HxW or HxWxC, got shape {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(IMAGE_MAGIC)
        fh.write(struct.pack("<H", IMAGE_VERSION))
        fh.write(struct.pack("<III", h, w, c))
        fh.write(struct.pack("<d", float(max_value)))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_image_binary(path) -> tuple[np.ndarray, float]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != IMAGE_MAGIC:
            raise ValueError(f"bad image magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != IMAGE_VERSION:
            raise ValueError(f"unsupported image version {version}")
        h, w, c = struct.unpack("<III", fh.read(12))
        (max_value,) = struct.unpack("<d", fh.read(8))
        raw = fh.read(h * w * c * 4)
        if len(raw) != h * w * c * 4:
            raise ValueError("truncated image data")
    arr = np.frombuffer(raw, dtype="<f4").reshape(h, w, c).astype(np.float64)
    if c == 1:
        arr = arr[..., 0]
    return arr, max_value


def load_image(path) -> tuple[np.ndarray, float]:
    """Load a PNG (scaled to [0, 1]) or an "IMGF" raw float image."""
    text = str(path)
    if text.lower().endswith(".png"):
        from PIL import Image

        with Image.open(text) as im:
            arr = np.asarray(im, dtype=np.float64) / 255.0
        return arr, 1.0
    return read_image_binary(path)


__all__ = [
    "PoseSequence",
    "poses_from_route",
    "rotation_error",
    "translation_error",
    "psnr",
    "ssim",
    "write_image_binary",
    "read_image_binary",
    "load_image",
]
