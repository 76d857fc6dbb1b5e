"""Image loading, edge extraction, and the early-fusion network input.

The network consumes a 3-channel 128x128 tensor built from two edge
representations of the same frame plus their union mask; everything here is
deterministic given inputs (and the generator seed).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_core import DenseTensor, sparsity


class ImageError(ValueError):
    """Raised for malformed images or unsupported formats."""


@dataclass(frozen=True)
class Image:
    """8-bit image; ``pixels`` is (H, W) for gray or (H, W, 3) for RGB."""

    width: int
    height: int
    channels: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        expect = (self.height, self.width) if self.channels == 1 else (self.height, self.width, self.channels)
        if px.shape != expect:
            raise ImageError(f"pixel buffer shape {px.shape} != {expect}")
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class FusedInput:
    """Channel-stacked network input: [edge_a, edge_b, union_mask], 128x128."""

    tensor: DenseTensor  # (3, H, W) float32 in [0, 1]
    sparsity: float


def load_image(path: str | Path) -> Image:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"cannot read image: {path}")
    if path.suffix.lower() in (".pgm", ".ppm"):
        return _read_netpbm(path)
    try:
        from PIL import Image as PILImage
    except ImportError as exc:  # pragma: no cover
        raise ImageError("Pillow required for PNG input") from exc
    with PILImage.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim == 2:
        return Image(width=arr.shape[1], height=arr.shape[0], channels=1, pixels=arr)
    return Image(width=arr.shape[1], height=arr.shape[0], channels=3, pixels=arr[:, :, :3])


def _read_netpbm(path: Path) -> Image:
    data = path.read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if maxval > 255:
        raise ImageError("only 8-bit netpbm supported")
    pos += 1  # single whitespace after maxval
    if magic == b"P5":
        px = np.frombuffer(data, np.uint8, count=w * h, offset=pos).reshape(h, w)
        return Image(width=w, height=h, channels=1, pixels=px.copy())
    if magic == b"P6":
        px = np.frombuffer(data, np.uint8, count=w * h * 3, offset=pos).reshape(h, w, 3)
        return Image(width=w, height=h, channels=3, pixels=px.copy())
    raise ImageError(f"unsupported netpbm magic {magic!r}")


def write_pgm(path: str | Path, values: np.ndarray) -> None:
    """Write a 2D map as binary PGM, scaling [0, 1] floats to 0-255."""
    values = np.asarray(values)
    if values.ndim == 3 and values.shape[0] == 1:
        values = values[0]
    if values.ndim != 2:
        raise ImageError("PGM output expects a single-channel map")
    if values.dtype != np.uint8:
        values = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(values.tobytes())


def to_grayscale(img: Image) -> Image:
    """ITU-R 601 luma: round(0.299 R + 0.587 G + 0.114 B), clamped to [0, 255]."""
    if img.channels == 1:
        return img
    if img.channels != 3:
        raise ImageError(f"to_grayscale expects 1 or 3 channels, got {img.channels}")
    rgb = img.pixels.astype(np.float64)
    gray = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    gray = np.clip(np.rint(gray), 0, 255).astype(np.uint8)
    return Image(width=img.width, height=img.height, channels=1, pixels=gray)


def _reflect_pad(a: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(a, pad, mode="reflect")


SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T


def _convolve2d_reflect(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Cross-correlation with reflect padding, same-size output."""
    kh, kw = kernel.shape
    pad = kh // 2
    padded = _reflect_pad(a.astype(np.float64), pad)
    out = np.zeros_like(a, dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            out += kernel[dy, dx] * padded[dy : dy + a.shape[0], dx : dx + a.shape[1]]
    return out


def sobel_edges(gray: Image) -> DenseTensor:
    """Gradient magnitude, max-normalized to [0, 1]; output shape (1, H, W)."""
    if gray.channels != 1:
        raise ImageError("sobel_edges expects a single-channel image")
    if gray.height < 3 or gray.width < 3:
        raise ImageError("image smaller than 3x3")
    a = gray.pixels.astype(np.float64)
    gx = _convolve2d_reflect(a, SOBEL_X)
    gy = _convolve2d_reflect(a, SOBEL_Y)
    mag = np.sqrt(gx * gx + gy * gy)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    return mag[np.newaxis].astype(np.float32)


def _gaussian_kernel(size: int = 5, sigma: float = 1.4) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    return k / k.sum()


def canny_edges(gray: Image, low: float = 0.1, high: float = 0.2) -> DenseTensor:
    """Classic Canny pipeline; thresholds are fractions of the peak gradient.

    Steps: 5x5 Gaussian (sigma 1.4), Sobel gradients, non-maximum suppression
    along the local gradient direction (bilinear-interpolated neighbors), then
    double-threshold hysteresis. Output is a binary (1, H, W) map.
    """
    if gray.channels != 1:
        raise ImageError("canny_edges expects a single-channel image")
    if not (0 <= low <= high):
        raise ImageError(f"need 0 <= low <= high, got low={low} high={high}")
    if gray.height < 5 or gray.width < 5:
        raise ImageError("image smaller than 5x5")

    smoothed = _convolve2d_reflect(gray.pixels.astype(np.float64), _gaussian_kernel())
    gx = _convolve2d_reflect(smoothed, SOBEL_X)
    gy = _convolve2d_reflect(smoothed, SOBEL_Y)
    mag = np.sqrt(gx * gx + gy * gy)
    peak = mag.max()
    # Relative floor: accumulation-order noise on a flat image leaves a
    # ~1e-15 residue that must not be normalized up to full scale.
    if peak <= 1e-9 * max(float(np.abs(smoothed).max()), 1.0):
        return np.zeros((1, gray.height, gray.width), np.float32)
    mag = mag / peak

    # Suppress non-maxima along the gradient normal. Quantizing the direction
    # to 45-degree sectors breaks circular contours at diagonal arcs (a ring
    # pixel loses to its own ring neighbor), so the two comparison values are
    # sampled at unit distance along the true gradient with bilinear
    # interpolation. Tie-break is asymmetric (>= upstream, > downstream) so a
    # two-pixel plateau keeps exactly one pixel.
    h, w = mag.shape
    safe = np.where(mag > 0, mag, 1.0)
    uy, ux = gy / (safe * peak), gx / (safe * peak)
    padded = np.pad(mag, 1, mode="constant")

    def _sample(sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
        py = np.clip(np.arange(h)[:, None] + sy + 1.0, 0, h + 1)
        px = np.clip(np.arange(w)[None, :] + sx + 1.0, 0, w + 1)
        y0 = np.floor(py).astype(np.int64)
        x0 = np.floor(px).astype(np.int64)
        y1 = np.minimum(y0 + 1, h + 1)
        x1 = np.minimum(x0 + 1, w + 1)
        fy, fx = py - y0, px - x0
        return (padded[y0, x0] * (1 - fy) * (1 - fx) + padded[y0, x1] * (1 - fy) * fx
                + padded[y1, x0] * fy * (1 - fx) + padded[y1, x1] * fy * fx)

    upstream = _sample(-uy, -ux)
    downstream = _sample(uy, ux)
    keep = (mag >= upstream) & (mag > downstream)
    nms = np.where(keep, mag, 0.0)

    strong = nms >= high
    weak = (nms >= low) & ~strong
    # Hysteresis: keep weak pixels 8-connected to a strong one.
    out = strong.copy()
    frontier = list(zip(*np.nonzero(strong)))
    h, w = mag.shape
    while frontier:
        y, x = frontier.pop()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and weak[ny, nx] and not out[ny, nx]:
                    out[ny, nx] = True
                    frontier.append((ny, nx))
    return out[np.newaxis].astype(np.float32)


def early_fusion(edge_a: DenseTensor, edge_b: DenseTensor, size: int = 128) -> FusedInput:
    """Stack two edge maps with their union mask into the network input."""
    a = np.asarray(edge_a, dtype=np.float32).reshape(-1, *np.asarray(edge_a).shape[-2:])[0]
    b = np.asarray(edge_b, dtype=np.float32).reshape(-1, *np.asarray(edge_b).shape[-2:])[0]
    if a.shape != (size, size) or b.shape != (size, size):
        raise ImageError(f"early_fusion expects {size}x{size} maps, got {a.shape} and {b.shape}")
    if a.min() < 0 or a.max() > 1 or b.min() < 0 or b.max() > 1:
        raise ImageError("edge maps must be normalized to [0, 1]")
    mask = ((a != 0) | (b != 0)).astype(np.float32)
    tensor = np.stack([a, b, mask])
    return FusedInput(tensor=tensor, sparsity=sparsity(tensor, 0.0))


def resize_to(img: Image, size: int) -> Image:
    """Nearest-neighbor resize (deterministic, dependency-free)."""
    ys = np.minimum((np.arange(size) * img.height) // size, img.height - 1)
    xs = np.minimum((np.arange(size) * img.width) // size, img.width - 1)
    px = img.pixels[np.ix_(ys, xs)]
    return Image(width=size, height=size, channels=img.channels, pixels=px)


def synth_sparse_input(h: int, w: int, target_sparsity: float, seed: int = 0) -> DenseTensor:
    """Edge-like synthetic workload: random polylines at an exact active count.

    The active-pixel count is pinned to round((1 - target) * h * w), so the
    measured sparsity lands within +-0.01 of the target whenever the image has
    at least 50 pixels; smaller images raise.
    """
    if not (0.0 <= target_sparsity <= 1.0):
        raise ImageError("target sparsity must be in [0, 1]")
    if h * w < 50:
        raise ImageError(f"{h}x{w} too small to hit a +-0.01 sparsity target")
    rng = np.random.default_rng(np.random.PCG64(seed))
    target_active = int(round((1.0 - target_sparsity) * h * w))
    grid = np.zeros((h, w), bool)
    if target_active > 0:
        while grid.sum() < target_active:
            # One polyline: 2-5 segments between random endpoints.
            pts = rng.integers(0, (h, w), size=(rng.integers(3, 6), 2))
            for (y0, x0), (y1, x1) in zip(pts[:-1], pts[1:]):
                n = int(max(abs(int(y1) - int(y0)), abs(int(x1) - int(x0)))) + 1
                ys = np.rint(np.linspace(y0, y1, n)).astype(int)
                xs = np.rint(np.linspace(x0, x1, n)).astype(int)
                grid[ys, xs] = True
        surplus = int(grid.sum()) - target_active
        if surplus > 0:
            on = np.flatnonzero(grid.ravel())
            drop = rng.choice(on, size=surplus, replace=False)
            grid.ravel()[drop] = False
    out = np.zeros((1, h, w), np.float32)
    values = rng.uniform(0.25, 1.0, size=int(grid.sum())).astype(np.float32)
    out[0][grid] = values
    return out
