"""Dense, sparse, and quantized tensor representations.

A dense tensor is a plain ``numpy.ndarray`` (float32, channel-first layout);
the classes below add the sparse coordinate-list and int8 affine forms that the
rest of the engine is built on. All three representations are immutable values
after construction and every operation here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Dense feature maps are bare float32 arrays of shape (C, H, W).
DenseTensor = np.ndarray

INT8_MIN = -127  # symmetric range; -128 is never produced
INT8_MAX = 127


class TensorError(ValueError):
    """Raised when a tensor operation precondition is violated."""


class WeightError(KeyError):
    """Raised when a named parameter is missing from a weight store."""


def take_param(store, name: str) -> np.ndarray:
    """Fetch ``store[name]`` or raise a WeightError naming the parameter."""
    try:
        return store[name]
    except KeyError:
        raise WeightError(f"missing parameter: {name}") from None


def _as_f32(a) -> np.ndarray:
    out = np.asarray(a, dtype=np.float32)
    if not np.all(np.isfinite(out)):
        raise TensorError("non-finite values in dense tensor")
    return out


def encode_coords(rows: np.ndarray, cols: np.ndarray, width: int) -> np.ndarray:
    """Row-major site keys; ascending keys == lexicographic (row, col) order."""
    return rows.astype(np.int64) * np.int64(width) + cols.astype(np.int64)


@dataclass(frozen=True)
class SparseFeatureMap:
    """Active-coordinate feature map.

    ``coords`` is an (N, 2) int array of unique (row, col) sites in canonical
    lexicographic order; ``features`` holds one length-C float32 vector per
    site. ``stride`` records the downsampling factor relative to the network
    input resolution.
    """

    height: int
    width: int
    coords: np.ndarray
    features: np.ndarray
    stride: int = 1

    def __post_init__(self):
        coords = np.ascontiguousarray(np.asarray(self.coords, dtype=np.int32).reshape(-1, 2))
        features = np.ascontiguousarray(np.asarray(self.features, dtype=np.float32))
        if features.ndim != 2 or features.shape[0] != coords.shape[0]:
            raise TensorError("features row count must match coords count")
        if coords.shape[0]:
            rows, cols = coords[:, 0], coords[:, 1]
            if rows.min() < 0 or rows.max() >= self.height or cols.min() < 0 or cols.max() >= self.width:
                raise TensorError("coordinate out of bounds")
            keys = encode_coords(rows, cols, self.width)
            if np.any(np.diff(keys) <= 0):
                raise TensorError("coords must be unique and lexicographically sorted")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "features", features)

    @property
    def num_active(self) -> int:
        return self.coords.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def keys(self) -> np.ndarray:
        return encode_coords(self.coords[:, 0], self.coords[:, 1], self.width)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseFeatureMap):
            return NotImplemented
        return (
            self.height == other.height
            and self.width == other.width
            and self.stride == other.stride
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class QuantizedTensor:
    """Signed int8 payload with symmetric-by-default affine parameters.

    ``scale`` is a scalar array for per-tensor granularity or a length-C array
    (first axis) for per-channel. ``zero_point`` is a single integer shared by
    the whole tensor; it is 0 for symmetric quantization.
    """

    data: np.ndarray
    scale: np.ndarray
    zero_point: int = 0
    granularity: str = "per_tensor"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.int8)
        scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float32))
        if np.any(scale <= 0):
            raise TensorError("quantization scale must be positive")
        if self.granularity == "per_channel":
            if scale.shape[0] != data.shape[0]:
                raise TensorError("per-channel scale count must match leading axis")
        elif self.granularity == "per_tensor":
            if scale.shape[0] != 1:
                raise TensorError("per-tensor quantization takes a single scale")
        else:
            raise TensorError(f"unknown granularity {self.granularity!r}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "scale", scale)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return (
            self.granularity == other.granularity
            and self.zero_point == other.zero_point
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.scale, other.scale)
        )


def sparsity(t: DenseTensor, threshold: float = 0.0) -> float:
    """Fraction of elements with |value| <= threshold."""
    t = np.asarray(t)
    if t.size == 0:
        raise TensorError("empty input")
    if threshold < 0:
        raise TensorError("threshold must be >= 0")
    return float(np.count_nonzero(np.abs(t) <= threshold)) / t.size


def sparsify(t: DenseTensor, threshold: float = 0.0, stride: int = 1) -> SparseFeatureMap:
    """Collect sites where any channel's |value| exceeds the threshold."""
    t = _as_f32(t)
    if t.ndim != 3:
        raise TensorError(f"sparsify expects rank-3 (C, H, W), got rank {t.ndim}")
    c, h, w = t.shape
    active = np.any(np.abs(t) > threshold, axis=0)
    rows, cols = np.nonzero(active)  # row-major order == canonical
    features = np.ascontiguousarray(t[:, rows, cols].T)
    coords = np.stack([rows, cols], axis=1).astype(np.int32) if rows.size else np.zeros((0, 2), np.int32)
    return SparseFeatureMap(height=h, width=w, coords=coords, features=features.reshape(-1, c), stride=stride)


def densify(s: SparseFeatureMap) -> DenseTensor:
    """Zero-filled (C, H, W) tensor carrying the active-site features."""
    out = np.zeros((s.channels, s.height, s.width), dtype=np.float32)
    if s.num_active:
        out[:, s.coords[:, 0], s.coords[:, 1]] = s.features.T
    return out


def _group_scales(t: np.ndarray, granularity: str) -> np.ndarray:
    if granularity == "per_channel":
        absmax = np.abs(t).reshape(t.shape[0], -1).max(axis=1)
    else:
        absmax = np.atleast_1d(np.abs(t).max())
    scales = absmax / INT8_MAX
    # All-zero groups get unit scale so q = x / scale stays defined.
    scales[scales == 0] = 1.0
    return scales.astype(np.float32)


def quantize_affine(t: DenseTensor, granularity: str = "per_tensor") -> QuantizedTensor:
    """Symmetric int8 quantization: q = clamp(round(x / scale), -127, 127)."""
    t = _as_f32(t)
    if granularity not in ("per_tensor", "per_channel"):
        raise TensorError(f"unknown granularity {granularity!r}")
    scale = _group_scales(t, granularity)
    if granularity == "per_channel":
        divisor = scale.reshape((-1,) + (1,) * (t.ndim - 1))
    else:
        divisor = scale[0]
    q = np.clip(np.rint(t / divisor), INT8_MIN, INT8_MAX).astype(np.int8)
    return QuantizedTensor(data=q, scale=scale, zero_point=0, granularity=granularity)


def dequantize(q: QuantizedTensor) -> DenseTensor:
    """x = scale * (q - zero_point), broadcast over the granularity group."""
    if q.granularity == "per_channel":
        mult = q.scale.reshape((-1,) + (1,) * (q.data.ndim - 1))
    else:
        mult = q.scale[0]
    return ((q.data.astype(np.float32) - np.float32(q.zero_point)) * mult).astype(np.float32)


def quantize_asymmetric(t: DenseTensor, scale: float, zero_point: int) -> QuantizedTensor:
    """Per-tensor affine quantization with an explicit zero point.

    Used for activations; the full int8 lane [-128, 127] is intentionally not
    used so the symmetric weight range convention holds everywhere.
    """
    t = _as_f32(t)
    if scale <= 0:
        raise TensorError("scale must be positive")
    q = np.clip(np.rint(t / scale) + zero_point, INT8_MIN, INT8_MAX).astype(np.int8)
    return QuantizedTensor(data=q, scale=np.float32(scale), zero_point=int(zero_point))


def calibrate_activation(t: DenseTensor) -> tuple[float, int]:
    """Min/max calibration for per-tensor asymmetric activation quantization."""
    t = _as_f32(t)
    lo = float(min(t.min(), 0.0))
    hi = float(max(t.max(), 0.0))
    if hi == lo:
        return 1.0, 0
    scale = (hi - lo) / (INT8_MAX - INT8_MIN)
    zero_point = int(round(INT8_MIN - lo / scale))
    return scale, max(INT8_MIN, min(INT8_MAX, zero_point))
