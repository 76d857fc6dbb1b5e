"""Int8 execution: fake quantization, an integer conv kernel, and pipeline deltas.

Weights quantize symmetrically per output channel (zero point 0); activations
use per-tensor asymmetric parameters from min/max calibration. The integer
convolution accumulates exactly in wide integers and refuses results outside
the 32-bit accumulator a deployment target would use, so an in-range pass here
certifies the layer for int32 hardware.
"""

from __future__ import annotations

import numpy as np

from .config import DEFAULT_CONFIG, PipelineConfig
from .model_io import WeightStore, dequantize_store, quantize_store
from .tensor_core import (
    DenseTensor,
    QuantizedTensor,
    TensorError,
    calibrate_activation,
    dequantize,
    quantize_affine,
    quantize_asymmetric,
)

INT32_MAX = 2**31 - 1


def fake_quant(x: DenseTensor, granularity: str = "per_tensor") -> DenseTensor:
    """Quantize-dequantize round trip; idempotent bit-for-bit.

    Once a tensor sits on its own int8 lattice, requantizing reproduces the
    same scale and codes, so applying this twice equals applying it once.
    """
    return dequantize(quantize_affine(x, granularity))


def quantize_conv_inputs(x: DenseTensor, weight: np.ndarray) -> tuple[QuantizedTensor, QuantizedTensor]:
    """Calibrated activation + per-channel weight quantization for qconv2d."""
    scale, zp = calibrate_activation(x)
    return quantize_asymmetric(x, scale, zp), quantize_affine(weight, "per_channel")


def qconv2d(x_q: QuantizedTensor, w_q: QuantizedTensor, bias: np.ndarray,
            stride: int = 1) -> DenseTensor:
    """Integer-arithmetic convolution with float rescale at the end.

    The zero point is removed in int16, products accumulate exactly in int64,
    and any accumulator beyond the int32 range raises rather than saturating
    silently. Output is float32: acc * scale_in * scale_w[c] + bias[c].
    """
    if w_q.granularity != "per_channel" or w_q.zero_point != 0:
        raise TensorError("qconv2d weights must be per-channel symmetric")
    if x_q.granularity != "per_tensor":
        raise TensorError("qconv2d activations must be per-tensor quantized")
    w = w_q.data
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise TensorError(f"quantized weight must be (out, in, K, K), got {w.shape}")
    x = x_q.data
    if x.ndim != 3 or x.shape[0] != w.shape[1]:
        raise TensorError(f"quantized input {x.shape} does not feed weight {w.shape}")
    c, h, width = x.shape
    o, _, k, _ = w.shape
    pad = k // 2
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (width + 2 * pad - k) // stride + 1
    # Padding with the zero point is a real zero; subtract first, pad with 0.
    xi = x.astype(np.int16) - np.int16(x_q.zero_point)
    xp = np.pad(xi, ((0, 0), (pad, pad), (pad, pad)))
    shape = (c, k, k, h_out, w_out)
    strides = (xp.strides[0], xp.strides[1], xp.strides[2],
               xp.strides[1] * stride, xp.strides[2] * stride)
    cols = np.lib.stride_tricks.as_strided(xp, shape, strides).reshape(c * k * k, h_out * w_out)
    acc = w.reshape(o, -1).astype(np.int64) @ cols.astype(np.int64)
    worst = int(np.abs(acc).max()) if acc.size else 0
    if worst > INT32_MAX:
        raise TensorError(f"accumulator {worst} exceeds the 32-bit integer range")
    scale_in = float(x_q.scale[0])
    out = acc.astype(np.float64) * (scale_in * w_q.scale.astype(np.float64))[:, None]
    out = out + np.asarray(bias, np.float64)[:, None]
    return out.reshape(o, h_out, w_out).astype(np.float32)


def qconv2d_error_bound(x_q: QuantizedTensor, w_q: QuantizedTensor) -> float:
    """Analytic envelope on |integer kernel - float-on-dequantized| per output.

    Each of the kernel_volume * in_channels taps can disagree with a float
    evaluation by at most half a joint quantization step; the kernel itself
    is exact, so real differences sit far below this bound.
    """
    taps = int(np.prod(w_q.data.shape[1:]))
    return float(x_q.scale[0]) * float(w_q.scale.max()) * taps * 0.5


def quantize_pipeline_store(store: WeightStore) -> WeightStore:
    """Weights-only deployment form: int8 weights dequantized back to float32.

    Execution stays in float kernels; only the weight values carry
    quantization error. This mirrors a weights-compressed model file being
    loaded by the same runtime.
    """
    return dequantize_store(quantize_store(store))


def quantized_joint_delta(store: WeightStore, topo, fused_inputs, cfg: PipelineConfig = DEFAULT_CONFIG,
                          workers: int = 1) -> tuple[float, list[float]]:
    """Mean 3D joint displacement (mm) between float and weight-quantized runs."""
    from .pipeline import infer_single  # local import; pipeline builds on this module

    qstore = quantize_pipeline_store(store)
    deltas = []
    for fused in fused_inputs:
        ref = infer_single(fused, store, topo, cfg=cfg, workers=workers)
        quantized = infer_single(fused, qstore, topo, cfg=cfg, workers=workers)
        d = np.linalg.norm(np.asarray(ref.joints_3d) - np.asarray(quantized.joints_3d), axis=1)
        deltas.append(float(d.mean() * 1000.0))
    return float(np.mean(deltas)), deltas


def per_layer_quantization_deltas(store: WeightStore, topo, fused, cfg: PipelineConfig = DEFAULT_CONFIG,
                                  workers: int = 1) -> dict[str, float]:
    """Joint delta (mm) when quantizing one weight tensor at a time.

    Attribution sweep: shows which layer's quantization moves the output
    most. Only rank >= 2 float entries participate (the same set
    quantize_store touches).
    """
    from .pipeline import infer_single

    ref = infer_single(fused, store, topo, cfg=cfg, workers=workers)
    ref_joints = np.asarray(ref.joints_3d)
    out: dict[str, float] = {}
    for name, arr in store.items():
        arr = np.asarray(arr)
        if arr.ndim < 2 or arr.dtype.kind != "f":
            continue
        trial = dict(store)
        trial[name] = fake_quant(arr.astype(np.float32), "per_channel")
        pred = infer_single(fused, trial, topo, cfg=cfg, workers=workers)
        d = np.linalg.norm(ref_joints - np.asarray(pred.joints_3d), axis=1)
        out[name] = float(d.mean() * 1000.0)
    return out
