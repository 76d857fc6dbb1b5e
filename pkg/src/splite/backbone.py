"""Sparse-capable convolutional encoder.

The encoder runs a residual network over an edge-dominated input. Early
stages execute on the active coordinate list only; once feature maps are no
longer meaningfully sparse (after two residual stages) the tensor is
densified and the remaining stages run as ordinary dense convolutions.

Two convolution rules exist on sparse maps:

* ``submanifold``: the output active set equals the input active set, so
  repeated 3x3 convolutions do not dilate the geometry. Stride must be 1.
* ``generalized``: the output contains every stride-aligned site whose
  kernel window overlaps at least one active input site. Used by the stem
  and by pooling, where downsampling requires new site positions.

At active output sites both rules agree numerically with a zero-filled dense
convolution of the same weights; they differ from the dense result only on
sites the sparse rule leaves absent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CONFIG, PipelineConfig
from .tensor_core import (
    DenseTensor,
    SparseFeatureMap,
    TensorError,
    densify,
    dequantize,
    encode_coords,
    quantize_affine,
    sparsify,
    sparsity,
    take_param,
)

BN_EPS = 1e-5

# (stage, block, in_channels, out_channels); stages 1-2 run sparse, 3-4 dense.
_STAGE_CHANNELS = (64, 64, 128, 256, 512)
SPARSE_STAGES = (1, 2)


@dataclass(frozen=True)
class ConvSpec:
    """One convolution layer: weights plus the execution rule."""

    name: str
    weight: np.ndarray  # (out, in, K, K) float32
    bias: np.ndarray  # (out,) float32
    stride: int = 1
    mode: str = "submanifold"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float32)
        b = np.asarray(self.bias, dtype=np.float32)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise TensorError(f"{self.name}: weight must be (out, in, K, K), got {w.shape}")
        if b.shape != (w.shape[0],):
            raise TensorError(f"{self.name}: bias shape {b.shape} != ({w.shape[0]},)")
        if self.mode not in ("submanifold", "generalized"):
            raise TensorError(f"{self.name}: unknown conv mode {self.mode!r}")
        if self.mode == "submanifold":
            if self.stride != 1:
                raise TensorError(f"{self.name}: submanifold convolution requires stride 1")
            if w.shape[2] % 2 == 0:
                raise TensorError(f"{self.name}: submanifold convolution requires an odd kernel")
        if self.stride < 1:
            raise TensorError(f"{self.name}: stride must be >= 1")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


def _out_size(size: int, kernel: int, stride: int) -> int:
    pad = kernel // 2
    return (size + 2 * pad - kernel) // stride + 1


def _kernel_offsets(kernel: int) -> tuple[np.ndarray, np.ndarray]:
    """All (dy, dx) kernel offsets in row-major order, as (K*K, 1) columns."""
    dy, dx = np.divmod(np.arange(kernel * kernel, dtype=np.int32), np.int32(kernel))
    return dy[:, None], dx[:, None]


def _site_lut(sp: SparseFeatureMap) -> np.ndarray:
    """Flat (H*W,) map from grid site to feature-row index, -1 where inactive."""
    lut = np.full(sp.height * sp.width, -1, np.int32)
    lut[sp.keys()] = np.arange(sp.num_active, dtype=np.int32)
    return lut


def _generalized_sites(sp: SparseFeatureMap, kernel: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Stride-aligned output sites whose window touches an active input site."""
    pad = kernel // 2
    h_out = _out_size(sp.height, kernel, stride)
    w_out = _out_size(sp.width, kernel, stride)
    if sp.num_active == 0:
        return np.zeros((0, 2), np.int32), h_out, w_out
    rows = sp.coords[:, 0].astype(np.int32)[None, :]
    cols = sp.coords[:, 1].astype(np.int32)[None, :]
    dy, dx = _kernel_offsets(kernel)
    rr = rows + pad - dy
    cc = cols + pad - dx
    orow, ocol = rr // stride, cc // stride
    ok = ((rr % stride == 0) & (cc % stride == 0)
          & (orow >= 0) & (orow < h_out) & (ocol >= 0) & (ocol < w_out))
    mask = np.zeros(h_out * w_out, bool)
    mask[(orow * w_out + ocol)[ok]] = True
    flat = np.flatnonzero(mask)  # ascending flat index == canonical order
    coords = np.stack([flat // w_out, flat % w_out], axis=1).astype(np.int32)
    return coords, h_out, w_out


def _match_table(out_coords: np.ndarray, sp: SparseFeatureMap, kernel: int,
                 stride: int) -> np.ndarray:
    """(K*K, N_out) input-row index per output site and offset, -1 for absent."""
    pad = kernel // 2
    dy, dx = _kernel_offsets(kernel)
    in_r = out_coords[:, 0].astype(np.int32)[None, :] * stride + dy - pad
    in_c = out_coords[:, 1].astype(np.int32)[None, :] * stride + dx - pad
    valid = (in_r >= 0) & (in_r < sp.height) & (in_c >= 0) & (in_c < sp.width)
    flat = np.where(valid, in_r * sp.width + in_c, 0)
    idx = _site_lut(sp)[flat]
    return np.where(valid, idx, -1)


def sparse_conv2d(sp: SparseFeatureMap, spec: ConvSpec) -> SparseFeatureMap:
    """Convolution over the active coordinate list.

    Gather-GEMM formulation: a dense site-index table matches every
    (output site, kernel offset) pair to its input row, misses route to an
    appended zero row, and the gathered patch matrix multiplies the
    offset-major reshaped weights in a single GEMM. Bias applies to active
    output sites only (absent sites stay absent, by definition).
    """
    if sp.channels != spec.in_channels:
        raise TensorError(
            f"{spec.name}: input has {sp.channels} channels, weights expect {spec.in_channels}"
        )
    k = spec.kernel_size
    if spec.mode == "submanifold":
        out_coords, h_out, w_out = sp.coords, sp.height, sp.width
    else:
        out_coords, h_out, w_out = _generalized_sites(sp, k, spec.stride)
    out_stride = sp.stride * spec.stride
    n = out_coords.shape[0]
    if n == 0 or sp.num_active == 0:
        return SparseFeatureMap(h_out, w_out, np.zeros((0, 2), np.int32),
                                np.zeros((0, spec.out_channels), np.float32), stride=out_stride)
    idx = _match_table(out_coords, sp, k, spec.stride)
    gather = np.where(idx >= 0, idx, sp.num_active)  # missing neighbor -> zero row
    padded = np.vstack([sp.features, np.zeros((1, sp.channels), np.float32)])
    patches = padded[gather].transpose(1, 0, 2).reshape(n, k * k * sp.channels)
    w_mat = spec.weight.transpose(2, 3, 1, 0).reshape(k * k * sp.channels, spec.out_channels)
    feats = patches @ w_mat + spec.bias
    return SparseFeatureMap(h_out, w_out, out_coords, feats, stride=out_stride)


def sparse_relu(sp: SparseFeatureMap) -> SparseFeatureMap:
    """Clamp features; sites stay active even if every channel goes to zero."""
    return SparseFeatureMap(sp.height, sp.width, sp.coords,
                            np.maximum(sp.features, 0.0), stride=sp.stride)


def sparse_maxpool(sp: SparseFeatureMap, kernel: int = 3, stride: int = 2) -> SparseFeatureMap:
    """Max over active sites per window; output sites follow the generalized rule.

    Absent sites contribute nothing (treated as -inf). For nonnegative inputs
    this matches a zero-padded dense max-pool at the active output sites; the
    encoder only pools post-relu maps, which satisfies that.
    """
    out_coords, h_out, w_out = _generalized_sites(sp, kernel, stride)
    out_stride = sp.stride * stride
    n = out_coords.shape[0]
    if n == 0:
        return SparseFeatureMap(h_out, w_out, out_coords,
                                np.zeros((0, sp.channels), np.float32), stride=out_stride)
    idx = _match_table(out_coords, sp, kernel, stride)
    feats = np.full((n, sp.channels), -np.inf, np.float32)
    for o in range(kernel * kernel):
        hit = idx[o] >= 0
        if hit.any():
            feats[hit] = np.maximum(feats[hit], sp.features[idx[o][hit]])
    # Every output site has at least one covered input site by construction.
    return SparseFeatureMap(h_out, w_out, out_coords, feats, stride=out_stride)


def dense_conv2d(x: DenseTensor, spec: ConvSpec) -> DenseTensor:
    """Zero-padded dense convolution via patch matrix + one matmul."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise TensorError(f"{spec.name}: dense input must be (C, H, W)")
    if x.shape[0] != spec.in_channels:
        raise TensorError(
            f"{spec.name}: input has {x.shape[0]} channels, weights expect {spec.in_channels}"
        )
    c, h, w = x.shape
    k = spec.kernel_size
    pad = k // 2
    s = spec.stride
    h_out, w_out = _out_size(h, k, s), _out_size(w, k, s)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    shape = (c, k, k, h_out, w_out)
    strides = (xp.strides[0], xp.strides[1], xp.strides[2], xp.strides[1] * s, xp.strides[2] * s)
    cols = np.lib.stride_tricks.as_strided(xp, shape, strides).reshape(c * k * k, h_out * w_out)
    out = spec.weight.reshape(spec.out_channels, -1) @ cols + spec.bias[:, None]
    return out.reshape(spec.out_channels, h_out, w_out)


def dense_maxpool(x: DenseTensor, kernel: int = 3, stride: int = 2) -> DenseTensor:
    """Zero-padded dense max-pool (intended for nonnegative, post-relu maps)."""
    x = np.asarray(x, dtype=np.float32)
    c, h, w = x.shape
    pad = kernel // 2
    h_out, w_out = _out_size(h, kernel, stride), _out_size(w, kernel, stride)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    shape = (c, h_out, w_out, kernel, kernel)
    strides = (xp.strides[0], xp.strides[1] * stride, xp.strides[2] * stride, xp.strides[1], xp.strides[2])
    win = np.lib.stride_tricks.as_strided(xp, shape, strides)
    return win.max(axis=(3, 4))


def fold_batchnorm(weight: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                   mean: np.ndarray, var: np.ndarray, eps: float = BN_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Fold inference-mode batch norm into the preceding conv's weight and bias.

    w' = w * gamma / sqrt(var + eps) per output channel,
    b' = beta - gamma * mean / sqrt(var + eps).
    """
    weight = np.asarray(weight, dtype=np.float64)
    inv_std = np.asarray(gamma, np.float64) / np.sqrt(np.asarray(var, np.float64) + eps)
    w = weight * inv_std.reshape((-1,) + (1,) * (weight.ndim - 1))
    b = np.asarray(beta, np.float64) - inv_std * np.asarray(mean, np.float64)
    return w.astype(np.float32), b.astype(np.float32)


def _block_plan() -> list[tuple[int, int, int, int]]:
    plan = []
    for stage in range(1, 5):
        cin, cout = _STAGE_CHANNELS[stage - 1], _STAGE_CHANNELS[stage]
        for block in range(2):
            plan.append((stage, block, cin if block == 0 else cout, cout))
    return plan


def _bn_names(prefix: str, channels: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.{p}", (channels,)) for p in ("gamma", "beta", "mean", "var")]


def backbone_parameter_specs(cfg: PipelineConfig = DEFAULT_CONFIG) -> list[tuple[str, tuple[int, ...]]]:
    """Name and shape of every raw (pre-folding) encoder parameter."""
    specs: list[tuple[str, tuple[int, ...]]] = [("stem.conv.weight", (64, 3, 7, 7))]
    specs += _bn_names("stem.bn", 64)
    for stage, block, cin, cout in _block_plan():
        p = f"stage{stage}.block{block}"
        specs.append((f"{p}.conv1.weight", (cout, cin, 3, 3)))
        specs += _bn_names(f"{p}.bn1", cout)
        specs.append((f"{p}.conv2.weight", (cout, cout, 3, 3)))
        specs += _bn_names(f"{p}.bn2", cout)
        if cin != cout:
            specs.append((f"{p}.proj.weight", (cout, cin, 1, 1)))
            specs += _bn_names(f"{p}.proj_bn", cout)
    cg, kp, top = cfg.feature_channels, cfg.num_keypoints, _STAGE_CHANNELS[-1]
    specs += [
        ("head.feature.weight", (cg, top, 1, 1)), ("head.feature.bias", (cg,)),
        ("head.heatmap.weight", (kp, cg, 1, 1)), ("head.heatmap.bias", (kp,)),
        ("head.depth.weight", (kp, cg)), ("head.depth.bias", (kp,)),
    ]
    return specs


def _fold_pair(raw: dict, conv_name: str, bn_name: str) -> tuple[np.ndarray, np.ndarray]:
    return fold_batchnorm(
        take_param(raw, f"{conv_name}.weight"),
        take_param(raw, f"{bn_name}.gamma"), take_param(raw, f"{bn_name}.beta"),
        take_param(raw, f"{bn_name}.mean"), take_param(raw, f"{bn_name}.var"),
    )


def fold_backbone_weights(raw: dict, cfg: PipelineConfig = DEFAULT_CONFIG) -> dict[str, np.ndarray]:
    """Fold every conv+bn pair; head parameters pass through unchanged."""
    folded: dict[str, np.ndarray] = {}
    folded["stem.weight"], folded["stem.bias"] = _fold_pair(raw, "stem.conv", "stem.bn")
    for stage, block, cin, cout in _block_plan():
        p = f"stage{stage}.block{block}"
        folded[f"{p}.conv1.weight"], folded[f"{p}.conv1.bias"] = _fold_pair(raw, f"{p}.conv1", f"{p}.bn1")
        folded[f"{p}.conv2.weight"], folded[f"{p}.conv2.bias"] = _fold_pair(raw, f"{p}.conv2", f"{p}.bn2")
        if cin != cout:
            folded[f"{p}.proj.weight"], folded[f"{p}.proj.bias"] = _fold_pair(raw, f"{p}.proj", f"{p}.proj_bn")
    for name in ("head.feature.weight", "head.feature.bias", "head.heatmap.weight",
                 "head.heatmap.bias", "head.depth.weight", "head.depth.bias"):
        folded[name] = np.asarray(take_param(raw, name), dtype=np.float32)
    return folded


def _conv_from(folded: dict, name: str, mode: str, stride: int = 1) -> ConvSpec:
    return ConvSpec(name=name, weight=take_param(folded, f"{name}.weight"),
                    bias=take_param(folded, f"{name}.bias"), stride=stride, mode=mode)


@dataclass(frozen=True)
class BackboneOutput:
    """Grid-level encoder products consumed by the lifting and decoding steps."""

    features: DenseTensor  # (C_g, G, G) pooled feature map, post-relu
    heatmaps: DenseTensor  # (num_keypoints, G, G) raw logits
    depth_logits: DenseTensor  # (num_keypoints,)
    input_sparsity: float


def _boundary_quant(features: np.ndarray) -> np.ndarray:
    """Fake-quantize a stage-boundary tensor (symmetric per-tensor int8)."""
    return dequantize(quantize_affine(features, "per_tensor"))


def sparse_stage_forward(x: SparseFeatureMap, folded: dict,
                         activation_quant: bool = False) -> SparseFeatureMap:
    """Stem + pooling + the two sparse residual stages, on the active set only.

    ``activation_quant`` fake-quantizes features at module boundaries
    (post-stem and after each stage); the gather semantics inside a stage are
    untouched. Quantizing active-site features never deactivates a site.
    """
    x = sparse_relu(sparse_conv2d(x, _conv_from(folded, "stem", "generalized", stride=2)))
    x = sparse_maxpool(x, kernel=3, stride=2)
    if activation_quant:
        x = SparseFeatureMap(x.height, x.width, x.coords, _boundary_quant(x.features), stride=x.stride)
    for stage, block, cin, cout in _block_plan():
        if stage not in SPARSE_STAGES:
            continue
        p = f"stage{stage}.block{block}"
        y = sparse_relu(sparse_conv2d(x, _conv_from(folded, f"{p}.conv1", "submanifold")))
        y = sparse_conv2d(y, _conv_from(folded, f"{p}.conv2", "submanifold"))
        sc = sparse_conv2d(x, _conv_from(folded, f"{p}.proj", "submanifold")) if cin != cout else x
        if not np.array_equal(y.coords, sc.coords):
            raise TensorError(f"{p}: residual branches diverged on active sites")
        x = sparse_relu(SparseFeatureMap(y.height, y.width, y.coords,
                                         y.features + sc.features, stride=y.stride))
        if activation_quant and block == 1:
            x = SparseFeatureMap(x.height, x.width, x.coords, _boundary_quant(x.features), stride=x.stride)
    return x


def dense_stage_forward(x: DenseTensor, folded: dict) -> DenseTensor:
    """Plain dense twin of the sparse stages (baseline path, no masking)."""
    x = np.maximum(dense_conv2d(x, _conv_from(folded, "stem", "generalized", stride=2)), 0.0)
    x = dense_maxpool(x, kernel=3, stride=2)
    for stage, block, cin, cout in _block_plan():
        if stage not in SPARSE_STAGES:
            continue
        p = f"stage{stage}.block{block}"
        y = np.maximum(dense_conv2d(x, _conv_from(folded, f"{p}.conv1", "submanifold")), 0.0)
        y = dense_conv2d(y, _conv_from(folded, f"{p}.conv2", "submanifold"))
        sc = dense_conv2d(x, _conv_from(folded, f"{p}.proj", "submanifold")) if cin != cout else x
        x = np.maximum(y + sc, 0.0)
    return x


def dense_tail_forward(x: DenseTensor, folded: dict, input_sparsity: float,
                       cfg: PipelineConfig = DEFAULT_CONFIG,
                       activation_quant: bool = False) -> BackboneOutput:
    """Dense residual stages 3-4 plus the three output heads."""
    for stage, block, cin, cout in _block_plan():
        if stage in SPARSE_STAGES:
            continue
        p = f"stage{stage}.block{block}"
        y = np.maximum(dense_conv2d(x, _conv_from(folded, f"{p}.conv1", "submanifold")), 0.0)
        y = dense_conv2d(y, _conv_from(folded, f"{p}.conv2", "submanifold"))
        sc = dense_conv2d(x, _conv_from(folded, f"{p}.proj", "submanifold")) if cin != cout else x
        x = np.maximum(y + sc, 0.0)
        if activation_quant and block == 1:
            x = _boundary_quant(x)
    features = np.maximum(dense_conv2d(x, _conv_from(folded, "head.feature", "submanifold")), 0.0)
    heatmaps = dense_conv2d(features, _conv_from(folded, "head.heatmap", "submanifold"))
    pooled = features.mean(axis=(1, 2))
    depth_logits = take_param(folded, "head.depth.weight") @ pooled + take_param(folded, "head.depth.bias")
    return BackboneOutput(features=features, heatmaps=heatmaps,
                          depth_logits=depth_logits.astype(np.float32),
                          input_sparsity=input_sparsity)


def backbone_forward(fused: DenseTensor, folded: dict, cfg: PipelineConfig = DEFAULT_CONFIG,
                     threshold: float = 0.0, sparse: bool = True,
                     activation_quant: bool = False) -> BackboneOutput:
    """Full encoder pass over a fused (3, 128, 128) input tensor."""
    fused = np.asarray(fused, dtype=np.float32)
    if fused.shape != (3, cfg.input_size, cfg.input_size):
        raise TensorError(f"encoder expects (3, {cfg.input_size}, {cfg.input_size}), got {fused.shape}")
    frac = sparsity(fused, threshold)
    if activation_quant:
        fused = _boundary_quant(fused)
    if sparse:
        cut = sparse_stage_forward(sparsify(fused, threshold), folded,
                                   activation_quant=activation_quant)
        if (cut.height, cut.width) != (cfg.grid_size, cfg.grid_size):
            raise TensorError(f"sparse stages produced {cut.height}x{cut.width}, "
                              f"expected {cfg.grid_size}x{cfg.grid_size}")
        x = densify(cut)
    else:
        x = dense_stage_forward(fused, folded)
    return dense_tail_forward(x, folded, input_sparsity=frac, cfg=cfg,
                              activation_quant=activation_quant)
