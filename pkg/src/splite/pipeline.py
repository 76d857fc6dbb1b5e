"""End-to-end single-image inference and demonstration weight generation.

The pipeline wires the stages together: fused edge input -> sparse encoder ->
landmark lifting -> spiral mesh decoding. Weights come from a prepared store
(batch norm already folded); ``gen_weights`` produces a deterministic,
well-scaled random store so every stage runs at realistic magnitudes without
a training loop.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .backbone import backbone_forward, backbone_parameter_specs, fold_backbone_weights
from .config import DEFAULT_CONFIG, DEFAULT_SEED_ENV, PipelineConfig
from .decoder import SpiralIndexTable, build_decoder_tables, decode_mesh, decoder_parameter_specs
from .lifting import (
    CameraIntrinsics,
    Landmarks2D,
    decode_depths,
    decode_landmarks,
    default_intrinsics,
    backproject,
    pose_pooling,
    pose_to_vertex,
)
from .model_io import WeightStore
from .tensor_core import take_param
from .topology import MeshTopology


@dataclass(frozen=True)
class InferenceResult:
    """Everything one image produces, plus wall-clock stage timings."""

    landmarks: Landmarks2D
    joints_3d: np.ndarray  # (K, 3) camera-space metres
    mesh_vertices: np.ndarray  # (V, 3) camera-space metres
    input_sparsity: float
    timings_ms: dict[str, float]


def default_seed() -> int:
    """Seed from the environment override, 0 otherwise."""
    return int(os.environ.get(DEFAULT_SEED_ENV, "0"))


def gen_weights(seed: int = 0, cfg: PipelineConfig = DEFAULT_CONFIG) -> WeightStore:
    """Deterministic random store with stage-appropriate magnitudes.

    Conv and linear weights draw from a fan-in-scaled normal; the three
    regression heads are deliberately small so landmark positions stay
    on-grid, depths stay near one metre, and mesh offsets stay at
    centimetre scale. Norm parameters vary mildly around identity so
    folding is exercised rather than a no-op.
    """
    rng = np.random.default_rng(seed)
    head_gain = {"head.heatmap.weight": 0.05, "head.depth.weight": 0.002,
                 "decoder.head.weight": 0.01}
    store: WeightStore = {}
    for name, shape in backbone_parameter_specs(cfg) + decoder_parameter_specs(cfg):
        if name.endswith(".gamma") or name.endswith(".var"):
            store[name] = rng.uniform(0.9, 1.1, shape).astype(np.float32)
        elif name.endswith(".beta") or name.endswith(".mean"):
            store[name] = (rng.standard_normal(shape) * 0.01).astype(np.float32)
        elif name.endswith(".bias"):
            store[name] = np.zeros(shape, np.float32)
        elif name == "lift.weight":
            base = np.full(shape, 1.0 / shape[1], np.float32)
            store[name] = (base + rng.standard_normal(shape) * 0.01).astype(np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            store[name] = (w * head_gain.get(name, 1.0)).astype(np.float32)
    return store


def prepare_weights(raw: WeightStore, cfg: PipelineConfig = DEFAULT_CONFIG) -> WeightStore:
    """Fold the encoder's norm layers and carry decoder parameters through."""
    prepared = fold_backbone_weights(raw, cfg)
    for name, _shape in decoder_parameter_specs(cfg):
        prepared[name] = np.asarray(take_param(raw, name), dtype=np.float32)
    return prepared


def infer_single(fused: np.ndarray, weights: WeightStore, topo: MeshTopology,
                 cfg: PipelineConfig = DEFAULT_CONFIG,
                 intr: CameraIntrinsics | None = None,
                 tables: tuple[SpiralIndexTable, ...] | None = None,
                 workers: int = 1, sparse: bool = True,
                 quantize_activations: bool = False) -> InferenceResult:
    """Run one fused (3, H, W) input through the full pipeline.

    ``weights`` must be a prepared store (see :func:`prepare_weights`).
    ``quantize_activations`` fake-quantizes the encoder's module-boundary
    tensors (input, post-stem, post-stage), demonstrating an
    activation-quantized deployment; weight quantization is a store-level
    concern and happens before this call.
    """
    intr = intr or default_intrinsics(cfg)
    if tables is None:
        tables = build_decoder_tables(topo, cfg.spiral_length)
    fused = np.asarray(fused, dtype=np.float32)

    t0 = time.perf_counter()
    enc = backbone_forward(fused, weights, cfg=cfg, sparse=sparse,
                           activation_quant=quantize_activations)
    t1 = time.perf_counter()

    features, heatmaps = enc.features, enc.heatmaps
    landmarks = decode_landmarks(heatmaps, cfg)
    depths = decode_depths(enc.depth_logits, cfg)
    joints = backproject(landmarks.pixel, depths, intr)
    pose_features = pose_pooling(features, landmarks.grid)
    vertex_features = pose_to_vertex(pose_features, take_param(weights, "lift.weight"))
    t2 = time.perf_counter()

    offsets = decode_mesh(vertex_features, weights, topo, tables=tables, cfg=cfg, workers=workers)
    mesh = offsets + joints[0].astype(np.float32)
    t3 = time.perf_counter()

    return InferenceResult(
        landmarks=landmarks,
        joints_3d=joints,
        mesh_vertices=mesh,
        input_sparsity=enc.input_sparsity,
        timings_ms={
            "encoder": (t1 - t0) * 1000.0,
            "lifting": (t2 - t1) * 1000.0,
            "decoder": (t3 - t2) * 1000.0,
        },
    )
