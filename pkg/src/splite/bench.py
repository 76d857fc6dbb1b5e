"""Throughput benchmarks: sparse vs dense convolution, and the two decoders.

The convolution benchmark drives each layer of a backbone's sparse-eligible
stack with synthetic input held at an exact target sparsity at that layer's
own resolution. Feeding every layer a controlled-sparsity workload isolates
the engine's sparsity scaling; a propagated end-to-end run would dilate the
active set through the strided stem and pooling and measure mostly-dense
maps everywhere downstream. The dense baseline runs the identical layer
stack as ordinary zero-padded convolutions on the densified inputs.

FPS is repeats / total wall time with 5 warm-up iterations excluded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .backbone import ConvSpec, dense_conv2d, sparse_conv2d
from .config import DEFAULT_CONFIG, PipelineConfig
from .decoder import (
    DecoderCost,
    build_decoder_tables,
    count_params_flops,
    partial_channels,
    spiralconv_pp_layer,
    splite_layer,
)
from .tensor_core import SparseFeatureMap, TensorError
from .preproc import synth_sparse_input
from .topology import MeshTopology, build_hand_topology

WARMUP_RUNS = 5


@dataclass(frozen=True)
class LayerShape:
    """One benchmarked convolution: geometry only, weights are synthesized."""

    name: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    mode: str
    resolution: int


def _basic_stage(stage: int, cin: int, cout: int, res: int) -> list[LayerShape]:
    layers = [
        LayerShape(f"stage{stage}.block0.conv1", cin, cout, 3, 1, "submanifold", res),
        LayerShape(f"stage{stage}.block0.conv2", cout, cout, 3, 1, "submanifold", res),
    ]
    if cin != cout:
        layers.append(LayerShape(f"stage{stage}.block0.proj", cin, cout, 1, 1, "submanifold", res))
    layers += [
        LayerShape(f"stage{stage}.block1.conv1", cout, cout, 3, 1, "submanifold", res),
        LayerShape(f"stage{stage}.block1.conv2", cout, cout, 3, 1, "submanifold", res),
    ]
    return layers


def _bottleneck_stage(stage: int, blocks: int, cin: int, width: int, cout: int,
                      res: int) -> list[LayerShape]:
    layers: list[LayerShape] = []
    for b in range(blocks):
        c0 = cin if b == 0 else cout
        layers += [
            LayerShape(f"stage{stage}.block{b}.conv1", c0, width, 1, 1, "submanifold", res),
            LayerShape(f"stage{stage}.block{b}.conv2", width, width, 3, 1, "submanifold", res),
            LayerShape(f"stage{stage}.block{b}.conv3", width, cout, 1, 1, "submanifold", res),
        ]
        if b == 0:
            layers.append(LayerShape(f"stage{stage}.block0.proj", c0, cout, 1, 1, "submanifold", res))
    return layers


def conv_stack(arch: str, cfg: PipelineConfig = DEFAULT_CONFIG) -> list[LayerShape]:
    """The sparse-eligible convolution layers of the named backbone.

    Both stacks share the strided stem at input resolution; residual stages
    run at the grid resolution. The deeper variant uses bottleneck blocks
    with the standard 4x channel expansion.
    """
    stem = LayerShape("stem", 3, 64, 7, 2, "generalized", cfg.input_size)
    grid = cfg.grid_size
    if arch == "resnet18":
        return [stem] + _basic_stage(1, 64, 64, grid) + _basic_stage(2, 64, 128, grid)
    if arch == "resnet50":
        return ([stem]
                + _bottleneck_stage(1, 3, 64, 64, 256, grid)
                + _bottleneck_stage(2, 4, 256, 128, 512, grid))
    raise TensorError(f"unknown architecture {arch!r}")


@dataclass(frozen=True)
class BenchRow:
    arch: str
    mode: str  # "sparse" | "dense"
    sparsity: float
    fps: float


def _layer_specs(layers: list[LayerShape], rng: np.random.Generator) -> list[ConvSpec]:
    specs = []
    for layer in layers:
        fan_in = layer.in_channels * layer.kernel * layer.kernel
        w = (rng.standard_normal((layer.out_channels, layer.in_channels,
                                  layer.kernel, layer.kernel)) * np.sqrt(2.0 / fan_in))
        b = np.zeros(layer.out_channels, np.float32)
        specs.append(ConvSpec(name=layer.name, weight=w.astype(np.float32), bias=b,
                              stride=layer.stride, mode=layer.mode))
    return specs


def _layer_inputs(layers: list[LayerShape], target_sparsity: float, seed: int,
                  ) -> tuple[list[SparseFeatureMap], list[np.ndarray]]:
    """Per-layer synthetic workloads at the exact target sparsity."""
    sparse_inputs, dense_inputs = [], []
    for i, layer in enumerate(layers):
        site_map = synth_sparse_input(layer.resolution, layer.resolution,
                                      target_sparsity, seed=seed * 1009 + i)[0]
        rows, cols = np.nonzero(site_map)
        rng = np.random.default_rng(seed * 7919 + i)
        feats = rng.uniform(0.25, 1.0, (rows.size, layer.in_channels)).astype(np.float32)
        sp = SparseFeatureMap(layer.resolution, layer.resolution,
                              np.stack([rows, cols], 1).astype(np.int32), feats)
        dense = np.zeros((layer.in_channels, layer.resolution, layer.resolution), np.float32)
        dense[:, rows, cols] = feats.T
        sparse_inputs.append(sp)
        dense_inputs.append(dense)
    return sparse_inputs, dense_inputs


def bench_conv(arch: str = "resnet18", sparsities: tuple[float, ...] = (0.80, 0.85, 0.90),
               repeats: int = 50, seed: int = 0,
               cfg: PipelineConfig = DEFAULT_CONFIG) -> list[BenchRow]:
    """Sparse-vs-dense throughput of one backbone's sparse-stage stack.

    Returns one row per (mode, sparsity). Sparse rows should rise with
    sparsity (less work per layer); dense rows are workload-independent and
    should stay flat.
    """
    if repeats < 1:
        raise TensorError("repeats must be >= 1")
    layers = conv_stack(arch, cfg)
    specs = _layer_specs(layers, np.random.default_rng(seed))
    rows: list[BenchRow] = []
    for mode in ("sparse", "dense"):
        for s in sparsities:
            sparse_in, dense_in = _layer_inputs(layers, s, seed)

            def run_stack():
                if mode == "sparse":
                    for sp, spec in zip(sparse_in, specs):
                        sparse_conv2d(sp, spec)
                else:
                    for x, spec in zip(dense_in, specs):
                        dense_conv2d(x, spec)

            for _ in range(WARMUP_RUNS):
                run_stack()
            t0 = time.perf_counter()
            for _ in range(repeats):
                run_stack()
            elapsed = time.perf_counter() - t0
            rows.append(BenchRow(arch=arch, mode=mode, sparsity=float(s),
                                 fps=repeats / elapsed))
    return rows


@dataclass(frozen=True)
class DecoderBenchRow:
    variant: str  # "splite" | "spiralconv_pp"
    batch: int
    mean_ms: float


def bench_decoder(batches: int = 8, repeats: int = 50, workers: int = 1, seed: int = 0,
                  topo: MeshTopology | None = None,
                  cfg: PipelineConfig = DEFAULT_CONFIG,
                  ) -> tuple[list[DecoderBenchRow], dict[str, DecoderCost]]:
    """Latency of the two spiral decoder stacks on identical inputs.

    Each batch is a fresh random coarse-level feature set; both variants run
    the same reduce -> per-level spiral layer -> upsample -> head stack and
    differ only in the spiral layer (partial-channel vs full-channel gather).
    """
    if topo is None:
        topo = build_hand_topology(cfg.mesh_levels)
    tables = build_decoder_tables(topo, cfg.spiral_length)
    rng = np.random.default_rng(seed)
    c = cfg.decoder_channels
    cp = partial_channels(c, cfg.partial_fraction)
    length = cfg.spiral_length
    reduce_w = (rng.standard_normal((c, cfg.feature_channels)) * np.sqrt(2.0 / cfg.feature_channels)).astype(np.float32)
    reduce_b = np.zeros(c, np.float32)
    head_w = (rng.standard_normal((3, c)) * 0.01).astype(np.float32)
    head_b = np.zeros(3, np.float32)
    lite_w = [(rng.standard_normal((c, cp * length)) * np.sqrt(2.0 / (cp * length))).astype(np.float32)
              for _ in cfg.mesh_levels]
    full_w = [(rng.standard_normal((c, c * length)) * np.sqrt(2.0 / (c * length))).astype(np.float32)
              for _ in cfg.mesh_levels]
    zero_b = np.zeros(c, np.float32)

    def run(features: np.ndarray, variant: str) -> np.ndarray:
        x = np.maximum(features @ reduce_w.T + reduce_b, 0.0)
        for i in range(len(cfg.mesh_levels)):
            if variant == "splite":
                x = splite_layer(x, tables[i], lite_w[i], zero_b, width=cp, workers=workers)
            else:
                x = spiralconv_pp_layer(x, tables[i], full_w[i], zero_b, workers=workers)
            if i + 1 < len(cfg.mesh_levels):
                x = topo.upsamples[i].apply(x)
        return x @ head_w.T + head_b

    rows: list[DecoderBenchRow] = []
    for b in range(batches):
        features = rng.standard_normal((cfg.mesh_levels[0], cfg.feature_channels)).astype(np.float32)
        for variant in ("splite", "spiralconv_pp"):
            first = run(features, variant)
            for _ in range(WARMUP_RUNS - 1):
                run(features, variant)
            t0 = time.perf_counter()
            for _ in range(repeats):
                out = run(features, variant)
            elapsed = time.perf_counter() - t0
            if not np.array_equal(out, first):
                raise TensorError(f"{variant}: decoder output changed across repeats")
            rows.append(DecoderBenchRow(variant=variant, batch=b,
                                        mean_ms=elapsed / repeats * 1000.0))
    costs = {"splite": count_params_flops(cfg, "splite"),
             "spiralconv_pp": count_params_flops(cfg, "spiralconv_pp")}
    return rows, costs
