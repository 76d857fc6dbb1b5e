"""Pipeline-wide configuration knobs.

Everything here is a deliberate, overridable choice rather than a law of the
architecture; the defaults reproduce the published operating point.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field


DEFAULT_SEED_ENV = "SPLITE_SEED"


def default_seed() -> int:
    """Seed used by CLI commands; overridable via the SPLITE_SEED env var."""
    raw = os.environ.get(DEFAULT_SEED_ENV, "")
    try:
        return int(raw)
    except ValueError:
        return 0


@dataclass(frozen=True)
class PipelineConfig:
    # Input image side; edge maps and the fused input are square at this size.
    input_size: int = 128
    # Mid-resolution grid side: input_size / accumulated stride 4.
    grid_size: int = 32
    # Encoder feature-grid channel width.
    feature_channels: int = 256
    # Keypoints per hand.
    num_keypoints: int = 21
    # Vertex counts of the mesh hierarchy, coarse to fine.
    mesh_levels: tuple[int, ...] = (49, 98, 195, 389, 778)
    # Decoder working width and spiral sequence length.
    decoder_channels: int = 48
    spiral_length: int = 9
    # Fraction of input channels the decoder convolution actually reads.
    partial_fraction: float = 0.25
    # Stage index after which the backbone switches sparse -> dense.
    sparse_dense_cut: int = 2
    # Grid -> input-pixel mapping for landmarks: px = grid * stride + offset.
    landmark_stride: float = 4.0
    landmark_offset: float = 1.5
    # Soft-argmax temperature.
    heatmap_temperature: float = 1.0
    # Depths below this are clamped before back-projection (meters).
    min_depth: float = 0.05
    # Loss weights (reprojection, pose, depth, smoothness).
    loss_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)


DEFAULT_CONFIG = PipelineConfig()
