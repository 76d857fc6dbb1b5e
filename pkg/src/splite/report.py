"""CSV reports and matplotlib figures for benchmark and inference output.

Every writer that produces a delimited file has a sibling renderer so a
report path yields both the machine-readable table and a figure next to
it. Figures use the Agg backend and never open a window.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

from .bench import BenchRow, DecoderBenchRow  # noqa: E402
from .decoder import DecoderCost  # noqa: E402
from .lifting import Landmarks2D  # noqa: E402
from .tensor_core import TensorError  # noqa: E402

CONV_HEADER = ("arch", "mode", "sparsity", "fps")
DECODER_HEADER = ("variant", "batch", "mean_ms")


# ---------------------------------------------------------------------------
# delimited output
# ---------------------------------------------------------------------------


def write_conv_csv(rows: list[BenchRow], path: str | Path) -> Path:
    """Write convolution benchmark rows under the documented header."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONV_HEADER)
        for row in rows:
            writer.writerow([row.arch, row.mode, f"{row.sparsity:.2f}", f"{row.fps:.4f}"])
    return path


def read_conv_csv(path: str | Path) -> list[BenchRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != CONV_HEADER:
            raise TensorError(f"unexpected csv header {header!r}")
        return [BenchRow(arch=arch, mode=mode, sparsity=float(s), fps=float(f))
                for arch, mode, s, f in reader]


def write_decoder_csv(rows: list[DecoderBenchRow], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DECODER_HEADER)
        for row in rows:
            writer.writerow([row.variant, row.batch, f"{row.mean_ms:.6f}"])
    return path


def read_decoder_csv(path: str | Path) -> list[DecoderBenchRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != DECODER_HEADER:
            raise TensorError(f"unexpected csv header {header!r}")
        return [DecoderBenchRow(variant=v, batch=int(b), mean_ms=float(ms))
                for v, b, ms in reader]


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def _save(fig: plt.Figure, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def render_conv_figure(rows: list[BenchRow], path: str | Path) -> Path:
    """Throughput against input sparsity, one line per (arch, mode)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    series: dict[tuple[str, str], list[BenchRow]] = {}
    for row in rows:
        series.setdefault((row.arch, row.mode), []).append(row)
    for (arch, mode), group in sorted(series.items()):
        group = sorted(group, key=lambda r: r.sparsity)
        style = "-o" if mode == "sparse" else "--s"
        ax.plot([r.sparsity for r in group], [r.fps for r in group], style,
                label=f"{arch} {mode}")
    ax.set_xlabel("input sparsity")
    ax.set_ylabel("frames per second")
    ax.set_title("Sparse vs dense convolution throughput")
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _save(fig, path)


def render_decoder_figure(rows: list[DecoderBenchRow],
                          costs: dict[str, DecoderCost],
                          path: str | Path) -> Path:
    """Per-batch latency next to closed-form parameter and FLOP counts."""
    fig, (ax_ms, ax_cost) = plt.subplots(1, 2, figsize=(9.0, 4.0))

    variants = sorted({row.variant for row in rows})
    batches = sorted({row.batch for row in rows})
    width = 0.8 / max(len(variants), 1)
    for i, variant in enumerate(variants):
        ms = [next(r.mean_ms for r in rows if r.variant == variant and r.batch == b)
              for b in batches]
        offs = np.arange(len(batches)) + (i - (len(variants) - 1) / 2) * width
        ax_ms.bar(offs, ms, width=width, label=variant)
    ax_ms.set_xticks(np.arange(len(batches)))
    ax_ms.set_xticklabels([str(b) for b in batches])
    ax_ms.set_xlabel("benchmark batch")
    ax_ms.set_ylabel("mean latency (ms)")
    ax_ms.set_title("Decoder layer latency")
    ax_ms.legend()

    names = sorted(costs)
    params = [costs[n].params_per_layer for n in names]
    flops = [costs[n].total_flops for n in names]
    x = np.arange(len(names))
    ax_cost.bar(x - 0.2, params, width=0.4, label="params / layer")
    ax_cost.bar(x + 0.2, flops, width=0.4, label="FLOPs / pass")
    ax_cost.set_yscale("log")
    ax_cost.set_xticks(x)
    ax_cost.set_xticklabels(names)
    ax_cost.set_title("Closed-form decoder cost")
    ax_cost.legend()
    for xi, (p, f) in enumerate(zip(params, flops)):
        ax_cost.text(xi - 0.2, p, f"{p:,}", ha="center", va="bottom", fontsize=7)
        ax_cost.text(xi + 0.2, f, f"{f / 1e6:.1f}M", ha="center", va="bottom", fontsize=7)

    fig.tight_layout()
    return _save(fig, path)


def render_size_figure(f32_bytes: int, int8_bytes: int, path: str | Path) -> Path:
    """Two-bar store size comparison with the ratio in the title."""
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    sizes_mb = [f32_bytes / 2**20, int8_bytes / 2**20]
    bars = ax.bar(["float32", "int8"], sizes_mb, color=["tab:gray", "tab:blue"])
    for bar, mb in zip(bars, sizes_mb):
        ax.text(bar.get_x() + bar.get_width() / 2, mb, f"{mb:.2f} MB",
                ha="center", va="bottom")
    ax.set_ylabel("serialized size (MB)")
    ax.set_title(f"Quantized store is {100.0 * int8_bytes / f32_bytes:.1f}% of float32")
    return _save(fig, path)


def render_inference_panel(fused: np.ndarray, landmarks: Landmarks2D,
                           mesh_vertices: np.ndarray, path: str | Path) -> Path:
    """Edge input, landmark overlay, and mesh scatter in one row."""
    fused = np.asarray(fused)
    fig, (ax_in, ax_lm, ax_mesh) = plt.subplots(1, 3, figsize=(12.0, 4.0))

    union = fused[-1]
    ax_in.imshow(union, cmap="gray", interpolation="nearest")
    ax_in.set_title("fused edge input (union channel)")
    ax_in.axis("off")

    ax_lm.imshow(union, cmap="gray", interpolation="nearest")
    px = np.asarray(landmarks.pixel)
    ax_lm.scatter(px[:, 0], px[:, 1], s=18.0, c=np.asarray(landmarks.confidence),
                  cmap="viridis", edgecolors="white", linewidths=0.5)
    ax_lm.set_title("2D landmarks (colour = peak confidence)")
    ax_lm.axis("off")

    verts = np.asarray(mesh_vertices)
    order = np.argsort(verts[:, 2])[::-1]  # draw far points first
    sc = ax_mesh.scatter(verts[order, 0], verts[order, 1], c=verts[order, 2],
                         s=6.0, cmap="viridis")
    ax_mesh.set_aspect("equal")
    ax_mesh.invert_yaxis()
    ax_mesh.set_title("predicted mesh (colour = depth, m)")
    fig.colorbar(sc, ax=ax_mesh, shrink=0.8)

    fig.tight_layout()
    return _save(fig, path)


def figure_path_for(out: str | Path, suffix: str = "") -> Path:
    """PNG path next to a delimited output file, sharing its stem."""
    out = Path(out)
    stem = out.stem + (f"-{suffix}" if suffix else "")
    return out.with_name(stem + ".png")
