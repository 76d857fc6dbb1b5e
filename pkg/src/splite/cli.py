"""Operator-facing command line: preprocessing, inference, benchmarks,
quantization, counting, and evaluation.

Exit codes: 0 on success, 1 on a validation or invariant failure, 2 on an
I/O failure (missing or unreadable files, corrupt containers). The
SPLITE_SEED environment variable overrides the default seed of 0 wherever
a --seed flag is left unset.
"""

from __future__ import annotations

import functools
import sys
import time
from pathlib import Path

import click
import numpy as np

from .bench import bench_conv, bench_decoder
from .config import DEFAULT_CONFIG
from .decoder import count_params_flops
from .lifting import CameraIntrinsics, LiftingError, default_intrinsics
from .losses import pa_mpjpe
from .model_io import (
    ContainerError,
    PredictionRecord,
    dequantize_store,
    load_store,
    load_topology,
    quantize_store,
    read_records,
    save_store,
    save_topology,
    write_records,
)
from .pipeline import default_seed, gen_weights, infer_single, prepare_weights
from .preproc import (
    ImageError,
    canny_edges,
    early_fusion,
    load_image,
    resize_to,
    sobel_edges,
    to_grayscale,
    write_pgm,
)
from .quant import quantize_pipeline_store
from .tensor_core import TensorError, WeightError, sparsity
from .topology import TopologyError, build_hand_topology


class _IOFailure(Exception):
    """File-level failure surfaced with exit code 2."""


_VALIDATION = (TensorError, TopologyError, LiftingError, ImageError, WeightError, ValueError)


def _cli_errors(fn):
    """Map exception families onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _IOFailure as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except ContainerError as exc:  # before ValueError; subclass
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except _VALIDATION as exc:
            message = exc.args[0] if exc.args else exc
            click.echo(f"error: {message}", err=True)
            sys.exit(1)

    return wrapper


def _load_image_file(path: str):
    # Undecodable content is a file problem, same exit class as a bad path.
    try:
        return load_image(path)
    except ImageError as exc:
        raise _IOFailure(f"{path}: {exc}") from None


def _load_topology_file(path: str):
    try:
        return load_topology(path)
    except TopologyError as exc:
        raise _IOFailure(f"{path}: {exc}") from None


def _load_float_store(path: str):
    # A quantized store is a valid deployment artifact; expand it on load.
    store = load_store(path)
    if any(np.asarray(v).dtype == np.int8 for v in store.values()):
        store = dequantize_store(store)
    return store


def _parse_intrinsics(text: str) -> CameraIntrinsics:
    parts = text.split(",")
    if len(parts) != 4:
        raise LiftingError("intrinsics must be four comma-separated values: fx,fy,cx,cy")
    fx, fy, cx, cy = (float(p) for p in parts)
    return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy)


def _parse_sparsities(text: str) -> tuple[float, ...]:
    values = tuple(float(p) for p in text.split(","))
    if not values or any(not 0.0 < v < 1.0 for v in values):
        raise TensorError("sparsities must be comma-separated values in (0, 1)")
    return values


def _resolve_seed(seed: int | None) -> int:
    return default_seed() if seed is None else seed


@click.group()
def main():
    """Sparse hand-mesh inference engine and benchmark suite."""


# ---------------------------------------------------------------------------
# preprocessing and inference
# ---------------------------------------------------------------------------


@main.command()
@click.argument("image", type=click.Path())
@click.option("--detector", type=click.Choice(["sobel", "canny"]), default="sobel",
              show_default=True, help="edge extraction algorithm")
@click.option("--out", type=click.Path(), required=True, help="output PGM path")
@_cli_errors
def edge(image: str, detector: str, out: str):
    """Extract an edge map from IMAGE and print its sparsity."""
    gray = to_grayscale(_load_image_file(image))
    edges = sobel_edges(gray) if detector == "sobel" else canny_edges(gray)
    write_pgm(out, edges)
    click.echo(f"sparsity: {sparsity(edges):.4f}")


@main.command()
@click.option("--weights", type=click.Path(), required=True, help="float32 weight store")
@click.option("--topology", type=click.Path(), required=True, help="mesh topology file")
@click.option("--image", "image_path", type=click.Path(), required=True)
@click.option("--intrinsics", default=None, help="fx,fy,cx,cy (defaults to the config camera)")
@click.option("--quantized", is_flag=True,
              help="run the weight-quantized model and report its delta against float")
@click.option("--out", type=click.Path(), default=None, help="write the prediction record here")
@click.option("--render", type=click.Path(), default=None, help="write a result figure here")
@click.option("--threads", type=int, default=1, show_default=True,
              help="workers for the decoder's parallel gather")
@_cli_errors
def infer(weights: str, topology: str, image_path: str, intrinsics: str | None,
          quantized: bool, out: str | None, render: str | None, threads: int):
    """Predict a 3D hand mesh from one image and emit a prediction record."""
    cfg = DEFAULT_CONFIG

    t0 = time.perf_counter()
    img = resize_to(_load_image_file(image_path), cfg.input_size)
    gray = to_grayscale(img)
    fused = early_fusion(sobel_edges(gray), canny_edges(gray), cfg.input_size)
    preproc_ms = (time.perf_counter() - t0) * 1000.0

    prepared = prepare_weights(_load_float_store(weights), cfg)
    topo = _load_topology_file(topology)
    intr = _parse_intrinsics(intrinsics) if intrinsics else default_intrinsics(cfg)

    result = infer_single(fused.tensor, prepared, topo, cfg=cfg, intr=intr, workers=threads)
    if quantized:
        quantized_result = infer_single(fused.tensor, quantize_pipeline_store(prepared),
                                        topo, cfg=cfg, intr=intr, workers=threads)
        delta_mm = float(np.linalg.norm(
            result.joints_3d - quantized_result.joints_3d, axis=1).mean() * 1000.0)
        click.echo(f"quantized vs float mean joint delta: {delta_mm:.4f} mm")
        result = quantized_result

    record = PredictionRecord(
        image=Path(image_path).name,
        input_sparsity=result.input_sparsity,
        landmarks_px=result.landmarks.pixel.tolist(),
        confidence=result.landmarks.confidence.tolist(),
        joints_3d=result.joints_3d.tolist(),
        mesh_vertices=int(result.mesh_vertices.shape[0]),
    )
    if out:
        write_records(out, [record])
    click.echo(record.to_json())
    t = result.timings_ms
    click.echo(f"timings ms: preproc {preproc_ms:.1f} | encode {t['encoder']:.1f}"
               f" | lift {t['lifting']:.1f} | decode {t['decoder']:.1f}")
    if render:
        from . import report

        report.render_inference_panel(fused.tensor, result.landmarks,
                                      result.mesh_vertices, render)
        click.echo(f"wrote figure {render}")


# ---------------------------------------------------------------------------
# benchmarks and counting
# ---------------------------------------------------------------------------


@main.command("bench-conv")
@click.option("--arch", type=click.Choice(["resnet18", "resnet50"]), default="resnet18",
              show_default=True)
@click.option("--sparsities", default="0.80,0.85,0.90", show_default=True,
              help="comma-separated sparsity levels")
@click.option("--repeats", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=None, help="defaults to SPLITE_SEED or 0")
@click.option("--out", type=click.Path(), default=None,
              help="CSV path; a figure is rendered next to it")
@_cli_errors
def bench_conv_cmd(arch: str, sparsities: str, repeats: int, seed: int | None, out: str | None):
    """Benchmark the sparse and dense encoder stacks over a sparsity sweep."""
    rows = bench_conv(arch, sparsities=_parse_sparsities(sparsities), repeats=repeats,
                      seed=_resolve_seed(seed))
    click.echo("arch,mode,sparsity,fps")
    for row in rows:
        click.echo(f"{row.arch},{row.mode},{row.sparsity:.2f},{row.fps:.4f}")
    if out:
        from . import report

        report.write_conv_csv(rows, out)
        figure = report.render_conv_figure(rows, report.figure_path_for(out))
        click.echo(f"wrote {out} and {figure}")


@main.command("bench-decoder")
@click.option("--repeats", type=int, default=50, show_default=True)
@click.option("--batches", type=int, default=8, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=None, help="defaults to SPLITE_SEED or 0")
@click.option("--out", type=click.Path(), default=None,
              help="CSV path; a figure is rendered next to it")
@_cli_errors
def bench_decoder_cmd(repeats: int, batches: int, threads: int, seed: int | None,
                      out: str | None):
    """Time the lightweight spiral layer against the full-width baseline."""
    rows, costs = bench_decoder(batches=batches, repeats=repeats, workers=threads,
                                seed=_resolve_seed(seed))
    click.echo("variant,batch,mean_ms")
    for row in rows:
        click.echo(f"{row.variant},{row.batch},{row.mean_ms:.6f}")
    lite = float(np.mean([r.mean_ms for r in rows if r.variant == "splite"]))
    full = float(np.mean([r.mean_ms for r in rows if r.variant == "spiralconv_pp"]))
    click.echo(f"splite {lite:.4f} ms | spiralconv_pp {full:.4f} ms | speedup {full / lite:.2f}x")
    for name in sorted(costs):
        cost = costs[name]
        click.echo(f"{name}: params/layer {cost.params_per_layer:,}"
                   f" | total params {cost.total_params:,}"
                   f" | spiral flops/pass {cost.total_flops:,}")
    if out:
        from . import report

        report.write_decoder_csv(rows, out)
        figure = report.render_decoder_figure(rows, costs, report.figure_path_for(out))
        click.echo(f"wrote {out} and {figure}")


@main.command()
@_cli_errors
def flops():
    """Print closed-form parameter and FLOP counts for both decoder variants."""
    click.echo("variant,params_per_layer,total_params,spiral_flops_per_pass")
    costs = {name: count_params_flops(variant=name) for name in ("splite", "spiralconv_pp")}
    for name, cost in costs.items():
        click.echo(f"{name},{cost.params_per_layer},{cost.total_params},{cost.total_flops}")
    lite, full = costs["splite"], costs["spiralconv_pp"]
    click.echo(f"param ratio {full.params_per_layer / lite.params_per_layer:.3f}x"
               f" | flop ratio {full.total_flops / lite.total_flops:.3f}x")


# ---------------------------------------------------------------------------
# stores, evaluation, fixtures
# ---------------------------------------------------------------------------


@main.command()
@click.option("--weights", type=click.Path(), required=True, help="float32 weight store")
@click.option("--out", type=click.Path(), required=True, help="quantized store path")
@click.option("--report", "report_out", type=click.Path(), default=None,
              help="size CSV path; a figure is rendered next to it")
@_cli_errors
def quantize(weights: str, out: str, report_out: str | None):
    """Quantize a weight store to int8 and report the file-size ratio."""
    save_store(out, quantize_store(load_store(weights)))
    f32_bytes = Path(weights).stat().st_size
    int8_bytes = Path(out).stat().st_size
    ratio = int8_bytes / f32_bytes
    click.echo(f"float32 file: {f32_bytes} bytes")
    click.echo(f"quantized file: {int8_bytes} bytes")
    click.echo(f"ratio: {ratio:.4f}")
    if report_out:
        from . import report

        with open(report_out, "w") as fh:
            fh.write("file,bytes\n")
            fh.write(f"float32,{f32_bytes}\nint8,{int8_bytes}\n")
        figure = report.render_size_figure(f32_bytes, int8_bytes,
                                           report.figure_path_for(report_out))
        click.echo(f"wrote {report_out} and {figure}")


@main.command("eval")
@click.option("--pred", type=click.Path(), required=True, help="prediction record file")
@click.option("--gt", type=click.Path(), required=True, help="ground-truth record file")
@_cli_errors
def eval_cmd(pred: str, gt: str):
    """Mean PA-MPJPE in millimetres between two prediction record files."""
    pred_records = read_records(pred)
    gt_records = read_records(gt)
    if not pred_records:
        raise TensorError("prediction file holds no records")
    if len(pred_records) != len(gt_records):
        raise TensorError(f"record count mismatch: {len(pred_records)} vs {len(gt_records)}")
    errors = [pa_mpjpe(np.asarray(p.joints_3d), np.asarray(g.joints_3d))
              for p, g in zip(pred_records, gt_records)]
    click.echo(f"pa-mpjpe: {float(np.mean(errors)):.4f} mm over {len(errors)} records")


@main.command("gen-weights")
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None, help="defaults to SPLITE_SEED or 0")
@_cli_errors
def gen_weights_cmd(out: str, seed: int | None):
    """Write a deterministic random float32 weight store."""
    store = gen_weights(_resolve_seed(seed))
    save_store(out, store)
    click.echo(f"wrote {len(store)} tensors to {out}")


@main.command("gen-topology")
@click.option("--out", type=click.Path(), required=True)
@_cli_errors
def gen_topology_cmd(out: str):
    """Write the five-level hand mesh topology file."""
    topo = build_hand_topology()
    save_topology(out, topo)
    counts = "/".join(str(c) for c in topo.vertex_counts)
    click.echo(f"wrote topology with vertex levels {counts} to {out}")


if __name__ == "__main__":
    main()
