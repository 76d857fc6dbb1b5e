"""Sparsity-aware inference engine for monocular 3D hand mesh recovery.

The pipeline runs entirely on the CPU with numpy kernels: edge-fused
images feed a sparse convolutional encoder, landmark heatmaps are lifted
to 3D, and a lightweight spiral graph decoder regresses the mesh. The
package doubles as a benchmark suite for the sparse-vs-dense throughput,
decoder cost, and quantization size claims it was built to check.
"""

from .config import DEFAULT_CONFIG, PipelineConfig
from .tensor_core import (
    QuantizedTensor,
    SparseFeatureMap,
    TensorError,
    WeightError,
    densify,
    sparsify,
    sparsity,
)
from .topology import MeshLevel, MeshTopology, TopologyError, build_hand_topology
from .preproc import (
    FusedInput,
    Image,
    ImageError,
    canny_edges,
    early_fusion,
    load_image,
    sobel_edges,
    synth_sparse_input,
    to_grayscale,
)
from .backbone import ConvSpec, backbone_forward, dense_conv2d, sparse_conv2d
from .lifting import (
    CameraIntrinsics,
    Landmarks2D,
    LiftingError,
    backproject,
    pose_pooling,
    pose_to_vertex,
    project,
    soft_argmax,
)
from .decoder import (
    SpiralIndexTable,
    build_decoder_tables,
    build_spiral_table,
    count_params_flops,
    decode_mesh,
    parallel_gather,
    splite_layer,
)
from .losses import aggregate_loss, mpjpe, pa_mpjpe, similarity_align
from .quant import fake_quant, qconv2d, qconv2d_error_bound, quantize_pipeline_store
from .model_io import (
    ChecksumError,
    ContainerError,
    PredictionRecord,
    dequantize_store,
    load_store,
    load_topology,
    quantize_store,
    save_store,
    save_topology,
)
from .pipeline import InferenceResult, gen_weights, infer_single, prepare_weights
from .bench import bench_conv, bench_decoder

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CONFIG",
    "PipelineConfig",
    "QuantizedTensor",
    "SparseFeatureMap",
    "TensorError",
    "WeightError",
    "densify",
    "sparsify",
    "sparsity",
    "MeshLevel",
    "MeshTopology",
    "TopologyError",
    "build_hand_topology",
    "FusedInput",
    "Image",
    "ImageError",
    "canny_edges",
    "early_fusion",
    "load_image",
    "sobel_edges",
    "synth_sparse_input",
    "to_grayscale",
    "ConvSpec",
    "backbone_forward",
    "dense_conv2d",
    "sparse_conv2d",
    "CameraIntrinsics",
    "Landmarks2D",
    "LiftingError",
    "backproject",
    "pose_pooling",
    "pose_to_vertex",
    "project",
    "soft_argmax",
    "SpiralIndexTable",
    "build_decoder_tables",
    "build_spiral_table",
    "count_params_flops",
    "decode_mesh",
    "parallel_gather",
    "splite_layer",
    "aggregate_loss",
    "mpjpe",
    "pa_mpjpe",
    "similarity_align",
    "fake_quant",
    "qconv2d",
    "qconv2d_error_bound",
    "quantize_pipeline_store",
    "ChecksumError",
    "ContainerError",
    "PredictionRecord",
    "dequantize_store",
    "load_store",
    "load_topology",
    "quantize_store",
    "save_store",
    "save_topology",
    "InferenceResult",
    "gen_weights",
    "infer_single",
    "prepare_weights",
    "bench_conv",
    "bench_decoder",
]
