"""parasnn: ANN-to-SNN conversion with parallel spiking neurons.

Converts pretrained feed-forward networks (ReLU or quantized-staircase
activations) into spiking networks whose layer mapping is exact at matched
step counts, calibrates the residual error distribution-aware when step
counts differ, and runs inference with an O(T)-charge / O(log T)-fire
parallel path alongside a serial integrate-and-fire oracle.
"""

from .activations import (
    CLIP_RELU,
    DA_QCFS,
    QCFS,
    RELU,
    ActivationSpec,
    boundary_margin,
    clip_relu,
    da_qcfs,
    qcfs,
    record_thresholds,
    relu,
    staircase_count,
)
from .convert import (
    CONVERSION_CASES,
    QCFS_EQ_CASE,
    QCFS_NEQ_CASE,
    RELU_CASE,
    CalibrationConfig,
    ConvertedNetwork,
    calibrate,
    convert,
    convert_pipeline,
    init_da_params,
    measure_output_errors,
    momentum_update,
    to_clip_relu,
    training_free_pipeline,
)
from .graph import (
    ActivationLayer,
    AvgPool2dLayer,
    Conv2dLayer,
    FlattenLayer,
    LayerGraph,
    LinearLayer,
    ResidualBegin,
    ResidualJoin,
    SpikingLayer,
    apply_layer,
)
from .modelio import DatasetHandle, load_cifar10, load_model, save_model
from .neuron import (
    ParallelNeuronParams,
    SpikeTrain,
    conversion_coefficients,
    conversion_matrix,
    fire_bisect,
    fire_scan,
    fire_scan_from_sum,
    parallel_lif_run,
    rate_from_spikes,
    serial_if_run,
    shift_vector,
    total_current,
)
from .numeric import (
    avgpool2d,
    channel_max,
    channel_mean,
    conv2d,
    fold_batchnorm,
    linear,
    scaled_rate,
)
from .runtime import (
    InferenceReport,
    ann_forward,
    bench,
    emit_records,
    evaluate,
    off_boundary_mask,
    snn_parallel_forward,
    snn_serial_forward,
)
from .synth import make_synth_convnet, make_synth_mlp, synth_dataset

__version__ = "0.1.0"
