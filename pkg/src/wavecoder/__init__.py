"""Differentiable scalar wave-optics engine: coherent propagation through
stacks of trainable coded elements, end-to-end optimized."""

from .field import (
    ComplexField,
    FrequencyGrid,
    Grid,
    crop,
    energy,
    make_grid,
    pad,
    plane_wave,
    point_source,
    read_field,
    write_field,
)
from .propagation import (
    Method,
    PropagationSegment,
    TransferFunction,
    as_transfer,
    compute_psf,
    propagate,
    propagate_as,
    propagate_direct,
    rs_weight,
    sense_psf_convolution,
)
from .elements import (
    BinaryMask,
    PhaseMask,
    SelectorMask,
    ZernikeDOE,
    modulate,
    realize_binary_hard,
    realize_binary_soft,
    realize_phase,
    realize_selector,
    realize_zernike,
)
from .autodiff import Tape, Variable, backward, finite_diff_gradient, gradient_check
from .regularizers import (
    RegKind,
    RegularizerConfig,
    reg_binary,
    reg_correlation,
    reg_decoder_weights,
    reg_shots,
    reg_transmittance,
    rho_schedule,
)
from .model import (
    DetectorRegions,
    IntensityImage,
    LinearDecoder,
    Model,
    default_detector_regions,
    forward,
    gradient_check_model,
    lift_transpose,
    loss_mse,
    loss_softmax_xent,
    materialize_sensing_matrix,
    objective_d2nn,
    objective_e2e,
    sense_intensity,
)
from .training import Adam, Dataset, TrainingReport, evaluate, psnr, train
from .datasets import load_idx_dataset, synthetic_glyphs

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
