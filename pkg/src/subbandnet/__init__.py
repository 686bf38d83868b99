"""Sub-band CNNs for spoken term classification.

A self-contained numpy training stack: MFCC front-end, three weight-sharing
CNN architectures with exact gradients, a bit-exact FLOPS profiler, SGD
training with a two-phase schedule, and a sweep harness. Scikit-learn style
wrappers live in :mod:`subbandnet.estimator`; the CLI in
:mod:`subbandnet.cli`.
"""

from .estimator import MfccTransformer, SubbandCNNClassifier
from .flops import FlopsReport, count_flops, flops_reduction, multiplications_total
from .subband import (
    ARCHS,
    VARIANTS,
    BandLayout,
    ModelSpec,
    ReceptiveField,
    build_model,
    forward,
    init_params,
    loss_and_grads,
    preset_layout,
    receptive_field,
    uniform_layout,
)
from .tensor import Rng
from .train import TrainingConfig, evaluate, run_trials

__version__ = "0.1.0"

__all__ = [
    "ARCHS",
    "VARIANTS",
    "BandLayout",
    "FlopsReport",
    "MfccTransformer",
    "ModelSpec",
    "ReceptiveField",
    "Rng",
    "SubbandCNNClassifier",
    "TrainingConfig",
    "build_model",
    "count_flops",
    "evaluate",
    "flops_reduction",
    "forward",
    "init_params",
    "loss_and_grads",
    "multiplications_total",
    "preset_layout",
    "receptive_field",
    "run_trials",
    "uniform_layout",
    "__version__",
]
