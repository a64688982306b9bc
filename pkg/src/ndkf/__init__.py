"""Neural-augmented distributed Kalman filtering with consensus fusion.

Learned (or analytical) dynamics and measurement models drive per-node
extended Kalman predict/update steps; nodes exchange information-form
summaries and fuse them in synchronous consensus rounds. A simulation
harness reproduces the 2-D four-sensor benchmark, and contraction
diagnostics track the filter's stability conditions at runtime.
"""

from .filtering import Belief, InnovationRecord, NoiseModel, Stage, predict, update
from .fusion import InfoMessage, Topology, consensus_round, fuse, info_contribution
from .linalg import NdkfError, NoConvergence, NotSPD, invert_spd, spectral_norm
from .models import (
    Model,
    ekf_baseline_models,
    learned_dynamics_model,
    learned_measurement_model,
    true_dynamics,
    true_measurement,
)
from .neural import (
    Dataset,
    MlpParams,
    MlpSpec,
    TrainConfig,
    load_params,
    mlp_forward,
    mlp_jacobian,
    mlp_train,
    save_params,
)
from .sim import (
    ExperimentConfig,
    RunMetrics,
    TrainedNets,
    build_training_sets,
    monte_carlo,
    run_experiment,
    sample_measurements,
    simulate_truth,
    train_networks,
)
from .stability import ContractionReport, NoiseBounds, contraction_report, error_bound

__all__ = [
    "Belief",
    "ContractionReport",
    "Dataset",
    "ExperimentConfig",
    "InfoMessage",
    "InnovationRecord",
    "MlpParams",
    "MlpSpec",
    "Model",
    "NdkfError",
    "NoConvergence",
    "NoiseBounds",
    "NoiseModel",
    "NotSPD",
    "RunMetrics",
    "Stage",
    "Topology",
    "TrainConfig",
    "TrainedNets",
    "build_training_sets",
    "consensus_round",
    "contraction_report",
    "ekf_baseline_models",
    "error_bound",
    "fuse",
    "info_contribution",
    "invert_spd",
    "learned_dynamics_model",
    "learned_measurement_model",
    "load_params",
    "mlp_forward",
    "mlp_jacobian",
    "mlp_train",
    "monte_carlo",
    "predict",
    "run_experiment",
    "sample_measurements",
    "save_params",
    "simulate_truth",
    "spectral_norm",
    "train_networks",
    "true_dynamics",
    "true_measurement",
    "update",
]
