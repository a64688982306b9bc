"""Experiment harness: truth generation, training data, filter runs, metrics.

Every random draw descends from one configured seed through named streams
(training truth, per-node measurement noise, network training, per-run test
noise), so two processes with the same configuration produce bit-identical
outputs. Gaussian noise comes from a Box-Muller transform over a seeded
64-bit PCG generator.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .filtering import Belief, InnovationRecord, NoiseModel, Stage, predict, update_with_gain
from .fusion import FUSION_SCALES, Topology, consensus_round, fully_connected
from .linalg import Matrix, Vector
from .models import (
    Model,
    ekf_baseline_models,
    learned_dynamics_model,
    learned_measurement_model,
    time_features,
    true_dynamics,
    true_measurement,
)
from .neural import Dataset, MlpParams, MlpSpec, TrainConfig, mlp_train
from .stability import ContractionReport, contraction_report

VARIANTS = ("ndkf", "ekf")

# stream tags for seed derivation
STREAM_TRUTH_TRAIN = 101
STREAM_MEAS_TRAIN = 102
STREAM_NN_DYNAMICS = 103
STREAM_NN_MEASUREMENT = 104
STREAM_TRUTH_TEST = 105
STREAM_MEAS_TEST = 106


def derive_seed(base: int, *parts: int) -> int:
    """Deterministically derive a child seed for a named stream."""
    ss = np.random.SeedSequence([int(base), *(int(p) for p in parts)])
    return int(ss.generate_state(1, np.uint64)[0])


class GaussianStream:
    """Standard normal draws via Box-Muller over a seeded PCG64 generator."""

    def __init__(self, seed: int):
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def standard(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u1 = self._gen.random(m)
        u2 = self._gen.random(m)
        radius = np.sqrt(-2.0 * np.log1p(-u1))
        angle = 2.0 * np.pi * u2
        return np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]


@dataclass(frozen=True)
class NetworkTraining:
    """Architecture plus training settings for one network family."""

    spec: MlpSpec
    train: TrainConfig


def paper_dynamics_training() -> NetworkTraining:
    return NetworkTraining(
        spec=MlpSpec(4, (128, 128, 128), 2, use_batch_norm=True, dropout_rate=0.2),
        train=TrainConfig(epochs=3000, learning_rate=1e-3, lr_decay_factor=0.5, lr_decay_every=1000),
    )


def paper_measurement_training() -> NetworkTraining:
    return NetworkTraining(
        spec=MlpSpec(2, (32, 32), 1),
        train=TrainConfig(epochs=1000, learning_rate=1e-3, lr_decay_factor=0.5, lr_decay_every=1000),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one benchmark run."""

    horizon_train: int = 400
    horizon_test: int = 100
    n_nodes: int = 4
    topology: Topology = field(default_factory=lambda: fully_connected(4))
    q_diag: tuple[float, float] = (0.001, 0.001)
    r_scalar: float = 0.01
    init_mean: tuple[float, float] = (0.0, 0.0)
    init_cov_diag: tuple[float, float] = (0.5, 0.5)
    nn_dynamics: NetworkTraining = field(default_factory=paper_dynamics_training)
    nn_measurement: NetworkTraining = field(default_factory=paper_measurement_training)
    fusion_scale: str = "sum"
    rounds_per_step: int = 1
    seed: int = 0
    mc_runs: int = 40
    metrics_node: int = 1

    def __post_init__(self):
        object.__setattr__(self, "q_diag", tuple(float(q) for q in self.q_diag))
        object.__setattr__(self, "init_mean", tuple(float(v) for v in self.init_mean))
        object.__setattr__(self, "init_cov_diag", tuple(float(v) for v in self.init_cov_diag))
        for name in ("horizon_train", "horizon_test", "n_nodes", "rounds_per_step", "mc_runs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 1 <= self.n_nodes <= 4:
            raise ValueError("n_nodes must be in 1..4 (four sensor models exist)")
        if self.topology.n_nodes != self.n_nodes:
            raise ValueError("topology size does not match n_nodes")
        if any(q < 0.0 for q in self.q_diag):
            raise ValueError("q_diag entries must be >= 0")
        if self.r_scalar <= 0.0:
            raise ValueError("r_scalar must be > 0")
        if any(v <= 0.0 for v in self.init_cov_diag):
            raise ValueError("init_cov_diag entries must be > 0")
        if self.fusion_scale not in FUSION_SCALES:
            raise ValueError(f"fusion_scale must be one of {FUSION_SCALES}")
        if not 1 <= self.metrics_node <= self.n_nodes:
            raise ValueError("metrics_node out of range")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @property
    def Q(self) -> Matrix:
        return np.diag(self.q_diag)

    @property
    def init_cov(self) -> Matrix:
        return np.diag(self.init_cov_diag)


@dataclass(frozen=True)
class TrainedNets:
    """Offline-trained dynamics network and per-node measurement networks."""

    dynamics: MlpParams
    measurements: tuple[MlpParams, ...]


@dataclass
class CostCounters:
    """Structural cost counters accumulated over one run.

    ``matrix_inversions`` counts the innovation solve in each update and the
    fused-precision solve in each fusion, one per node per occurrence.
    ``nn_forward_passes`` counts learned-model evaluations; an analytic
    Jacobian counts as one pass (a single reverse sweep).
    """

    msg_count: int = 0
    matrix_inversions: int = 0
    nn_forward_passes: int = 0


def counting_model(inner: Model, counters: CostCounters) -> Model:
    """Wrap a model so every evaluation bumps the forward-pass counter."""

    def eval_fn(x, k):
        counters.nn_forward_passes += 1
        return inner.eval(x, k)

    def jac_fn(x, k):
        counters.nn_forward_passes += 1
        return inner.jacobian(x, k)

    return Model(eval_fn, jac_fn, inner.output_dim)


@dataclass
class RunMetrics:
    """Everything measured during one filtering run."""

    variant: str
    k0: int
    rmse_px: float
    rmse_py: float
    innovations: list[list[InnovationRecord]]
    contraction: list[ContractionReport]
    msg_count: int
    matrix_inversions: int
    nn_forward_passes: int
    truth: np.ndarray
    fused_means: np.ndarray  # (steps, n_nodes, state_dim)


def simulate_truth(
    T: int,
    seed: int,
    *,
    q_diag: tuple[float, float] = (0.001, 0.001),
    x0: tuple[float, float] = (0.0, 0.0),
    k0: int = 0,
) -> np.ndarray:
    """Simulate T transitions of the benchmark system; returns T+1 states."""
    if T < 1:
        raise ValueError("T must be >= 1")
    stream = GaussianStream(seed)
    scale = np.sqrt(np.asarray(q_diag, dtype=float))
    traj = np.empty((T + 1, 2))
    traj[0] = x0
    for t in range(T):
        noise = scale * stream.standard(2)
        traj[t + 1] = true_dynamics(traj[t], k0 + t, noise)
    return traj


def sample_measurements(
    traj: np.ndarray, seed: int, *, r_var: float = 0.01, n_nodes: int = 4
) -> np.ndarray:
    """Noisy scalar readings per node and step; shape (n_nodes, len(traj)).

    Each node draws from its own stream derived from (seed, node), so the
    noise sequences are independent across nodes.
    """
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    if traj.shape[0] < 1:
        raise ValueError("trajectory must be nonempty")
    readings = np.empty((n_nodes, traj.shape[0]))
    sd = math.sqrt(r_var)
    for node in range(1, n_nodes + 1):
        stream = GaussianStream(derive_seed(seed, node))
        clean = np.array([true_measurement(node, x) for x in traj])
        readings[node - 1] = clean + sd * stream.standard(traj.shape[0])
    return readings


def build_training_sets(
    traj: np.ndarray, measurements: np.ndarray, k0: int = 0
) -> tuple[Dataset, list[Dataset]]:
    """Turn a trajectory and its readings into training datasets.

    The dynamics dataset maps [state; time features] to the transition
    residual x_{k+1} - x_k; each measurement dataset maps the state to that
    node's noisy reading.
    """
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    measurements = np.atleast_2d(np.asarray(measurements, dtype=float))
    if measurements.shape[1] != traj.shape[0]:
        raise ValueError("measurement series length must match trajectory length")
    feats = np.array([time_features(k0 + t) for t in range(traj.shape[0])])
    dynamics = Dataset(
        inputs=np.hstack([traj[:-1], feats[:-1]]),
        targets=traj[1:] - traj[:-1],
    )
    per_node = [Dataset(inputs=traj, targets=measurements[i][:, None]) for i in range(measurements.shape[0])]
    return dynamics, per_node


def train_networks(
    cfg: ExperimentConfig,
    dynamics_loss: list[float] | None = None,
) -> TrainedNets:
    """Generate the offline training data and fit all networks."""
    traj = simulate_truth(
        cfg.horizon_train, derive_seed(cfg.seed, STREAM_TRUTH_TRAIN), q_diag=cfg.q_diag
    )
    readings = sample_measurements(
        traj, derive_seed(cfg.seed, STREAM_MEAS_TRAIN), r_var=cfg.r_scalar, n_nodes=cfg.n_nodes
    )
    dyn_ds, meas_ds = build_training_sets(traj, readings)
    dyn_cfg = replace(cfg.nn_dynamics.train, seed=derive_seed(cfg.seed, STREAM_NN_DYNAMICS))
    dynamics = mlp_train(cfg.nn_dynamics.spec, dyn_ds, dyn_cfg, loss_history=dynamics_loss)
    nets = []
    for i in range(cfg.n_nodes):
        node_cfg = replace(
            cfg.nn_measurement.train, seed=derive_seed(cfg.seed, STREAM_NN_MEASUREMENT, i + 1)
        )
        nets.append(mlp_train(cfg.nn_measurement.spec, meas_ds[i], node_cfg))
    return TrainedNets(dynamics=dynamics, measurements=tuple(nets))


def compute_rmse(truth: np.ndarray, estimates: np.ndarray) -> tuple[float, float]:
    """Per-component root mean squared error over aligned state sequences."""
    err = np.asarray(estimates, dtype=float) - np.asarray(truth, dtype=float)
    return (
        float(np.sqrt(np.mean(err[:, 0] ** 2))),
        float(np.sqrt(np.mean(err[:, 1] ** 2))),
    )


def run_filter(
    dynamics: Model,
    measurements: list[Model],
    truth: np.ndarray,
    readings: list[np.ndarray],
    noise: NoiseModel,
    topology: Topology,
    *,
    init_mean: Vector,
    init_cov: Matrix,
    k0: int = 0,
    rounds_per_step: int = 1,
    fusion_scale: str = "sum",
    metrics_node: int = 1,
    variant: str = "",
    counters: CostCounters | None = None,
) -> RunMetrics:
    """Run the per-step predict/update/consensus loop over a trajectory.

    ``truth`` holds T+1 states starting at time index ``k0``; ``readings[i]``
    holds node i's measurements aligned with the states (row t+1 is consumed
    at step t). Each node's fused belief feeds its next prediction. Errors
    raised by the filter or fusion abort the run with the step attached.
    """
    n = topology.n_nodes
    if len(measurements) != n or len(readings) != n:
        raise ValueError("need one measurement model and reading series per node")
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    steps = truth.shape[0] - 1
    for series in readings:
        if np.atleast_2d(series).shape[0] != steps + 1:
            raise ValueError("reading series length must match trajectory length")
    if counters is None:
        counters = CostCounters()

    beliefs = [
        Belief(np.asarray(init_mean, dtype=float), np.asarray(init_cov, dtype=float), Stage.FUSED, k0)
        for _ in range(n)
    ]
    innovations: list[list[InnovationRecord]] = [[] for _ in range(n)]
    reports: list[ContractionReport] = []
    fused_means = np.empty((steps, n, truth.shape[1]))
    msgs_per_round = sum(len(peers) for peers in topology.neighbors)

    for t in range(steps):
        k = k0 + t
        try:
            updated = []
            for i in range(n):
                jac_f = dynamics.jacobian(beliefs[i].mean, k)
                pred = predict(beliefs[i], dynamics, noise.Q, k)
                y = np.atleast_1d(np.asarray(readings[i], dtype=float)[t + 1])
                post, record, gain, jac_h = update_with_gain(
                    pred, y, measurements[i], noise.R[i], node=i + 1
                )
                counters.matrix_inversions += 1
                innovations[i].append(record)
                reports.append(contraction_report(jac_f, gain, jac_h, time=k + 1, node=i + 1))
                updated.append(post)
            for _ in range(rounds_per_step):
                updated = consensus_round(updated, topology, fusion_scale)
                counters.msg_count += msgs_per_round
                counters.matrix_inversions += n
            beliefs = updated
        except Exception as exc:
            exc.args = (f"step k={k + 1}: {exc}",)
            raise
        for i in range(n):
            fused_means[t, i] = beliefs[i].mean

    rmse_px, rmse_py = compute_rmse(truth[1:], fused_means[:, metrics_node - 1])
    return RunMetrics(
        variant=variant,
        k0=k0,
        rmse_px=rmse_px,
        rmse_py=rmse_py,
        innovations=innovations,
        contraction=reports,
        msg_count=counters.msg_count,
        matrix_inversions=counters.matrix_inversions,
        nn_forward_passes=counters.nn_forward_passes,
        truth=truth,
        fused_means=fused_means,
    )


def run_experiment(
    cfg: ExperimentConfig,
    variant: str,
    nets: TrainedNets | None = None,
    run_index: int = 0,
) -> RunMetrics:
    """Execute one test run of the benchmark for the given filter variant.

    The test trajectory is an independent episode of the same system: it
    restarts at the configured initial state with time index 0 (keeping the
    time features inside the training range) and draws its noise from
    per-run streams derived from (seed, run_index). Starting instead from
    the end of the training trajectory would leave the filters an initial
    error of order one, which the pi-periodic sensors cannot disambiguate.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    k0 = 0
    truth = simulate_truth(
        cfg.horizon_test,
        derive_seed(cfg.seed, STREAM_TRUTH_TEST, run_index),
        q_diag=cfg.q_diag,
        x0=cfg.init_mean,
        k0=k0,
    )
    readings = sample_measurements(
        truth,
        derive_seed(cfg.seed, STREAM_MEAS_TEST, run_index),
        r_var=cfg.r_scalar,
        n_nodes=cfg.n_nodes,
    )

    counters = CostCounters()
    if variant == "ndkf":
        if nets is None:
            raise ValueError("ndkf variant requires trained networks")
        dynamics = counting_model(learned_dynamics_model(nets.dynamics), counters)
        meas_models = [
            counting_model(learned_measurement_model(nets.measurements[i]), counters)
            for i in range(cfg.n_nodes)
        ]
    else:
        dynamics, baseline = ekf_baseline_models()
        meas_models = baseline[: cfg.n_nodes]

    noise = NoiseModel(Q=cfg.Q, R=tuple(np.array([[cfg.r_scalar]]) for _ in range(cfg.n_nodes)))
    return run_filter(
        dynamics,
        meas_models,
        truth,
        [readings[i][:, None] for i in range(cfg.n_nodes)],
        noise,
        cfg.topology,
        init_mean=np.asarray(cfg.init_mean),
        init_cov=cfg.init_cov,
        k0=k0,
        rounds_per_step=cfg.rounds_per_step,
        fusion_scale=cfg.fusion_scale,
        metrics_node=cfg.metrics_node,
        variant=variant,
        counters=counters,
    )


def _mc_job(args) -> RunMetrics:
    cfg, variant, nets, run_index = args
    return run_experiment(cfg, variant, nets, run_index)


@dataclass
class MonteCarloSummary:
    """Per-variant run metrics and their means across runs."""

    runs: int
    per_run: dict[str, list[RunMetrics]]

    def mean_rmse(self, variant: str) -> tuple[float, float]:
        metrics = self.per_run[variant]
        return (
            float(np.mean([m.rmse_px for m in metrics])),
            float(np.mean([m.rmse_py for m in metrics])),
        )

    def rows(self) -> list[tuple[str, float, float, float]]:
        out = []
        for variant, metrics in self.per_run.items():
            px, py = self.mean_rmse(variant)
            out.append((variant, px, py, float(np.mean([m.msg_count for m in metrics]))))
        return out


def monte_carlo(
    cfg: ExperimentConfig,
    runs: int,
    *,
    nets: TrainedNets | None = None,
    variants: tuple[str, ...] = VARIANTS,
    max_workers: int | None = None,
) -> MonteCarloSummary:
    """Average run metrics over independent test realizations.

    Run r uses seeds derived from (cfg.seed, r), so adding runs never
    perturbs earlier ones, and both variants see identical noise. Networks
    are trained once (or passed in) and reused across all runs. Runs execute
    in parallel when ``max_workers`` > 1.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    if "ndkf" in variants and nets is None:
        nets = train_networks(cfg)

    jobs = [
        (cfg, variant, nets if variant == "ndkf" else None, run_index)
        for variant in variants
        for run_index in range(runs)
    ]
    if max_workers is not None and max_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_mc_job, jobs))
    else:
        results = [_mc_job(job) for job in jobs]

    per_run = {variant: [] for variant in variants}
    for (_, variant, _, _), metrics in zip(jobs, results):
        per_run[variant].append(metrics)
    return MonteCarloSummary(runs=runs, per_run=per_run)


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _scalar(values: np.ndarray) -> float:
    arr = np.asarray(values, dtype=float).reshape(-1)
    return float(arr[0]) if arr.size == 1 else float(np.linalg.norm(arr))


def write_trajectory_csv(path, metrics: RunMetrics) -> None:
    """True states and per-node fused means for each filtered step."""
    n = metrics.fused_means.shape[1]
    header = ["k", "true_px", "true_py"]
    for i in range(1, n + 1):
        header += [f"node{i}_px", f"node{i}_py"]
    lines = [",".join(header)]
    for t in range(metrics.fused_means.shape[0]):
        row = [str(metrics.k0 + t + 1), _fmt(metrics.truth[t + 1, 0]), _fmt(metrics.truth[t + 1, 1])]
        for i in range(n):
            row += [_fmt(metrics.fused_means[t, i, 0]), _fmt(metrics.fused_means[t, i, 1])]
        lines.append(",".join(row))
    _write_lines(path, lines)


def write_innovations_csv(path, metrics: RunMetrics) -> None:
    """Innovation diagnostics; vector innovations are written as norms."""
    lines = [",".join(["k", "node", "innovation", "S", "gain_norm"])]
    steps = len(metrics.innovations[0]) if metrics.innovations else 0
    for t in range(steps):
        for series in metrics.innovations:
            rec = series[t]
            lines.append(
                ",".join(
                    [
                        str(rec.time),
                        str(rec.node),
                        _fmt(_scalar(rec.innovation)),
                        _fmt(_scalar(rec.innovation_cov)),
                        _fmt(rec.gain_norm),
                    ]
                )
            )
    _write_lines(path, lines)


def write_stability_csv(path, metrics: RunMetrics) -> None:
    lines = [",".join(["k", "node", "alpha", "beta", "gamma", "conditions_met"])]
    for rep in metrics.contraction:
        lines.append(
            ",".join(
                [
                    str(rep.time),
                    str(rep.node),
                    _fmt(rep.alpha),
                    _fmt(rep.beta),
                    _fmt(rep.gamma),
                    "true" if rep.conditions_met else "false",
                ]
            )
        )
    _write_lines(path, lines)


def write_summary_csv(path, summary: MonteCarloSummary) -> None:
    lines = [",".join(["variant", "rmse_px", "rmse_py", "msg_count"])]
    for variant, px, py, msgs in summary.rows():
        lines.append(",".join([variant, _fmt(px), _fmt(py), _fmt(msgs)]))
    _write_lines(path, lines)


def _write_lines(path, lines: list[str]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
