"""Command-line harness: train networks, run experiments, compare variants.

Configs are flat INI files (key = value under section headers) mirroring the
ExperimentConfig fields; see configs/paper.ini for the canonical benchmark
settings. All outputs are deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

import numpy as np

from . import fusion, linalg, models, neural, sim
from .filtering import Belief, Stage, predict, update
from .linalg import NdkfError

PARAM_FILES = ("dynamics.mlp", "measurement_1.mlp", "measurement_2.mlp", "measurement_3.mlp", "measurement_4.mlp")


class ConfigError(NdkfError):
    """A config file is missing, malformed, or has a bad field."""


def _get(parser, section, key, convert, default=None):
    if not parser.has_option(section, key):
        if default is not None:
            return default
        raise ConfigError(f"missing config field [{section}] {key}")
    raw = parser.get(section, key)
    try:
        return convert(raw)
    except (ValueError, NdkfError) as exc:
        raise ConfigError(f"bad config field [{section}] {key} = {raw!r}: {exc}") from exc


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.replace(",", " ").split())


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in raw.replace(",", " ").split())


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _network_training(parser, section, input_dim, output_dim) -> sim.NetworkTraining:
    spec = neural.MlpSpec(
        input_dim=input_dim,
        hidden_layers=_get(parser, section, "hidden", _ints),
        output_dim=output_dim,
        use_batch_norm=_get(parser, section, "batch_norm", _bool, default=False),
        dropout_rate=_get(parser, section, "dropout", float, default=0.0),
    )
    train = neural.TrainConfig(
        epochs=_get(parser, section, "epochs", int),
        learning_rate=_get(parser, section, "learning_rate", float, default=1e-3),
        lr_decay_factor=_get(parser, section, "lr_decay_factor", float, default=0.5),
        lr_decay_every=_get(parser, section, "lr_decay_every", int, default=1000),
        batch_size=_get(parser, section, "batch_size", int, default=0),
    )
    return sim.NetworkTraining(spec=spec, train=train)


def load_config(path, *, seed_override: int | None = None) -> sim.ExperimentConfig:
    """Parse an INI experiment config; raises ConfigError naming bad fields."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for section in ("experiment", "dynamics_net", "measurement_net"):
        if not parser.has_section(section):
            raise ConfigError(f"missing config section [{section}] in {path}")

    n_nodes = _get(parser, "experiment", "n_nodes", int, default=4)
    topo_name = _get(parser, "experiment", "topology", str.strip, default="full")
    if topo_name not in fusion.TOPOLOGY_BUILDERS:
        raise ConfigError(
            f"bad config field [experiment] topology = {topo_name!r}: "
            f"expected one of {sorted(fusion.TOPOLOGY_BUILDERS)}"
        )
    seed = seed_override if seed_override is not None else _get(parser, "experiment", "seed", int)
    try:
        return sim.ExperimentConfig(
            horizon_train=_get(parser, "experiment", "horizon_train", int, default=400),
            horizon_test=_get(parser, "experiment", "horizon_test", int, default=100),
            n_nodes=n_nodes,
            topology=fusion.TOPOLOGY_BUILDERS[topo_name](n_nodes),
            q_diag=_get(parser, "experiment", "q_diag", _floats, default=(0.001, 0.001)),
            r_scalar=_get(parser, "experiment", "r_scalar", float, default=0.01),
            init_mean=_get(parser, "experiment", "init_mean", _floats, default=(0.0, 0.0)),
            init_cov_diag=_get(parser, "experiment", "init_cov_diag", _floats, default=(0.5, 0.5)),
            nn_dynamics=_network_training(parser, "dynamics_net", input_dim=4, output_dim=2),
            nn_measurement=_network_training(parser, "measurement_net", input_dim=2, output_dim=1),
            fusion_scale=_get(parser, "experiment", "fusion_scale", str.strip, default="sum"),
            rounds_per_step=_get(parser, "experiment", "rounds_per_step", int, default=1),
            seed=seed,
            mc_runs=_get(parser, "experiment", "mc_runs", int, default=40),
            metrics_node=_get(parser, "experiment", "metrics_node", int, default=1),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid experiment config in {path}: {exc}") from exc


def _mc_workers(runs: int) -> int:
    raw = os.environ.get("NDKF_THREADS")
    if raw is None:
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError as exc:
            raise ConfigError(f"bad NDKF_THREADS value {raw!r}: {exc}") from exc
        if cap < 1:
            raise ConfigError(f"bad NDKF_THREADS value {raw!r}: must be >= 1")
    return max(1, min(cap, runs))


def _save_nets(nets: sim.TrainedNets, out_dir: Path) -> None:
    neural.save_params(nets.dynamics, out_dir / PARAM_FILES[0])
    for i, net in enumerate(nets.measurements):
        neural.save_params(net, out_dir / PARAM_FILES[i + 1])


def _load_nets(out_dir: Path, n_nodes: int) -> sim.TrainedNets:
    dyn_path = out_dir / PARAM_FILES[0]
    if not dyn_path.is_file():
        raise ConfigError(f"no trained parameters at {dyn_path}; run the train command first")
    dynamics = neural.load_params(dyn_path)
    measurements = []
    for i in range(n_nodes):
        path = out_dir / PARAM_FILES[i + 1]
        if not path.is_file():
            raise ConfigError(f"no trained parameters at {path}; run the train command first")
        measurements.append(neural.load_params(path))
    return sim.TrainedNets(dynamics=dynamics, measurements=tuple(measurements))


def _obtain_nets(cfg: sim.ExperimentConfig, out_dir: Path, allow_train: bool) -> sim.TrainedNets:
    if (out_dir / PARAM_FILES[0]).is_file():
        return _load_nets(out_dir, cfg.n_nodes)
    if not allow_train:
        raise ConfigError(f"no trained parameters in {out_dir}; run the train command first")
    nets = sim.train_networks(cfg)
    _save_nets(nets, out_dir)
    return nets


def cmd_train(cfg: sim.ExperimentConfig, out_dir: Path, args) -> int:
    losses: list[float] = []
    nets = sim.train_networks(cfg, dynamics_loss=losses)
    _save_nets(nets, out_dir)
    print(f"trained dynamics net (final loss {losses[-1]:.6g}) and {cfg.n_nodes} measurement nets")
    print(f"parameters written to {out_dir}")
    return 0


def cmd_run(cfg: sim.ExperimentConfig, out_dir: Path, args) -> int:
    variant = args.variant
    if variant == "both":
        raise ConfigError("run executes a single variant; pass --variant ndkf or ekf")
    nets = _obtain_nets(cfg, out_dir, allow_train=False) if variant == "ndkf" else None
    metrics = sim.run_experiment(cfg, variant, nets=nets)
    sim.write_trajectory_csv(out_dir / "trajectory.csv", metrics)
    sim.write_innovations_csv(out_dir / "innovations.csv", metrics)
    sim.write_stability_csv(out_dir / "stability.csv", metrics)
    summary = sim.MonteCarloSummary(runs=1, per_run={variant: [metrics]})
    sim.write_summary_csv(out_dir / "summary.csv", summary)
    print(f"{variant}: rmse_px={metrics.rmse_px:.6g} rmse_py={metrics.rmse_py:.6g}")
    print(f"CSV output written to {out_dir}")
    return 0


def _variants(args) -> tuple[str, ...]:
    return sim.VARIANTS if args.variant == "both" else (args.variant,)


def cmd_montecarlo(cfg: sim.ExperimentConfig, out_dir: Path, args) -> int:
    runs = args.runs if args.runs is not None else cfg.mc_runs
    variants = _variants(args)
    nets = _obtain_nets(cfg, out_dir, allow_train=True) if "ndkf" in variants else None
    summary = sim.monte_carlo(cfg, runs, nets=nets, variants=variants, max_workers=_mc_workers(runs))
    sim.write_summary_csv(out_dir / "summary.csv", summary)
    for variant, px, py, _ in summary.rows():
        print(f"{variant}: mean rmse_px={px:.6g} mean rmse_py={py:.6g} over {runs} runs")
    print(f"summary written to {out_dir / 'summary.csv'}")
    return 0


def cmd_compare(cfg: sim.ExperimentConfig, out_dir: Path, args) -> int:
    runs = args.runs if args.runs is not None else cfg.mc_runs
    nets = _obtain_nets(cfg, out_dir, allow_train=True)
    summary = sim.monte_carlo(cfg, runs, nets=nets, max_workers=_mc_workers(runs))
    sim.write_summary_csv(out_dir / "summary.csv", summary)
    ndkf_px, ndkf_py = summary.mean_rmse("ndkf")
    ekf_px, ekf_py = summary.mean_rmse("ekf")
    print(f"RMSE comparison over {runs} Monte Carlo runs")
    print(f"{'method':<18}{'rmse_px':>12}{'rmse_py':>12}")
    print(f"{'ndkf':<18}{ndkf_px:>12.4f}{ndkf_py:>12.4f}")
    print(f"{'ekf':<18}{ekf_px:>12.4f}{ekf_py:>12.4f}")
    if ndkf_px < ekf_px and ndkf_py < ekf_py:
        print("ndkf beats ekf in both components")
    else:
        print("warning: ndkf does not beat ekf in both components")
    return 0


def _self_checks() -> list[tuple[str, bool, str]]:
    checks = []
    gen = np.random.Generator(np.random.PCG64(7))

    worst = 0.0
    for _ in range(10):
        m = gen.normal(size=(3, 3))
        worst = max(worst, abs(linalg.spectral_norm(m) - np.linalg.svd(m, compute_uv=False)[0]))
    checks.append(("spectral norm vs SVD", worst < 1e-8, f"max abs err {worst:.3g}"))

    worst = 0.0
    for _ in range(5):
        a = gen.normal(size=(4, 4))
        spd = a @ a.T + 4.0 * np.eye(4)
        worst = max(worst, np.max(np.abs(spd @ linalg.invert_spd(spd) - np.eye(4))))
    checks.append(("SPD inversion round trip", worst < 1e-9, f"max abs err {worst:.3g}"))

    worst = 0.0
    for spec in (
        neural.MlpSpec(4, (128, 128, 128), 2, use_batch_norm=True, dropout_rate=0.2),
        neural.MlpSpec(2, (32, 32), 1),
    ):
        net = neural.init_params(spec, seed=11)
        for _ in range(10):
            x = gen.uniform(-2, 2, size=spec.input_dim)
            diff = neural.mlp_jacobian(net, x) - neural.mlp_jacobian(net, x, method="finite_diff")
            worst = max(worst, np.max(np.abs(diff)))
    checks.append(("network jacobian vs finite differences", worst < 1e-4, f"max abs err {worst:.3g}"))

    b = Belief(np.array([1.0, -2.0]), np.array([[0.4, 0.1], [0.1, 0.3]]), Stage.UPDATED, 0)
    single = fusion.fuse([fusion.info_contribution(b)], time=0)
    double = fusion.fuse([fusion.info_contribution(b)] * 2, time=0)
    ok = (
        np.allclose(single.mean, b.mean, atol=1e-10)
        and np.allclose(single.cov, b.cov, atol=1e-10)
        and np.allclose(double.cov, b.cov / 2, atol=1e-10)
    )
    checks.append(("fusion identities", ok, "single fuse identity, duplicate halves covariance"))

    ok, err = _linear_kf_check()
    checks.append(("linear Kalman filter oracle", ok, f"max abs deviation {err:.3g}"))
    return checks


def _linear_kf_check(steps: int = 100) -> tuple[bool, float]:
    """Compare the filter path against textbook linear KF recursions."""
    a_mat = 0.9 * np.eye(2)
    h_mat = np.eye(2)
    q_mat = 0.001 * np.eye(2)
    r_mat = 0.01 * np.eye(2)
    dyn = models.Model(lambda x, k: a_mat @ x, lambda x, k: a_mat, 2)
    meas = models.Model(lambda x, k: h_mat @ x, lambda x, k: h_mat, 2)

    gen = np.random.Generator(np.random.PCG64(21))
    x_true = np.array([1.0, -1.0])
    belief = Belief(np.zeros(2), 0.5 * np.eye(2), Stage.FUSED, 0)
    ref_mean, ref_cov = belief.mean.copy(), belief.cov.copy()
    worst = 0.0
    for k in range(steps):
        x_true = a_mat @ x_true + gen.multivariate_normal(np.zeros(2), q_mat)
        y = h_mat @ x_true + gen.multivariate_normal(np.zeros(2), r_mat)

        belief, _ = update(predict(belief, dyn, q_mat, k), y, meas, r_mat)

        ref_mean = a_mat @ ref_mean
        ref_cov = a_mat @ ref_cov @ a_mat.T + q_mat
        s = h_mat @ ref_cov @ h_mat.T + r_mat
        gain = ref_cov @ h_mat.T @ np.linalg.inv(s)
        ref_mean = ref_mean + gain @ (y - h_mat @ ref_mean)
        ref_cov = (np.eye(2) - gain @ h_mat) @ ref_cov

        worst = max(worst, np.max(np.abs(belief.mean - ref_mean)), np.max(np.abs(belief.cov - ref_cov)))
    return worst < 1e-9, worst


def cmd_check(args) -> int:
    failures = 0
    for name, ok, detail in _self_checks():
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failures += 0 if ok else 1
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ndkf",
        description="Neural-augmented distributed Kalman filter benchmark harness",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, needs_config in (
        ("train", True),
        ("run", True),
        ("montecarlo", True),
        ("compare", True),
        ("check", False),
    ):
        p = sub.add_parser(verb)
        if needs_config:
            p.add_argument("--config", required=True, help="experiment config file")
            p.add_argument("--out-dir", default="out", help="output directory (default: out)")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
            p.add_argument("--runs", type=int, default=None, help="override the Monte Carlo run count")
            p.add_argument(
                "--variant",
                choices=("ndkf", "ekf", "both"),
                default="ndkf" if verb == "run" else "both",
            )
    return parser


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verb == "check":
        return cmd_check(args)
    try:
        if args.runs is not None and args.runs < 1:
            raise ConfigError("--runs must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg = load_config(args.config, seed_override=args.seed)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        handler = {"train": cmd_train, "run": cmd_run, "montecarlo": cmd_montecarlo, "compare": cmd_compare}
        return handler[args.verb](cfg, out_dir, args)
    except NdkfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
