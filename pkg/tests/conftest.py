"""Shared fixtures: parsed shipped configs and session-scoped trained nets."""

from pathlib import Path

import pytest

from ndkf import cli, sim

REPO_ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = REPO_ROOT / "configs"


@pytest.fixture(scope="session")
def paper_cfg() -> sim.ExperimentConfig:
    return cli.load_config(CONFIG_DIR / "paper.ini")


@pytest.fixture(scope="session")
def reduced_cfg() -> sim.ExperimentConfig:
    return cli.load_config(CONFIG_DIR / "reduced.ini")


@pytest.fixture(scope="session")
def paper_nets(paper_cfg) -> sim.TrainedNets:
    return sim.train_networks(paper_cfg)


@pytest.fixture(scope="session")
def paper_summary(paper_cfg, paper_nets) -> sim.MonteCarloSummary:
    return sim.monte_carlo(paper_cfg, paper_cfg.mc_runs, nets=paper_nets)
