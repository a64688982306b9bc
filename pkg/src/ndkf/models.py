"""Dynamics and measurement models behind a uniform value/Jacobian interface.

A ``Model`` pairs an evaluation function with its state Jacobian so the
filter never cares whether it is talking to a trained network or an
analytical formula. This module also defines the 2-D benchmark system: a
slowly rotating drift with four heterogeneous scalar sensors, the learned
residual-dynamics and measurement-head adapters, and the deliberately
mis-specified analytical models used by the EKF baseline.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .linalg import Matrix, NdkfError, Vector
from .neural import DimensionMismatch, MlpParams, mlp_forward, mlp_jacobian

STATE_DIM = 2
N_NODES = 4
DRIFT_SCALE = 0.05


class UnknownNode(NdkfError):
    """Node index outside 1..4."""


class Model:
    """A function of (state, time index) together with its state Jacobian."""

    def __init__(
        self,
        eval_fn: Callable[[Vector, int], Vector],
        jacobian_fn: Callable[[Vector, int], Matrix],
        output_dim: int,
    ):
        self._eval = eval_fn
        self._jac = jacobian_fn
        self.output_dim = output_dim

    def eval(self, state: Vector, k: int = 0) -> Vector:
        out = np.asarray(self._eval(np.asarray(state, dtype=float), int(k)), dtype=float)
        return out.reshape(-1)

    def jacobian(self, state: Vector, k: int = 0) -> Matrix:
        jac = np.asarray(self._jac(np.asarray(state, dtype=float), int(k)), dtype=float)
        return jac.reshape(self.output_dim, -1)


def time_features(k: int) -> Vector:
    """Bounded periodic encoding of the time index: (sin(k/10), cos(k/10))."""
    return np.array([math.sin(k / 10.0), math.cos(k / 10.0)])


def drift(k: int) -> Vector:
    """Deterministic per-step displacement of the benchmark system."""
    return DRIFT_SCALE * np.array([math.cos(k / 10.0), math.sin(k / 10.0)])


def true_dynamics(state: Vector, k: int, noise: Vector) -> Vector:
    """One exact transition of the benchmark system: x + drift(k) + noise."""
    return np.asarray(state, dtype=float) + drift(k) + np.asarray(noise, dtype=float)


def true_measurement(node: int, state: Vector, noise: float = 0.0) -> float:
    """Scalar reading of sensor ``node`` (1..4) at ``state``, plus noise."""
    px, py = np.asarray(state, dtype=float)
    if node == 1:
        value = math.sin(2 * px) + 0.5 * py
    elif node == 2:
        value = math.cos(2 * py) - 0.4 * px
    elif node == 3:
        value = math.sin(2 * px) + math.cos(2 * py)
    elif node == 4:
        value = math.sin(2 * px) - math.cos(2 * py)
    else:
        raise UnknownNode(f"node {node} not in 1..4")
    return value + noise


def true_measurement_jacobian(node: int, state: Vector) -> Matrix:
    """Exact 1x2 derivative of ``true_measurement`` w.r.t. the state."""
    px, py = np.asarray(state, dtype=float)
    if node == 1:
        return np.array([[2 * math.cos(2 * px), 0.5]])
    if node == 2:
        return np.array([[-0.4, -2 * math.sin(2 * py)]])
    if node == 3:
        return np.array([[2 * math.cos(2 * px), -2 * math.sin(2 * py)]])
    if node == 4:
        return np.array([[2 * math.cos(2 * px), 2 * math.sin(2 * py)]])
    raise UnknownNode(f"node {node} not in 1..4")


def learned_dynamics_model(net: MlpParams) -> Model:
    """Residual transition model x + net([x; time features]).

    The network sees the state augmented with the periodic time encoding;
    the filter Jacobian is I plus the state columns of the network Jacobian
    (time enters as an exogenous input, not a differentiated coordinate).
    """
    if net.spec.input_dim != STATE_DIM + 2 or net.spec.output_dim != STATE_DIM:
        raise DimensionMismatch(
            f"dynamics net must map {STATE_DIM + 2} -> {STATE_DIM}, "
            f"got {net.spec.input_dim} -> {net.spec.output_dim}"
        )

    def eval_fn(x, k):
        return x + mlp_forward(net, np.concatenate([x, time_features(k)]))

    def jac_fn(x, k):
        full = mlp_jacobian(net, np.concatenate([x, time_features(k)]))
        return np.eye(STATE_DIM) + full[:, :STATE_DIM]

    return Model(eval_fn, jac_fn, STATE_DIM)


def learned_measurement_model(net: MlpParams) -> Model:
    """Measurement head evaluating net(x) with its network Jacobian."""
    if net.spec.input_dim != STATE_DIM or net.spec.output_dim != 1:
        raise DimensionMismatch(
            f"measurement net must map {STATE_DIM} -> 1, "
            f"got {net.spec.input_dim} -> {net.spec.output_dim}"
        )
    return Model(
        lambda x, k: mlp_forward(net, x),
        lambda x, k: mlp_jacobian(net, x),
        1,
    )


def nominal_drift_model() -> Model:
    """Noise-free transition x + drift(k); state Jacobian is the identity."""
    return Model(
        lambda x, k: x + drift(k),
        lambda x, k: np.eye(STATE_DIM),
        STATE_DIM,
    )


def exact_measurement_models() -> list[Model]:
    """Analytical models matching the true sensors, with exact Jacobians."""
    def make(node):
        return Model(
            lambda x, k, n=node: np.array([true_measurement(n, x)]),
            lambda x, k, n=node: true_measurement_jacobian(n, x),
            1,
        )

    return [make(node) for node in range(1, N_NODES + 1)]


def ekf_baseline_models() -> tuple[Model, list[Model]]:
    """Models for the analytical baseline filter.

    The transition is the exact nominal drift. Sensors 1 and 2 are
    mis-specified by dropping their linear terms (sin(2px) alone and
    cos(2py) alone); sensors 3 and 4 use the correct formulas.
    """
    node1 = Model(
        lambda x, k: np.array([math.sin(2 * x[0])]),
        lambda x, k: np.array([[2 * math.cos(2 * x[0]), 0.0]]),
        1,
    )
    node2 = Model(
        lambda x, k: np.array([math.cos(2 * x[1])]),
        lambda x, k: np.array([[0.0, -2 * math.sin(2 * x[1])]]),
        1,
    )
    exact = exact_measurement_models()
    return nominal_drift_model(), [node1, node2, exact[2], exact[3]]
