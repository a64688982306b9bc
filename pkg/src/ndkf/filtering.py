"""Per-node predict and measurement-update steps.

Beliefs are immutable (mean, covariance) pairs tagged with a stage so the
predict -> update -> fuse call order is enforced instead of assumed. The
update implements the innovation form literally, with post-symmetrization
of the covariance; SPD violations surface as errors rather than being
silently repaired.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linalg import (
    Matrix,
    NdkfError,
    NotSPD,
    Vector,
    invert_spd,
    spectral_norm,
    symmetrize,
)
from .models import Model

COV_SYMMETRY_TOL = 1e-9


class NonFiniteState(NdkfError):
    """A model produced a non-finite mean or covariance."""


class SingularInnovation(NdkfError):
    """The innovation covariance S could not be inverted."""


class Stage(str, Enum):
    PREDICTED = "predicted"
    UPDATED = "updated"
    FUSED = "fused"


@dataclass(frozen=True)
class Belief:
    """A node's Gaussian state estimate at one filtering stage."""

    mean: Vector
    cov: Matrix
    stage: Stage
    time: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if not np.all(np.isfinite(mean)):
            raise NonFiniteState("belief mean has non-finite entries")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(f"covariance shape {cov.shape} does not match mean")
        if not np.all(np.isfinite(cov)):
            raise NonFiniteState("belief covariance has non-finite entries")
        if np.max(np.abs(cov - cov.T), initial=0.0) > COV_SYMMETRY_TOL:
            raise ValueError("belief covariance not symmetric within tolerance")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class NoiseModel:
    """Process noise covariance and the per-node measurement covariances."""

    Q: Matrix
    R: tuple[Matrix, ...]

    def __post_init__(self):
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "R", tuple(np.atleast_2d(np.asarray(r, dtype=float)) for r in self.R))


@dataclass(frozen=True)
class InnovationRecord:
    """Diagnostics of one measurement update."""

    node: int
    time: int
    innovation: Vector
    innovation_cov: Matrix
    gain_norm: float


def predict(belief: Belief, dynamics: Model, Q: Matrix, k: int) -> Belief:
    """Propagate a belief through the dynamics model from time k to k+1."""
    if belief.stage not in (Stage.UPDATED, Stage.FUSED):
        raise ValueError(f"predict requires an updated or fused belief, got {belief.stage.value}")
    cov = symmetrize(belief.cov)
    mean = dynamics.eval(belief.mean, k)
    if not np.all(np.isfinite(mean)):
        raise NonFiniteState(f"dynamics model returned non-finite mean at k={k}")
    jac = dynamics.jacobian(belief.mean, k)
    new_cov = symmetrize(jac @ cov @ jac.T + np.asarray(Q, dtype=float))
    return Belief(mean=mean, cov=new_cov, stage=Stage.PREDICTED, time=k + 1)


def update_with_gain(
    belief: Belief, y: Vector, meas: Model, R: Matrix, node: int = 0
) -> tuple[Belief, InnovationRecord, Matrix, Matrix]:
    """Measurement update that also exposes the gain and Jacobian.

    Returns (posterior belief, innovation record, K, H); the extra matrices
    feed the contraction diagnostics without recomputing the update.
    """
    if belief.stage is not Stage.PREDICTED:
        raise ValueError(f"update requires a predicted belief, got {belief.stage.value}")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != meas.output_dim:
        raise ValueError(f"measurement dim {y.shape[0]} != model output {meas.output_dim}")
    R = np.atleast_2d(np.asarray(R, dtype=float))

    cov = symmetrize(belief.cov)
    predicted = meas.eval(belief.mean, belief.time)
    if not np.all(np.isfinite(predicted)):
        raise NonFiniteState(f"measurement model returned non-finite value at k={belief.time}")
    jac = meas.jacobian(belief.mean, belief.time)
    innovation = y - predicted

    s = symmetrize(jac @ cov @ jac.T + R)
    try:
        s_inv = invert_spd(s)
    except NotSPD as exc:
        raise SingularInnovation(f"innovation covariance not SPD at k={belief.time}: {exc}") from exc
    gain = cov @ jac.T @ s_inv

    mean = belief.mean + gain @ innovation
    if not np.all(np.isfinite(mean)):
        raise NonFiniteState(f"update produced non-finite mean at k={belief.time}")
    new_cov = symmetrize((np.eye(belief.dim) - gain @ jac) @ cov)
    posterior = Belief(mean=mean, cov=new_cov, stage=Stage.UPDATED, time=belief.time)
    record = InnovationRecord(
        node=node,
        time=belief.time,
        innovation=innovation,
        innovation_cov=s,
        gain_norm=spectral_norm(gain),
    )
    return posterior, record, gain, jac


def update(belief: Belief, y: Vector, meas: Model, R: Matrix, node: int = 0) -> tuple[Belief, InnovationRecord]:
    """Standard innovation-form measurement update."""
    posterior, record, _, _ = update_with_gain(belief, y, meas, R, node)
    return posterior, record
