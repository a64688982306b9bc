"""Runtime contraction diagnostics and the inductive error bound.

The filter is stable when the prediction operator norm alpha = ||F|| and
the update operator norm beta = ||I - K H|| both stay below one; their
product gamma drives the geometric error recursion

    e_{k+1} <= gamma * e_k + nu_k,    nu_k = beta ||w_k|| + ||K_{k+1}|| ||v_{k+1}||.

These quantities are monitored, not enforced: drift-dominated systems run
with alpha near one, and the conditions are sufficient rather than
necessary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import Matrix, NdkfError, spectral_norm


class LengthMismatch(NdkfError):
    """Noise sequence shorter than the requested horizon."""


@dataclass(frozen=True)
class ContractionReport:
    """Per-step, per-node contraction factors."""

    time: int
    node: int
    alpha: float
    beta: float
    gamma: float
    conditions_met: bool


@dataclass(frozen=True)
class NoiseBounds:
    """Worst-case norms of the process noise, measurement noise and gain."""

    w_bound: float
    v_bound: float
    gain_bound: float

    def __post_init__(self):
        if min(self.w_bound, self.v_bound, self.gain_bound) < 0.0:
            raise ValueError("noise bounds must be nonnegative")


def contraction_report(
    F: Matrix, K: Matrix, H: Matrix, time: int = 0, node: int = 0
) -> ContractionReport:
    """Evaluate the contraction factors for one prediction/update pair."""
    F = np.asarray(F, dtype=float)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    alpha = spectral_norm(F)
    beta = spectral_norm(np.eye(F.shape[0]) - K @ H)
    return ContractionReport(
        time=time,
        node=node,
        alpha=alpha,
        beta=beta,
        gamma=alpha * beta,
        conditions_met=bool(alpha < 1.0 and beta < 1.0),
    )


def noise_term(beta: float, w_norm: float, gain_norm: float, v_norm: float) -> float:
    """Per-step noise contribution nu = beta*||w|| + ||K||*||v||."""
    return beta * w_norm + gain_norm * v_norm


def worst_case_noise_term(bounds: NoiseBounds, beta: float) -> float:
    return noise_term(beta, bounds.w_bound, bounds.gain_bound, bounds.v_bound)


def error_bound(gamma: float, e0: float, nu: Sequence[float], N: int) -> float:
    """Inductive error bound after N steps.

    Returns gamma^N * e0 + sum_{j=0}^{N-1} gamma^(N-1-j) * nu_j. The caller
    supplies the per-step noise terms nu_j.
    """
    if gamma < 0.0:
        raise ValueError("gamma must be nonnegative")
    if e0 < 0.0:
        raise ValueError("e0 must be nonnegative")
    if N < 0:
        raise ValueError("N must be nonnegative")
    if len(nu) < N:
        raise LengthMismatch(f"need {N} noise terms, got {len(nu)}")
    total = gamma**N * e0
    for j in range(N):
        if nu[j] < 0.0:
            raise ValueError("noise terms must be nonnegative")
        total += gamma ** (N - 1 - j) * nu[j]
    return float(total)
