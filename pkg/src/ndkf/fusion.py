"""Information-form fusion and synchronous consensus rounds.

Each node converts its belief to precision form (W = P^-1, z = W x),
neighbors' contributions are summed, and the sums are converted back. With
the default "sum" scaling this is the literal additive information fusion;
"average" divides both sums by the neighborhood size, which preserves the
fused mean but avoids the precision inflation of double-counted priors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Matrix, NotSPD, Vector, invert_spd, symmetrize
from .filtering import Belief, Stage

FUSION_SCALES = ("sum", "average")


@dataclass(frozen=True)
class Topology:
    """Communication neighborhoods; node i always hears itself."""

    n_nodes: int
    neighbors: tuple[frozenset[int], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "neighbors", tuple(frozenset(int(j) for j in n) for n in self.neighbors)
        )
        if len(self.neighbors) != self.n_nodes:
            raise ValueError("need one neighbor set per node")
        for i, peers in enumerate(self.neighbors):
            if not peers:
                raise ValueError(f"node {i} has an empty neighborhood")
            if i not in peers:
                raise ValueError(f"node {i} must be in its own neighborhood")
            if any(j < 0 or j >= self.n_nodes for j in peers):
                raise ValueError(f"node {i} has a neighbor out of range")


def fully_connected(n: int) -> Topology:
    everyone = frozenset(range(n))
    return Topology(n, tuple(everyone for _ in range(n)))


def ring(n: int) -> Topology:
    return Topology(n, tuple(frozenset({i, (i - 1) % n, (i + 1) % n}) for i in range(n)))


def star(n: int) -> Topology:
    hub = frozenset(range(n))
    return Topology(n, (hub, *(frozenset({0, i}) for i in range(1, n))))


def line(n: int) -> Topology:
    sets = []
    for i in range(n):
        peers = {i}
        if i > 0:
            peers.add(i - 1)
        if i < n - 1:
            peers.add(i + 1)
        sets.append(frozenset(peers))
    return Topology(n, tuple(sets))


TOPOLOGY_BUILDERS = {
    "full": fully_connected,
    "ring": ring,
    "star": star,
    "line": line,
}


@dataclass(frozen=True)
class InfoMessage:
    """Precision matrix and precision-weighted mean of one belief."""

    W: Matrix
    z: Vector

    def __post_init__(self):
        object.__setattr__(self, "W", np.asarray(self.W, dtype=float))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).reshape(-1))


def info_contribution(belief: Belief) -> InfoMessage:
    """Convert a belief to its information-form message."""
    w = invert_spd(belief.cov)
    return InfoMessage(W=w, z=w @ belief.mean)


def fuse(messages: list[InfoMessage], time: int = 0, divisor: int = 1) -> Belief:
    """Combine information messages into one fused belief.

    Precisions and information vectors are summed (and optionally divided
    by ``divisor`` for average scaling), then converted back to moment form.
    """
    if not messages:
        raise ValueError("fuse requires at least one message")
    w_sum = sum(m.W for m in messages) / divisor
    z_sum = sum(m.z for m in messages) / divisor
    try:
        cov = invert_spd(symmetrize(w_sum))
    except NotSPD as exc:
        raise NotSPD(f"fused precision not SPD: {exc}") from exc
    return Belief(mean=cov @ z_sum, cov=cov, stage=Stage.FUSED, time=time)


def consensus_round(
    beliefs: list[Belief], topo: Topology, fusion_scale: str = "sum"
) -> list[Belief]:
    """One synchronous exchange: every node fuses its neighborhood.

    Outputs depend only on the input snapshot, never on partially updated
    results, so the round commutes with any per-node evaluation order.
    """
    if len(beliefs) != topo.n_nodes:
        raise ValueError(f"expected {topo.n_nodes} beliefs, got {len(beliefs)}")
    if fusion_scale not in FUSION_SCALES:
        raise ValueError(f"fusion_scale must be one of {FUSION_SCALES}")
    contributions = [info_contribution(b) for b in beliefs]
    fused = []
    for i, peers in enumerate(topo.neighbors):
        msgs = [contributions[j] for j in sorted(peers)]
        divisor = len(msgs) if fusion_scale == "average" else 1
        fused.append(fuse(msgs, time=beliefs[i].time, divisor=divisor))
    return fused
