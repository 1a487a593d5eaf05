"""Network geometry: neighbor relations, coordination graph and link delays."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DegenerateTopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Point:
    x: float
    y: float


@dataclass(frozen=True)
class RadioParams:
    power_watts: float = 1.0
    noise_watts: float = 1.0
    path_loss_exponent: float = 4.0
    bandwidth_hz: float = 10e6

    def __post_init__(self):
        if self.power_watts <= 0 or self.noise_watts <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("power, noise and bandwidth must be positive")
        if self.path_loss_exponent <= 2:
            raise ValueError("path loss exponent must exceed 2")


@dataclass(frozen=True)
class Topology:
    sbs_positions: np.ndarray  # (M, 2)
    user_positions: np.ndarray  # (U, 2)
    comm_radius: float

    def __post_init__(self):
        sbs = np.asarray(self.sbs_positions, dtype=float).reshape(-1, 2)
        users = np.asarray(self.user_positions, dtype=float).reshape(-1, 2)
        if len(sbs) < 1 or len(users) < 1:
            raise ValueError("need at least one SBS and one user")
        if not (np.all(np.isfinite(sbs)) and np.all(np.isfinite(users))):
            raise ValueError("coordinates must be finite")
        if not self.comm_radius > 0:
            raise ValueError("comm_radius must be positive")
        object.__setattr__(self, "sbs_positions", sbs)
        object.__setattr__(self, "user_positions", users)

    @property
    def num_sbs(self) -> int:
        return len(self.sbs_positions)

    @property
    def num_users(self) -> int:
        return len(self.user_positions)

    def distances(self) -> np.ndarray:
        """(M, U) matrix of Euclidean SBS-user distances."""
        diff = self.sbs_positions[:, None, :] - self.user_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    @classmethod
    def random(cls, num_sbs, num_users, comm_radius, rng, region=100.0):
        """Uniform placement of SBSs and users in a ``region`` x ``region`` square."""
        sbs = rng.uniform(0.0, region, size=(num_sbs, 2))
        users = rng.uniform(0.0, region, size=(num_users, 2))
        return cls(sbs, users, comm_radius)

    def with_users(self, user_positions) -> "Topology":
        return Topology(self.sbs_positions, user_positions, self.comm_radius)

    def to_csv(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = (out_dir / "sbs.csv", out_dir / "users.csv")
        for path, header, pts in (
            (paths[0], "sbs_id", self.sbs_positions),
            (paths[1], "user_id", self.user_positions),
        ):
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([header, "x", "y"])
                for i, (x, y) in enumerate(pts):
                    w.writerow([i, repr(float(x)), repr(float(y))])
        return paths


@dataclass(frozen=True)
class NeighborIndex:
    """Neighbor sets and per-user distance orderings.

    ``order`` is a (U, J) array holding each user's neighbor SBSs sorted by
    distance (ties by SBS id), padded with -1.  ``rank[m, u]`` is the 1-based
    position of SBS m in that list, 0 when m is not a neighbor of u.
    """

    neighbors_of_user: tuple[tuple[int, ...], ...]
    neighbors_of_sbs: tuple[frozenset, ...]
    order: np.ndarray
    rank: np.ndarray
    mask: np.ndarray  # (M, U) bool, dist <= l_c

    @property
    def num_sbs(self) -> int:
        return self.mask.shape[0]

    @property
    def num_users(self) -> int:
        return self.mask.shape[1]

    def closer_set(self, u: int, m: int) -> frozenset:
        """SBSs preceding m in user u's sorted neighbor list."""
        j = int(self.rank[m, u])
        if j == 0:
            raise KeyError(f"SBS {m} is not a neighbor of user {u}")
        return frozenset(self.neighbors_of_user[u][: j - 1])

    def closer_mask(self, u: int, m: int) -> int:
        bits = 0
        for n in self.closer_set(u, m):
            bits |= 1 << n
        return bits


def build_neighbor_index(topology: Topology) -> NeighborIndex:
    dist = topology.distances()
    M, U = dist.shape
    mask = dist <= topology.comm_radius
    lists = []
    for u in range(U):
        ids = np.flatnonzero(mask[:, u])
        # lexsort: last key is primary
        ids = ids[np.lexsort((ids, dist[ids, u]))]
        lists.append(tuple(int(m) for m in ids))
    width = max((len(l) for l in lists), default=0)
    order = np.full((U, max(width, 1)), -1, dtype=np.int64)
    rank = np.zeros((M, U), dtype=np.int64)
    for u, l in enumerate(lists):
        for j, m in enumerate(l):
            order[u, j] = m
            rank[m, u] = j + 1
    by_sbs = tuple(frozenset(int(u) for u in np.flatnonzero(mask[m])) for m in range(M))
    return NeighborIndex(tuple(lists), by_sbs, order, rank, mask)


@dataclass(frozen=True)
class CoordinationGraph:
    edges: frozenset  # of (m, n) with m <= n, self edges included
    gamma: tuple[tuple[int, ...], ...]

    def has_edge(self, m: int, n: int) -> bool:
        return (min(m, n), max(m, n)) in self.edges


def build_coordination_graph(index: NeighborIndex) -> CoordinationGraph:
    M = index.num_sbs
    shared = index.mask.astype(np.int64) @ index.mask.T.astype(np.int64)
    edges = set()
    for m in range(M):
        edges.add((m, m))
        for n in range(m + 1, M):
            if shared[m, n] > 0:
                edges.add((m, n))
    gamma = tuple(
        tuple(n for n in range(M) if n != m and shared[m, n] > 0) for m in range(M)
    )
    return CoordinationGraph(frozenset(edges), gamma)


def link_delay(distance, radio: RadioParams):
    """Unit-file delay 1 / (W log2(1 + P l^-alpha / noise)) in seconds."""
    snr = radio.power_watts * np.power(distance, -radio.path_loss_exponent) / radio.noise_watts
    return 1.0 / (radio.bandwidth_hz * np.log2(1.0 + snr))


@dataclass(frozen=True)
class DelayModel:
    """Link delays for neighbor pairs plus the core-network delay.

    Non-neighbor entries of ``delay`` hold ``math.inf``; they are never used in
    arithmetic, callers branch on the neighbor mask.
    """

    delay: np.ndarray  # (M, U)
    core_delay: float
    radio: RadioParams = field(default_factory=RadioParams)

    def gain(self, mask) -> np.ndarray:
        """(M, U) delay reduction d0 - d for neighbor pairs, 0 elsewhere."""
        out = np.zeros_like(self.delay)
        out[mask] = self.core_delay - self.delay[mask]
        return out


def compute_delay_model(topology: Topology, index: NeighborIndex, radio: RadioParams = None,
                        core_delay: float | None = None, core_factor: float = 3.0) -> DelayModel:
    radio = radio or RadioParams()
    dist = topology.distances()
    delay = np.full(dist.shape, math.inf)
    mask = index.mask
    # a user sitting exactly on an SBS has infinite SNR; the delay is 0
    with np.errstate(divide="ignore"):
        delay[mask] = link_delay(dist[mask], radio)
    if core_delay is None:
        if not mask.any():
            raise DegenerateTopologyError(
                "no SBS-user pair within range; supply an explicit core delay")
        core_delay = core_factor * float(delay[mask].max())
    if mask.any() and not core_delay > float(delay[mask].max()):
        raise ValueError("core delay must exceed every neighbor link delay")
    return DelayModel(delay, float(core_delay), radio)


@dataclass(frozen=True)
class Network:
    """Everything the environment and learners need about one placement."""

    topology: Topology
    index: NeighborIndex
    graph: CoordinationGraph
    delays: DelayModel

    @property
    def num_sbs(self) -> int:
        return self.topology.num_sbs

    @property
    def num_users(self) -> int:
        return self.topology.num_users

    @property
    def d0(self) -> float:
        return self.delays.core_delay


def build_network(topology: Topology, radio: RadioParams = None, core_delay=None) -> Network:
    index = build_neighbor_index(topology)
    graph = build_coordination_graph(index)
    delays = compute_delay_model(topology, index, radio, core_delay)
    return Network(topology, index, graph, delays)
