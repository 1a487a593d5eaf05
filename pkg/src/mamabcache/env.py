"""One slot of the caching environment: who serves what, delays and rewards."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .demand import PreferenceMatrix, RequestBatch
from .topology import CoordinationGraph, DelayModel, NeighborIndex

CORE = -1

# scores precompute a (2^M, F) table of per-file values up to this many SBSs
PATTERN_LIMIT = 12


class BudgetError(ValueError):
    pass


def check_budget(a: np.ndarray, cache_size: int) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise BudgetError("cache matrix must be 2-D")
    if a.dtype != bool:
        if not ((a == 0) | (a == 1)).all():
            raise BudgetError("cache entries must be 0/1")
        a = a.astype(bool)
    rows = np.count_nonzero(a, axis=1)
    if rows.max(initial=0) > cache_size:
        raise BudgetError(f"row sums {rows.tolist()} exceed cache size {cache_size}")
    return a


def column_masks(a) -> np.ndarray:
    """(F,) int bitset per file of the SBSs caching it."""
    a = np.asarray(a)
    return np.left_shift(1, np.arange(a.shape[0], dtype=np.int64)) @ a.astype(np.int64)


@lru_cache(maxsize=None)
def pattern_bits(num_sbs: int) -> np.ndarray:
    """(2^M, M) bool: row p lists the SBSs whose bit is set in p."""
    p = np.arange(2 ** num_sbs)
    bits = ((p[:, None] >> np.arange(num_sbs)) & 1).astype(bool)
    bits.setflags(write=False)
    return bits


def pattern_row_gains(values, a, m):
    """Gain of flipping SBS m on, from a (2^M, F) pattern-value table."""
    cm = column_masks(a)
    ar = np.arange(values.shape[1])
    bit = 1 << m
    return values[cm | bit, ar] - values[cm & ~bit, ar]


@dataclass(frozen=True)
class CacheMatrix:
    a: np.ndarray
    cache_size: int

    def __post_init__(self):
        object.__setattr__(self, "a", check_budget(self.a, self.cache_size))

    @classmethod
    def empty(cls, num_sbs, num_files, cache_size):
        return cls(np.zeros((num_sbs, num_files), dtype=bool), cache_size)


@dataclass(frozen=True)
class ServiceOutcome:
    """Per-request service records plus slot aggregates.

    The per-request arrays are aligned with the batch: ``server`` holds the
    serving SBS or ``CORE``; ``rank`` its 1-based position in the user's
    neighbor list (0 for the core).  ``sbs_file_reward`` is the (M, F) matrix
    of r_{m,f}; per-user rewards are the (server, file, user, reward) rows.
    """

    users: np.ndarray
    files: np.ndarray
    server: np.ndarray
    rank: np.ndarray
    delay: np.ndarray
    reward: np.ndarray
    slot_delay: float
    sbs_file_reward: np.ndarray

    @property
    def total_reward(self) -> float:
        return float(self.reward.sum())

    @property
    def num_requests(self) -> int:
        return len(self.users)

    def per_user_reward(self) -> dict:
        out = {}
        for m, f, u, r in zip(self.server.tolist(), self.files.tolist(),
                              self.users.tolist(), self.reward.tolist()):
            if m != CORE:
                out[(m, f, u)] = out.get((m, f, u), 0.0) + r
        return out


def first_cacher(a: np.ndarray, index: NeighborIndex, users, files):
    """Nearest neighbor caching each requested file, with its 1-based rank."""
    order = index.order[users]  # (R, J)
    # padding (-1) reads the last row; masked out here
    cached = a[order, files[:, None]] & (order >= 0)
    j = cached.argmax(axis=1)
    hit = cached[np.arange(len(users)), j]
    server = np.where(hit, order[np.arange(len(users)), j], CORE)
    rank = np.where(hit, j + 1, 0)
    return server, rank


def serve_requests(a, batch: RequestBatch, index: NeighborIndex, delays: DelayModel) -> ServiceOutcome:
    a = np.asarray(a, dtype=bool)
    users, files = batch.users, batch.files
    M, F = a.shape
    if len(files) and (files.min() < 0 or files.max() >= F):
        raise IndexError("requested file id outside the library")
    d0 = delays.core_delay
    if len(users):
        server, rank = first_cacher(a, index, users, files)
    else:
        server = rank = np.zeros(0, dtype=np.int64)
    hit = server != CORE
    delay = np.where(hit, delays.delay[server, users], d0)
    reward = d0 - delay
    sbs_file = np.bincount(server[hit] * F + files[hit], weights=reward[hit],
                           minlength=M * F).reshape(M, F)
    return ServiceOutcome(users, files, server, rank, delay, reward, float(delay.sum()), sbs_file)


@dataclass(frozen=True)
class EdgeRewardTable:
    """Directed edge rewards ``r[m, n, f]``.

    Diagonal entries are self edges (m, m) under joint action (1, 1); an
    off-diagonal entry is the edge (m, n) under (a_m = 1, a_n = 0), stored at
    the serving SBS m.  All other joint actions carry no reward.
    """

    r: np.ndarray  # (M, M, F)

    def total(self) -> float:
        return float(self.r.sum())

    def as_dict(self) -> dict:
        out = {}
        for m, n, f in zip(*np.nonzero(self.r)):
            action = (1, 1) if m == n else (1, 0)
            out[((int(m), int(n)), action, int(f))] = float(self.r[m, n, f])
        return out


def assign_edge_rewards(outcome: ServiceOutcome, index: NeighborIndex,
                        graph: CoordinationGraph | None = None) -> EdgeRewardTable:
    M, F = outcome.sbs_file_reward.shape
    r = np.zeros((M, M, F))
    hit = np.flatnonzero(outcome.server != CORE)
    # fixed accumulation order: ascending user id (batch is sorted)
    for i in hit.tolist():
        m, j, f, u = (int(outcome.server[i]), int(outcome.rank[i]),
                      int(outcome.files[i]), int(outcome.users[i]))
        rew = outcome.reward[i]
        if j == 1:
            r[m, m, f] += rew
        else:
            share = rew / (j - 1)
            for n in index.neighbors_of_user[u][: j - 1]:
                r[m, n, f] += share
    return EdgeRewardTable(r)


def expected_reward(a, prefs: PreferenceMatrix, index: NeighborIndex, delays: DelayModel):
    """Expected per-slot reward of a placement and its (M, F) breakdown."""
    a = np.asarray(a, dtype=bool)
    M, F = a.shape
    per = np.zeros((M, F))
    users = np.repeat(np.arange(index.num_users), F)
    files = np.tile(np.arange(F), index.num_users)
    server, _ = first_cacher(a, index, users, files)
    hit = server != CORE
    w = prefs.p[users[hit], files[hit]] * (delays.core_delay - delays.delay[server[hit], users[hit]])
    np.add.at(per, (server[hit], files[hit]), w)
    return float(per.sum()), per


class ExpectedRewardScore:
    """Expected total reward of a placement as a per-file additive score.

    ``weights`` is the (U, F) request-probability matrix; any nonnegative
    demand matrix works (e.g. the realized requests of one slot).
    """

    def __init__(self, weights, gain_mu):
        self.weights = np.asarray(weights, dtype=float)
        self.gain = np.asarray(gain_mu, dtype=float)
        # users that no SBS reaches never contribute
        keep = self.gain.max(axis=0) > 0
        self.weights, self.gain = self.weights[keep], self.gain[:, keep]
        self.num_sbs = self.gain.shape[0]
        self.num_files = self.weights.shape[1]
        self.values = None
        if self.num_sbs <= PATTERN_LIMIT:
            bits = pattern_bits(self.num_sbs)
            best = (bits[:, :, None] * self.gain[None]).max(axis=1)  # (2^M, U)
            self.values = best @ self.weights

    @classmethod
    def from_network(cls, prefs_or_weights, index: NeighborIndex, delays: DelayModel):
        w = prefs_or_weights.p if isinstance(prefs_or_weights, PreferenceMatrix) else prefs_or_weights
        return cls(w, delays.gain(index.mask))

    def per_file(self, a) -> np.ndarray:
        if self.values is not None:
            return self.values[column_masks(a), np.arange(self.num_files)]
        a = np.asarray(a, dtype=float)
        best = (self.gain[:, :, None] * a[:, None, :]).max(axis=0)  # (U, F)
        return (self.weights * best).sum(axis=0)

    def evaluate(self, a) -> float:
        return float(self.per_file(a).sum())

    def row_gains(self, a, m):
        if self.values is not None:
            return pattern_row_gains(self.values, a, m)
        a = np.asarray(a, dtype=float)
        others = np.delete(a, m, axis=0)
        g_others = np.delete(self.gain, m, axis=0)
        if len(others):
            base = (g_others[:, :, None] * others[:, None, :]).max(axis=0)
        else:
            base = np.zeros_like(self.weights)
        with_m = np.maximum(base, self.gain[m][:, None])
        return (self.weights * (with_m - base)).sum(axis=0)
