"""Reference policies: LFU, LRU, CUCB and full-knowledge oracles."""
from __future__ import annotations

import math

import numpy as np

from .env import ExpectedRewardScore
from .optimizers import coordinate_ascent, random_placement
from .topology import Network


class ReplacementPolicy:
    """Reactive per-SBS cache: misses by neighbor users insert the requested
    file, evicting the victim chosen by :meth:`victim` when full.

    Requests of a slot are processed in ascending user id (then file id); the
    cache decided for slot t is the state left by slots before t.
    """

    in_initial_phase = False
    needs_edge_rewards = False

    def __init__(self, net: Network, num_files, cache_size):
        self.net = net
        self.num_files = num_files
        self.S = cache_size
        self.cached = [set() for _ in range(net.num_sbs)]

    def decide(self, slot=None) -> np.ndarray:
        a = np.zeros((self.net.num_sbs, self.num_files), dtype=bool)
        for m, files in enumerate(self.cached):
            a[m, list(files)] = True
        return a

    def observe(self, slot, outcome, edge_rewards=None, new_files=()):
        self.process(outcome.users, outcome.files, slot)

    def process(self, users, files, slot=0):
        nbrs = self.net.index.neighbors_of_user
        for u, f in zip(np.asarray(users).tolist(), np.asarray(files).tolist()):
            for m in nbrs[u]:
                self.request(m, f, slot)

    def request(self, m, f, slot):
        cache = self.cached[m]
        self.touch(m, f, slot)
        if f in cache or self.S <= 0:
            return
        if len(cache) >= self.S:
            cache.discard(self.victim(m))
        cache.add(f)

    def touch(self, m, f, slot):
        raise NotImplementedError

    def victim(self, m):
        raise NotImplementedError


class LFU(ReplacementPolicy):
    """Evict the cached file with the fewest lifetime requests (ties: lower id)."""

    def __init__(self, net, num_files, cache_size):
        super().__init__(net, num_files, cache_size)
        self.counts = np.zeros((net.num_sbs, num_files), dtype=np.int64)

    def touch(self, m, f, slot):
        self.counts[m, f] += 1

    def victim(self, m):
        return min(self.cached[m], key=lambda f: (self.counts[m, f], f))


class LRU(ReplacementPolicy):
    """Evict the cached file whose last request is oldest (ties: lower id)."""

    def __init__(self, net, num_files, cache_size):
        super().__init__(net, num_files, cache_size)
        self.stamp = [dict() for _ in range(net.num_sbs)]
        self._clock = 0

    def touch(self, m, f, slot):
        self._clock += 1
        self.stamp[m][f] = self._clock

    def victim(self, m):
        return min(self.cached[m], key=lambda f: (self.stamp[m].get(f, 0), f))


def lfu_step(state: LFU, batch, index=None) -> np.ndarray:
    state.process(batch.users, batch.files, batch.slot)
    return state.decide()


def lru_step(state: LRU, batch, index=None) -> np.ndarray:
    state.process(batch.users, batch.files, batch.slot)
    return state.decide()


class CUCB:
    """Predict-then-optimize on local popularity.

    Each SBS tracks the mean number of neighbor requests per slot for every
    file and adds a UCB bonus sqrt(3 ln t / (2 n)), n being the slots observed.
    All of an SBS's demand is lumped into one aggregate user reached only by
    that SBS at the average neighbor delay, so shared and exclusive users
    look alike; the placement is coordinate ascent on that surrogate.
    """

    in_initial_phase = False
    needs_edge_rewards = False

    def __init__(self, net: Network, num_files, cache_size, rng=None, max_rounds=20):
        self.net = net
        self.num_files = num_files
        self.S = cache_size
        self.rng = rng if rng is not None else np.random.default_rng()
        self.max_rounds = max_rounds
        M = net.num_sbs
        self.request_counts = np.zeros((M, num_files))
        self.slots_observed = 0
        gain = net.delays.gain(net.index.mask)
        n_users = net.index.mask.sum(axis=1)
        avg_gain = np.where(n_users > 0, gain.sum(axis=1) / np.maximum(n_users, 1), 0.0)
        self._agg_gain = np.diag(avg_gain)  # (M SBS, M aggregate users)
        self.t = 0

    def index(self) -> np.ndarray:
        n = max(self.slots_observed, 1)
        p_hat = self.request_counts / n
        return p_hat + math.sqrt(3.0 * math.log(max(self.t, 1)) / (2.0 * n))

    def decide(self, slot=None) -> np.ndarray:
        self.t += 1
        score = ExpectedRewardScore(self.index(), self._agg_gain)
        init = random_placement(self.net.num_sbs, self.num_files, self.S, self.rng)
        return coordinate_ascent(score, self.S, init, self.max_rounds)

    def observe(self, slot, outcome, edge_rewards=None, new_files=()):
        self.slots_observed += 1
        mask = self.net.index.mask
        for u, f in zip(outcome.users.tolist(), outcome.files.tolist()):
            self.request_counts[mask[:, u], f] += 1


cucb_step = CUCB.decide


class FixedPlacement:
    """Plays one precomputed placement every slot (oracle benchmarks)."""

    in_initial_phase = False
    needs_edge_rewards = False

    def __init__(self, a):
        self.a = np.asarray(a, dtype=bool)

    def decide(self, slot=None):
        return self.a.copy()

    def observe(self, slot, outcome, edge_rewards=None, new_files=()):
        pass


class TraceOracle:
    """Coordinate ascent on the realized requests of each slot (peeks ahead)."""

    in_initial_phase = False
    needs_edge_rewards = False

    def __init__(self, net: Network, num_files, cache_size, batches, rng=None, max_rounds=20):
        self.net = net
        self.num_files = num_files
        self.S = cache_size
        self.batches = batches
        self.rng = rng if rng is not None else np.random.default_rng()
        self.max_rounds = max_rounds

    def decide(self, slot):
        batch = self.batches(slot)
        w = np.zeros((self.net.num_users, self.num_files))
        w[batch.users, batch.files] = 1.0
        score = ExpectedRewardScore.from_network(w, self.net.index, self.net.delays)
        init = random_placement(self.net.num_sbs, self.num_files, self.S, self.rng)
        return coordinate_ascent(score, self.S, init, self.max_rounds)

    def observe(self, slot, outcome, edge_rewards=None, new_files=()):
        pass
