import itertools
import math

import numpy as np
import pytest

from mamabcache.demand import RequestBatch
from mamabcache.topology import RadioParams, Topology, build_network


def random_network(rng, M, U, comm_radius=50.0, region=100.0):
    """Random placement, re-drawn until at least one SBS-user pair is in range."""
    while True:
        topo = Topology.random(M, U, comm_radius, rng, region)
        if (topo.distances() <= comm_radius).any():
            return build_network(topo)


def random_cache(rng, M, F, S):
    a = np.zeros((M, F), dtype=bool)
    for m in range(M):
        k = rng.integers(0, min(S, F) + 1)
        a[m, rng.choice(F, size=k, replace=False)] = True
    return a


def random_batch(rng, U, F, slot=0):
    n = rng.integers(0, 2 * U + 1)
    return RequestBatch.from_pairs(slot, rng.integers(0, U, n), rng.integers(0, F, n))


def slot_delay_oracle(a, batch, topo, radio=None, d0=None):
    """Direct per-request evaluation: scan SBSs by distance, first cacher serves."""
    radio = radio or RadioParams()
    M = topo.num_sbs
    dist = topo.distances()

    def d(m, u):
        snr = radio.power_watts * dist[m, u] ** (-radio.path_loss_exponent) / radio.noise_watts
        return 1.0 / (radio.bandwidth_hz * math.log2(1.0 + snr))

    if d0 is None:
        d0 = 3.0 * max(d(m, u) for m in range(M) for u in range(topo.num_users)
                       if dist[m, u] <= topo.comm_radius)
    total = 0.0
    for u, f in zip(batch.users.tolist(), batch.files.tolist()):
        nbrs = sorted((dist[m, u], m) for m in range(M) if dist[m, u] <= topo.comm_radius)
        served = [m for _, m in nbrs if a[m, f]]
        total += d(served[0], u) if served else d0
    return total


def expected_reward_oracle(a, p, net):
    """Sum over users and files of p[u, f] times the best cacher's delay reduction."""
    gain = net.delays.gain(net.index.mask)
    total = 0.0
    for u in range(p.shape[0]):
        for f in range(p.shape[1]):
            g = [gain[m, u] for m in range(a.shape[0]) if a[m, f] and net.index.mask[m, u]]
            total += p[u, f] * (max(g) if g else 0.0)
    return total


def brute_force_oracle(score, M, F, S):
    """Exhaustive max over all placements with at most S files per row."""
    rows = [np.array([i in c for i in range(F)]) for k in range(min(S, F) + 1)
            for c in itertools.combinations(range(F), k)]
    best = -math.inf
    for combo in itertools.product(rows, repeat=M):
        best = max(best, score.evaluate(np.array(combo)))
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def line_network():
    """Two SBSs on a line sharing users 1 and 2; user 0 only sees SBS 0, user 3 only SBS 1."""
    sbs = [(0.0, 0.0), (30.0, 0.0)]
    users = [(-10.0, 0.0), (10.0, 0.0), (20.0, 0.0), (40.0, 0.0)]
    return build_network(Topology(sbs, users, 25.0))


class TableScore:
    """Hand-built per-file score: ``table[f, pattern]`` with bit m = SBS m caches."""

    def __init__(self, table, num_sbs):
        self.table = np.asarray(table, dtype=float)
        self.num_sbs = num_sbs
        self.num_files = self.table.shape[0]

    def _pattern(self, a):
        return (np.asarray(a, dtype=np.int64) << np.arange(self.num_sbs)[:, None]).sum(axis=0)

    def per_file(self, a):
        return self.table[np.arange(self.num_files), self._pattern(a)]

    def evaluate(self, a):
        return float(self.per_file(a).sum())

    def row_gains(self, a, m):
        p = self._pattern(a)
        f = np.arange(self.num_files)
        return self.table[f, p | (1 << m)] - self.table[f, p & ~(1 << m)]


def small_instance(rng):
    """Random small instance: M<=3, F<=6, S<=2, U<=8, expected-reward score."""
    from mamabcache.demand import zipf_preferences
    from mamabcache.env import ExpectedRewardScore

    M, F, S, U = rng.integers(1, 4), rng.integers(1, 7), rng.integers(1, 3), rng.integers(1, 9)
    net = random_network(rng, M, U, comm_radius=float(rng.uniform(30, 70)))
    prefs = zipf_preferences(U, F, seed=int(rng.integers(1 << 31)))
    return ExpectedRewardScore.from_network(prefs, net.index, net.delays), int(M), int(F), int(S)
