"""Multi-agent bandit cache learners.

All learners follow the same slot contract: ``decide(slot)`` returns an (M, F)
boolean placement, then ``observe(slot, outcome, edge_rewards, new_files)``
folds that slot's feedback in.  Stationary learners first replay an initial
phase that realizes every joint action once; ``in_initial_phase`` tells the
harness whether the last decision belonged to it.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from ..env import EdgeRewardTable, ServiceOutcome
from ..optimizers import coordinate_ascent, random_placement, top_s_selection
from ..topology import Network
from .keys import (
    KeyScore,
    agent_sbs_table,
    agent_user_table,
    distributed_table,
    edge_table,
    initial_schedule,
    perturbed_terms,
)

DECOMPOSITIONS = ("distributed", "agent_sbs", "agent_user", "edge")
VARIANTS = ("ucb_v1", "ucb_v2", "epsilon_greedy")


class BoundViolation(AssertionError):
    pass


def _top_s_rows(values, S, eligible=None):
    """Independent top-S per SBS row; ``values`` may be a (major, minor) pair."""
    major, minor = values if isinstance(values, tuple) else (None, values)
    a = np.zeros(minor.shape, dtype=bool)
    for m in range(minor.shape[0]):
        v = minor[m] if major is None else (major[m], minor[m])
        a[m, top_s_selection(v, S, eligible)] = True
    return a


class MAMABLearner:
    """Stationary learner for one reward decomposition.

    ``variant`` picks the exploration rule: ``ucb_v1`` scales the bonus by
    the key's reward bound, ``ucb_v2`` moves the squared bound inside the log,
    ``epsilon_greedy`` plays averages with probability 1 - epsilon and a
    uniform random placement otherwise.
    """

    needs_edge_rewards = False

    def __init__(self, net: Network, num_files: int, cache_size: int, decomposition="edge",
                 variant="ucb_v2", epsilon=0.05, rng=None, log_base="natural",
                 max_rounds=20, check_bounds=False):
        if decomposition not in DECOMPOSITIONS:
            raise ValueError(f"unknown decomposition {decomposition!r}")
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        self.net = net
        self.num_sbs = net.num_sbs
        self.num_files = num_files
        self.S = cache_size
        self.decomposition = decomposition
        self.variant = variant
        self.epsilon = epsilon
        self.rng = rng if rng is not None else np.random.default_rng()
        self.log_base = log_base
        self.max_rounds = max_rounds
        self.check_bounds = check_bounds

        self._key_of = None
        self.inner = None
        if decomposition == "distributed":
            self.table = distributed_table(net, num_files)
        elif decomposition == "agent_sbs":
            self.table = agent_sbs_table(net, num_files)
        elif decomposition == "agent_user":
            self.table, self._key_of = agent_user_table(net, num_files)
        else:
            self.table, self._key_of = edge_table(net, num_files)
            self.inner = distributed_table(net, num_files)
            self._pair = (self.table.sbs,
                          np.array([lab[2] for lab in self.table.labels], dtype=np.int64))
            self.needs_edge_rewards = True

        self.t = 0
        self.in_initial_phase = False
        self._last = None
        self._schedule = deque(self._initial_placements())
        self.initial_length = len(self._schedule)

    # -- phases -----------------------------------------------------------

    def _initial_placements(self):
        return initial_schedule(self.table, self.num_sbs, self.S)

    def decide(self, slot=None) -> np.ndarray:
        if self._schedule:
            self.in_initial_phase = True
            a = self._schedule.popleft()
        else:
            self.in_initial_phase = False
            self.t += 1
            a = self._choose()
        self._last = a
        return a.copy()

    def _explore_now(self) -> bool:
        return self.variant == "epsilon_greedy" and self.rng.random() < self.epsilon

    def _choose(self):
        if self._explore_now():
            return random_placement(self.num_sbs, self.num_files, self.S, self.rng)
        return self.optimize()

    # -- estimates --------------------------------------------------------

    def _perturb_variant(self):
        return "none" if self.variant == "epsilon_greedy" else self.variant

    def estimates(self, table=None):
        table = self.table if table is None else table
        return table.means + perturbed_terms(self._perturb_variant(), table.bound, self.t,
                                             table.counts, self.log_base)

    def optimize(self, eligible=None) -> np.ndarray:
        est = self.estimates()
        if self.decomposition == "distributed":
            return _top_s_rows(est, self.S, eligible)
        score = KeyScore(self.table, est, num_sbs=self.num_sbs)
        if self.decomposition == "edge":
            init = _top_s_rows(self.estimates(self.inner), self.S, eligible)
        else:
            init = random_placement(self.num_sbs, self.num_files, self.S, self.rng, eligible)
        return coordinate_ascent(score, self.S, init, self.max_rounds, eligible)

    # -- feedback ---------------------------------------------------------

    def samples(self, outcome: ServiceOutcome, edge_rewards: EdgeRewardTable | None):
        """(K, F) reward observed by every key this slot (meaningful where realized)."""
        if self.decomposition in ("distributed", "agent_sbs"):
            return outcome.sbs_file_reward[self.table.sbs]
        if self.decomposition == "edge":
            if edge_rewards is None:
                raise ValueError("edge decomposition needs the edge reward table")
            return edge_rewards.r[self._pair[0], self._pair[1]]
        out = np.zeros(self.table.counts.shape)
        hit = outcome.server >= 0
        keys = self._key_of[outcome.server[hit], outcome.users[hit]]
        np.add.at(out, (keys, outcome.files[hit]), outcome.reward[hit])
        return out

    def observe(self, slot, outcome: ServiceOutcome, edge_rewards=None, new_files=()):
        a = self._last
        active = self.table.active(a)
        samples = self.samples(outcome, edge_rewards)
        if self.check_bounds:
            bound = self.table.bound[:, None]
            bad = active & (samples > bound + 1e-9 * np.maximum(bound, 1.0))
            if bad.any():
                k, f = np.argwhere(bad)[0]
                raise BoundViolation(
                    f"key {self.table.labels[k]} file {f}: reward {samples[k, f]} > bound {bound[k, 0]}")
        self.table.update(active, samples)
        if self.inner is not None:
            self.inner.update(self.inner.active(a), outcome.sbs_file_reward[self.inner.sbs])
        self._after_observe(new_files)

    def _after_observe(self, new_files):
        pass

    def key_count(self) -> int:
        return self.table.key_count()


class ModifiedMAMABLearner(MAMABLearner):
    """Non-stationary distributed or edge learner.

    No initial phase: keys of files in the active set that were never
    realized carry an optimistic sentinel ranked above every finite estimate.
    Seen keys add sqrt(3 ln(B^2 t) / (2 T)) with B the key row's largest
    running average over active files.  Only active files are ever cached.
    """

    def __init__(self, net, num_files, cache_size, decomposition="edge", variant="ucb_v2",
                 **kw):
        if decomposition not in ("distributed", "edge"):
            raise ValueError("modified learners exist for distributed and edge decompositions")
        self.active_files = np.zeros(num_files, dtype=bool)
        super().__init__(net, num_files, cache_size, decomposition, variant, **kw)

    def _initial_placements(self):
        return []

    def decide(self, slot=None):
        self.in_initial_phase = False
        self.t += 1
        if not self.active_files.any():
            a = np.zeros((self.num_sbs, self.num_files), dtype=bool)
        else:
            a = self._choose()
        self._last = a
        return a.copy()

    def _choose(self):
        if self._explore_now():
            return random_placement(self.num_sbs, self.num_files, self.S, self.rng, self.active_files)
        return self.optimize(self.active_files)

    def adaptive_bound(self, table):
        means = np.where(self.active_files[None, :], table.means, -np.inf)
        b = means.max(axis=1)
        return np.where(np.isfinite(b), b, 0.0)

    def estimates(self, table=None):
        table = self.table if table is None else table
        unseen = (table.counts == 0) & self.active_files[None, :]
        minor = table.means.copy()
        if self.variant != "epsilon_greedy":
            minor += perturbed_terms("ucb_v2", self.adaptive_bound(table), self.t,
                                     table.counts, self.log_base)
        return unseen.astype(float), minor

    def optimize(self, eligible=None):
        major, minor = self.estimates()
        if self.decomposition == "distributed":
            return _top_s_rows((major, minor), self.S, eligible)
        score = KeyScore(self.table, minor, major, num_sbs=self.num_sbs)
        init = _top_s_rows(self.estimates(self.inner), self.S, eligible)
        return coordinate_ascent(score, self.S, init, self.max_rounds, eligible)

    def _after_observe(self, new_files):
        for f in new_files:
            if 0 <= f < self.num_files:
                self.active_files[f] = True
