"""Slot loop, metrics and replication aggregation."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import CUCB, LFU, LRU, FixedPlacement, TraceOracle
from .config import ExperimentConfig
from .demand import (
    ActiveFileSet,
    PreferenceMatrix,
    RequestBatch,
    RequestStream,
    StationaryWorkload,
    load_trace,
    update_active_files,
    zipf_preferences,
)
from .env import ExpectedRewardScore, assign_edge_rewards, check_budget, serve_requests
from .learners import make_learner
from .optimizers import greedy_placement, oracle_coordinate_ascent, random_placement
from .topology import (
    CoordinationGraph,
    Network,
    RadioParams,
    Topology,
    build_coordination_graph,
    build_neighbor_index,
    build_network,
    compute_delay_model,
    link_delay,
)

# child stream ids under SeedSequence([seed, replication])
_PLACEMENT, _PREFS, _REQUESTS, _LEARNER, _ORACLE, _MOBILITY = range(6)


class ExperimentError(RuntimeError):
    pass


@dataclass
class ReplicationSeries:
    """Per-slot records of one replication.

    ``gap`` is the oracle's expected reward minus the chosen placement's,
    ``sampled_gap`` the same difference on the realized requests; both are NaN
    in trace mode.  ``initial`` flags initial-phase slots.
    """

    replication: int
    delay: np.ndarray
    reward: np.ndarray
    requests: np.ndarray
    residual: np.ndarray
    expected_reward: np.ndarray
    gap: np.ndarray
    sampled_gap: np.ndarray
    initial: np.ndarray
    decision_time: np.ndarray
    oracle_value: float
    metric_mode: str
    core_delay: float

    def __len__(self):
        return len(self.delay)

    @property
    def stationary(self) -> bool:
        return not np.isnan(self.oracle_value)

    @property
    def initial_length(self) -> int:
        return int(self.initial.sum())

    @property
    def avg_delay(self) -> np.ndarray:
        total = np.cumsum(self.delay)
        if self.metric_mode == "per_slot":
            return total / np.arange(1, len(self) + 1)
        n = np.cumsum(self.requests)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, total / np.maximum(n, 1), 0.0)

    @property
    def regret(self) -> np.ndarray:
        if not self.stationary:
            return np.full(len(self), np.nan)
        return compute_regret(self, self.oracle_value)

    @property
    def sampled_regret(self) -> np.ndarray:
        return np.cumsum(np.where(self.initial, 0.0, self.sampled_gap))

    @property
    def initial_regret(self) -> float:
        return float(self.gap[self.initial].sum()) if self.stationary else float("nan")

    def post_initial(self, name) -> np.ndarray:
        """A per-slot array with initial-phase slots dropped."""
        return getattr(self, name)[~self.initial]


@dataclass
class MetricsSeries:
    learner: str
    replications: list = field(default_factory=list)

    METRICS = ("delay", "reward", "requests", "avg_delay", "regret", "sampled_regret")

    def __len__(self):
        return len(self.replications[0]) if self.replications else 0

    def stack(self, name) -> np.ndarray:
        return np.stack([getattr(r, name) for r in self.replications])

    def mean(self, name) -> np.ndarray:
        return self.stack(name).mean(axis=0)

    def std(self, name) -> np.ndarray:
        return self.stack(name).std(axis=0)


def compute_regret(series: ReplicationSeries, oracle_value: float) -> np.ndarray:
    """Cumulative expected-reward shortfall against ``oracle_value``.

    Initial-phase slots contribute nothing (see ``initial_regret``).
    """
    if np.isnan(oracle_value) or np.isnan(series.expected_reward).any():
        raise ExperimentError("regret needs a stationary workload with known preferences")
    gap = np.where(series.initial, 0.0, oracle_value - series.expected_reward)
    return np.cumsum(gap)


def aggregate_replications(series_list, learner="") -> MetricsSeries:
    series_list = list(series_list)
    if not series_list:
        raise ExperimentError("nothing to aggregate")
    n = len(series_list[0])
    if any(len(s) != n for s in series_list):
        raise ExperimentError(f"replication lengths differ: {[len(s) for s in series_list]}")
    return MetricsSeries(learner, series_list)


# --- building one replication --------------------------------------------------

def _radio(cfg: ExperimentConfig) -> RadioParams:
    r = cfg.radio
    return RadioParams(r.power_w, r.noise_w, r.path_loss_exponent, r.bandwidth_hz)


def _streams(cfg: ExperimentConfig, rep: int):
    own = np.random.SeedSequence([cfg.seed, rep]).spawn(6)
    shared = np.random.SeedSequence([cfg.seed]).spawn(6)
    per_rep = cfg.randomize == "placement_and_requests"
    placement = own[_PLACEMENT] if per_rep else shared[_PLACEMENT]
    if cfg.topology.placement_seed is not None:
        placement = np.random.SeedSequence([cfg.topology.placement_seed])
    return {
        "placement": placement,
        "prefs": own[_PREFS] if per_rep else shared[_PREFS],
        "requests": own[_REQUESTS],
        "learner": own[_LEARNER],
        "oracle": own[_ORACLE] if per_rep else shared[_ORACLE],
        "mobility": own[_MOBILITY],
    }


def build_topology(cfg: ExperimentConfig, num_users: int, seed) -> Topology:
    t = cfg.topology
    rng = np.random.default_rng(seed)
    sbs = (np.asarray(t.sbs_positions, dtype=float) if t.sbs_positions is not None
           else rng.uniform(0, t.region, size=(t.num_sbs, 2)))
    if t.user_positions is not None and len(t.user_positions) == num_users:
        users = np.asarray(t.user_positions, dtype=float)
    else:
        users = rng.uniform(0, t.region, size=(num_users, 2))
    return Topology(sbs, users, t.comm_radius)


def complete_graph(num_sbs) -> CoordinationGraph:
    edges = frozenset((m, n) for m in range(num_sbs) for n in range(m, num_sbs))
    gamma = tuple(tuple(n for n in range(num_sbs) if n != m) for m in range(num_sbs))
    return CoordinationGraph(edges, gamma)


class Replication:
    """One independent run: network, workload, learner and the slot loop."""

    def __init__(self, cfg: ExperimentConfig, rep: int, learner: str | None = None,
                 check_bounds=False, check_edges=False):
        self.cfg = cfg
        self.rep = rep
        self.learner_name = learner or cfg.learner
        self.check_edges = check_edges
        self.streams = _streams(cfg, rep)
        w = cfg.workload
        self.trace = None
        if w.mode == "trace":
            self.trace = load_trace(w.trace_path, w.slot_length_s, w.user_cap, w.trace_format)
            num_users, self.num_files = self.trace.num_users, self.trace.num_files
            self.T = cfg.T_total or len(self.trace)
            if self.T > len(self.trace):
                raise ExperimentError(f"T_total={self.T} exceeds the {len(self.trace)} trace slots")
        else:
            num_users, self.num_files = cfg.topology.num_users, w.num_files
            self.T = cfg.T_total or 25000
        topo = build_topology(cfg, num_users, self.streams["placement"])
        radio = _radio(cfg)
        core = cfg.radio.core_delay
        if w.mobility == "per_slot" and core is None:
            # positions change every slot: pin d0 to the worst in-range link
            core = cfg.radio.core_factor * float(link_delay(cfg.topology.comm_radius, radio))
        index = build_neighbor_index(topo)
        delays = compute_delay_model(topo, index, radio, core, cfg.radio.core_factor)
        self.net = Network(topo, index, build_coordination_graph(index), delays)
        self.mobile = w.mobility == "per_slot"
        if self.mobile:
            self._mobility_rng = np.random.default_rng(self.streams["mobility"])

        self.prefs = None
        self.workload = None
        if self.trace is None:
            self.prefs = zipf_preferences(
                num_users, self.num_files, w.zipf_param, self.streams["prefs"],
                zipf_set=w.zipf_set, same_ranking=w.same_preference)
            self.workload = StationaryWorkload(self.prefs, RequestStream(self.streams["requests"]))
            self.score = ExpectedRewardScore.from_network(self.prefs, index, delays)
        self.learner = self._make_learner(check_bounds)

    def batch(self, slot):
        if self.trace is not None:
            return self.trace.batches[slot]
        return self.workload.batch(slot)

    @property
    def oracle_placement(self):
        if not hasattr(self, "_oracle"):
            rng = np.random.default_rng(self.streams["oracle"])
            self._oracle = oracle_coordinate_ascent(
                self.score, self.cfg.cache_size, rng, self.cfg.oracle.restarts, self.cfg.ca.max_rounds)
        return self._oracle

    def _make_learner(self, check_bounds):
        name, cfg = self.learner_name, self.cfg
        rng = np.random.default_rng(self.streams["learner"])
        S, F = cfg.cache_size, self.num_files
        if name == "lfu":
            return LFU(self.net, F, S)
        if name == "lru":
            return LRU(self.net, F, S)
        if name == "cucb":
            return CUCB(self.net, F, S, rng, cfg.ca.max_rounds)
        if name == "oracle_ca":
            if self.trace is not None:
                return TraceOracle(self.net, F, S, self.batch, rng, cfg.ca.max_rounds)
            return FixedPlacement(self.oracle_placement)
        if name == "oracle_greedy":
            if self.trace is not None:
                raise ExperimentError("oracle_greedy needs a stationary workload")
            return FixedPlacement(greedy_placement(self.score, self.net.num_sbs, F, S))
        if name == "random":
            return _RandomLearner(self.net.num_sbs, F, S, rng)
        key_net = self.net
        if self.mobile:
            key_net = Network(self.net.topology, self.net.index,
                              complete_graph(self.net.num_sbs), self.net.delays)
        return make_learner(name, key_net, F, S, epsilon=cfg.epsilon, rng=rng,
                            log_base=cfg.log_variant, max_rounds=cfg.ca.max_rounds,
                            check_bounds=check_bounds and not self.mobile)

    def _move_users(self):
        topo = self.net.topology
        users = self._mobility_rng.uniform(0, self.cfg.topology.region, size=topo.user_positions.shape)
        topo = topo.with_users(users)
        index = build_neighbor_index(topo)
        delays = compute_delay_model(topo, index, self.net.delays.radio, self.net.d0)
        self.net = Network(topo, index, build_coordination_graph(index), delays)
        if hasattr(self.learner, "net") and not hasattr(self.learner, "table"):
            self.learner.net = self.net

    def _oracle_reward_table(self, oracle):
        U, F = self.net.num_users, self.num_files
        pairs = RequestBatch(0, np.repeat(np.arange(U), F), np.tile(np.arange(F), U))
        out = serve_requests(oracle, pairs, self.net.index, self.net.delays)
        return out.reward.reshape(U, F)

    def run(self) -> ReplicationSeries:
        T = self.T
        rec = {k: np.zeros(T) for k in ("delay", "reward", "requests", "residual",
                                         "expected_reward", "gap", "sampled_gap", "decision_time")}
        initial = np.zeros(T, dtype=bool)
        stationary = self.trace is None
        oracle_value = float("nan")
        if stationary:
            oracle = self.oracle_placement
            oracle_value = self.score.evaluate(oracle)
            memo = {}
            # the oracle placement is fixed: tabulate its reward per (user, file)
            oracle_gain = self._oracle_reward_table(oracle)
        active = ActiveFileSet()
        d0 = self.net.d0
        for t in range(T):
            if self.mobile and t > 0:
                self._move_users()
            try:
                start = time.perf_counter()
                a = self.learner.decide(t)
                rec["decision_time"][t] = time.perf_counter() - start
                initial[t] = getattr(self.learner, "in_initial_phase", False)
                a = check_budget(a, self.cfg.cache_size)
                batch = self.batch(t)
                out = serve_requests(a, batch, self.net.index, self.net.delays)
                edges = None
                if self.learner.needs_edge_rewards or self.check_edges:
                    edges = assign_edge_rewards(out, self.net.index, self.net.graph)
                    if self.check_edges:
                        tot = out.sbs_file_reward.sum()
                        if abs(edges.total() - tot) > 1e-9 * max(tot, 1.0):
                            raise ExperimentError("edge rewards do not sum to SBS rewards")
                active, new_files = update_active_files(active, batch)
                self.learner.observe(t, out, edges, new_files)
            except Exception as exc:
                raise ExperimentError(
                    f"replication {self.rep}, slot {t}, learner {self.learner_name}: {exc}") from exc
            n = len(batch)
            rec["delay"][t] = out.slot_delay
            rec["reward"][t] = out.total_reward
            rec["requests"][t] = n
            rec["residual"][t] = abs(out.slot_delay + out.total_reward - n * d0)
            if stationary:
                key = a.tobytes()
                if key not in memo:
                    memo[key] = self.score.evaluate(a)
                rec["expected_reward"][t] = memo[key]
                rec["gap"][t] = oracle_value - memo[key]
                if self.mobile:
                    oracle_gain = self._oracle_reward_table(oracle)
                best = float(oracle_gain[batch.users, batch.files].sum())
                rec["sampled_gap"][t] = best - out.total_reward
        if not stationary:
            for k in ("expected_reward", "gap", "sampled_gap"):
                rec[k][:] = np.nan
        return ReplicationSeries(self.rep, rec["delay"], rec["reward"], rec["requests"],
                                 rec["residual"], rec["expected_reward"], rec["gap"],
                                 rec["sampled_gap"], initial, rec["decision_time"],
                                 oracle_value, self.cfg.resolved_metric_mode, d0)


class _RandomLearner:
    in_initial_phase = False
    needs_edge_rewards = False

    def __init__(self, num_sbs, num_files, S, rng):
        self.args = (num_sbs, num_files, S)
        self.rng = rng

    def decide(self, slot=None):
        return random_placement(*self.args, self.rng)

    def observe(self, *args, **kw):
        pass


def run_replication(cfg: ExperimentConfig, rep: int, learner=None, **kw) -> ReplicationSeries:
    return Replication(cfg, rep, learner, **kw).run()


def run_experiment(cfg: ExperimentConfig, learner=None, replications=None, **kw) -> MetricsSeries:
    """Run every replication of ``cfg`` (optionally overriding the learner)."""
    reps = range(cfg.replications) if replications is None else replications
    name = learner or cfg.learner
    return aggregate_replications([run_replication(cfg, r, name, **kw) for r in reps], name)
