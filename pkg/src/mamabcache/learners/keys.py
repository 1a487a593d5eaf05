"""Joint-action key tables shared by all reward decompositions.

Every decomposition (distributed, SBS-perspective, user-perspective, edge)
keys its statistics by (key, file), where a key is "SBS ``sbs`` caches the
file, the SBSs in ``ones`` cache it and the SBSs in ``care`` minus ``ones`` do
not".  Masks are integer bitsets over SBS ids, so a key is realized for file
f exactly when ``colmask[f] & care == ones``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..env import PATTERN_LIMIT, column_masks, pattern_row_gains
from ..topology import Network

PERTURB_VARIANTS = ("ucb_v1", "ucb_v2", "none")


def _log(x, base):
    return math.log(x) if base == "natural" else math.log2(x)


def perturbed_term(variant: str, bound: float, t: int, count: int, log_base="natural") -> float:
    """Optimism bonus added to a running average."""
    if count <= 0:
        raise ValueError("perturbed term undefined for an unobserved key")
    if t < 1:
        raise ValueError("slot index starts at 1")
    if variant == "ucb_v1":
        return bound * math.sqrt(3.0 * _log(t, log_base) / (2.0 * count))
    if variant == "ucb_v2":
        if bound <= 0 or bound * bound * t < 1:
            return 0.0
        return math.sqrt(3.0 * _log(bound * bound * t, log_base) / (2.0 * count))
    if variant == "none":
        return 0.0
    raise ValueError(f"unknown perturbation variant {variant!r}")


def perturbed_terms(variant, bound, t, counts, log_base="natural") -> np.ndarray:
    """Vectorized :func:`perturbed_term`; zero where ``counts`` is 0.

    ``bound`` broadcasts against ``counts`` (one bound per key row).
    """
    counts = np.asarray(counts, dtype=float)
    bound = np.asarray(bound, dtype=float).reshape(-1, *([1] * (counts.ndim - 1)))
    log = np.log if log_base == "natural" else np.log2
    inv = np.divide(1.5, counts, out=np.zeros(counts.shape), where=counts > 0)
    if variant == "ucb_v1":
        return bound * np.sqrt(log(t) * inv)
    if variant == "ucb_v2":
        arg = bound * bound * t  # one value per key row
        lg = np.where((bound > 0) & (arg >= 1), log(np.maximum(arg, 1.0)), 0.0)
        return np.sqrt(lg * inv)
    if variant == "none":
        return np.zeros(counts.shape)
    raise ValueError(f"unknown perturbation variant {variant!r}")


@dataclass
class JointActionTable:
    sbs: np.ndarray  # (K,)
    ones: np.ndarray  # (K,) bitsets
    care: np.ndarray  # (K,) bitsets
    bound: np.ndarray  # (K,) reward upper bounds
    num_files: int
    labels: list = field(default_factory=list)

    def __post_init__(self):
        K = len(self.sbs)
        self.counts = np.zeros((K, self.num_files), dtype=np.int64)
        self.means = np.zeros((K, self.num_files))
        width = int(self.care.max()).bit_length() if K else 0
        self._touching = [np.flatnonzero((self.care >> m) & 1) for m in range(width)]

    def __len__(self):
        return len(self.sbs)

    def touching(self, m) -> np.ndarray:
        """Indices of keys whose realization depends on SBS m."""
        if m < len(self._touching):
            return self._touching[m]
        return np.zeros(0, dtype=np.int64)

    def active(self, a=None, colmask=None, rows=None) -> np.ndarray:
        if colmask is None:
            colmask = column_masks(a)
        care = self.care if rows is None else self.care[rows]
        ones = self.ones if rows is None else self.ones[rows]
        return (colmask[None, :] & care[:, None]) == ones[:, None]

    def update(self, active, samples):
        """Fold one slot's samples into the running means of realized keys."""
        self.counts[active] += 1
        self.means[active] += (samples[active] - self.means[active]) / self.counts[active]

    def key_count(self) -> int:
        return len(self) * self.num_files

    def realized_by_pattern(self, num_sbs) -> np.ndarray:
        """(2^M, K) float: 1 where a column pattern realizes the key."""
        cached = getattr(self, "_by_pattern", None)
        if cached is None or cached.shape[0] != 2 ** num_sbs:
            p = np.arange(2 ** num_sbs, dtype=np.int64)
            cached = ((p[:, None] & self.care[None]) == self.ones[None]).astype(float)
            self._by_pattern = cached
        return cached


class KeyScore:
    """Score of a placement: sum of the estimates of all realized keys.

    ``major`` (optional, integer) carries optimistic-sentinel counts that
    dominate the finite ``minor`` estimates.
    """

    def __init__(self, table: JointActionTable, minor, major=None, num_sbs=None):
        self.table = table
        self.minor = np.asarray(minor, dtype=float)
        self.major = None if major is None or not np.any(major) else np.asarray(major, dtype=float)
        self.num_files = table.num_files
        self.num_sbs = num_sbs if num_sbs is not None else int(table.sbs.max()) + 1
        self.values = self.major_values = None
        if self.num_sbs <= PATTERN_LIMIT:
            by_pattern = table.realized_by_pattern(self.num_sbs)
            self.values = by_pattern @ self.minor
            if self.major is not None:
                self.major_values = by_pattern @ self.major
        self._row_cache = {}

    def per_file(self, a):
        if self.values is not None:
            return self.values[column_masks(a), np.arange(self.num_files)]
        act = self.table.active(a)
        return (act * self.minor).sum(axis=0)

    def evaluate(self, a) -> float:
        return float(self.per_file(a).sum())

    def evaluate_key(self, a):
        if self.values is not None:
            cm, ar = column_masks(a), np.arange(self.num_files)
            major = 0.0 if self.major_values is None else float(self.major_values[cm, ar].sum())
            return (major, float(self.values[cm, ar].sum()))
        act = self.table.active(a)
        major = 0.0 if self.major is None else float((act * self.major).sum())
        return (major, float((act * self.minor).sum()))

    def _rows(self, m):
        cached = self._row_cache.get(m)
        if cached is None:
            rows = self.table.touching(m)
            bit = 1 << m
            # a key touching m needs m on (gain +1) or m off (gain -1);
            # either way it is realized iff the other SBSs match
            sign = np.where(self.table.ones[rows] & bit, 1.0, -1.0)
            care = (self.table.care[rows] & ~bit)[:, None]
            ones = (self.table.ones[rows] & ~bit)[:, None]
            minor = sign[:, None] * self.minor[rows]
            major = None if self.major is None else sign[:, None] * self.major[rows]
            cached = (care, ones, minor, major)
            self._row_cache[m] = cached
        return cached

    def row_gains(self, a, m):
        if self.values is not None:
            minor = pattern_row_gains(self.values, a, m)
            if self.major_values is None:
                return minor
            return pattern_row_gains(self.major_values, a, m), minor
        care, ones, minor_w, major_w = self._rows(m)
        hit = (column_masks(a) & care) == ones
        minor = (hit * minor_w).sum(axis=0)
        if major_w is None:
            return minor
        return (hit * major_w).sum(axis=0), minor


# --- key builders -------------------------------------------------------------

def _bits(ids) -> int:
    out = 0
    for i in ids:
        out |= 1 << int(i)
    return out


def distributed_table(net: Network, num_files: int) -> JointActionTable:
    """One key per SBS: "m caches f", bound B_d,m = sum over neighbor users of d0 - d."""
    M = net.num_sbs
    gain = net.delays.gain(net.index.mask)
    sbs = np.arange(M)
    masks = np.array([1 << m for m in range(M)], dtype=np.int64)
    return JointActionTable(sbs, masks, masks.copy(), gain.sum(axis=1), num_files,
                            [("d", m) for m in range(M)])


def agent_sbs_table(net: Network, num_files: int) -> JointActionTable:
    """Keys b_{m,f}: SBS m caches f under one cache pattern of its graph neighbors."""
    gain = net.delays.gain(net.index.mask)
    sbs, ones, care, bound, labels = [], [], [], [], []
    for m in range(net.num_sbs):
        nbrs = net.graph.gamma[m]
        nb_mask = _bits(nbrs)
        closer = {u: net.index.closer_mask(u, m) for u in net.index.neighbors_of_sbs[m]}
        for p in range(2 ** len(nbrs)):
            cached = _bits(n for i, n in enumerate(nbrs) if (p >> i) & 1)
            sbs.append(m)
            ones.append((1 << m) | cached)
            care.append((1 << m) | nb_mask)
            bound.append(sum(gain[m, u] for u, cm in closer.items() if cm & cached == 0))
            labels.append(("b", m, tuple(n for i, n in enumerate(nbrs) if (p >> i) & 1)))
    return JointActionTable(np.array(sbs), np.array(ones, dtype=np.int64),
                            np.array(care, dtype=np.int64), np.array(bound, dtype=float),
                            num_files, labels)


def agent_user_table(net: Network, num_files: int):
    """Keys c_{m,V,f}: m caches f while no SBS of V does, V ranging over the
    closer-SBS sets of m's neighbor users.

    Also returns the (M, U) map from (serving SBS, user) to key index, -1 for
    non-neighbors.
    """
    gain = net.delays.gain(net.index.mask)
    M, U = net.num_sbs, net.num_users
    key_of = np.full((M, U), -1, dtype=np.int64)
    sbs, ones, care, bound, labels = [], [], [], [], []
    for m in range(M):
        users = sorted(net.index.neighbors_of_sbs[m])
        vsets = sorted({net.index.closer_mask(u, m) for u in users})
        base = len(sbs)
        for i, v in enumerate(vsets):
            sbs.append(m)
            ones.append(1 << m)
            care.append((1 << m) | v)
            bound.append(0.0)
            labels.append(("c", m, tuple(n for n in range(M) if (v >> n) & 1)))
        for u in users:
            k = base + vsets.index(net.index.closer_mask(u, m))
            key_of[m, u] = k
            bound[k] += gain[m, u]
    table = JointActionTable(np.array(sbs, dtype=np.int64), np.array(ones, dtype=np.int64),
                             np.array(care, dtype=np.int64), np.array(bound, dtype=float),
                             num_files, labels)
    return table, key_of


def edge_table(net: Network, num_files: int):
    """Directed edge keys: self edge (m, m) under (1, 1) and cross edge (m, n)
    under (a_m=1, a_n=0) for n in Gamma(m).

    Also returns an (M, M) map from (m, n) to key index, -1 where no key.
    """
    gain = net.delays.gain(net.index.mask)
    M = net.num_sbs
    rank = net.index.rank
    key_of = np.full((M, M), -1, dtype=np.int64)
    sbs, ones, care, bound, labels = [], [], [], [], []
    for m in range(M):
        for n in (m, *net.graph.gamma[m]):
            key_of[m, n] = len(sbs)
            sbs.append(m)
            ones.append(1 << m)
            care.append((1 << m) | (1 << n))
            if n == m:
                b = gain[m, rank[m] == 1].sum()
            else:
                b = 0.0
                for u in net.index.neighbors_of_sbs[m]:
                    j = int(rank[m, u])
                    if j >= 2 and n in net.index.neighbors_of_user[u][: j - 1]:
                        b += gain[m, u] / (j - 1)
            bound.append(float(b))
            labels.append(("e", m, n))
    table = JointActionTable(np.array(sbs, dtype=np.int64), np.array(ones, dtype=np.int64),
                             np.array(care, dtype=np.int64), np.array(bound, dtype=float),
                             num_files, labels)
    return table, key_of


def initial_schedule(table: JointActionTable, num_sbs: int, S: int) -> list:
    """Placements that together realize every (key, file) at least once.

    Round-robin over uncovered (file, key) pairs in id order, packing each
    slot while budgets and already-fixed bits allow.
    """
    K, F = table.counts.shape
    covered = np.zeros((K, F), dtype=bool)
    out = []
    all_bits = (1 << num_sbs) - 1
    while not covered.all():
        a = np.zeros((num_sbs, F), dtype=bool)
        forbid = np.zeros((num_sbs, F), dtype=bool)
        used = np.zeros(num_sbs, dtype=np.int64)
        pending = np.argwhere(~covered.T)  # rows (f, k), file-major
        for f, k in pending.tolist():
            ones, zeros = int(table.ones[k]), int(table.care[k]) & ~int(table.ones[k]) & all_bits
            ok = True
            need = []
            for m in range(num_sbs):
                if (ones >> m) & 1:
                    if forbid[m, f]:
                        ok = False
                        break
                    if not a[m, f]:
                        need.append(m)
                elif (zeros >> m) & 1 and a[m, f]:
                    ok = False
                    break
            if not ok or any(used[m] >= S for m in need):
                continue
            for m in need:
                a[m, f] = True
                used[m] += 1
            for m in range(num_sbs):
                if (zeros >> m) & 1:
                    forbid[m, f] = True
        if not a.any() and not covered.all():
            raise RuntimeError("initial schedule made no progress (cache size 0?)")
        covered |= table.active(a)
        out.append(a)
    return out
