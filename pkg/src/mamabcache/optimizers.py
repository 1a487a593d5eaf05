"""Placement optimizers over per-file additive scores.

A score object exposes ``num_sbs``, ``num_files``, ``per_file(a) -> (F,)`` and
``row_gains(a, m)``: the change in score from caching each file at SBS ``m``
versus not caching it, other rows fixed.  Every objective used here is
multilinear in the cache bits, so that gain vector makes the per-SBS best
response exact.

Scores with an optimistic sentinel return gains as a ``(major, minor)`` pair:
``major`` counts sentinel terms and is compared before the finite ``minor``.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .env import check_budget, column_masks


class SearchSpaceTooLarge(ValueError):
    pass


def _split(values):
    if isinstance(values, tuple):
        major, minor = values
        return np.asarray(major, dtype=float), np.asarray(minor, dtype=float)
    minor = np.asarray(values, dtype=float)
    return np.zeros_like(minor), minor


def top_s_selection(values, S: int, eligible=None, nonnegative=False) -> np.ndarray:
    """Indices of the S largest values, ties to the lower index.

    ``values`` may be an array or a ``(major, minor)`` pair compared
    lexicographically.  With ``nonnegative`` strictly negative entries are
    never selected, so fewer than S may come back.
    """
    if S <= 0:
        return np.zeros(0, dtype=np.int64)
    if not isinstance(values, tuple):
        return np.sort(_top_1d(values, S, eligible, nonnegative))
    major, minor = _split(values)
    keep = (major > 0) | ((major == 0) & (minor >= 0)) if nonnegative else np.ones(len(minor), bool)
    if eligible is not None:
        keep &= np.asarray(eligible, dtype=bool)
    idx = np.flatnonzero(keep)
    order = np.lexsort((idx, -minor[idx], -major[idx]))
    return np.sort(idx[order[:S]])


def _top_1d(values, S, eligible, nonnegative):
    key = -np.asarray(values, dtype=float)
    if eligible is not None:
        el = np.asarray(eligible, dtype=bool)
        key[~el] = np.inf
    # stable sort keeps the lower index first among ties
    top = key.argsort(kind="stable")[:S]
    if eligible is not None:
        top = top[el[top]]
    if nonnegative:
        top = top[key[top] <= 0]
    return top


def best_response(score, a, m, S, eligible=None) -> np.ndarray:
    return _row(score.row_gains(a, m), a.shape[1], S, eligible)


def _row(gains, F, S, eligible):
    row = np.zeros(F, dtype=bool)
    if S <= 0:
        return row
    if isinstance(gains, tuple):
        row[top_s_selection(gains, S, eligible, nonnegative=True)] = True
    else:
        row[_top_1d(gains, S, eligible, True)] = True
    return row


def _pattern_gains(score, cm, m, ar):
    bit = 1 << m
    on, off = cm | bit, cm & ~bit
    minor = score.values[on, ar] - score.values[off, ar]
    major = getattr(score, "major_values", None)
    if major is None:
        return minor
    return major[on, ar] - major[off, ar], minor


def _key(value):
    return value if isinstance(value, tuple) else (0, value)


def total_score(score, a):
    """Scalar score, or a comparable (major, minor) pair for sentinel scores."""
    if hasattr(score, "evaluate_key"):
        return score.evaluate_key(a)
    return score.evaluate(a)


def coordinate_ascent(score, S, initial, max_rounds=20, eligible=None, trace=None) -> np.ndarray:
    """Cyclic best responses in SBS-id order until a full pass changes nothing.

    Stops as soon as M consecutive steps leave the placement unchanged, which
    is the same fixed point a completed pass would confirm.  ``trace``, when
    a list, receives the score after every single-SBS step.
    """
    a = check_budget(initial, S).copy()
    M, F = a.shape
    # scores with a pattern table: keep the column bitsets current instead
    # of rebuilding them for every step
    fast = getattr(score, "values", None) is not None
    if fast:
        cm, ar = column_masks(a), np.arange(F)
    stable = 0
    for _ in range(max_rounds):
        for m in range(M):
            if fast:
                row = _row(_pattern_gains(score, cm, m, ar), F, S, eligible)
            else:
                row = best_response(score, a, m, S, eligible)
            if (row != a[m]).any():
                a[m] = row
                stable = 0
                if fast:
                    cm = (cm & ~(1 << m)) | (row.astype(np.int64) << m)
            else:
                stable += 1
            if trace is not None:
                trace.append(total_score(score, a))
            if stable >= M:
                return a
    return a


def random_placement(num_sbs, num_files, S, rng, eligible=None) -> np.ndarray:
    """Each SBS caches min(S, #eligible) distinct files uniformly at random."""
    a = np.zeros((num_sbs, num_files), dtype=bool)
    pool = np.arange(num_files) if eligible is None else np.flatnonzero(eligible)
    k = min(S, len(pool))
    if k > 0:
        # k smallest of iid uniforms per row: a uniform k-subset
        pick = np.argsort(rng.random((num_sbs, len(pool))), axis=1)[:, :k]
        a[np.arange(num_sbs)[:, None], pool[pick]] = True
    return a


def oracle_coordinate_ascent(score, S, rng, restarts=300, max_rounds=20) -> np.ndarray:
    """Best of ``restarts`` coordinate-ascent runs from random placements."""
    best, best_val = None, -math.inf
    for _ in range(restarts):
        init = random_placement(score.num_sbs, score.num_files, S, rng)
        a = coordinate_ascent(score, S, init, max_rounds)
        val = score.evaluate(a)
        if val > best_val:
            best, best_val = a, val
    return best


def greedy_placement(score, num_sbs, num_files, S) -> np.ndarray:
    """Repeatedly add the (SBS, file) pair with the largest marginal gain."""
    a = np.zeros((num_sbs, num_files), dtype=bool)
    if S <= 0:
        return a
    for _ in range(num_sbs * min(S, num_files)):
        best, best_gain = None, -math.inf
        for m in range(num_sbs):
            if a[m].sum() >= S:
                continue
            g = np.where(a[m], -math.inf, _split(score.row_gains(a, m))[1])
            f = int(np.argmax(g))
            if g[f] > best_gain:
                best, best_gain = (m, f), g[f]
        if best is None:
            break
        a[best] = True
    return a


def column_table(score, num_sbs) -> np.ndarray:
    """(F, 2^M) per-file score of every column pattern (bit m = SBS m caches)."""
    patterns = np.arange(2 ** num_sbs)
    bits = (patterns[:, None] >> np.arange(num_sbs)) & 1  # (P, M)
    table = np.empty((score.num_files, len(patterns)))
    for p in patterns:
        a = np.repeat(bits[p][:, None].astype(bool), score.num_files, axis=1)
        table[:, p] = score.per_file(a)
    return table


def placement_count(num_sbs, num_files, S) -> int:
    """Candidates enumerated by :func:`brute_force_placement`."""
    return math.comb(num_files, min(S, num_files)) ** num_sbs


def brute_force_placement(score, num_sbs, num_files, S, cap=10**6, chunk=1 << 15) -> np.ndarray:
    """Exhaustive search over all placements with exactly min(S, F) files per SBS.

    Ties go to the first maximum in enumeration order (SBS 0's row varying
    slowest, rows in ``itertools.combinations`` order).
    """
    k = min(S, num_files)
    n = placement_count(num_sbs, num_files, S)
    if n > cap:
        raise SearchSpaceTooLarge(f"{n} candidate placements exceed the cap of {cap}")
    rows = list(itertools.combinations(range(num_files), k))
    row_masks = np.zeros((len(rows), num_files), dtype=np.int64)
    for i, r in enumerate(rows):
        row_masks[i, list(r)] = 1
    table = column_table(score, num_sbs)
    files = np.arange(num_files)
    best_idx, best_val = 0, -math.inf
    for start in range(0, n, chunk):
        flat = np.arange(start, min(n, start + chunk))
        choice = np.stack(np.unravel_index(flat, (len(rows),) * num_sbs), axis=1)  # (C, M)
        pattern = np.zeros((len(flat), num_files), dtype=np.int64)
        for m in range(num_sbs):
            pattern |= row_masks[choice[:, m]] << m
        vals = table[files[None, :], pattern].sum(axis=1)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_idx, best_val = int(flat[i]), vals[i]
    choice = np.unravel_index(best_idx, (len(rows),) * num_sbs)
    return row_masks[list(choice)].astype(bool)
