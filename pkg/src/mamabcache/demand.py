"""Request workloads: Zipf preferences, per-slot sampling and trace ingestion."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_ZIPF_SET = (0.5, 0.7, 0.9, 1.1, 1.3)
DAY = 86400


class TraceParseError(ValueError):
    pass


@dataclass(frozen=True)
class PreferenceMatrix:
    p: np.ndarray  # (U, F)
    rank_permutations: np.ndarray  # (U, F): rank_permutations[u, f] = 1-based rank of f for u
    zipf_params: np.ndarray  # (U,)

    def __post_init__(self):
        if np.any(self.p < 0) or not np.allclose(self.p.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("preference rows must be non-negative and sum to 1")

    @property
    def num_users(self) -> int:
        return self.p.shape[0]

    @property
    def num_files(self) -> int:
        return self.p.shape[1]


def zipf_pmf(num_files: int, delta: float) -> np.ndarray:
    """Probabilities of ranks 1..F under Zipf exponent ``delta``."""
    w = 1.0 / np.arange(1, num_files + 1, dtype=float) ** delta
    return w / w.sum()


def zipf_preferences(num_users, num_files, zipf_params=None, seed=None, *,
                     zipf_set=DEFAULT_ZIPF_SET, same_ranking=False) -> PreferenceMatrix:
    """Independent per-user Zipf preferences over randomly permuted file rankings.

    ``zipf_params`` may be a scalar or one exponent per user; when omitted each
    user draws its exponent uniformly from ``zipf_set``.  With ``same_ranking``
    every user shares one permutation (the "same preference" workload).
    """
    if num_files < 1:
        raise ValueError("num_files must be >= 1")
    rng = np.random.default_rng(seed)
    if zipf_params is None:
        deltas = rng.choice(np.asarray(zipf_set, dtype=float), size=num_users)
    else:
        deltas = np.broadcast_to(np.asarray(zipf_params, dtype=float), (num_users,)).copy()
    if np.any(deltas < 0):
        raise ValueError("Zipf exponents must be non-negative")
    ranks = np.empty((num_users, num_files), dtype=np.int64)
    shared = rng.permutation(num_files) if same_ranking else None
    for u in range(num_users):
        perm = shared if same_ranking else rng.permutation(num_files)
        # perm[r] is the file at rank r+1
        ranks[u, perm] = np.arange(1, num_files + 1)
    p = np.empty((num_users, num_files))
    for u in range(num_users):
        p[u] = zipf_pmf(num_files, deltas[u])[ranks[u] - 1]
    return PreferenceMatrix(p, ranks, deltas)


@dataclass(frozen=True)
class RequestBatch:
    """Requests of one slot as parallel (user, file) arrays, sorted and de-duplicated."""

    slot: int
    users: np.ndarray
    files: np.ndarray

    @classmethod
    def from_pairs(cls, slot, users, files) -> "RequestBatch":
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        files = np.asarray(files, dtype=np.int64).reshape(-1)
        if len(users):
            pairs = np.unique(np.stack([users, files], axis=1), axis=0)
            users, files = pairs[:, 0].copy(), pairs[:, 1].copy()
        return cls(slot, users, files)

    def __len__(self):
        return len(self.users)

    def requests_of(self, u: int) -> set:
        return set(self.files[self.users == u].tolist())

    def file_set(self) -> set:
        return set(self.files.tolist())


class RequestStream:
    """Counter-based uniforms: the draw for (slot, i) depends only on the key."""

    def __init__(self, seed):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._key = ss.generate_state(2, dtype=np.uint64)
        self._bg = np.random.Philox(key=self._key)
        self._gen = np.random.Generator(self._bg)

    def uniforms(self, slot: int, n: int) -> np.ndarray:
        # resetting the state is equivalent to a fresh Philox(key, counter) but cheaper
        self._bg.state = {
            "bit_generator": "Philox",
            "state": {"counter": np.array([0, 0, 0, slot], dtype=np.uint64), "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64), "buffer_pos": 4,
            "has_uint32": 0, "uinteger": 0,
        }
        return self._gen.random(n)


def sample_stationary_requests(prefs: PreferenceMatrix, slot: int, stream: RequestStream,
                               _cdf=None) -> RequestBatch:
    """One request per user drawn from that user's preference row."""
    cdf = _cdf if _cdf is not None else np.cumsum(prefs.p, axis=1)
    u = stream.uniforms(slot, prefs.num_users)
    files = (cdf <= (u * cdf[:, -1])[:, None]).sum(axis=1)
    np.minimum(files, prefs.num_files - 1, out=files)
    return RequestBatch(slot, np.arange(prefs.num_users), files)


class StationaryWorkload:
    """Per-slot sampler bound to one preference matrix and stream."""

    def __init__(self, prefs: PreferenceMatrix, stream: RequestStream):
        self.prefs = prefs
        self.stream = stream
        self._cdf = np.cumsum(prefs.p, axis=1)

    def batch(self, slot: int) -> RequestBatch:
        return sample_stationary_requests(self.prefs, slot, self.stream, self._cdf)


# --- traces -----------------------------------------------------------------

@dataclass(frozen=True)
class TraceEvent:
    user_id: int
    file_id: int
    timestamp: int


@dataclass(frozen=True)
class Trace:
    """A slotted trace with dense user ids."""

    batches: tuple
    num_users: int
    num_files: int
    user_ids: np.ndarray  # dense id -> original id
    start_timestamp: int
    slot_length: int

    def __len__(self):
        return len(self.batches)


_ML_LINE = re.compile(r"^\s*(-?\d+)::(-?\d+)::([^:]*)::(-?\d+)\s*$")


def read_trace_events(path, fmt="auto") -> tuple[list, str]:
    """Parse a MovieLens ``::`` file or a ``user_id,file_id,timestamp`` CSV."""
    path = Path(path)
    events = []
    with open(path, encoding="latin-1") as fh:
        lines = fh.read().splitlines()
    if fmt == "auto":
        first = next((l for l in lines if l.strip()), "")
        fmt = "movielens" if "::" in first else "csv"
    if fmt == "movielens":
        for no, line in enumerate(lines, 1):
            if not line.strip():
                continue
            m = _ML_LINE.match(line)
            if not m:
                raise TraceParseError(f"{path}:{no}: malformed rating row {line!r}")
            u, f, ts = int(m.group(1)), int(m.group(2)), int(m.group(4))
            if u < 0 or f < 0:
                raise TraceParseError(f"{path}:{no}: negative id")
            events.append(TraceEvent(u, f, ts))
    elif fmt == "csv":
        reader = csv.reader(lines)
        for no, row in enumerate(reader, 1):
            if not row or not "".join(row).strip():
                continue
            if no == 1 and row[0].strip() == "user_id":
                continue
            try:
                u, f, ts = (int(float(x)) for x in row[:3])
                if len(row) != 3:
                    raise ValueError
            except ValueError:
                raise TraceParseError(f"{path}:{no}: expected user_id,file_id,timestamp, got {row!r}") from None
            if u < 0 or f < 0:
                raise TraceParseError(f"{path}:{no}: negative id")
            events.append(TraceEvent(u, f, ts))
    else:
        raise ValueError(f"unknown trace format {fmt!r}")
    return events, fmt


def ingest_trace(path, slot_length: int = DAY, user_cap: int | None = None,
                 fmt: str = "auto", num_files: int | None = None) -> Trace:
    """Group trace events into consecutive slots starting at the first timestamp.

    MovieLens ids are 1-based, so movie k becomes file k-1 and the library size
    is the largest movie id.  CSV file ids are taken as-is.  Users are renumbered
    densely in ascending original-id order; ``user_cap`` keeps the first ones.
    """
    events, fmt = read_trace_events(path, fmt)
    if not events:
        raise TraceParseError(f"{path}: no events")
    arr = np.array([(e.user_id, e.file_id, e.timestamp) for e in events], dtype=np.int64)
    if fmt == "movielens":
        if np.any(arr[:, 1] < 1):
            raise TraceParseError(f"{path}: MovieLens ids start at 1")
        arr[:, 1] -= 1
    user_ids, dense = np.unique(arr[:, 0], return_inverse=True)
    if user_cap is not None:
        keep = dense < user_cap
        arr, dense = arr[keep], dense[keep]
        user_ids = user_ids[:user_cap]
    start = int(arr[:, 2].min())
    slots = (arr[:, 2] - start) // int(slot_length)
    n_slots = int(slots.max()) + 1
    F = int(arr[:, 1].max()) + 1 if num_files is None else int(num_files)
    order = np.lexsort((arr[:, 1], dense, slots))
    slots, users, files = slots[order], dense[order], arr[order, 1]
    bounds = np.searchsorted(slots, np.arange(n_slots + 1))
    batches = tuple(
        RequestBatch.from_pairs(t, users[bounds[t]:bounds[t + 1]], files[bounds[t]:bounds[t + 1]])
        for t in range(n_slots)
    )
    return Trace(batches, len(user_ids), F, user_ids, start, int(slot_length))


def write_slotted_trace(trace: Trace, path) -> Path:
    """Cache a slotted trace as ``slot,user_id,file_id`` rows with a metadata header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# num_users={trace.num_users} num_files={trace.num_files} "
                 f"num_slots={len(trace)} start={trace.start_timestamp} "
                 f"slot_length={trace.slot_length}\n")
        w = csv.writer(fh)
        w.writerow(["slot", "user_id", "file_id"])
        for b in trace.batches:
            for u, f in zip(b.users.tolist(), b.files.tolist()):
                w.writerow([b.slot, u, f])
    return path


def read_slotted_trace(path) -> Trace:
    path = Path(path)
    with open(path) as fh:
        head = fh.readline()
        if not head.startswith("#"):
            raise TraceParseError(f"{path}:1: missing slotted-trace header")
        meta = dict(kv.split("=") for kv in head[1:].split())
        rows = list(csv.reader(fh))
    data = np.array([[int(x) for x in r] for r in rows[1:] if r], dtype=np.int64).reshape(-1, 3)
    n_slots = int(meta["num_slots"])
    data = data[np.argsort(data[:, 0], kind="stable")]
    bounds = np.searchsorted(data[:, 0], np.arange(n_slots + 1))
    batches = [RequestBatch.from_pairs(t, data[bounds[t]:bounds[t + 1], 1],
                                       data[bounds[t]:bounds[t + 1], 2])
               for t in range(n_slots)]
    U = int(meta["num_users"])
    return Trace(tuple(batches), U, int(meta["num_files"]), np.arange(U),
                 int(meta["start"]), int(meta["slot_length"]))


def load_trace(path, slot_length=DAY, user_cap=None, fmt="auto") -> Trace:
    if fmt == "slotted" or (fmt == "auto" and str(path).endswith(".slots.csv")):
        return read_slotted_trace(path)
    return ingest_trace(path, slot_length, user_cap, fmt)


@dataclass(frozen=True)
class ActiveFileSet:
    files: frozenset = frozenset()


def update_active_files(active: ActiveFileSet, batch: RequestBatch) -> tuple[ActiveFileSet, set]:
    seen = batch.file_set()
    new = seen - active.files
    return ActiveFileSet(active.files | new), new
