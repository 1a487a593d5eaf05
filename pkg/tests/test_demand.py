import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mamabcache.demand import (
    DAY,
    ActiveFileSet,
    PreferenceMatrix,
    RequestBatch,
    RequestStream,
    StationaryWorkload,
    TraceParseError,
    ingest_trace,
    load_trace,
    sample_stationary_requests,
    update_active_files,
    write_slotted_trace,
    zipf_pmf,
    zipf_preferences,
)


def test_zipf_uniform_limit():
    prefs = zipf_preferences(3, 4, 0.0, seed=1)
    np.testing.assert_allclose(prefs.p, 0.25)


def test_zipf_two_files():
    # 1 / (1 + 1/2) and (1/2) / (1 + 1/2)
    np.testing.assert_allclose(zipf_pmf(2, 1.0), [2 / 3, 1 / 3], rtol=1e-15)


def test_zipf_follows_rank_permutation():
    prefs = zipf_preferences(5, 10, 0.9, seed=3)
    pmf = zipf_pmf(10, 0.9)
    for u in range(5):
        np.testing.assert_allclose(prefs.p[u], pmf[prefs.rank_permutations[u] - 1])
        assert sorted(prefs.rank_permutations[u]) == list(range(1, 11))


def test_zipf_exponents_from_set():
    prefs = zipf_preferences(200, 5, seed=0)
    assert set(prefs.zipf_params) <= {0.5, 0.7, 0.9, 1.1, 1.3}
    assert len(set(prefs.zipf_params)) == 5


def test_same_ranking_shares_permutation():
    prefs = zipf_preferences(4, 6, seed=2, same_ranking=True)
    assert (prefs.rank_permutations == prefs.rank_permutations[0]).all()


def test_preference_rows_validated():
    with pytest.raises(ValueError):
        PreferenceMatrix(np.array([[0.5, 0.4]]), np.array([[1, 2]]), np.array([1.0]))


def test_degenerate_row_always_rank_one():
    p = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    prefs = PreferenceMatrix(p, np.array([[2, 1, 3], [1, 2, 3]]), np.zeros(2))
    stream = RequestStream(7)
    for t in range(50):
        b = sample_stationary_requests(prefs, t, stream)
        assert b.users.tolist() == [0, 1] and b.files.tolist() == [1, 0]


def test_stream_is_counter_based():
    s1, s2 = RequestStream(42), RequestStream(42)
    a = [s1.uniforms(t, 5) for t in (3, 0, 9)]
    b = [s2.uniforms(t, 5) for t in (9, 3, 0)]
    np.testing.assert_array_equal(a[0], b[1])
    np.testing.assert_array_equal(a[2], b[0])
    assert not np.array_equal(s1.uniforms(1, 5), s1.uniforms(2, 5))
    # same draws as a freshly keyed Philox at that counter
    fresh = np.random.Generator(np.random.Philox(key=s1._key, counter=[0, 0, 0, 9])).random(5)
    np.testing.assert_array_equal(a[2], fresh)


def test_workload_deterministic_and_one_per_user():
    prefs = zipf_preferences(12, 20, seed=5)
    w1 = StationaryWorkload(prefs, RequestStream(np.random.SeedSequence(9)))
    w2 = StationaryWorkload(prefs, RequestStream(np.random.SeedSequence(9)))
    for t in range(20):
        b1, b2 = w1.batch(t), w2.batch(t)
        np.testing.assert_array_equal(b1.files, b2.files)
        assert b1.users.tolist() == list(range(12))


def test_request_batch_set_semantics():
    b = RequestBatch.from_pairs(0, [2, 0, 2, 2], [5, 1, 5, 3])
    assert b.users.tolist() == [0, 2, 2] and b.files.tolist() == [1, 3, 5]
    assert b.requests_of(2) == {3, 5}
    assert b.file_set() == {1, 3, 5}


def test_active_files():
    a0 = ActiveFileSet()
    a1, new = update_active_files(a0, RequestBatch.from_pairs(0, [], []))
    assert a1.files == frozenset() and new == set()
    a2, new = update_active_files(a1, RequestBatch.from_pairs(1, [0, 1], [3, 7]))
    assert new == {3, 7}
    a3, new = update_active_files(a2, RequestBatch.from_pairs(2, [0, 1], [7, 2]))
    assert new == {2} and a3.files == {2, 3, 7}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 30), max_size=8), min_size=1, max_size=10))
def test_active_set_is_union_of_prior_batches(slots):
    active, seen = ActiveFileSet(), set()
    for t, files in enumerate(slots):
        prev = active.files
        active, new = update_active_files(active, RequestBatch.from_pairs(t, [0] * len(files), files))
        assert prev <= active.files
        assert new == set(files) - seen
        seen |= set(files)
        assert active.files == seen


def _write(path, text):
    path.write_text(text)
    return path


def test_ingest_movielens(tmp_path):
    path = _write(tmp_path / "ratings.dat",
                  "10::5::4::1000\n"
                  "10::7::3::1100\n"       # same day, second file
                  "10::5::2::1200\n"       # duplicate within the day
                  "3::1::5::%d\n"          # next day
                  "3::9::1::%d\n" % (1000 + DAY, 1000 + 3 * DAY))
    tr = ingest_trace(path)
    assert len(tr) == 4
    assert tr.num_users == 2 and tr.user_ids.tolist() == [3, 10]
    assert tr.num_files == 9
    b0 = tr.batches[0]
    assert b0.requests_of(1) == {4, 6}
    assert len(b0) == 2
    assert tr.batches[1].requests_of(0) == {0}
    assert len(tr.batches[2]) == 0


def test_ingest_csv_and_user_cap(tmp_path):
    path = _write(tmp_path / "t.csv", "user_id,file_id,timestamp\n5,0,0\n2,1,10\n9,2,20\n")
    tr = ingest_trace(path, slot_length=10, user_cap=2)
    assert tr.num_users == 2 and tr.user_ids.tolist() == [2, 5]
    assert [len(b) for b in tr.batches] == [1, 1]
    assert tr.num_files == 2


@pytest.mark.parametrize("text,line", [
    ("1::2::3::4\n1::x::3::4\n", 2),
    ("1::2::3::4\n\n1::2::3\n", 3),
])
def test_movielens_parse_error_has_line(tmp_path, text, line):
    path = _write(tmp_path / "r.dat", text)
    with pytest.raises(TraceParseError, match=rf"r\.dat:{line}:"):
        ingest_trace(path)


def test_csv_parse_error_has_line(tmp_path):
    path = _write(tmp_path / "r.csv", "user_id,file_id,timestamp\n1,2,3\n1,2\n")
    with pytest.raises(TraceParseError, match=r"r\.csv:3:"):
        ingest_trace(path)


def test_empty_trace_is_error(tmp_path):
    with pytest.raises(TraceParseError):
        ingest_trace(_write(tmp_path / "e.csv", "user_id,file_id,timestamp\n"))


def test_slotted_round_trip(tmp_path):
    path = _write(tmp_path / "r.dat", "1::3::5::0\n2::3::5::90000\n2::4::5::90001\n7::1::1::400000\n")
    tr = ingest_trace(path)
    out = write_slotted_trace(tr, tmp_path / "t.slots.csv")
    back = load_trace(out)
    assert (back.num_users, back.num_files, len(back)) == (tr.num_users, tr.num_files, len(tr))
    for a, b in zip(tr.batches, back.batches):
        np.testing.assert_array_equal(a.users, b.users)
        np.testing.assert_array_equal(a.files, b.files)
    # ingesting twice is byte-identical
    out2 = write_slotted_trace(ingest_trace(path), tmp_path / "u.slots.csv")
    assert out.read_bytes() == out2.read_bytes()
