"""Oblivious routine contracts: oracle equality, trace purity, declared sizes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oblige.errors import OMUnavailable, SizeMismatch
from oblige.omsim import OMSim
from oblige.oprims import (
    bitonic_cx_count,
    o_filter,
    o_merge,
    o_sort,
    o_split_trans,
    o_trans,
    o_trans_merge,
)

KEY = np.dtype([("k", "<u8")])


def key_buf(sim, values, name="arr"):
    rows = np.zeros(len(values), dtype=KEY)
    rows["k"] = values
    return sim.buffer_from_rows(name, rows)


def test_o_sort_small():
    sim = OMSim(1 << 12)
    buf = key_buf(sim, [3, 1, 2])
    o_sort(buf, lambda b: b["k"], sim.new_arena())
    assert buf.data["k"].tolist() == [1, 2, 3]


def test_o_sort_trace_ignores_values():
    def digest(values):
        sim = OMSim(1 << 10)
        buf = key_buf(sim, values)
        o_sort(buf, lambda b: b["k"], sim.new_arena())
        return sim.trace.digest()

    assert digest(range(1, 17)) == digest(range(16, 0, -1))


def test_o_sort_matches_oracle_on_random_keys():
    rng = np.random.default_rng(42)
    values = rng.integers(0, 1 << 63, size=10_000)
    sim = OMSim(1 << 12)
    buf = key_buf(sim, values)
    o_sort(buf, lambda b: b["k"], sim.new_arena())
    assert (buf.data["k"] == np.sort(values)).all()


def test_o_sort_is_stable_under_duplicates():
    rng = np.random.default_rng(7)
    keys = rng.integers(0, 8, size=300)
    payload = np.arange(300, dtype=np.uint64)
    rows = np.zeros(300, dtype=[("k", "<u8"), ("v", "<u8")])
    rows["k"], rows["v"] = keys, payload
    sim = OMSim(1 << 11)
    buf = sim.buffer_from_rows("arr", rows)
    o_sort(buf, lambda b: b["k"], sim.new_arena())
    order = np.argsort(keys, kind="stable")
    assert (buf.data["v"] == payload[order]).all()


def test_o_sort_cx_count_formula():
    # length 2^10, OM fitting 2^5 scratch records
    rows = np.zeros(1 << 10, dtype=KEY)
    scratch_itemsize = 1 + 8 + 8 + rows.dtype.itemsize
    sim = OMSim((1 << 5) * scratch_itemsize)
    rng = np.random.default_rng(0)
    buf = key_buf(sim, rng.integers(0, 1 << 40, size=1 << 10))
    stats = o_sort(buf, lambda b: b["k"], sim.new_arena())
    assert stats["segment"] == 1 << 5
    assert stats["compare_exchanges"] == bitonic_cx_count(1 << 10, 1 << 5)
    assert stats["compare_exchanges"] == (1 << 9) * 5 * 6 // 2


def test_o_sort_cx_count_zero_when_all_in_om():
    sim = OMSim(1 << 20)
    buf = key_buf(sim, [5, 4, 3, 2, 1])
    stats = o_sort(buf, lambda b: b["k"], sim.new_arena())
    assert stats["compare_exchanges"] == 0
    assert buf.data["k"].tolist() == [1, 2, 3, 4, 5]


def test_o_sort_om_too_small():
    sim = OMSim(16)  # cannot hold two scratch records
    buf = key_buf(sim, [2, 1, 3, 0])
    with pytest.raises(OMUnavailable):
        o_sort(buf, lambda b: b["k"], sim.new_arena())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=1 << 62), max_size=70))
def test_o_sort_property(values):
    sim = OMSim(1 << 9)
    buf = key_buf(sim, values)
    o_sort(buf, lambda b: b["k"], sim.new_arena())
    assert buf.data["k"].tolist() == sorted(values)


def test_o_trans_examples():
    sim = OMSim(1 << 10)
    buf = key_buf(sim, [1, 2, 3])

    def plus_one(batch):
        out = batch.copy()
        out["k"] += 1
        return out

    out = o_trans(buf, plus_one, out_name="out")
    assert out.data["k"].tolist() == [2, 3, 4]

    empty = key_buf(sim, [], name="empty")
    assert len(o_trans(empty, plus_one, out_name="eout").data) == 0


def _running_max(batch):
    out = batch.copy()
    out["k"] = np.maximum.accumulate(batch["k"])
    return out


def test_o_trans_stateful_running_max():
    sim = OMSim(1 << 10)
    buf = key_buf(sim, [3, 1, 4])
    out = o_trans(buf, _running_max, out_name="o")
    assert out.data["k"].tolist() == [3, 3, 4]


def test_o_trans_trace_equals_identity_trace():
    def digest(fn, values):
        sim = OMSim(1 << 10)
        buf = key_buf(sim, values)
        o_trans(buf, fn, out_name="o")
        return sim.trace.digest()

    assert digest(_running_max, [3, 1, 4]) == digest(lambda b: b, [9, 9, 9])


def test_o_trans_merge_order_and_empty():
    sim = OMSim(1 << 10)
    a = key_buf(sim, [10], name="a")
    bc = key_buf(sim, [20, 30], name="bc")

    def tag(batch, i):
        out = np.zeros(len(batch), dtype=[("k", "<u8"), ("src", "<u8")])
        out["k"], out["src"] = batch["k"], i
        return out

    merged = o_trans_merge([a, bc], tag, "m")
    assert merged.data["k"].tolist() == [10, 20, 30]
    assert merged.data["src"].tolist() == [0, 1, 1]

    e1 = key_buf(sim, [], name="e1")
    e2 = key_buf(sim, [], name="e2")
    assert len(o_trans_merge([e1, e2], tag, "m2").data) == 0


def test_o_trans_merge_trace_purity():
    def digest(values_a, values_b):
        sim = OMSim(1 << 10)
        a = key_buf(sim, values_a, name="a")
        b = key_buf(sim, values_b, name="b")
        o_merge([a, b], "m")
        return sim.trace.digest()

    assert digest([1], [2, 3]) == digest([7], [8, 9])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 1 << 30), max_size=20),
       st.lists(st.integers(0, 1 << 30), max_size=20))
def test_o_merge_equals_concatenation(xs, ys):
    sim = OMSim(1 << 10)
    a = key_buf(sim, xs, name="a")
    b = key_buf(sim, ys, name="b")
    merged = o_merge([a, b], "m")
    assert merged.data["k"].tolist() == xs + ys


def test_o_split_trans_example():
    sim = OMSim(1 << 10)
    buf = key_buf(sim, [2, 1, 2, 0])
    buckets = o_split_trans(
        buf, 3, lambda b: b["k"].astype(np.int64), lambda b: b,
        [1, 1, 2], "bkt", sim.new_arena(),
    )
    assert [b.data["k"].tolist() for b in buckets] == [[0], [1], [2, 2]]


def test_o_split_trans_size_mismatch():
    sim = OMSim(1 << 10)
    buf = key_buf(sim, [2, 1, 2, 0])
    with pytest.raises(SizeMismatch):
        o_split_trans(buf, 3, lambda b: b["k"].astype(np.int64), lambda b: b,
                      [1, 2, 1], "bkt", sim.new_arena())


def test_o_split_trans_equals_sort_then_trans():
    rng = np.random.default_rng(3)
    keys = rng.integers(0, 4, size=64)
    payload = rng.integers(0, 1 << 40, size=64)
    rows = np.zeros(64, dtype=[("k", "<u8"), ("v", "<u8")])
    rows["k"], rows["v"] = keys, payload
    sizes = np.bincount(keys, minlength=4).tolist()

    sim = OMSim(1 << 11)
    buf = sim.buffer_from_rows("arr", rows)
    buckets = o_split_trans(
        buf, 4, lambda b: b["k"].astype(np.int64), lambda b: b,
        sizes, "bkt", sim.new_arena(),
    )
    concatenated = np.concatenate([b.data for b in buckets])

    sim2 = OMSim(1 << 11)
    buf2 = sim2.buffer_from_rows("arr", rows)
    o_sort(buf2, lambda b: b["k"], sim2.new_arena())
    via_sort = o_trans(buf2, lambda b: b, out_name="out")
    assert (concatenated == via_sort.data).all()


def test_o_filter_examples():
    sim = OMSim(1 << 10)
    buf = key_buf(sim, [1, 2, 3, 4])
    kept = o_filter(buf, lambda b: (b["k"] % 2 == 0).astype(np.int64),
                    2, "kept", sim.new_arena())
    assert kept.data["k"].tolist() == [2, 4]

    none = key_buf(sim, [1, 3], name="odds")
    out = o_filter(none, lambda b: (b["k"] % 2 == 0).astype(np.int64),
                   0, "none", sim.new_arena())
    assert len(out.data) == 0


def test_trace_pure_function_of_public_shape():
    # Randomized pair testing across all routines at once.
    rng = np.random.default_rng(5)

    def one(seed):
        r = np.random.default_rng(seed)
        sim = OMSim(1 << 10)
        buf = key_buf(sim, r.integers(0, 99, size=33))
        arena = sim.new_arena()
        o_sort(buf, lambda b: b["k"], arena)
        o_trans(buf, lambda b: b, out_name="t")
        kept = int((buf.data["k"] % 3 == 0).sum())
        # declared sizes must match the secret data here, so fix them by
        # construction instead: bucket on a public derived index
        o_split_trans(buf, 3, lambda b: np.arange(33, dtype=np.int64) % 3,
                      lambda b: b, [11, 11, 11], "b", arena)
        return sim.trace.digest()

    assert one(1) == one(2) == one(3)
