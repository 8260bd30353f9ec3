"""Full-scan semantics, trace purity, write-back totality and OM budget."""

import numpy as np
import pytest

from oblige.errors import CapacityExceeded
from oblige.grid import RESERVE_BYTES, PublicParams, build_grid
from oblige.omsim import OMSim
from oblige.scan import full_scan, full_scan_rows

VAL = np.dtype([("v", "<f8")])


def micro_params(n=4, k=2, l=2):
    return PublicParams.derive(p=1, n_i=[n], n=n, t=1,
                               s=2 * k * 8 + RESERVE_BYTES, vwidth=8, l_i=[l])


def add_kernel(src_chunk, dst_chunk, soff, doff):
    np.add.at(dst_chunk["v"], doff, src_chunk["v"][soff])


def count_kernel(src_chunk, dst_chunk, soff, doff):
    np.add.at(src_chunk["v"], soff, 1.0)


def micro_scan(edges, src_vals, dst_vals, workers=1):
    params = micro_params()
    sim = OMSim(params.s)
    grid = build_grid(edges, params)
    src = sim.buffer_from_rows("vsrc", np.array([(x,) for x in src_vals], dtype=VAL))
    dst = sim.buffer_from_rows("vdst", np.array([(x,) for x in dst_vals], dtype=VAL))
    out = full_scan(grid, src, dst, add_kernel, sim, workers=workers, out_name="vout")
    return out, src, sim


def test_full_scan_micro_case():
    out, src, _ = micro_scan([(0, 3), (1, 0), (3, 3)], [1, 1, 1, 1], [0, 0, 0, 0])
    assert out.data["v"].tolist() == [1.0, 0.0, 0.0, 2.0]
    assert src.data["v"].tolist() == [1.0, 1.0, 1.0, 1.0]  # unmodified


def test_full_scan_all_null_rewrites_unchanged():
    out, _, sim = micro_scan([], [1, 2, 3, 4], [5, 6, 7, 8])
    assert out.data["v"].tolist() == [5.0, 6.0, 7.0, 8.0]
    writes = [ev for ev in sim.trace.events()
              if ev.region == "vout" and ev.kind == 1]
    assert sorted(ev.offset for ev in writes) == [0, 1, 2, 3]


def test_write_back_totality():
    # every destination element written exactly once per scan
    _, _, sim = micro_scan([(0, 1)], [1, 1, 1, 1], [0, 0, 0, 0])
    writes = [ev.offset for ev in sim.trace.events()
              if ev.region == "vout" and ev.kind == 1]
    assert sorted(writes) == [0, 1, 2, 3]
    assert len(writes) == 4


def test_full_scan_trace_purity():
    def digest(edges, values):
        out, _, sim = micro_scan(edges, values, [0, 0, 0, 0])
        return sim.trace.digest()

    a = digest([(0, 1), (2, 3), (1, 2)], [1, 2, 3, 4])
    b = digest([(3, 0), (0, 0), (2, 2)], [9, 9, 9, 9])
    assert a == b


def test_full_scan_rows_degrees():
    params = micro_params()
    sim = OMSim(params.s)
    grid = build_grid([(0, 3), (1, 0), (3, 3)], params)
    deg = sim.buffer_from_rows("deg", np.zeros(4, dtype=VAL))
    aux = sim.buffer_from_rows("aux", np.zeros(4, dtype=VAL))
    out = full_scan_rows(grid, deg, aux, count_kernel, sim, out_name="degout")
    assert out.data["v"].tolist() == [1.0, 1.0, 0.0, 1.0]


def test_full_scan_rows_all_null():
    params = micro_params()
    sim = OMSim(params.s)
    grid = build_grid([], params)
    deg = sim.buffer_from_rows("deg", np.zeros(4, dtype=VAL))
    aux = sim.buffer_from_rows("aux", np.zeros(4, dtype=VAL))
    out = full_scan_rows(grid, deg, aux, count_kernel, sim, out_name="degout")
    assert out.data["v"].tolist() == [0.0] * 4


def test_full_scan_rows_trace_purity():
    def digest(edges):
        params = micro_params()
        sim = OMSim(params.s)
        grid = build_grid(edges, params)
        deg = sim.buffer_from_rows("deg", np.zeros(4, dtype=VAL))
        aux = sim.buffer_from_rows("aux", np.zeros(4, dtype=VAL))
        full_scan_rows(grid, deg, aux, count_kernel, sim, out_name="degout")
        return sim.trace.digest()

    assert digest([(0, 1), (1, 2)]) == digest([(3, 3), (2, 0)])


def test_padding_transparency():
    # extra null padding (public l change) never alters the numeric result
    def result(l):
        params = micro_params(l=l)
        sim = OMSim(params.s)
        grid = build_grid([(0, 3), (1, 0), (3, 3)], params)
        src = sim.buffer_from_rows("vsrc", np.ones(4, dtype=VAL))
        dst = sim.buffer_from_rows("vdst", np.zeros(4, dtype=VAL))
        return full_scan(grid, src, dst, add_kernel, sim,
                         out_name="vout").data["v"].tolist()

    assert result(2) == result(5) == result(9)


def test_peak_om_usage_exact():
    params = micro_params()
    sim = OMSim(params.s)
    grid = build_grid([(0, 1)], params)
    src = sim.buffer_from_rows("vsrc", np.ones(4, dtype=VAL))
    dst = sim.buffer_from_rows("vdst", np.zeros(4, dtype=VAL))
    full_scan(grid, src, dst, add_kernel, sim, out_name="vout")
    assert sim.last_scan_peaks == [2 * params.k * params.vwidth + RESERVE_BYTES]


def test_worker_partition_covers_columns():
    # 2 columns, 3 workers: results identical to single worker, idle worker ok
    single, _, _ = micro_scan([(0, 3), (1, 0), (3, 3)], [1, 1, 1, 1], [0, 0, 0, 0])
    multi, _, sim = micro_scan([(0, 3), (1, 0), (3, 3)], [1, 1, 1, 1], [0, 0, 0, 0],
                               workers=3)
    assert single.data["v"].tolist() == multi.data["v"].tolist()
    assert len(sim.last_scan_peaks) == 3


def test_multi_worker_trace_purity_per_worker():
    def worker_digests(edges):
        params = micro_params()
        sim = OMSim(params.s)
        grid = build_grid(edges, params)
        src = sim.buffer_from_rows("vsrc", np.ones(4, dtype=VAL))
        dst = sim.buffer_from_rows("vdst", np.zeros(4, dtype=VAL))
        full_scan(grid, src, dst, add_kernel, sim, workers=2, out_name="vout")
        return sim.trace.worker_digests()

    assert worker_digests([(0, 1), (2, 3)]) == worker_digests([(3, 3), (1, 0)])


def test_oversized_vertex_records_rejected():
    params = micro_params()
    sim = OMSim(params.s)
    grid = build_grid([], params)
    wide = np.dtype([("a", "<f8"), ("b", "<f8")])  # 16 > vwidth 8
    src = sim.buffer_from_rows("vsrc", np.zeros(4, dtype=wide))
    dst = sim.buffer_from_rows("vdst", np.zeros(4, dtype=wide))
    with pytest.raises(CapacityExceeded):
        full_scan(grid, src, dst, add_kernel, sim, out_name="vout")
