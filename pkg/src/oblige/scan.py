"""Oblivious full-graph scan over the grid storage.

The scan walks the grid column by column (one destination chunk at a time).
For each column it loads the destination vertex chunk into OM, then for each
of the b blocks in that column loads the source chunk and reads the block's
entire fixed-length edge list, padding included; finally the destination
chunk is written back whether or not it changed.  The observable pattern is
therefore a pure function of (b, k, l, record widths, worker assignment).

The per-edge kernel only ever touches the two OM-resident chunks, so the
null-edge check and all value-dependent work stay invisible.  Kernels are
vectorized: ``kernel(src_chunk, dst_chunk, src_off, dst_off)`` receives the
two chunk arrays plus the chunk-relative endpoints of the real edges and
mutates the chunk its scan direction owns (the destination chunk for
`full_scan`, the source chunk for `full_scan_rows`).  Repeated indices are
applied in stored order, so float accumulation is reproducible run to run.

Columns are assigned to workers statically and cyclically (column c goes to
worker c mod W); each worker gets a private OM arena of the full capacity,
and per-worker traces are independent, so the parallel scan is as oblivious
as the serial one.
"""

import numpy as np

from .errors import CapacityExceeded
from .grid import RESERVE_BYTES
from .omsim import Buffer


def _check_vertex_width(params, *bufs):
    for buf in bufs:
        if buf.data.dtype.itemsize > params.vwidth:
            raise CapacityExceeded(
                "vertex records of %d bytes exceed the budgeted width %d"
                % (buf.data.dtype.itemsize, params.vwidth)
            )


def _scan(grid, src_vals, dst_vals, kernel, sim, workers, out_name, by_rows):
    params = grid.params
    k, b, l, n = params.k, params.b, params.l, params.n
    _check_vertex_width(params, src_vals, dst_vals)

    owned_vals = src_vals if by_rows else dst_vals
    if out_name is None:
        out_name = owned_vals.name
    edges = Buffer.wrap(sim.trace, grid.region_name, grid.edges)
    out = Buffer.wrap(sim.trace, out_name, np.empty_like(owned_vals.data))

    peaks = []
    for w in range(workers):
        arena = sim.new_arena()
        for outer in range(w, b, workers):
            reserve = arena.alloc(RESERVE_BYTES)
            owned_om = arena.alloc(k * params.vwidth)
            other_om = arena.alloc(k * params.vwidth)
            lo = outer * k
            hi = min(lo + k, n)
            owned = owned_vals.read(lo, hi, worker=w)
            for inner in range(b):
                ilo = inner * k
                ihi = min(ilo + k, n)
                other = (dst_vals if by_rows else src_vals).read(ilo, ihi, worker=w)
                r, c = (outer, inner) if by_rows else (inner, outer)
                base = (r * b + c) * l
                blk = edges.read(base, base + l, worker=w)
                real = blk["pad"] == 0
                soff = (blk["src"][real] - np.uint64(r * k)).astype(np.int64)
                doff = (blk["dst"][real] - np.uint64(c * k)).astype(np.int64)
                if by_rows:
                    kernel(owned, other, soff, doff)
                else:
                    kernel(other, owned, soff, doff)
            # Unconditional write-back, changed or not.
            out.write(lo, owned, worker=w)
            arena.free(other_om)
            arena.free(owned_om)
            arena.free(reserve)
        peaks.append(arena.peak)
    sim.last_scan_peaks = peaks
    return out


def full_scan(grid, src_vals, dst_vals, kernel, sim, workers=1, out_name=None):
    """Column-major scan folding every in-edge into the destination chunks.

    Returns a new vertex buffer (named after `dst_vals` unless `out_name`
    says otherwise); `src_vals` is never modified.  Sources are visited in
    block row order 0..b-1 and, within a block, in stored order.
    """
    return _scan(grid, src_vals, dst_vals, kernel, sim, workers, out_name,
                 by_rows=False)


def full_scan_rows(grid, src_vals, dst_vals, kernel, sim, workers=1, out_name=None):
    """Row-major variant that owns and writes back the source chunks.

    Mirrors `full_scan` with the chunk roles swapped; used to accumulate
    per-source quantities such as out-degrees under the same trace shape
    argument.
    """
    return _scan(grid, src_vals, dst_vals, kernel, sim, workers, out_name,
                 by_rows=True)
