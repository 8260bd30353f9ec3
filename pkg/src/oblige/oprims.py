"""Basic oblivious routines over fixed-width record buffers.

Every routine's access trace depends only on the public lengths of its
inputs and declared outputs (plus record widths and the OM capacity), never
on record contents.  Values are compared and transformed inside the
oblivious memory; the observable pattern is fixed by the loop structure.

`o_sort` is a bitonic sorting network with an OM cutover: strides that fit
inside the OM are handled by copying the segment in, sorting it there
non-obliviously, and copying it back, which drops the in-OM portion of the
network from O(n log^2 n) to O(n log s).  Key extractors return one or more
vectorized key columns; ties are broken by original position, so the result
matches a stable sort and downstream passes are deterministic even under
duplicate keys.
"""

import numpy as np

from .errors import OMUnavailable, SizeMismatch
from .omsim import READ, WRITE, Buffer


def _pow2_floor(x):
    return 1 << (x.bit_length() - 1) if x >= 1 else 0


def _pow2_ceil(x):
    return 1 << (x - 1).bit_length() if x > 1 else 1


def bitonic_cx_count(padded_length, segment):
    """Compare-exchange count of the super-OM part of the network.

    For padded length P = 2^L and in-OM segment 2^S, every merge stage k
    contributes one P/2-pair pass per stride in [segment, k/2], which sums to
    P/2 * (L-S)(L-S+1)/2.  Pure function of public sizes.
    """
    if segment >= padded_length:
        return 0
    big = padded_length.bit_length() - segment.bit_length()
    return (padded_length // 2) * big * (big + 1) // 2


def _key_columns(key, batch):
    cols = key(batch)
    if isinstance(cols, np.ndarray):
        cols = (cols,)
    return tuple(np.asarray(c) for c in cols)


def _lex_compare(scratch, fields, ii, ll):
    """Vectorized lexicographic compare; returns (greater, less) masks."""
    gt = np.zeros(len(ii), dtype=bool)
    lt = np.zeros(len(ii), dtype=bool)
    eq = np.ones(len(ii), dtype=bool)
    for f in fields:
        a = scratch[f][ii]
        b = scratch[f][ll]
        gt |= eq & (a > b)
        lt |= eq & (a < b)
        eq &= a == b
    return gt, lt


def o_sort(buf, key, arena, worker=0):
    """Sort `buf` in place, ascending by `key(batch)` columns.

    The trace is the classic bitonic network over strides too large for the
    OM, with every compare-exchange reading and writing both positions
    unconditionally; segments that fit in the OM are copied in, sorted there,
    and copied back.  Input is padded to a power of two inside a scratch
    region; pad records carry a leading flag that sorts them last.

    Returns a stats dict with the padded length, in-OM segment size and the
    super-OM compare-exchange count (a pure function of the public sizes).
    """
    n = len(buf.data)
    stats = {"n": n, "padded": 0, "segment": 0, "compare_exchanges": 0}
    if n <= 1:
        return stats

    trace = buf.trace
    cols = _key_columns(key, buf.data)
    padded = _pow2_ceil(n)
    dt = np.dtype(
        [("_pad", "u1")]
        + [("_k%d" % i, c.dtype) for i, c in enumerate(cols)]
        + [("_pos", "<u8"), ("_rec", buf.data.dtype)]
    )
    fields = ["_pad"] + ["_k%d" % i for i in range(len(cols))] + ["_pos"]

    seg_records = _pow2_floor(arena.free_bytes // dt.itemsize)
    if seg_records < 2:
        raise OMUnavailable(
            "OM too small for o_sort: %d free bytes cannot hold two %d-byte records"
            % (arena.free_bytes, dt.itemsize)
        )
    seg = min(seg_records, padded)
    om = arena.alloc(seg * dt.itemsize)

    scratch_name = buf.name + ".sortpad"
    scratch = np.zeros(padded, dtype=dt)
    trace.register(scratch_name, padded, dt.itemsize)

    # Copy in (one interleaved read/write pass), then write the pad tail.
    trace.zip2(worker, buf.name, READ, 0, scratch_name, WRITE, 0, n)
    scratch["_rec"][:n] = buf.data
    for i, c in enumerate(cols):
        scratch["_k%d" % i][:n] = c
    scratch["_pos"] = np.arange(padded, dtype=np.uint64)
    trace.seq(worker, scratch_name, WRITE, n, padded - n)
    scratch["_pad"][n:] = 1

    def sort_segment(start, ascending):
        trace.seq(worker, scratch_name, READ, start, seg)
        view = scratch[start:start + seg]
        order = np.lexsort(tuple(view[f] for f in reversed(fields)))
        scratch[start:start + seg] = view[order if ascending else order[::-1]]
        trace.seq(worker, scratch_name, WRITE, start, seg)

    # Build sorted runs of length `seg`, alternating direction as the full
    # network would have left them after its first log2(seg) stages.
    for t in range(padded // seg):
        sort_segment(t * seg, ascending=t % 2 == 0)

    cx = 0
    k = 2 * seg
    while k <= padded:
        j = k // 2
        while j >= seg:
            trace.cx_pass(worker, scratch_name, j, padded)
            half = np.arange(padded // 2)
            i = (half // j) * (2 * j) + (half % j)
            ll = i + j
            asc = (i & k) == 0
            gt, lt = _lex_compare(scratch, fields, i, ll)
            swap = np.where(asc, gt, lt)
            si, sl = i[swap], ll[swap]
            tmp = scratch[si].copy()
            scratch[si] = scratch[sl]
            scratch[sl] = tmp
            cx += padded // 2
            j //= 2
        # Remaining strides of this merge stay inside one OM-sized segment,
        # which is bitonic at this point; a full in-OM sort finishes it.
        for start in range(0, padded, seg):
            sort_segment(start, ascending=(start & k) == 0)
        k *= 2

    trace.zip2(worker, scratch_name, READ, 0, buf.name, WRITE, 0, n)
    buf.data[:] = scratch["_rec"][:n]
    arena.free(om)
    stats.update(padded=padded, segment=seg, compare_exchanges=cx)
    return stats


def o_trans(buf, fn, out_name=None, worker=0):
    """Map `fn` over the records of `buf` (one read/write pass per element).

    `fn` receives the whole batch and must return an equal-length array; any
    running state it keeps lives in OM/registers and is invisible to the
    trace.  With `out_name` unset the result replaces the buffer contents in
    place (same region); otherwise a new buffer is created.
    """
    n = len(buf.data)
    result = np.asarray(fn(buf.data))
    if len(result) != n:
        raise ValueError("o_trans fn changed the array length")
    trace = buf.trace
    if out_name is None or out_name == buf.name:
        trace.zip2(worker, buf.name, READ, 0, buf.name, WRITE, 0, n)
        if result.dtype == buf.data.dtype:
            buf.data[:] = result
            return buf
        out = Buffer.wrap(trace, buf.name, result.copy())
        return out
    out = Buffer.wrap(trace, out_name, result.copy())
    trace.zip2(worker, buf.name, READ, 0, out_name, WRITE, 0, n)
    return out


def o_trans_merge(bufs, fn, out_name, worker=0, out=None, out_offset=0):
    """Concatenate `fn(batch_i, i)` over input buffers, i-major then j-minor.

    Pass `out`/`out_offset` to append into an existing buffer (used when
    merging block by block into one region); otherwise a new buffer named
    `out_name` is created.
    """
    parts = [np.asarray(fn(b.data, i)) for i, b in enumerate(bufs)]
    total = sum(len(p) for p in parts)
    trace = bufs[0].trace
    if out is None:
        dtype = parts[0].dtype
        out = Buffer.wrap(trace, out_name, np.zeros(total, dtype=dtype))
    pos = out_offset
    for b, part in zip(bufs, parts):
        trace.zip2(worker, b.name, READ, 0, out.name, WRITE, pos, len(part))
        out.data[pos:pos + len(part)] = part
        pos += len(part)
    return out


def o_merge(bufs, out_name, worker=0, out=None, out_offset=0):
    """Concatenate buffers in order (o_trans_merge with identity payload)."""
    return o_trans_merge(
        bufs, lambda batch, i: batch, out_name,
        worker=worker, out=out, out_offset=out_offset,
    )


def o_split_trans(buf, nbuckets, bucket_fn, project_fn, sizes, out_prefix,
                  arena, worker=0, out_names=None):
    """Sort by bucket id, then append each record's projection to its bucket.

    `sizes` are the publicly declared bucket lengths; the trace places bucket
    boundaries at exactly those positions.  If the actual bucket counts
    disagree, the caller declared a non-public-consistent size and a
    :class:`SizeMismatch` is raised loudly.
    """
    if len(sizes) != nbuckets:
        raise ValueError("need one declared size per bucket")
    ids = np.asarray(bucket_fn(buf.data))
    if len(ids) and (ids.min() < 0 or ids.max() >= nbuckets):
        raise ValueError("bucket ids out of range")

    o_sort(buf, lambda batch: np.asarray(bucket_fn(batch), dtype=np.int64),
           arena, worker=worker)

    counts = np.bincount(np.asarray(bucket_fn(buf.data), dtype=np.int64),
                         minlength=nbuckets)
    if list(counts) != [int(s) for s in sizes]:
        raise SizeMismatch(
            "declared bucket sizes %s but found %s" % (list(sizes), counts.tolist())
        )

    trace = buf.trace
    buckets = []
    lo = 0
    for i, size in enumerate(sizes):
        size = int(size)
        rows = np.asarray(project_fn(buf.data[lo:lo + size]))
        name = out_names[i] if out_names else "%s%d" % (out_prefix, i)
        bucket = Buffer.wrap(trace, name, rows.copy())
        trace.zip2(worker, buf.name, READ, lo, name, WRITE, 0, size)
        buckets.append(bucket)
        lo += size
    return buckets


def o_filter(buf, pred_fn, kept, out_name, arena, worker=0):
    """Keep records with `pred_fn` true; `kept` is the declared public count."""
    n = len(buf.data)
    buckets = o_split_trans(
        buf, 2,
        lambda batch: np.asarray(pred_fn(batch), dtype=np.int64),
        lambda batch: batch,
        [n - kept, kept],
        out_prefix="",
        arena=arena,
        worker=worker,
        out_names=[out_name + ".dropped", out_name],
    )
    return buckets[1]
