"""2D grid-partitioned edge storage and its bit-exact wire format.

Vertices are split into chunks of k consecutive mapped IDs, where k is the
largest value such that two chunks of vertex data fit in the oblivious
memory (minus a fixed reserve for scan temporaries).  Edges are grouped into
b x b blocks by the chunks of their endpoints, and every block is padded
with null edges to one public length so the stored shape reveals nothing
about the edge distribution.

On the wire each edge is two w-bit chunk offsets with w = ceil(log2(k+1));
offset value k is the null sentinel (one extra bit per field buys a uniform
validity marker even when k is a power of two).  Fields are packed
little-endian, bit 0 first, padded with zero bits to a byte boundary, so the
encoded size is a pure function of (k, l).
"""

import io
import struct
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .errors import BlockOverflow, MalformedBlock, OMTooSmall, ParamMismatch

# Fixed OM reserve for scan-loop temporaries; a concrete, auditable stand-in
# for the constant-size register state the algorithms keep.
RESERVE_BYTES = 4096

EDGE_DTYPE = np.dtype([("src", "<u8"), ("dst", "<u8"), ("pad", "u1")])

GRID_MAGIC = b"OBGE"
GRID_VERSION = 1
GRID_REGION = "grid.edges"


def choose_chunk_size(s, vwidth, reserve=RESERVE_BYTES):
    """Largest k such that 2k vertex records plus the reserve fit in s bytes."""
    if s - reserve < 2 * vwidth:
        raise OMTooSmall(
            "OM of %d bytes cannot hold two %d-byte vertex chunks plus %d reserve"
            % (s, vwidth, reserve)
        )
    return (s - reserve) // (2 * vwidth)


def offset_bits(k):
    """Bits per encoded chunk offset: ceil(log2(k+1)), reserving value k for null."""
    return k.bit_length()


@dataclass(frozen=True)
class PublicParams:
    """The public configuration every oblivious stage's trace is a function of.

    Per-party and merged edge counts are deliberately absent: they are the
    secrets.  Block lengths are None until the parties publish them after
    edge pre-processing.
    """

    p: int
    n_i: Tuple[int, ...]
    N: int
    n: int
    t: int
    s: int
    k: int
    b: int
    vwidth: int
    l_i: Optional[Tuple[int, ...]] = None
    l: Optional[int] = None

    def __post_init__(self):
        if self.N != sum(self.n_i):
            raise ParamMismatch("N must equal sum of per-party vertex counts")
        if self.b != -(-self.n // self.k):
            raise ParamMismatch("b must equal ceil(n / k)")
        if 2 * self.k * self.vwidth + RESERVE_BYTES > self.s:
            raise ParamMismatch("two vertex chunks plus reserve exceed the OM size")
        if self.l_i is not None and self.l != sum(self.l_i):
            raise ParamMismatch("l must equal sum of per-party block lengths")

    @classmethod
    def derive(cls, p, n_i, n, t, s, vwidth, l_i=None):
        n_i = tuple(int(x) for x in n_i)
        k = choose_chunk_size(s, vwidth)
        b = -(-n // k)
        l = sum(l_i) if l_i is not None else None
        return cls(p=p, n_i=n_i, N=sum(n_i), n=n, t=t, s=s, k=k, b=b,
                   vwidth=vwidth, l_i=tuple(l_i) if l_i else None, l=l)

    def with_block_lengths(self, l_i):
        l_i = tuple(int(x) for x in l_i)
        return replace(self, l_i=l_i, l=sum(l_i))


class GridGraph:
    """b x b blocks of fixed-length edge lists over mapped vertex IDs.

    Immutable after construction; `edges` is one flat array with block (r, c)
    stored row-major at [(r*b + c) * l, ...).  `m` (the non-null total) stays
    out of the public parameter set.
    """

    region_name = GRID_REGION

    def __init__(self, params, edges, m, symmetrized=False):
        if params.l is None:
            raise ParamMismatch("grid needs params with published block lengths")
        if len(edges) != params.b * params.b * params.l:
            raise ParamMismatch("edge storage does not match b^2 * l")
        self.params = params
        self.edges = edges
        self.m = m
        self.symmetrized = symmetrized

    def block(self, r, c):
        l = self.params.l
        start = (r * self.params.b + c) * l
        return self.edges[start:start + l]

    def nonnull_edges(self):
        """The (src, dst) pairs of all real edges, in storage order."""
        real = self.edges[self.edges["pad"] == 0]
        return real["src"].copy(), real["dst"].copy()


def group_into_blocks(src, dst, k, b, block_length):
    """Place edges into b^2 row-major blocks padded to `block_length` each.

    Within a block edges keep their arrival order.  Raises
    :class:`BlockOverflow` when some block would exceed the declared length.
    """
    src = np.asarray(src, dtype=np.uint64)
    dst = np.asarray(dst, dtype=np.uint64)
    block_ids = (src // np.uint64(k)) * np.uint64(b) + dst // np.uint64(k)
    counts = np.bincount(block_ids.astype(np.int64), minlength=b * b)
    if len(counts) > b * b or (len(src) and counts.max() > block_length):
        raise BlockOverflow(
            "block holds %d edges but declared length is %d"
            % (int(counts.max()), block_length)
        )
    out = np.zeros(b * b * block_length, dtype=EDGE_DTYPE)
    out["pad"] = 1
    order = np.argsort(block_ids, kind="stable")
    starts = np.zeros(b * b, dtype=np.int64)
    starts[1:] = np.cumsum(counts)[:-1]
    # Positions: block base plus rank within the block (arrival order).
    rank = np.arange(len(src)) - starts[block_ids[order].astype(np.int64)]
    slots = block_ids[order].astype(np.int64) * block_length + rank
    out["src"][slots] = src[order]
    out["dst"][slots] = dst[order]
    out["pad"][slots] = 0
    return out, len(src)


def build_grid(edges, params, symmetrized=False, block_length=None):
    """Non-oblivious grid constructor for a party's machine or a test fixture.

    `edges` is a sequence of (src, dst) mapped-ID pairs (anything an (m, 2)
    array can be made of).  The merged block length defaults to `params.l`.
    """
    arr = np.asarray(list(edges), dtype=np.uint64).reshape(-1, 2)
    src, dst = arr[:, 0], arr[:, 1]
    if len(src) and int(np.max(src)) >= params.n:
        raise ParamMismatch("edge endpoint outside [0, n)")
    if len(dst) and int(np.max(dst)) >= params.n:
        raise ParamMismatch("edge endpoint outside [0, n)")
    l = params.l if block_length is None else block_length
    if params.l is None:
        params = params.with_block_lengths([l])
    stored, m = group_into_blocks(src, dst, params.k, params.b, l)
    return GridGraph(params, stored, m, symmetrized=symmetrized)


def encode_block(block, k):
    """Encode one block as packed w-bit offset pairs; nulls become (k, k)."""
    w = offset_bits(k)
    l = len(block)
    if l == 0:
        return b""
    kk = np.uint64(k)
    src_off = np.where(block["pad"] == 1, kk, block["src"] % kk)
    dst_off = np.where(block["pad"] == 1, kk, block["dst"] % kk)
    fields = np.empty(2 * l, dtype=np.uint64)
    fields[0::2] = src_off
    fields[1::2] = dst_off
    shifts = np.arange(w, dtype=np.uint64)
    bits = ((fields[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def decode_block(data, k, l, r, c):
    """Inverse of :func:`encode_block`, rebasing offsets to absolute IDs.

    Raises :class:`MalformedBlock` on a wrong payload length, an offset in
    (k, 2^w), or a half-null pair (exactly one field equal to k): none of
    these can be produced by a conforming client.
    """
    w = offset_bits(k)
    expected = (2 * w * l + 7) // 8
    if len(data) != expected:
        raise MalformedBlock(
            "block payload is %d bytes, expected %d" % (len(data), expected)
        )
    out = np.zeros(l, dtype=EDGE_DTYPE)
    if l == 0:
        return out
    raw = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    bits = raw[:2 * w * l].reshape(2 * l, w).astype(np.uint64)
    weights = np.uint64(1) << np.arange(w, dtype=np.uint64)
    fields = bits @ weights
    src_off, dst_off = fields[0::2], fields[1::2]
    if max(int(src_off.max()), int(dst_off.max())) > k:
        raise MalformedBlock("offset exceeds the null sentinel value k=%d" % k)
    src_null = src_off == k
    dst_null = dst_off == k
    if (src_null != dst_null).any():
        raise MalformedBlock("half-null edge encoding")
    out["pad"] = src_null.astype(np.uint8)
    keep = ~src_null
    out["src"][keep] = src_off[keep] + np.uint64(r * k)
    out["dst"][keep] = dst_off[keep] + np.uint64(c * k)
    return out


def encoded_block_nbytes(k, l):
    return (2 * offset_bits(k) * l + 7) // 8


_HEADER = struct.Struct("<4sI5Q")  # magic, version, n, k, b, l, block bytes


def pack_grid_payload(n, k, b, l, encoded_blocks):
    """Serialize the grid container: header + b^2 encoded blocks, row-major."""
    nbytes = encoded_block_nbytes(k, l)
    out = io.BytesIO()
    out.write(_HEADER.pack(GRID_MAGIC, GRID_VERSION, n, k, b, l, nbytes))
    for blob in encoded_blocks:
        if len(blob) != nbytes:
            raise MalformedBlock("encoded block has %d bytes, expected %d"
                                 % (len(blob), nbytes))
        out.write(blob)
    return out.getvalue()


def parse_grid_header(payload):
    if len(payload) < _HEADER.size:
        raise MalformedBlock("grid payload shorter than its header")
    magic, version, n, k, b, l, nbytes = _HEADER.unpack_from(payload)
    if magic != GRID_MAGIC or version != GRID_VERSION:
        raise MalformedBlock("bad grid container magic/version")
    if nbytes != encoded_block_nbytes(k, l):
        raise MalformedBlock("inconsistent per-block byte length in header")
    if len(payload) != _HEADER.size + b * b * nbytes:
        raise MalformedBlock("grid payload length does not match header")
    return {"n": n, "k": k, "b": b, "l": l, "block_nbytes": nbytes,
            "header_nbytes": _HEADER.size}


def grid_block_payload(payload, header, r, c):
    off = header["header_nbytes"] + (r * header["b"] + c) * header["block_nbytes"]
    return payload[off:off + header["block_nbytes"]]


def encode_grid(n, k, b, stored_edges, l):
    """Encode flat block storage (as built by group_into_blocks) to a payload."""
    blocks = [
        encode_block(stored_edges[x * l:(x + 1) * l], k) for x in range(b * b)
    ]
    return pack_grid_payload(n, k, b, l, blocks)


def save_grid(path, grid):
    payload = encode_grid(grid.params.n, grid.params.k, grid.params.b,
                          grid.edges, grid.params.l)
    with open(path, "wb") as fp:
        fp.write(payload)


def load_grid(path, params=None, symmetrized=False):
    """Load a grid container; checks (n, k, b) against `params` when given."""
    with open(path, "rb") as fp:
        payload = fp.read()
    header = parse_grid_header(payload)
    if params is not None:
        if (header["n"], header["k"], header["b"]) != (params.n, params.k, params.b):
            raise ParamMismatch("grid file was built for different public params")
    else:
        params = PublicParams.derive(
            p=1, n_i=[header["n"]], n=header["n"], t=0,
            s=2 * header["k"] * 8 + RESERVE_BYTES, vwidth=8,
            l_i=[header["l"]],
        )
    b, l, k = header["b"], header["l"], header["k"]
    edges = np.zeros(b * b * l, dtype=EDGE_DTYPE)
    for r in range(b):
        for c in range(b):
            blob = grid_block_payload(payload, header, r, c)
            edges[(r * b + c) * l:(r * b + c + 1) * l] = decode_block(blob, k, l, r, c)
    m = int((edges["pad"] == 0).sum())
    if params.l != l:
        params = params.with_block_lengths([l])
    return GridGraph(params, edges, m, symmetrized=symmetrized)
