"""End-to-end multi-party workflow with in-process simulated parties.

The flow: every party obfuscates its raw vertex keys with a shared salt and
submits the resulting fixed-width IDs; the server builds the merged vertex
mapping out of oblivious routines and returns each party its slice; parties
locally remap their edges, group them into the public grid shape and send
bit-packed blocks; the server merges the party grids, runs the requested
application for t rounds, and distributes per-vertex results back.

Server-side stages are assembled purely from the oblivious routines over
arrays of public lengths, and network sends/receives are traced as
sequential passes over the message buffers (message sizes are public
parameters).  Party-local work is non-oblivious by design: it runs on the
party's own trusted machine.

Mapped IDs are assigned 0-based in ascending obfuscated-ID order (a dense
rank), which differs from the 1-based counter a direct reading of the
mapping procedure would produce; every array in the system is 0-indexed and
the shift has no behavioral consequence.

Message formats (all integers little-endian):
  VERTEX_SUBMIT   n_i x 16-byte obfuscated ID
  MAP_RETURN      n_i x (16-byte ID + 8-byte mapped ID)
  GRID_SUBMIT     grid container (header + b^2 encoded blocks)
  RESULT_RETURN   n_i x (16-byte ID + 8-byte result bits)
"""

import hashlib
import time
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from . import apps as apps_mod
from . import baselines
from .errors import ObligeError, ParamMismatch, UnknownSource
from .grid import (
    EDGE_DTYPE,
    GridGraph,
    PublicParams,
    decode_block,
    encode_grid,
    grid_block_payload,
    group_into_blocks,
    parse_grid_header,
)
from .omsim import ELEMENT, READ, WRITE, Buffer, OMSim
from .oprims import o_filter, o_merge, o_sort, o_split_trans, o_trans, o_trans_merge

NULL64 = np.uint64(0xFFFFFFFFFFFFFFFF)

ID_DTYPE = np.dtype([("h", "<u8"), ("l", "<u8")])
VM_DTYPE = np.dtype([("h", "<u8"), ("l", "<u8"), ("party", "<u8"), ("mapped", "<u8")])
MAP_DTYPE = np.dtype([("h", "<u8"), ("l", "<u8"), ("mapped", "<u8")])
S_DTYPE = np.dtype([
    ("party", "<u8"), ("h", "<u8"), ("l", "<u8"),
    ("mapped", "<u8"), ("result", "<u8"),
])
RES_DTYPE = np.dtype([("h", "<u8"), ("l", "<u8"), ("result", "<u8")])
R_DTYPE = np.dtype([("mapped", "<u8"), ("result", "<u8")])


# -- identity obfuscation ------------------------------------------------------

def _key_bytes(key):
    if isinstance(key, (int, np.integer)):
        return int(key).to_bytes(8, "little", signed=False)
    if isinstance(key, str):
        return key.encode()
    if isinstance(key, bytes):
        return key
    raise TypeError("raw vertex keys must be int, str or bytes")


def obfuscate_ids(raw_keys, salt):
    """Keyed 128-bit digests of the raw keys; equal key and salt give equal IDs.

    Chaotic IDs both hide the raw identities from other parties and spread
    vertices evenly over the chunks, which keeps block loads balanced.
    """
    out = np.zeros(len(raw_keys), dtype=ID_DTYPE)
    for i, key in enumerate(raw_keys):
        digest = hashlib.sha256(salt + _key_bytes(key)).digest()[:16]
        out["h"][i] = int.from_bytes(digest[:8], "little")
        out["l"][i] = int.from_bytes(digest[8:], "little")
    return out


def ids_to_bytes(ids):
    return ids.astype(ID_DTYPE, copy=False).tobytes()


def ids_from_bytes(payload):
    return np.frombuffer(payload, dtype=ID_DTYPE).copy()


# -- party (client-side actor, non-oblivious by design) ----------------------

class Party:
    """One input party: raw graph in, mapping and results back."""

    def __init__(self, index, raw_keys, edges, salt):
        self.index = index
        self.raw_keys = list(raw_keys)
        self.edges = [(u, v) for u, v in edges]
        self.salt = salt
        self.ids = obfuscate_ids(self.raw_keys, salt)
        self._known = set(self.raw_keys)
        for u, v in self.edges:
            if u not in self._known or v not in self._known:
                raise ValueError("party %d has an edge endpoint outside its vertex set"
                                 % index)
        self.mapping = None  # (h, l) -> mapped, filled by receive_mapping

    @property
    def n_vertices(self):
        return len(self.raw_keys)

    def vertex_submit_payload(self):
        return ids_to_bytes(self.ids)

    def receive_mapping(self, payload):
        rows = np.frombuffer(payload, dtype=MAP_DTYPE)
        self.mapping = {
            (int(r["h"]), int(r["l"])): int(r["mapped"]) for r in rows
        }

    def _mapped_edges(self, symmetrize):
        by_raw = {}
        for key, oid in zip(self.raw_keys, self.ids):
            by_raw[key] = self.mapping[(int(oid["h"]), int(oid["l"]))]
        src = np.fromiter((by_raw[u] for u, _ in self.edges), dtype=np.uint64,
                          count=len(self.edges))
        dst = np.fromiter((by_raw[v] for _, v in self.edges), dtype=np.uint64,
                          count=len(self.edges))
        if symmetrize:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        return src, dst

    def block_occupancy(self, params, symmetrize=False):
        """Largest block load, i.e. the party's default public block length."""
        src, dst = self._mapped_edges(symmetrize)
        block_ids = (src // np.uint64(params.k)) * np.uint64(params.b) \
            + dst // np.uint64(params.k)
        counts = np.bincount(block_ids.astype(np.int64),
                             minlength=params.b * params.b)
        return int(counts.max()) if len(counts) else 0

    def grid_submit_payload(self, params, block_length, symmetrize=False):
        """Grid container with every block padded to `block_length` edges."""
        src, dst = self._mapped_edges(symmetrize)
        stored, _ = group_into_blocks(src, dst, params.k, params.b, block_length)
        return encode_grid(params.n, params.k, params.b, stored, block_length)

    def receive_results(self, payload, app):
        rows = np.frombuffer(payload, dtype=RES_DTYPE)
        spec = apps_mod.APPS[app]
        values = spec.bits_to_values(rows["result"])
        by_id = {}
        for r, v in zip(rows, values):
            by_id[(int(r["h"]), int(r["l"]))] = v
        return {
            key: by_id[(int(oid["h"]), int(oid["l"]))]
            for key, oid in zip(self.raw_keys, self.ids)
        }


# -- server-side oblivious stages ---------------------------------------------

def vertex_mapping(sim, vertex_ids, declared_n, worker=0):
    """Merge, sort and dedup the submitted IDs into a dense 0-based mapping.

    `vertex_ids` are the parsed VERTEX_SUBMIT arrays in party order and
    `declared_n` is the publicly agreed distinct count (checked, not
    trusted).  Returns the global map buffer (one entry per distinct ID, in
    mapped order) and the per-party map buffers of the declared sizes.
    """
    arena = sim.new_arena()
    trace = sim.trace
    sizes = [len(v) for v in vertex_ids]
    vbufs = [
        Buffer.from_rows(trace, "pipe.vsubmit%d" % i, np.asarray(v, dtype=ID_DTYPE),
                         worker=worker)
        for i, v in enumerate(vertex_ids)
    ]

    def tag(batch, i):
        out = np.zeros(len(batch), dtype=VM_DTYPE)
        out["h"], out["l"] = batch["h"], batch["l"]
        out["party"] = i
        out["mapped"] = NULL64
        return out

    merged = o_trans_merge(vbufs, tag, "vm.A", worker=worker)
    o_sort(merged, lambda b: (b["h"], b["l"]), arena, worker=worker)

    def assign(batch):
        out = batch.copy()
        fresh = np.ones(len(batch), dtype=bool)
        fresh[1:] = (batch["h"][1:] != batch["h"][:-1]) \
            | (batch["l"][1:] != batch["l"][:-1])
        out["mapped"] = np.cumsum(fresh) - 1
        return out

    merged = o_trans(merged, assign, worker=worker)

    def dedup(batch):
        out = batch.copy()
        repeat = np.zeros(len(batch), dtype=bool)
        repeat[1:] = batch["mapped"][1:] == batch["mapped"][:-1]
        out["mapped"][repeat] = NULL64
        return out

    marked = o_trans(merged, dedup, out_name="vm.A2", worker=worker)
    global_map = o_filter(
        marked, lambda b: (b["mapped"] != NULL64).astype(np.int64),
        declared_n, "vm.global", arena, worker=worker,
    )

    def project(batch):
        out = np.zeros(len(batch), dtype=MAP_DTYPE)
        out["h"], out["l"], out["mapped"] = batch["h"], batch["l"], batch["mapped"]
        return out

    maps = o_split_trans(
        merged, len(vertex_ids), lambda b: b["party"].astype(np.int64),
        project, sizes, "vm.map", arena, worker=worker,
    )
    return global_map, maps


def map_return_payload(sim, map_buf, worker=0):
    """Serialize one party's mapping; the send is a sequential buffer read."""
    sim.trace.seq(worker, map_buf.name, READ, 0, len(map_buf))
    return map_buf.data.astype(MAP_DTYPE, copy=False).tobytes()


def merge_grids(sim, payloads, params, symmetrized=False, worker=0):
    """Decode the party grids and concatenate them block by block.

    Everything here is fixed by (p, b, k, {l_i}): the message sizes, the
    per-block decode passes and the merge order.
    """
    if params.l_i is None or len(payloads) != params.p:
        raise ParamMismatch("need one published block length per party")
    trace = sim.trace
    headers = []
    msg_bufs = []
    for i, payload in enumerate(payloads):
        header = parse_grid_header(payload)
        if (header["n"], header["k"], header["b"]) != (params.n, params.k, params.b):
            raise ParamMismatch("party %d grid disagrees with public (n, k, b)" % i)
        if header["l"] != params.l_i[i]:
            raise ParamMismatch("party %d grid length differs from its published l_i" % i)
        headers.append(header)
        msg = np.frombuffer(payload, dtype=np.uint8)
        msg_bufs.append(Buffer.from_rows(trace, "pipe.gridmsg%d" % i, msg,
                                         worker=worker))

    b, l, k = params.b, params.l, params.k
    party_bufs = []
    for i, (header, msg_buf) in enumerate(zip(headers, msg_bufs)):
        li = params.l_i[i]
        decoded = Buffer.wrap(trace, "grid.party%d" % i,
                              np.zeros(b * b * li, dtype=EDGE_DTYPE))
        for r in range(b):
            for c in range(b):
                x = r * b + c
                start = header["header_nbytes"] + x * header["block_nbytes"]
                trace.seq(worker, msg_buf.name, READ, start, header["block_nbytes"])
                blob = grid_block_payload(payloads[i], header, r, c)
                trace.seq(worker, decoded.name, WRITE, x * li, li)
                decoded.data[x * li:(x + 1) * li] = decode_block(blob, k, li, r, c)
        party_bufs.append(decoded)

    merged = Buffer.wrap(trace, GridGraph.region_name,
                         np.zeros(b * b * l, dtype=EDGE_DTYPE))
    for x in range(b * b):
        # Block-wise concatenation in party order (public lengths).
        pos = x * l
        for i, pbuf in enumerate(party_bufs):
            li = params.l_i[i]
            trace.zip2(worker, pbuf.name, READ, x * li,
                       merged.name, WRITE, pos, li)
            merged.data[pos:pos + li] = pbuf.data[x * li:(x + 1) * li]
            pos += li

    m = int((merged.data["pad"] == 0).sum())
    return GridGraph(params, merged.data, m, symmetrized=symmetrized)


def gather_results(sim, state_buf, app, worker=0):
    """Collect the global result array in mapped-ID order 0..n-1."""
    spec = apps_mod.APPS[app]

    def to_r(batch):
        out = np.zeros(len(batch), dtype=R_DTYPE)
        out["mapped"] = np.arange(len(batch), dtype=np.uint64)
        out["result"] = spec.result_bits(batch)
        return out

    return o_trans(state_buf, to_r, out_name="pipe.R", worker=worker)


def post_process(sim, results_buf, map_bufs, params, worker=0):
    """Join results onto the saved per-party maps and split them back out.

    The combined list is sorted by (mapped ID, result-is-null) so each
    group's real result comes first, then a forward fill hands it to every
    party entry of the group.  All-ones result bits collide with the null
    pattern only for the unreachable-distance sentinel, and filling the null
    pattern assigns exactly that sentinel, so the coincidence is harmless.
    """
    arena = sim.new_arena()

    def from_map(batch, i):
        out = np.zeros(len(batch), dtype=S_DTYPE)
        out["party"] = i
        out["h"], out["l"] = batch["h"], batch["l"]
        out["mapped"] = batch["mapped"]
        out["result"] = NULL64
        return out

    sp = o_trans_merge(map_bufs, from_map, "post.Sp", worker=worker)

    def from_results(batch):
        out = np.zeros(len(batch), dtype=S_DTYPE)
        out["party"] = NULL64
        out["h"] = NULL64
        out["l"] = NULL64
        out["mapped"] = batch["mapped"]
        out["result"] = batch["result"]
        return out

    sg = o_trans(results_buf, from_results, out_name="post.Sg", worker=worker)
    combined = o_merge([sp, sg], "post.S", worker=worker)
    o_sort(
        combined,
        lambda b: (b["mapped"], (b["result"] == NULL64).astype(np.uint8)),
        arena, worker=worker,
    )

    def fill(batch):
        out = batch.copy()
        fresh = np.ones(len(batch), dtype=bool)
        fresh[1:] = batch["mapped"][1:] != batch["mapped"][:-1]
        gid = np.cumsum(fresh) - 1
        first = np.flatnonzero(fresh)
        out["result"] = batch["result"][first][gid]
        return out

    combined = o_trans(combined, fill, worker=worker)
    kept = o_filter(
        combined, lambda b: (b["party"] != NULL64).astype(np.int64),
        params.N, "post.kept", arena, worker=worker,
    )

    def project(batch):
        out = np.zeros(len(batch), dtype=RES_DTYPE)
        out["h"], out["l"], out["result"] = batch["h"], batch["l"], batch["result"]
        return out

    return o_split_trans(
        kept, params.p, lambda b: b["party"].astype(np.int64),
        project, params.n_i, "post.R", arena, worker=worker,
    )


def result_return_payload(sim, result_buf, worker=0):
    sim.trace.seq(worker, result_buf.name, READ, 0, len(result_buf))
    return result_buf.data.astype(RES_DTYPE, copy=False).tobytes()


# -- end-to-end driver ----------------------------------------------------------

@dataclass
class RunReport:
    app: str
    engine: str
    params: dict
    seed_salt: str
    workers: int
    stage_seconds: Dict[str, float] = field(default_factory=dict)
    stage_digests: Dict[str, str] = field(default_factory=dict)
    osort_lengths: List[int] = field(default_factory=list)

    def to_dict(self):
        return {
            "app": self.app,
            "engine": self.engine,
            "params": self.params,
            "salt": self.seed_salt,
            "workers": self.workers,
            "stage_seconds": self.stage_seconds,
            "stage_digests": self.stage_digests,
            "osort_lengths": self.osort_lengths,
        }


class _StageTimer:
    def __init__(self, sim, report):
        self.sim = sim
        self.report = report

    def run(self, name, fn):
        mark = self.sim.trace.mark() if self.sim else None
        start = time.perf_counter()
        try:
            result = fn()
        except ObligeError as err:
            if err.stage is None:
                err.stage = name
            raise
        self.report.stage_seconds[name] = time.perf_counter() - start
        if self.sim is not None:
            self.report.stage_digests[name] = self.sim.trace.digest(start=mark)
        return result


def _reference_end_to_end(parties, app, t, f, source_key):
    """Oracle path: same merged graph and mapping, no obliviousness at all."""
    all_ids = np.concatenate([p.ids for p in parties])
    uniq = np.unique(all_ids)  # sorts by (h, l), matching the oblivious rank
    rank = {(int(r["h"]), int(r["l"])): i for i, r in enumerate(uniq)}
    n = len(uniq)
    spec = apps_mod.APPS[app]
    src, dst = [], []
    for party in parties:
        by_raw = {key: rank[(int(oid["h"]), int(oid["l"]))]
                  for key, oid in zip(party.raw_keys, party.ids)}
        for u, v in party.edges:
            src.append(by_raw[u])
            dst.append(by_raw[v])
            if spec.symmetric:
                src.append(by_raw[v])
                dst.append(by_raw[u])
    source = None
    if app == "bfs":
        sid = obfuscate_ids([source_key], parties[0].salt)[0]
        key = (int(sid["h"]), int(sid["l"]))
        if key not in rank:
            raise UnknownSource("source vertex is not present in the merged graph")
        source = rank[key]
    values = baselines.reference_run(app, n, src, dst, t, f=f, source=source)
    out = {}
    for party in parties:
        res = {}
        for key, oid in zip(party.raw_keys, party.ids):
            res[key] = values[rank[(int(oid["h"]), int(oid["l"]))]]
        out[party.index] = res
    return out


def run_end_to_end(party_inputs, app, t, om_bytes, salt, workers=1,
                   engine="oblige", granularity=ELEMENT, record=True,
                   f=0.85, source_key=None, declared_n=None,
                   block_length_override=None):
    """Full workflow over in-process parties; returns (per-party results, report).

    `party_inputs` is a list of (raw_keys, edges) pairs.  `declared_n` stands
    in for the out-of-band agreement on the merged vertex count; when None it
    is computed the way the parties would jointly announce it.  The oblivious
    engines verify the declaration rather than trust it.
    """
    if app not in apps_mod.APPS:
        raise ValueError("unknown application %r" % app)
    spec = apps_mod.APPS[app]
    parties = [Party(i, keys, edges, salt) for i, (keys, edges) in enumerate(party_inputs)]

    report = RunReport(app=app, engine=engine, params={}, seed_salt=salt.hex(),
                       workers=workers)

    if engine == "reference":
        timer = _StageTimer(None, report)
        results = timer.run(
            "compute", lambda: _reference_end_to_end(parties, app, t, f, source_key))
        return results, report, None

    if declared_n is None:
        seen = set()
        for party in parties:
            seen.update((int(r["h"]), int(r["l"])) for r in party.ids)
        declared_n = len(seen)

    params = PublicParams.derive(
        p=len(parties), n_i=[p.n_vertices for p in parties], n=declared_n,
        t=t, s=om_bytes, vwidth=spec.vwidth,
    )

    sim = OMSim(om_bytes, granularity=granularity, enabled=record)
    timer = _StageTimer(sim, report)

    def stage_mapping():
        payloads = [p.vertex_submit_payload() for p in parties]
        arrays = [ids_from_bytes(pl) for pl in payloads]
        global_map, maps = vertex_mapping(sim, arrays, declared_n)
        for party, mbuf in zip(parties, maps):
            party.receive_mapping(map_return_payload(sim, mbuf))
        return global_map, maps

    global_map, map_bufs = timer.run("vertex_mapping", stage_mapping)

    def stage_preprocess():
        lengths = []
        for party in parties:
            li = party.block_occupancy(params, symmetrize=spec.symmetric)
            if block_length_override is not None:
                li = block_length_override[party.index]
            lengths.append(li)
        full = params.with_block_lengths(lengths)
        payloads = [
            party.grid_submit_payload(full, full.l_i[party.index],
                                      symmetrize=spec.symmetric)
            for party in parties
        ]
        return full, payloads

    full_params, grid_payloads = timer.run("edge_preprocess", stage_preprocess)
    report.params = {
        "p": full_params.p, "n_i": list(full_params.n_i), "N": full_params.N,
        "n": full_params.n, "t": t, "s": om_bytes, "k": full_params.k,
        "b": full_params.b, "l_i": list(full_params.l_i), "l": full_params.l,
        "vwidth": full_params.vwidth,
    }

    grid = timer.run(
        "merge_grids",
        lambda: merge_grids(sim, grid_payloads, full_params,
                            symmetrized=spec.symmetric))

    source_id = None
    if app == "bfs":
        if source_key is None:
            raise UnknownSource("bfs needs a source vertex key")
        source_id = obfuscate_ids([source_key], salt)[0]

    def stage_compute():
        if engine == "oblige":
            state = apps_mod.run_app(sim, grid, global_map, app, t,
                                     workers=workers, f=f, source_id=source_id)
            return gather_results(sim, state, app)
        if engine == "sortscan":
            ecopy = o_trans(Buffer.wrap(sim.trace, grid.region_name, grid.edges),
                            lambda b: b, out_name="ss.gridedges")
            edges = o_filter(
                ecopy, lambda b: (b["pad"] == 0).astype(np.int64),
                grid.m, "ss.edges", sim.new_arena(),
            )
            init = None
            if app == "bfs":
                init = apps_mod.bfs_initial_dist(sim, global_map, source_id)
            bits = baselines.sortscan_run(sim, full_params.n, edges, app, t,
                                          f=f, init_bits=init)

            def to_r(batch):
                out = np.zeros(len(batch), dtype=R_DTYPE)
                out["mapped"] = np.arange(len(batch), dtype=np.uint64)
                out["result"] = batch["result"]
                return out

            return o_trans(bits, to_r, out_name="pipe.R")
        raise ValueError("unknown engine %r" % engine)

    results_buf = timer.run("compute", stage_compute)

    def stage_post():
        res_bufs = post_process(sim, results_buf, map_bufs, full_params)
        out = {}
        for party, rbuf in zip(parties, res_bufs):
            payload = result_return_payload(sim, rbuf)
            out[party.index] = party.receive_results(payload, app)
        return out

    results = timer.run("post_process", stage_post)
    report.osort_lengths = [entry["n"] for entry in sim.osort_log]
    return results, report, sim
