"""Executable obliviousness checks: run stages on random secrets, diff traces.

Each registered stage builds fresh random secret inputs under one fixed
public configuration and runs on a fresh simulator.  If the per-worker trace
digests of any two trials differ, the stage leaks, and the first divergent
event is located by expanding the two traces side by side.

The deliberately leaky PageRank kernel variant (`pr_leaky`) exists as a
negative control: it performs one data-dependent access to a registered
non-OM probe region, which a sound recorder must catch.
"""

import numpy as np

from . import apps as apps_mod
from . import baselines
from .errors import ObliviousnessViolation
from .grid import PublicParams, build_grid
from .omsim import ELEMENT, READ, OMSim
from .oprims import o_sort
from .pipeline import obfuscate_ids, run_end_to_end, vertex_mapping
from .scan import full_scan


class CheckConfig:
    """Fixed public parameters for one family of trials."""

    def __init__(self, seed=0, p=4, n=256, overlap=32, edges_per_party=512,
                 om_bytes=1 << 15, workers=2, t=1):
        self.seed = seed
        self.p = p
        self.n = n
        self.overlap = overlap
        self.edges_per_party = edges_per_party
        self.om_bytes = om_bytes
        self.workers = workers
        self.t = t

    def salt(self):
        return b"tracecheck-salt!"[:16]


def random_parties(rng, cfg):
    """Random multi-party inputs with a fixed public shape.

    Party i owns a window of size n/p + overlap over a random permutation of
    n random raw keys, so {n_i}, N and the distinct count n never vary while
    every key value, overlap membership and edge is fresh per trial.
    """
    assert cfg.n % cfg.p == 0, "configure n divisible by p"
    stride = cfg.n // cfg.p
    window = stride + cfg.overlap
    # Draw with headroom and dedupe; collisions in a 62-bit space are
    # negligible but would silently change the public n.
    draw = np.unique(rng.integers(0, 1 << 62, size=2 * cfg.n))
    assert len(draw) >= cfg.n
    keys = rng.permutation(draw)[:cfg.n]
    perm = rng.permutation(cfg.n)
    parties = []
    for i in range(cfg.p):
        idx = perm[(i * stride + np.arange(window)) % cfg.n]
        mine = keys[idx]
        picks = rng.integers(0, window, size=(cfg.edges_per_party, 2))
        edges = [(int(mine[a]), int(mine[b])) for a, b in picks]
        parties.append(([int(x) for x in mine], edges))
    return parties


def _fixture_grid(rng, cfg, vwidth, block_length):
    params = PublicParams.derive(
        p=1, n_i=[cfg.n], n=cfg.n, t=cfg.t, s=cfg.om_bytes, vwidth=vwidth,
        l_i=[block_length],
    )
    m = cfg.edges_per_party
    edges = rng.integers(0, cfg.n, size=(m, 2))
    return build_grid(edges, params)


def _leaky_pr_kernel(sim):
    """PR kernel that also probes a non-OM table at a secret-derived offset."""
    probe_len = 1 << 16
    sim.trace.register("leak.probe", probe_len, 8)

    def kernel(src_chunk, dst_chunk, soff, doff):
        apps_mod._pr_kernel(src_chunk, dst_chunk, soff, doff)
        secret = int(src_chunk["weight"][0] * 1e6) % probe_len
        sim.trace.points(0, "leak.probe", READ, [secret])

    return kernel


# -- stage runners: each returns (sim, per-worker digests of the stage) -------

def _staged(sim, fn):
    start = sim.trace.mark()
    fn()
    return sim, sim.trace.worker_digests(start=start)


def _stage_o_sort(rng, cfg):
    sim = OMSim(cfg.om_bytes)
    rows = np.zeros(cfg.n, dtype=[("k", "<u8")])
    rows["k"] = rng.integers(0, 1 << 62, size=cfg.n)
    buf = sim.buffer_from_rows("chk.arr", rows)
    return _staged(sim, lambda: o_sort(buf, lambda b: b["k"], sim.new_arena()))


def _pr_fixture(rng, cfg, sim):
    grid = _fixture_grid(rng, cfg, apps_mod.PR_STATE.itemsize, cfg.edges_per_party)
    state = np.ones(cfg.n, dtype=apps_mod.PR_STATE)
    state["weight"] = rng.random(cfg.n) + 0.25
    state["degree"] = np.maximum(np.bincount(
        grid.edges["src"][grid.edges["pad"] == 0].astype(np.int64),
        minlength=cfg.n), 1)
    return grid, sim.buffer_from_rows("pr.state", state)


def _stage_full_scan(rng, cfg):
    sim = OMSim(cfg.om_bytes)
    grid, state = _pr_fixture(rng, cfg, sim)
    return _staged(sim, lambda: full_scan(
        grid, state, state, apps_mod._pr_kernel, sim, workers=cfg.workers,
        out_name="chk.out"))


def _stage_full_scan_rows(rng, cfg):
    sim = OMSim(cfg.om_bytes)
    grid = _fixture_grid(rng, cfg, apps_mod.DEGREE_STATE.itemsize,
                         cfg.edges_per_party)
    return _staged(sim, lambda: apps_mod.compute_out_degrees(
        sim, grid, workers=cfg.workers))


def _stage_vertex_mapping(rng, cfg):
    sim = OMSim(cfg.om_bytes)
    parties = random_parties(rng, cfg)
    ids = [obfuscate_ids(keys, cfg.salt()) for keys, _ in parties]
    return _staged(sim, lambda: vertex_mapping(sim, ids, cfg.n))


def _run_pipeline(rng, cfg, app, engine="oblige", leaky=False):
    parties = random_parties(rng, cfg)
    source = parties[0][0][0] if app == "bfs" else None
    sym = 2 if apps_mod.APPS[app].symmetric else 1
    override = [cfg.edges_per_party * sym] * cfg.p
    return run_end_to_end(
        parties, app, cfg.t, cfg.om_bytes, cfg.salt(), workers=cfg.workers,
        engine=engine, granularity=ELEMENT, source_key=source,
        declared_n=cfg.n, block_length_override=override,
    )


def _stage_merge_grids(rng, cfg):
    # The merge digest is the slice of the pipeline between preprocessing and
    # computing; run with t=0 so nothing after it contributes.
    cfg0 = CheckConfig(**{**cfg.__dict__, "t": 0})
    results, report, sim = _run_pipeline(rng, cfg0, "pr")
    return sim, {None: report.stage_digests["merge_grids"]}

def _stage_post_process(rng, cfg):
    cfg0 = CheckConfig(**{**cfg.__dict__, "t": 0})
    results, report, sim = _run_pipeline(rng, cfg0, "pr")
    return sim, {None: report.stage_digests["post_process"]}


def _stage_app_iteration(app):
    def runner(rng, cfg):
        sim = OMSim(cfg.om_bytes)
        if app == "pr":
            grid, state = _pr_fixture(rng, cfg, sim)
            return _staged(sim, lambda: apps_mod.pagerank_iteration(
                sim, grid, state, workers=cfg.workers))
        if app == "bfs":
            grid = _fixture_grid(rng, cfg, apps_mod.DIST_STATE.itemsize,
                                 cfg.edges_per_party)
            dist = np.zeros(cfg.n, dtype=apps_mod.DIST_STATE)
            dist["dist"] = rng.integers(0, 5, size=cfg.n)
            state = sim.buffer_from_rows("bfs.dist", dist)
            return _staged(sim, lambda: apps_mod.bfs_iteration(
                sim, grid, state, workers=cfg.workers))
        grid = _fixture_grid(rng, cfg, apps_mod.LABEL_STATE.itemsize,
                             cfg.edges_per_party)
        grid.symmetrized = True
        lab = np.zeros(cfg.n, dtype=apps_mod.LABEL_STATE)
        lab["label"] = rng.permutation(cfg.n)
        state = sim.buffer_from_rows("wcc.label", lab)
        return _staged(sim, lambda: apps_mod.wcc_iteration(
            sim, grid, state, workers=cfg.workers))

    return runner


def _stage_sortscan_iteration(rng, cfg):
    sim = OMSim(cfg.om_bytes)
    m = cfg.edges_per_party
    pairs = np.zeros(m, dtype=[("src", "<u8"), ("dst", "<u8")])
    pairs["src"] = rng.integers(0, cfg.n, size=m)
    pairs["dst"] = rng.integers(0, cfg.n, size=m)
    edges = sim.buffer_from_rows("ss.edgein", pairs)
    seed = sim.buffer_from_rows("ss.init", np.zeros(cfg.n, dtype=[("dist", "<u8")]))
    kernel = baselines.SortScanKernel("pr")
    elems = baselines.build_elements(
        sim, seed, edges, kernel.dtype,
        lambda out, batch: out.__setitem__("wgt", 1.0))
    elems.data["deg"][elems.data["kind"] == baselines.VERTEX] = 1
    arena = sim.new_arena()
    return _staged(sim, lambda: baselines.sortscan_iteration(
        elems, kernel, arena, sim=sim))


def _stage_pr_leaky(rng, cfg):
    sim = OMSim(cfg.om_bytes)
    grid, state = _pr_fixture(rng, cfg, sim)
    kernel = _leaky_pr_kernel(sim)
    return _staged(sim, lambda: full_scan(
        grid, state, state, kernel, sim, workers=cfg.workers, out_name="chk.out"))


def _stage_whole_pipeline(app, engine="oblige"):
    def runner(rng, cfg):
        results, report, sim = _run_pipeline(rng, cfg, app, engine=engine)
        return sim, sim.trace.worker_digests()

    return runner


STAGES = {
    "o_sort": _stage_o_sort,
    "full_scan": _stage_full_scan,
    "full_scan_rows": _stage_full_scan_rows,
    "vertex_mapping": _stage_vertex_mapping,
    "merge_grids": _stage_merge_grids,
    "post_process": _stage_post_process,
    "pr": _stage_app_iteration("pr"),
    "bfs": _stage_app_iteration("bfs"),
    "wcc": _stage_app_iteration("wcc"),
    "sortscan": _stage_sortscan_iteration,
    "pr_leaky": _stage_pr_leaky,
    "pipeline_pr": _stage_whole_pipeline("pr"),
    "pipeline_sortscan": _stage_whole_pipeline("pr", engine="sortscan"),
}


def check_stage(stage, trials, seed, cfg=None):
    """Run `trials` random-secret executions; all stage digests must agree.

    Returns a report dict; raises :class:`ObliviousnessViolation` carrying
    the first divergent (worker, event index) otherwise.
    """
    if trials < 2:
        raise ValueError("need at least 2 trials to compare traces")
    if stage not in STAGES:
        raise ValueError("unknown stage %r (choose from %s)"
                         % (stage, ", ".join(sorted(STAGES))))
    cfg = cfg or CheckConfig(seed=seed)
    rng = np.random.default_rng(seed)
    runner = STAGES[stage]
    base_sim, base_digests = runner(rng, cfg)
    for trial in range(1, trials):
        sim, digests = runner(rng, cfg)
        if digests != base_digests:
            where = base_sim.trace.first_divergence(sim.trace)
            worker, index = (where[0], where[1]) if where else (None, None)
            raise ObliviousnessViolation(
                "stage %r trace diverged on trial %d at worker=%s event=%s"
                % (stage, trial, worker, index),
                worker=worker, event_index=index,
            )
    return {"stage": stage, "trials": trials, "digests": base_digests}
