"""Validation gate: twelve numbered end-to-end checks.

Each check prints exactly one ``[criterion NN] name: PASS|FAIL`` line.
References are analytic solutions (Poiseuille flow, Darcy's law) or
brute-force oracles built inside this file from plain index arithmetic,
so the library is always judged against something it does not share
code with.  The slow entries are the channel benchmarks and the
packed-bed viscosity sweep; the whole file targets a few minutes on a
laptop-class machine.
"""

import functools
import socket
import time
from types import SimpleNamespace

import numpy as np
import pytest

from test_solver import dense_poisson, make_gflags, make_setup

from portwin.analysis import point_series, subdomain_permeability
from portwin.checkpoint import load_checkpoint, save_checkpoint
from portwin.engine import FlowParams, Simulation
from portwin.grid import SOLID, GridConfig, build_hierarchy, refine
from portwin.exchange import NbhRepository, partition_morton
from portwin.porous import (
    parse_sieve_curve,
    place_spheres,
    placement_region,
    sphere_counts,
    voxelize,
)
from portwin.services import (
    Collector,
    LiveSource,
    RunController,
    SnapshotStore,
    WindowRequest,
    build_window_response,
    count_window,
    decompress_stream,
    gather_window,
    select_level,
    take_snapshot,
    window_cost,
)
from portwin.services import protocol as P
from portwin.solver import (
    BoundaryConditions,
    InlineDriver,
    MaskCache,
    PoissonController,
    PoissonSolver,
    assign_global_solids,
    sync_flags,
)

SIEVE = "6.0,0.5\n4.0,0.3\n3.0,0.2\n"
CHAN_DOMAIN = (0.064, 0.032, 0.032)
CELL_BYTES = 16  # ux, uy, uz, p as f32
PACKED_STEPS = 300


def criterion(num, name):
    """Print one verdict line per check, whatever the outcome."""
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                print(f"[criterion {num:02d}] {name}: FAIL ({exc})", flush=True)
                raise
            suffix = f" ({detail})" if detail else ""
            print(f"[criterion {num:02d}] {name}: PASS{suffix}", flush=True)
        return wrapper
    return deco


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    """Run every jitted kernel once so compilation cannot leak into the
    timed checks below."""
    h, repo = make_setup((0.016, 0.008, 0.008), (2, 1, 1), (8, 8, 8), 1)
    voxelize(np.array([[0.008, 0.004, 0.004, 0.002]]), h)
    sim = Simulation(h, repo, BoundaryConditions(inflow_velocity=1e-4),
                     FlowParams(nu=1e-6, rho=1000.0,
                                poisson=PoissonController(max_cycles=4)),
                     workers=0)
    sim.run(2)
    sim.close()


def channel_sim(inflow=1e-3):
    """64x32x32 open channel, plug start, divergence target well under
    the acceptance bound."""
    h, repo = make_setup(CHAN_DOMAIN, (4, 2, 2), (16, 16, 16), 1)
    params = FlowParams(nu=1e-6, rho=1000.0,
                        poisson=PoissonController(eps_rel=1e-4, div_target=2e-7))
    sim = Simulation(h, repo, BoundaryConditions(inflow_velocity=inflow),
                     params, workers=0)
    for uid in h.leaf_uids():
        h.data[uid].ux[:] = inflow
    return sim, h


def region_box_volume(region):
    vol = 1.0
    for a in range(3):
        vol *= region[a + 3] - region[a]
    return float(vol)


# ---- 1: projection ---------------------------------------------------------


@criterion(1, "projection keeps an empty channel divergence-free")
def test_c01_channel_divergence():
    sim, h = channel_sim()
    dx_min = min(h.level_spacing(1))
    records = []

    def watch(s, rep):
        # independent recomputation: face differences, interior cells only
        max_div, umax = 0.0, 0.0
        for uid in h.leaf_uids():
            d = h.data[uid]
            sx, sy, sz = h.grids[uid].spacing
            div = ((d.ux[2:, 1:-1, 1:-1] - d.ux[1:-1, 1:-1, 1:-1]) / sx
                   + (d.uy[1:-1, 2:, 1:-1] - d.uy[1:-1, 1:-1, 1:-1]) / sy
                   + (d.uz[1:-1, 1:-1, 2:] - d.uz[1:-1, 1:-1, 1:-1]) / sz)
            max_div = max(max_div, float(np.abs(div).max()))
            for u in (d.ux, d.uy, d.uz):
                umax = max(umax, float(np.abs(u[1:-1, 1:-1, 1:-1]).max()))
        records.append((max_div, umax))

    sim.listeners.append(watch)
    t0 = time.perf_counter()
    sim.run(100)
    elapsed = time.perf_counter() - t0
    sim.close()

    assert len(records) == 100
    worst = max(md / (1e-6 * um / dx_min) for md, um in records)
    assert worst <= 1.0, f"divergence bound exceeded, ratio {worst:.3f}"
    assert elapsed < 120.0, f"100 steps took {elapsed:.0f}s"
    return f"100 steps, worst bound ratio {worst:.2f}, {elapsed:.0f}s"


# ---- 2: pressure solve -----------------------------------------------------


@criterion(2, "multigrid matches the dense solve on a single block")
def test_c02_poisson_dense_oracle():
    h, repo = make_setup((1.0, 0.8, 0.6), (2, 2, 2), (8, 8, 8), 0)
    bcond = BoundaryConditions(outflow_pressure=0.7)
    rng = np.random.default_rng(7)
    solid = rng.random((8, 8, 8)) < 0.1
    assign_global_solids(h, solid, 0)
    sync_flags(h, repo, bcond)

    solver = PoissonSolver(h, repo, bcond, MaskCache())
    div = rng.standard_normal((8, 8, 8))
    rho_over_dt = 125.0
    solver.load_rhs(h.root_uid, div, rho_over_dt)
    ctrl = PoissonController(eps_rel=1e-12, div_target=np.inf, max_cycles=60)
    solver.solve(InlineDriver(h), ctrl, dt_over_rho=1.0 / rho_over_dt)

    A, b0, live = dense_poisson(make_gflags((8, 8, 8), bcond, solid),
                                h.grids[h.root_uid].spacing, 0.7)
    b = np.where(live, rho_over_dt * div.ravel() - b0, 0.0)
    x = np.linalg.solve(A, b)
    p = h.data[h.root_uid].p[1:-1, 1:-1, 1:-1].ravel()
    diff = float(np.abs(p - x).max()) / max(1.0, float(np.abs(x).max()))
    assert diff <= 1e-8, f"multigrid vs dense differ by {diff:.2e}"
    return f"8^3 block, max relative diff {diff:.1e}"


# ---- 3: Poiseuille ---------------------------------------------------------


def poiseuille_case(ny, steps=100):
    gap = 0.032
    length = 2.0 * gap
    nz = 8
    dy = gap / ny
    dom = (length, gap, nz * dy)
    h, repo = make_setup(dom, (4, 2, 1), (ny // 2, ny // 2, nz), 1)
    u_in = 1e-4
    bcond = BoundaryConditions(inflow_profile="parabolic_y", inflow_velocity=u_in,
                               z_minus="slip", z_plus="slip")
    params = FlowParams(nu=1e-6, rho=1000.0, dt_max=0.02,
                        poisson=PoissonController(eps_rel=1e-5, div_target=1e-8))
    sim = Simulation(h, repo, bcond, params, workers=0)
    s = h.config.block_size
    for uid in h.leaf_uids():
        g = h.grids[uid]
        ys = g.bbox_min[1] + (np.arange(s[1] + 2) - 0.5) * g.spacing[1]
        eta = ys / gap
        h.data[uid].ux[:] = (6.0 * u_in * eta * (1.0 - eta))[None, :, None]
    sim.run(steps)
    sim.close()

    # centred streamwise velocity, averaged over the middle half of the
    # channel length and the full (slip-walled) depth
    res = h.level_resolution(1)
    ux_c = np.zeros(res)
    for uid in h.level_uids(1):
        d = h.data[uid]
        g = h.grids[uid]
        sl = tuple(slice(g.block_coords[a] * s[a], (g.block_coords[a] + 1) * s[a])
                   for a in range(3))
        ux_c[sl] = 0.5 * (d.ux[1:-1, 1:-1, 1:-1] + d.ux[2:, 1:-1, 1:-1])
    xs = (np.arange(res[0]) + 0.5) * (length / res[0])
    mid = (xs >= 0.25 * length) & (xs < 0.75 * length)
    prof = ux_c[mid].mean(axis=(0, 2))
    yc = (np.arange(ny) + 0.5) * dy
    ref = 6.0 * u_in * (yc / gap) * (1.0 - yc / gap)
    l2 = float(np.sqrt(np.sum((prof - ref) ** 2) / np.sum(ref ** 2)))

    box = (0.25 * length, 0.0, 0.0, 0.75 * length, gap, dom[2])
    kx = subdomain_permeability(h, box, mu=1e-6 * 1000.0)[0]
    kerr = kx / (gap * gap / 12.0) - 1.0
    return l2, kerr


@criterion(3, "plane channel matches the parabolic profile and k = h^2/12")
def test_c03_poiseuille():
    l2_32, kerr_32 = poiseuille_case(32)
    assert l2_32 <= 0.02, f"profile L2 error {l2_32:.4f}"
    assert abs(kerr_32) <= 0.05, f"k error {kerr_32:+.3%} at 32 cells"
    l2_64, kerr_64 = poiseuille_case(64)
    assert abs(kerr_64) <= 0.02, f"k error {kerr_64:+.3%} at 64 cells"
    return (f"32 cells: L2 {l2_32:.2%}, k err {kerr_32:+.2%}; "
            f"64 cells: L2 {l2_64:.2%}, k err {kerr_64:+.2%}")


# ---- 4: decomposition invariance ------------------------------------------


@criterion(4, "worker count leaves the solution unchanged")
def test_c04_decomposition_invariance(tmp_path):
    curve = parse_sieve_curve(SIEVE)
    dom = (0.048, 0.024, 0.024)
    region = placement_region((0.0, 0.0, 0.0), dom, curve)
    counts = sphere_counts(curve, region_box_volume(region), 0.30)
    pack = place_spheres(counts, curve, region, seed=11)

    paths = []
    for workers in (1, 4):
        h, repo = make_setup(dom, (4, 2, 2), (8, 8, 8), 1, workers=workers)
        voxelize(pack.spheres, h)
        params = FlowParams(nu=1e-6, rho=1000.0, convection=0.0,
                            poisson=PoissonController())
        sim = Simulation(h, repo, BoundaryConditions(inflow_velocity=1e-4),
                         params, workers=workers)
        sim.run(50)
        path = tmp_path / f"w{workers}.pwck"
        save_checkpoint(path, h, sim.step_index, sim.time, pack)
        sim.close()
        paths.append(path)

    h1, s1, t1, _ = load_checkpoint(paths[0])
    h4, s4, t4, _ = load_checkpoint(paths[1])
    assert s1 == s4 == 50 and t1 == t4
    assert set(h1.grids) == set(h4.grids)
    worst = 0.0
    for uid in h1.grids:
        assert np.array_equal(h1.data[uid].flags, h4.data[uid].flags)
        for name in ("ux", "uy", "uz", "p"):
            delta = np.abs(h1.data[uid].field(name) - h4.data[uid].field(name))
            worst = max(worst, float(delta.max()))
    assert worst <= 1e-10, f"fields differ by {worst:.2e}"
    return f"50 steps, 1 vs 4 workers, max field diff {worst:.1e}"


# ---- 5: partitioning -------------------------------------------------------


def interleaved_key(coords):
    """Bit-interleaved lattice key, x lowest: the comparison ordering the
    partitioner is required to follow."""
    x, y, z = (int(c) for c in coords)
    key = 0
    for b in range(21):
        key |= ((x >> b) & 1) << (3 * b)
        key |= ((y >> b) & 1) << (3 * b + 1)
        key |= ((z >> b) & 1) << (3 * b + 2)
    return key


def random_hierarchy(rng, max_root=2, refines=6):
    # root factors must divide the 4^3 block size
    picks = (1, 2) if max_root <= 2 else (1, 2, 4)
    root = tuple(int(v) for v in rng.choice(picks, 3))
    cfg = GridConfig((0.0, 0.0, 0.0), (float(root[0]), float(root[1]), float(root[2])),
                     root, (2, 2, 2), (4, 4, 4), 2)
    h = build_hierarchy(cfg, 1)
    for _ in range(int(rng.integers(0, refines + 1))):
        cands = [u for u in h.leaf_uids() if h.grids[u].depth < 2]
        if not cands:
            break
        refine(h, cands[int(rng.integers(0, len(cands)))])
    return h


@criterion(5, "morton partition balances and stays contiguous")
def test_c05_partition_balance():
    rng = np.random.default_rng(19)
    for _ in range(1000):
        h = random_hierarchy(rng)
        leaves = h.leaf_uids()
        n_workers = int(rng.integers(1, min(8, len(leaves)) + 1))
        part = partition_morton(h, n_workers)
        sizes = [len(blocks) for blocks in part.worker_blocks]
        assert max(sizes) - min(sizes) <= 1, sizes
        order = sorted(leaves, key=lambda u: (h.grids[u].depth,
                                              interleaved_key(h.grids[u].block_coords)))
        owners = [part.owner(u) for u in order]
        assert owners == sorted(owners), "ownership not contiguous on the curve"
        assert sorted(u for blocks in part.worker_blocks for u in blocks) == sorted(leaves)
    return "1000 random hierarchies, spread <= 1, contiguous intervals"


# ---- 6: adjacency tables ---------------------------------------------------

ORACLE_FACES = (("W", 0, -1), ("E", 0, 1), ("S", 1, -1),
                ("N", 1, 1), ("B", 2, -1), ("T", 2, 1))
OPPOSITE = {"W": "E", "E": "W", "S": "N", "N": "S", "B": "T", "T": "B"}


def adjacency_oracle(entries):
    """Expected same-size face neighbours from bbox arithmetic alone."""
    by_depth = {}
    for e in entries.values():
        by_depth.setdefault(e.depth, []).append(e)
    expect = {}
    for group in by_depth.values():
        uids = [e.uid for e in group]
        bmin = np.array([e.bbox_min for e in group])
        bmax = np.array([e.bbox_max for e in group])
        tol = 1e-9 * float((bmax - bmin).max())
        for i, uid in enumerate(uids):
            for face, axis, sign in ORACLE_FACES:
                t1, t2 = [t for t in range(3) if t != axis]
                if sign > 0:
                    flush = np.abs(bmax[i, axis] - bmin[:, axis]) <= tol
                else:
                    flush = np.abs(bmin[i, axis] - bmax[:, axis]) <= tol
                for t in (t1, t2):
                    lo = np.maximum(bmin[i, t], bmin[:, t])
                    hi = np.minimum(bmax[i, t], bmax[:, t])
                    flush &= (hi - lo) > tol
                hits = [uids[j] for j in np.flatnonzero(flush) if uids[j] != uid]
                assert len(hits) <= 1, f"ambiguous face {face} of {uid}"
                expect[(uid, face)] = hits[0] if hits else None
    return expect


@criterion(6, "neighbour tables match the bbox adjacency oracle")
def test_c06_adjacency():
    rng = np.random.default_rng(23)
    blocks = 0
    for _ in range(24):
        h = random_hierarchy(rng, max_root=4, refines=40)
        assert len(h.grids) <= 512
        repo = NbhRepository()
        repo.register_hierarchy(h, partition_morton(h, 2))
        expect = adjacency_oracle(repo.entries)
        for uid, entry in repo.entries.items():
            for face, _, _ in ORACLE_FACES:
                assert entry.neighbors[face] == expect[(uid, face)], (uid, face)
                nb = entry.neighbors[face]
                if nb is not None:
                    assert repo.entries[nb].neighbors[OPPOSITE[face]] == uid
        blocks += len(h.grids)
    return f"24 tilings, {blocks} blocks, tables equal oracle, symmetric"


# ---- 7: window budgets -----------------------------------------------------


def axis_pick(wlo, whi, res, ext):
    """Half-open centre selection [lo, hi) on one uniform axis."""
    dx = ext / res
    lo = min(max(int(np.ceil(wlo / dx - 0.5)), 0), res)
    while lo > 0 and (lo - 0.5) * dx >= wlo:
        lo -= 1
    while lo < res and (lo + 0.5) * dx < wlo:
        lo += 1
    hi = min(max(int(np.ceil(whi / dx - 0.5)), lo), res)
    while hi > lo and (hi - 0.5) * dx >= whi:
        hi -= 1
    while hi < res and (hi + 0.5) * dx < whi:
        hi += 1
    return lo, hi


def oracle_counts(window, res, ext, block, stride):
    """Cells and touched blocks of a window on one full uniform level."""
    cells, nblocks = 1, 1
    for a in range(3):
        lo, hi = axis_pick(window[0][a], window[1][a], res[a], ext[a])
        st = stride[a]
        if st == 1:
            n = hi - lo
            first, last = lo, hi - 1
        else:
            first = -(-lo // st) * st
            n = 0 if first >= hi else (hi - first + st - 1) // st
            last = first + (n - 1) * st
        if n <= 0:
            return 0, 0
        s = block[a]
        if st <= s:
            nb = last // s - first // s + 1
        else:
            nb = len({g // s for g in range(first, last + 1, st)})
        cells *= n
        nblocks *= nb
    return cells, nblocks


def oracle_cost(cells, nblocks):
    return 40 + 32 * nblocks + cells * CELL_BYTES


def oracle_select(window, budget, levels):
    """Deepest feasible level at stride 1, else a root view whose stride
    doubles per axis while the axis keeps at least one cell.
    ``levels`` lists (depth, res, ext, block) deepest first."""
    for depth, res, ext, block in levels:
        cells, nb = oracle_counts(window, res, ext, block, (1, 1, 1))
        if cells == 0:
            continue
        if oracle_cost(cells, nb) <= budget:
            return depth, (1, 1, 1)
    _, res, ext, block = levels[-1]
    st = [1, 1, 1]
    while True:
        cells, nb = oracle_counts(window, res, ext, block, tuple(st))
        if cells <= 1 or oracle_cost(cells, nb) <= budget:
            if cells == 0:
                return 0, (1, 1, 1)
            return 0, tuple(st)
        for a in range(3):
            t = list(st)
            t[a] *= 2
            if oracle_counts(window, res, ext, block, tuple(t))[0] > 0:
                st[a] = t[a]


@criterion(7, "responses stay under budget at the deepest feasible level")
def test_c07_window_budget():
    cfg = GridConfig((0.0, 0.0, 0.0), (0.32, 0.16, 0.16), (4, 2, 2), (2, 2, 2),
                     (20, 20, 20), 3)
    h = build_hierarchy(cfg, 3)
    whole = ((0.0, 0.0, 0.0), (0.32, 0.16, 0.16))
    ext = (0.32, 0.16, 0.16)
    block = (20, 20, 20)
    levels = [(d, tuple(h.level_resolution(d)), ext, block) for d in (3, 2, 1, 0)]
    by_depth = {d: lv for lv in levels for d in [lv[0]]}

    # pinned whole-domain budgets
    frozen = [(4_000_000, (1, (1, 1, 1))),
              (20_000_000, (2, (1, 1, 1))),
              (100_000, (0, (2, 2, 2)))]
    for budget, want in frozen:
        assert oracle_select(whole, budget, levels) == want
        assert select_level(h, whole, budget, CELL_BYTES) == want

    rng = np.random.default_rng(77)
    depth_hist = dict.fromkeys((0, 1, 2, 3, "strided"), 0)
    for i in range(10_000):
        lo = rng.uniform(-0.04, 0.33, 3)
        hi = lo + rng.uniform(0.001, 0.30, 3)
        win = (tuple(lo), tuple(hi))
        budget = int(10 ** rng.uniform(3.4, 7.6))
        want = oracle_select(win, budget, levels)
        got = select_level(h, win, budget, CELL_BYTES)
        assert got == want, f"case {i}: window {win} budget {budget}: {got} != {want}"
        depth, stride = got
        _, res, _, _ = by_depth[depth]
        cells, nb = oracle_counts(win, res, ext, block, stride)
        assert count_window(h, win, depth, stride) == (cells, nb), f"case {i}"
        assert oracle_cost(cells, nb) <= budget, f"case {i} over budget"
        depth_hist["strided" if stride != (1, 1, 1) else depth] += 1

    # served payloads for a subsample, through the real gather path
    snap = take_snapshot(h, 0, 0.0)
    rng2 = np.random.default_rng(78)
    for _ in range(120):
        lo = rng2.uniform(0.0, 0.30, 3)
        hi = lo + rng2.uniform(0.005, 0.12, 3)
        win = (tuple(lo), tuple(hi))
        budget = int(10 ** rng2.uniform(3.4, 5.3))
        depth, stride = select_level(snap, win, budget, CELL_BYTES)
        records, cells, payload = gather_window(snap, win, depth, stride, 0x0F)
        assert len(payload) == cells * CELL_BYTES
        assert window_cost(cells, len(records), CELL_BYTES) <= budget
    for budget, (depth, stride) in frozen:
        resp = build_window_response(snap, WindowRequest(
            session=0, request=1, box=(*whole[0], *whole[1]),
            fields=0x0F, max_bytes=budget))
        assert (resp.depth, resp.stride) == (depth, stride)
        assert resp.raw_size == resp.cell_count * CELL_BYTES <= budget
        assert len(decompress_stream(resp.data)) == resp.raw_size
    hist = ", ".join(f"{k}: {v}" for k, v in depth_hist.items())
    return f"10000 cases match the enumeration oracle ({hist})"


# ---- 8: non-blocking service ----------------------------------------------


def step_rate(with_client):
    sim, h = channel_sim()
    store = SnapshotStore()
    sim.listeners.append(store.listener)
    source = LiveSource(sim, store, RunController())
    col = Collector(source, listen=("127.0.0.1", 0))
    col.start()
    sim.listeners.append(col.listener)
    conn = None
    try:
        if with_client:
            conn = socket.create_connection(("127.0.0.1", col.tcp_port), timeout=10)
            reader = P.FrameReader()
            status = None
            while status is None:
                for ftype, payload in reader.feed(conn.recv(1 << 16)):
                    status = P.decode_message(ftype, payload)
            for rid in (1, 2, 3):
                conn.sendall(P.encode_window_request(WindowRequest(
                    session=status.session, request=rid,
                    box=(0.0, 0.0, 0.0, *CHAN_DOMAIN),
                    fields=0x0F, max_bytes=10_000_000)))
            # from here on the client never drains its socket
        sim.run(5)
        t0 = time.perf_counter()
        sim.run(25)
        rate = 25.0 / (time.perf_counter() - t0)
    finally:
        if conn is not None:
            conn.close()
        col.stop()
        sim.close()
    return rate


@criterion(8, "a stalled client does not slow stepping")
def test_c08_non_blocking_service():
    alone = step_rate(with_client=False)
    loaded = step_rate(with_client=True)
    ratio = loaded / alone
    assert ratio >= 0.9, f"step rate fell to {ratio:.2f}x with a stalled client"
    return f"{alone:.2f} steps/s alone, {loaded:.2f} stalled client (x{ratio:.2f})"


# ---- 9: steering -----------------------------------------------------------


@criterion(9, "steering lands exactly at the acknowledged step")
def test_c09_steering():
    h, repo = make_setup((0.032, 0.016, 0.016), (2, 2, 1), (8, 8, 8), 1,
                         max_depth=2)
    u0, u1 = 1e-3, 2e-3
    params = FlowParams(nu=1e-6, rho=1000.0,
                        poisson=PoissonController(eps_rel=1e-3, div_target=1e-6,
                                                  max_cycles=30))
    sim = Simulation(h, repo, BoundaryConditions(inflow_velocity=u0),
                     params, workers=0)
    seen = []
    sim.listeners.append(lambda s, rep: seen.append((rep.step,
                                                     s.bcond.inflow_velocity)))
    source = LiveSource(sim, SnapshotStore(), RunController())
    sim.run(4)

    ack = source.steer(P.K_SET_INFLOW, (u1, 0.0, 0.0))
    assert ack.ok and ack.step == 5
    assert sim.bcond.inflow_velocity == u0  # queued, not yet applied
    sim.run(3)
    for step, u in seen:
        assert u == (u1 if step >= ack.step else u0), (step, u)
    for uid in h.leaf_uids():
        if h.grids[uid].bbox_min[0] == 0.0:
            assert np.all(h.data[uid].ux[1, 1:-1, 1:-1] == u1)

    before = set(h.grids)
    box = (0.0, 0.0, 0.0, 0.009, 0.016, 0.016)
    targets = [u for u in h.leaf_uids() if h.grids[u].bbox_min[0] < 0.009]
    ack2 = source.steer(P.K_REFINE_REGION, box)
    assert ack2.ok and ack2.step == sim.step_index + 1
    assert set(h.grids) == before  # still queued
    sim.step()

    r = h.config.sub_refine
    want = r[0] * r[1] * r[2]
    for uid in h.leaf_uids():
        if uid in before and uid not in targets:
            assert not h.grids[uid].children
    for uid in targets:
        g = h.grids[uid]
        assert len(g.children) == want
        mins = np.array([h.grids[c].bbox_min for c in g.children])
        maxs = np.array([h.grids[c].bbox_max for c in g.children])
        assert np.allclose(mins.min(axis=0), g.bbox_min)
        assert np.allclose(maxs.max(axis=0), g.bbox_max)
        child_vol = float((maxs - mins).prod(axis=1).sum())
        parent_vol = float(np.prod(np.array(g.bbox_max) - np.array(g.bbox_min)))
        assert np.isclose(child_vol, parent_vol)  # children tile the parent
        assert len({tuple(h.grids[c].block_coords) for c in g.children}) == want
        for c in g.children:
            cg = h.grids[c]
            assert cg.parent == uid and cg.depth == g.depth + 1
            assert c in h.data and c in h.depth_index[cg.depth]
            assert repo.entries[c].worker == repo.entries[uid].worker
    rep = sim.step()  # coarse-fine seams still step cleanly
    assert np.isfinite(rep.max_div)
    sim.close()
    return (f"inflow switched exactly at step {ack.step}; "
            f"{len(targets)} leaves split into {want} children each")


# ---- 10: porous pipeline ---------------------------------------------------


@criterion(10, "packing hits the target fraction and voxelizes exactly")
def test_c10_porous_pipeline():
    curve = parse_sieve_curve(SIEVE)
    dom = (0.08, 0.04, 0.04)
    region = placement_region((0.0, 0.0, 0.0), dom, curve)
    vol = region_box_volume(region)
    notes = []
    packs = []
    for phi, seed in ((0.35, 35), (0.40, 40)):
        pack = place_spheres(sphere_counts(curve, vol, phi), curve, region,
                             seed=seed)
        sp = pack.spheres
        centres, radii = sp[:, :3], sp[:, 3]
        gap2 = np.sum((centres[:, None, :] - centres[None, :, :]) ** 2, axis=2)
        np.fill_diagonal(gap2, np.inf)
        assert np.all(gap2 >= (radii[:, None] + radii[None, :]) ** 2), \
            f"overlap in the phi={phi} packing"
        for a in range(3):
            assert np.all(centres[:, a] - radii >= region[a] - 1e-12)
            assert np.all(centres[:, a] + radii <= region[a + 3] + 1e-12)
        achieved = float(np.sum(4.0 / 3.0 * np.pi * radii ** 3) / vol)
        assert abs(achieved - phi) <= 0.02, f"phi {phi}: achieved {achieved:.4f}"
        packs.append(sp)
        notes.append(f"phi {phi}: {len(sp)} spheres at {achieved:.3f}")

    cfg = GridConfig((0.0, 0.0, 0.0), dom, (4, 4, 4), (2, 2, 2), (16, 16, 16), 1)
    for sp in packs:
        h = build_hierarchy(cfg, 1)
        mask = voxelize(sp, h, seal=False)
        res = h.level_resolution(1)
        assert tuple(res) == (64, 64, 64)
        spacing = h.level_spacing(1)
        want = np.zeros(res, dtype=bool)
        for cx, cy, cz, r in sp:
            xs = (np.arange(res[0]) + 0.5) * spacing[0] - cx
            ys = (np.arange(res[1]) + 0.5) * spacing[1] - cy
            zs = (np.arange(res[2]) + 0.5) * spacing[2] - cz
            want |= (xs[:, None, None] ** 2 + ys[None, :, None] ** 2
                     + zs[None, None, :] ** 2) < r * r
        assert np.array_equal(mask, want), "centre-in-sphere mask mismatch"
        stamped = np.zeros(res, dtype=bool)
        s = cfg.block_size
        for uid in h.level_uids(1):
            g = h.grids[uid]
            sl = tuple(slice(g.block_coords[a] * s[a],
                             (g.block_coords[a] + 1) * s[a]) for a in range(3))
            stamped[sl] = h.data[uid].flags[1:-1, 1:-1, 1:-1] == SOLID
        assert np.array_equal(stamped, mask)
        sealed = voxelize(sp, build_hierarchy(cfg, 1), seal=True)
        assert np.all(sealed >= mask)  # sealing only ever closes cells
    return "; ".join(notes) + "; 64^3 voxel masks equal the brute-force oracle"


# ---- 11 and 12: permeability ----------------------------------------------


@pytest.fixture(scope="module")
def packed_bed():
    """One fixed packing, creeping flow, run to a settled field at two
    viscosities; shared by the permeability checks."""
    curve = parse_sieve_curve(SIEVE)
    dom = (0.048, 0.024, 0.024)
    region = placement_region((0.0, 0.0, 0.0), dom, curve)
    counts = sphere_counts(curve, region_box_volume(region), 0.35)
    pack = place_spheres(counts, curve, region, seed=5)

    def run(nu):
        h, repo = make_setup(dom, (4, 2, 2), (8, 8, 8), 1)
        voxelize(pack.spheres, h)
        params = FlowParams(nu=nu, rho=1000.0, convection=0.0, dt_max=0.05,
                            poisson=PoissonController(eps_rel=1e-4,
                                                      div_target=1e-7))
        sim = Simulation(h, repo, BoundaryConditions(inflow_velocity=1e-4),
                         params, workers=0)
        for uid in h.leaf_uids():
            h.data[uid].ux[:] = 1e-4
        sim.run(PACKED_STEPS)
        sim.close()
        return h

    return SimpleNamespace(h1=run(1e-6), h2=run(2e-6), region=region, pack=pack)


@criterion(11, "permeability is a property of the geometry")
def test_c11_permeability_physics(packed_bed):
    k1 = subdomain_permeability(packed_bed.h1, packed_bed.region, mu=1e-3)
    k2 = subdomain_permeability(packed_bed.h2, packed_bed.region, mu=2e-3)
    assert np.isfinite(k1[0]) and k1[0] > 0.0
    ratio = abs(k2[0] / k1[0] - 1.0)
    assert ratio < 0.05, f"doubled viscosity moved k_x by {ratio:.2%}"

    for uid in packed_bed.h1.grids:
        packed_bed.h1.data[uid].p += 37.5
    k1b = subdomain_permeability(packed_bed.h1, packed_bed.region, mu=1e-3)
    shift = abs(k1b[0] / k1[0] - 1.0)
    assert shift < 1e-10, f"pressure offset moved k_x by {shift:.2e}"
    return (f"k_x {k1[0]:.3e} m^2, doubled mu moves it {ratio:.2%}, "
            f"+const p moves it {shift:.1e}")


@criterion(12, "sphere-free probes read above the packed-bed mean")
def test_c12_probe_series(packed_bed):
    h = packed_bed.h1
    edge = 4.0 * max(h.level_spacing(1))  # 6 mm probe cubes
    centre = 0.012
    # placement leaves open slots along the walls; probes there see the
    # full bed pressure gradient but channel much faster flow
    open_pts = [(0.030, 0.003, centre), (0.030, centre, 0.003)]
    xs = np.linspace(0.016, 0.044, 5)
    packed_pts = ([(float(x), 0.009, centre) for x in xs]
                  + [(float(x), 0.015, centre) for x in xs])
    sp = packed_bed.pack.spheres
    for pt in open_pts:  # the cubes hold no sphere material at all
        lo, hi = np.array(pt) - edge / 2, np.array(pt) + edge / 2
        nearest = np.clip(sp[:, :3], lo, hi)
        gap = np.linalg.norm(nearest - sp[:, :3], axis=1)
        assert np.all(gap >= sp[:, 3])
    series = point_series(h, open_pts + packed_pts, edge, mu=1e-3)
    assert len(series.samples) == 12

    open_k = [s.k[0] for s in series.samples[:2]]
    packed_k = [s.k[0] for s in series.samples[2:] if s.defined(0)]
    assert all(np.isfinite(v) for v in open_k), "run-up probes undefined"
    assert len(packed_k) >= 8, "too few defined packed probes"
    packed_mean = sum(packed_k) / len(packed_k)
    assert all(v > packed_mean for v in open_k), \
        f"open probes {open_k} not above packed mean {packed_mean:.3e}"
    packed_sigma = float(np.std(packed_k))
    assert packed_sigma > 0.0
    return (f"open k_x {open_k[0]:.2e}, {open_k[1]:.2e} above packed mean "
            f"{packed_mean:.2e} (sigma {packed_sigma:.1e})")
