"""Time stepping and worker orchestration.

One process hosts the whole run: a coordinator thread drives the step
pipeline, block work either runs inline or on a pool of owner threads,
and ghost data always moves as explicit messages between blocks.  The
numeric result is identical for every worker count because per-block
kernels see identical ghost fills, reductions run on the coordinator in
uid order, and the smoother reads only the previous iterate.

A step advances the tentative velocity with the two-step explicit
scheme, solves the pressure system so the corrected field is divergence
free to the configured bound, and then re-restricts every field up the
hierarchy so coarse blocks always hold a current summary of their
children (viewers read those directly).
"""

from __future__ import annotations

import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from queue import Queue

import numpy as np

from .exchange import (
    FACE_AXIS,
    ExchangePlan,
    LocalTransport,
    NbhRepository,
    build_exchange_plan,
    filter_plan,
    run_plan_transport,
)
from .grid import FLUID, SOLID, GridHierarchy, refine
from .kernels import voxelize_flags
from .solver import (
    BoundaryConditions,
    InlineDriver,
    MaskCache,
    PoissonController,
    PoissonSolver,
    Scratch,
    compute_explicit,
    correct_block,
    divergence_block,
    fill_velocity_axis,
    predict_block,
    restrict_flags_majority,
    stable_dt,
    sync_flags,
    zero_solid_faces,
)

U_FIELDS = ("ux", "uy", "uz")


class SolverDiverged(RuntimeError):
    """The time integration produced unusable values; the run must stop."""


@dataclass
class FlowParams:
    """Fluid constants and stepping policy for one run."""

    nu: float = 1.0e-6
    rho: float = 1000.0
    body_force: tuple[float, float, float] = (0.0, 0.0, 0.0)
    convection: float = 1.0  # 0.0 drops the convective fluxes (creeping flow)
    safety: float = 0.4
    dt_max: float = 0.05
    poisson: PoissonController = field(default_factory=PoissonController)


@dataclass
class StepReport:
    """Everything a run log records about one completed step."""

    step: int
    time: float
    dt: float
    cycles: int
    res_rel: float
    div_bound: float
    max_div: float
    umax: float
    wall_ms: float


class ThreadedDriver:
    """Runs block work on one thread per worker, exchanges over queues.

    Phases are strictly sequential: the coordinator hands every worker
    its share, waits for all of them, then moves on, so no two phases
    ever touch the same block concurrently.
    """

    def __init__(self, h: GridHierarchy, repo: NbhRepository, n_workers: int):
        self.h = h
        self.repo = repo
        self.n_workers = n_workers
        self.transport = LocalTransport(n_workers)
        self._tasks: list[Queue] = [Queue() for _ in range(n_workers)]
        self._done: Queue = Queue()
        self._threads = [
            threading.Thread(target=self._loop, args=(r,), daemon=True)
            for r in range(n_workers)
        ]
        for t in self._threads:
            t.start()

    def _loop(self, rank: int):
        while True:
            job = self._tasks[rank].get()
            if job is None:
                return
            try:
                job(rank)
                self._done.put(None)
            except BaseException as exc:  # surfaced by _dispatch
                self._done.put(exc)

    def _dispatch(self, job):
        for q in self._tasks:
            q.put(job)
        first_error = None
        for _ in range(self.n_workers):
            err = self._done.get()
            if err is not None and first_error is None:
                first_error = err
        if first_error is not None:
            raise first_error

    def for_each(self, uids, fn):
        by_rank: dict[int, list[int]] = defaultdict(list)
        for uid in sorted(uids):
            by_rank[self.repo.worker_of(uid)].append(uid)

        def job(rank):
            for uid in by_rank.get(rank, ()):
                fn(uid)

        self._dispatch(job)

    def exchange(self, plan: ExchangePlan, fields, mode="replace"):
        def job(rank):
            run_plan_transport(self.h, plan, self.transport, rank,
                               self.repo.worker_of, fields=fields, mode=mode)

        self._dispatch(job)

    def close(self):
        for q in self._tasks:
            q.put(None)
        for t in self._threads:
            t.join(timeout=5.0)
        self.transport.close()


def _box_overlap(bmin, bmax, box) -> bool:
    for a in range(3):
        if bmax[a] <= box[a] or bmin[a] >= box[a + 3]:
            return False
    return True


class Simulation:
    """Owns one flow problem: grids, topology, parameters, and the solve.

    ``workers=0`` runs every phase inline on the calling thread; any
    positive count spawns that many owner threads.  Steering commands
    queue up from any thread and apply atomically at the next step
    boundary.  The specimen (solid flags) must be in place before
    construction; later geometry changes go through ``queue_refine``.
    """

    def __init__(self, h: GridHierarchy, repo: NbhRepository,
                 bcond: BoundaryConditions, params: FlowParams | None = None,
                 workers: int = 0, spheres: np.ndarray | None = None):
        self.h = h
        self.repo = repo
        self.bcond = bcond
        self.params = params if params is not None else FlowParams()
        self.spheres = spheres
        self.masks = MaskCache()
        self.solver = PoissonSolver(h, repo, bcond, self.masks)
        self.driver = (ThreadedDriver(h, repo, workers) if workers > 0
                       else InlineDriver(h))
        self.step_index = 0
        self.time = 0.0
        self.listeners: list = []
        self._euler_restart = True  # no history yet: first step is one-term
        self._pending: list[tuple] = []
        self._lock = threading.Lock()
        self._plans: dict[tuple, ExchangePlan] = {}
        self._tls = threading.local()
        sync_flags(h, repo, bcond)
        self._velocity_refresh(skip_outflow_normal=False)

    # -- plumbing ----------------------------------------------------------

    def _plan(self, phase, depth, axis=None, kinds=None,
              protect_leaf_faces=False) -> ExchangePlan:
        key = (phase, depth, axis, kinds, protect_leaf_faces)
        plan = self._plans.get(key)
        if plan is None:
            plan = build_exchange_plan(self.repo, phase, depth=depth)
            if kinds is not None:
                plan = filter_plan(plan, kinds)
            msgs = plan.messages
            if axis is not None:
                msgs = [m for m in msgs if FACE_AXIS[m.face] == axis]
            if protect_leaf_faces:
                # a non-leaf holds restricted summaries; at a seam its halo
                # would overwrite the leaf's freshly corrected closing plane
                msgs = [m for m in msgs
                        if not (self.h.grids[m.source].children
                                and not self.h.grids[m.target].children)]
            plan = ExchangePlan(phase=plan.phase, messages=msgs)
            self._plans[key] = plan
        return plan

    def _scratch(self) -> Scratch:
        tls = self._tls
        if not hasattr(tls, "scratch"):
            tls.scratch = Scratch(self.h.config.block_size)
            tls.div = np.zeros(self.h.config.block_size)
        return tls.scratch

    def _div_buf(self) -> np.ndarray:
        self._scratch()
        return self._tls.div

    def _velocity_refresh(self, skip_outflow_normal: bool):
        """Restriction, boundary fills, halos, and coarse-fine ghosts.

        Mirrors the pressure refresh: parents first receive current
        child data, every depth then runs the three fill+halo sweeps,
        and finally fine blocks at coarse-fine seams take ghost values
        from their parents.

        With ``skip_outflow_normal`` the refresh runs in its
        post-correction form: every face plane the projection wrote
        (outflow closing planes and both sides of coarse-fine seams)
        keeps its corrected value, so the divergence of each leaf cell
        stays tied to the pressure residual.  Ghost entries those
        writes would have updated are refilled at the next step start.
        """
        depths = sorted(self.h.depth_index)
        for d in reversed(depths[:-1]):
            self.driver.exchange(self._plan("BOTTOM_UP", d), fields=U_FIELDS)
        for d in depths:
            uids = self.h.level_uids(d)
            self.driver.for_each(
                uids, lambda uid: zero_solid_faces(self.h.data[uid],
                                                   self.masks.get(self.h, uid)))
            for axis in range(3):
                self.driver.for_each(
                    uids, lambda uid, a=axis: fill_velocity_axis(
                        self.h, uid, a, self.bcond, skip_outflow_normal))
                plan = self._plan("HORIZONTAL", d, axis=axis,
                                  protect_leaf_faces=skip_outflow_normal)
                if plan.messages:
                    self.driver.exchange(plan, fields=U_FIELDS)
        # after the correction the closing planes at coarse-fine seams
        # hold freshly corrected faces; refresh only true ghost entries
        mode = "ghost_only" if skip_outflow_normal else "replace"
        for d in depths[:-1]:
            plan = self._plan("TOP_DOWN", d, kinds=("inject_ghost",))
            if plan.messages:
                self.driver.exchange(plan, fields=U_FIELDS, mode=mode)

    def _restrict_pressure(self):
        depths = sorted(self.h.depth_index)
        for d in reversed(depths[:-1]):
            self.driver.exchange(self._plan("BOTTOM_UP", d), fields=("p",))

    # -- steering ----------------------------------------------------------

    def queue_refine(self, box):
        """Split every leaf overlapping box (x0,y0,z0,x1,y1,z1) one level."""
        with self._lock:
            self._pending.append(("refine", tuple(float(v) for v in box)))

    def queue_param(self, name: str, value: float):
        if name not in ("nu", "inflow_velocity"):
            raise ValueError(f"unsteerable parameter {name!r}")
        with self._lock:
            self._pending.append((name, float(value)))

    def _apply_pending(self):
        with self._lock:
            cmds, self._pending = self._pending, []
        for kind, value in cmds:
            if kind == "refine":
                self._refine_box(value)
            elif kind == "nu":
                self.params.nu = value
            elif kind == "inflow_velocity":
                self.bcond = replace(self.bcond, inflow_velocity=value)
                self.solver.bcond = self.bcond

    def _refine_box(self, box):
        targets = [
            uid for uid in self.h.leaf_uids()
            if self.h.grids[uid].depth < self.h.config.max_depth
            and _box_overlap(self.h.grids[uid].bbox_min,
                             self.h.grids[uid].bbox_max, box)
        ]
        if not targets:
            return
        for uid in sorted(targets):
            worker = self.repo.worker_of(uid)
            for child in refine(self.h, uid):
                cg = self.h.grids[child]
                self.repo.register(child, cg.bbox_min, cg.bbox_max, cg.depth,
                                   uid, worker)
                if self.spheres is not None:
                    # sharpen the inherited surface, but keep inherited
                    # solids: cells closed for connectivity stay closed
                    interior = self.h.data[child].flags[1:-1, 1:-1, 1:-1]
                    inherited = interior == SOLID
                    fresh = np.full(interior.shape, FLUID, dtype=np.uint8)
                    voxelize_flags(*cg.bbox_min, *cg.spacing, self.spheres, fresh)
                    interior[:, :, :] = np.where(
                        inherited | (fresh == SOLID), SOLID, FLUID)
        for d in sorted(self.h.depth_index, reverse=True):
            for uid in self.h.level_uids(d):
                if self.h.grids[uid].children:
                    restrict_flags_majority(self.h, uid)
        sync_flags(self.h, self.repo, self.bcond)
        self.masks.invalidate()
        self.solver.invalidate()
        self._plans.clear()
        self._euler_restart = True  # new blocks carry no step history

    # -- stepping ----------------------------------------------------------

    def step(self) -> StepReport:
        t0 = time.perf_counter()
        self._apply_pending()
        p = self.params
        leaves = self.h.leaf_uids()
        dt = stable_dt(self.h, leaves, p.nu, p.safety, p.dt_max)
        if not np.isfinite(dt) or dt <= 0.0:
            raise SolverDiverged(f"unusable time step {dt} at step {self.step_index}")

        self._velocity_refresh(skip_outflow_normal=False)
        first = self._euler_restart

        def predict(uid):
            scratch = self._scratch()
            compute_explicit(self.h, uid, p.nu, p.body_force, p.convection, scratch)
            predict_block(self.h, uid, self.masks.get(self.h, uid), dt, first,
                          scratch)

        self.driver.for_each(leaves, predict)
        self._euler_restart = False
        self._velocity_refresh(skip_outflow_normal=False)

        rho_over_dt = p.rho / dt

        def load(uid):
            div = self._div_buf()
            divergence_block(self.h, uid, self.masks.get(self.h, uid), div)
            self.solver.load_rhs(uid, div, rho_over_dt)

        self.driver.for_each(leaves, load)
        report = self.solver.solve(self.driver, p.poisson, dt / p.rho)
        if not np.isfinite(report.res):
            raise SolverDiverged(
                f"pressure residual {report.res} at step {self.step_index}")
        self.solver.finalize_ghosts(self.driver)

        dt_over_rho = dt / p.rho
        self.driver.for_each(
            leaves, lambda uid: correct_block(self.h, uid,
                                              self.masks.get(self.h, uid),
                                              dt_over_rho))
        self._velocity_refresh(skip_outflow_normal=True)
        self._restrict_pressure()

        max_div = 0.0
        umax = 0.0
        div = np.zeros(self.h.config.block_size)
        for uid in sorted(leaves):
            divergence_block(self.h, uid, self.masks.get(self.h, uid), div)
            # np.maximum keeps NaN so the finiteness check below works
            max_div = float(np.maximum(max_div, np.abs(div).max()))
            d = self.h.data[uid]
            for u in (d.ux, d.uy, d.uz):
                umax = float(np.maximum(umax, np.abs(u[1:-1, 1:-1, 1:-1]).max()))
        if not (np.isfinite(max_div) and np.isfinite(umax)):
            raise SolverDiverged(f"non-finite field at step {self.step_index}")

        self.step_index += 1
        self.time += dt
        out = StepReport(
            step=self.step_index,
            time=self.time,
            dt=dt,
            cycles=report.cycles,
            res_rel=report.rel,
            div_bound=report.div_bound,
            max_div=max_div,
            umax=umax,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )
        for fn in self.listeners:
            fn(self, out)
        return out

    def run(self, n_steps: int) -> list[StepReport]:
        return [self.step() for _ in range(n_steps)]

    def close(self):
        if isinstance(self.driver, ThreadedDriver):
            self.driver.close()
