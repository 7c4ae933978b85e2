"""Pressure Poisson solve: damped-Jacobi multigrid over the block levels.

The 7-point operator is defined per block by face transmissibilities
(1/d^2 between fluid cells, 0 at Neumann faces) plus the ghost fills
from bc.py.  Outflow Dirichlet enters affinely: with the homogeneous
fill (ghost = -interior) the face contributes -2t*p to the operator, so
the diagonal carries the doubled coupling and the constant part
2*t*p_out moves to the right-hand side once per solve (gvec).  All
multigrid levels therefore smooth the same homogeneous operator, which
keeps coarse levels in plain correction form.

A solve runs on the composite of leaf blocks (uniform hierarchies are
the common case, mixed depths appear after interactive refinement):
leaves are smoothed, their residual is restricted to the shallowest
leaf depth, a standard V-cycle handles the complete levels below, and
the correction is prolonged back.  Depth 0 is one root block and is
solved directly (sparse LU), so the cycle bottoms out exactly.

Damped Jacobi reads the full old iterate per sweep, which makes the
result independent of block visit order and hence of the partition.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..exchange import NbhRepository
from ..exchange.plan import build_exchange_plan, filter_plan, run_plan_inline
from ..grid import FLUID, OUTFLOW, GridHierarchy
from ..kernels import inject_add_cell, inject_cell, jacobi_sweep, residual, restrict_cell
from .bc import BoundaryConditions, MaskCache, fill_pressure_ghosts


class InlineDriver:
    """Runs block work and exchanges on the calling thread."""

    def __init__(self, h: GridHierarchy):
        self.h = h

    def for_each(self, uids, fn):
        for uid in sorted(uids):
            fn(uid)

    def exchange(self, plan, fields, mode="replace"):
        run_plan_inline(self.h, plan, fields=fields, mode=mode)


@dataclass
class PoissonController:
    """Stopping policy: keep cycling until the projected field will be
    divergence-free to div_target and the residual dropped by eps_rel."""

    omega: float = 0.8
    nu_pre: int = 2
    nu_post: int = 2
    eps_rel: float = 1e-4
    div_target: float = 1e-6
    max_cycles: int = 60


@dataclass
class PoissonReport:
    cycles: int
    res0: float
    res: float
    rel: float
    div_bound: float  # dt/rho * res: the divergence the correction leaves


def build_block_coeffs(flags: np.ndarray, spacing, p_out: float):
    """(ax, ay, az, diag, gvec, live) for one block from ghost-inclusive flags.

    live marks fluid cells with at least one open face; fully enclosed
    cells get an identity row and a forced-zero right-hand side so they
    stay inert instead of feeding the smoother an unsatisfiable residual.
    """
    dx, dy, dz = spacing
    t = (1.0 / (dx * dx), 1.0 / (dy * dy), 1.0 / (dz * dz))
    fl = flags == FLUID
    of = flags == OUTFLOW
    face_t = []
    face_dir = []
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        f0, f1 = fl[tuple(lo)], fl[tuple(hi)]
        o0, o1 = of[tuple(lo)], of[tuple(hi)]
        dirich = (f0 & o1) | (o0 & f1)
        open_face = (f0 & f1) | dirich
        face_t.append(t[axis] * open_face.astype(np.float64))
        face_dir.append(t[axis] * dirich.astype(np.float64))
    ax, ay, az = face_t
    s = 0.0
    extra = 0.0
    for arr, d_arr, axis in ((ax, face_dir[0], 0), (ay, face_dir[1], 1), (az, face_dir[2], 2)):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        s = s + arr[tuple(lo)] + arr[tuple(hi)]
        extra = extra + d_arr[tuple(lo)] + d_arr[tuple(hi)]
    diag = -(s + extra)
    interior_fluid = fl[1:-1, 1:-1, 1:-1]
    live = interior_fluid & (diag != 0.0)
    diag = np.where(interior_fluid, np.where(diag == 0.0, -1.0, diag), 1.0)
    gvec = np.where(interior_fluid, 2.0 * p_out * extra, 0.0)
    return (ax, ay, az, np.ascontiguousarray(diag), np.ascontiguousarray(gvec),
            np.ascontiguousarray(live.astype(np.uint8)))


class PoissonSolver:
    """Owns coefficients, scratch fields, plans, and the root LU."""

    def __init__(self, h: GridHierarchy, repo: NbhRepository,
                 bcond: BoundaryConditions, masks: MaskCache):
        self.h = h
        self.repo = repo
        self.bcond = bcond
        self.masks = masks
        self._coeffs: dict[int, tuple] = {}
        self._scratch: dict[int, SimpleNamespace] = {}
        self._plans: dict[tuple, object] = {}
        self._root_lu = None
        self._tls = threading.local()

    def invalidate(self):
        """Call after any flag or topology change."""
        self._coeffs.clear()
        self._scratch.clear()
        self._plans.clear()
        self._root_lu = None

    # -- caches ------------------------------------------------------------

    def coeffs(self, uid: int):
        c = self._coeffs.get(uid)
        if c is None:
            c = build_block_coeffs(self.h.data[uid].flags, self.h.grids[uid].spacing,
                                   float(self.bcond.outflow_pressure))
            self._coeffs[uid] = c
        return c

    def scratch(self, uid: int) -> SimpleNamespace:
        s = self._scratch.get(uid)
        if s is None:
            shape = self.h.config.block_size
            s = SimpleNamespace(rhs=np.zeros(shape), res=np.zeros(shape))
            self._scratch[uid] = s
        return s

    def _tmp(self):
        tls = self._tls
        if not hasattr(tls, "tmp"):
            shape = tuple(n + 2 for n in self.h.config.block_size)
            tls.tmp = np.zeros(shape)
            tls.full = np.zeros(shape)
        return tls

    def _plan(self, phase, depth, kinds=None):
        key = (phase, depth, kinds)
        p = self._plans.get(key)
        if p is None:
            p = build_exchange_plan(self.repo, phase, depth=depth)
            if kinds is not None:
                p = filter_plan(p, kinds)
            self._plans[key] = p
        return p

    # -- right-hand side ---------------------------------------------------

    def load_rhs(self, uid: int, div: np.ndarray, rho_over_dt: float):
        """rhs = (rho/dt) * div(u*) minus the outflow affine part."""
        sc = self.scratch(uid)
        _, _, _, _, gvec, live = self.coeffs(uid)
        np.subtract(np.where(live != 0, rho_over_dt * div, 0.0), gvec, out=sc.rhs)

    # -- ghost refresh -----------------------------------------------------

    def _refresh_level(self, driver, depth: int, homogeneous=True):
        driver.for_each(self.h.level_uids(depth),
                        lambda uid: fill_pressure_ghosts(self.h, uid, self.bcond, homogeneous))
        driver.exchange(self._plan("HORIZONTAL", depth), fields=("p",))

    def _refresh_composite(self, driver, leaf_depths, homogeneous=True):
        """Ghost consistency across mixed leaf depths via the parents."""
        depths = sorted(self.h.depth_index)
        if len(leaf_depths) == 1 and leaf_depths[0] == depths[-1]:
            self._refresh_level(driver, depths[-1], homogeneous)
            return
        for d in reversed(depths[:-1]):
            driver.exchange(self._plan("BOTTOM_UP", d), fields=("p",))
        for d in depths:
            self._refresh_level(driver, d, homogeneous)
        for d in depths[:-1]:
            plan = self._plan("TOP_DOWN", d, kinds=("inject_ghost",))
            if plan.messages:
                driver.exchange(plan, fields=("p",))

    # -- smoothing ---------------------------------------------------------

    def _sweep_blocks(self, driver, uids, omega):
        def fn(uid):
            d = self.h.data[uid]
            sc = self.scratch(uid)
            ax, ay, az, diag, _, live = self.coeffs(uid)
            tmp = self._tmp().tmp
            jacobi_sweep(d.p, sc.rhs, ax, ay, az, diag, live, omega, tmp)
            d.p[1:-1, 1:-1, 1:-1] = tmp[1:-1, 1:-1, 1:-1]

        driver.for_each(uids, fn)

    def _smooth_level(self, driver, depth, n, omega):
        for _ in range(n):
            self._refresh_level(driver, depth)
            self._sweep_blocks(driver, self.h.level_uids(depth), omega)

    def _smooth_leaves(self, driver, leaf_depths, leaves, n, omega):
        for _ in range(n):
            self._refresh_composite(driver, leaf_depths)
            self._sweep_blocks(driver, leaves, omega)

    # -- residual ----------------------------------------------------------

    def _residual_blocks(self, driver, uids):
        def fn(uid):
            d = self.h.data[uid]
            sc = self.scratch(uid)
            ax, ay, az, _, _, live = self.coeffs(uid)
            residual(d.p, sc.rhs, ax, ay, az, live, sc.res)

        driver.for_each(uids, fn)

    def residual_norm(self, uids) -> float:
        worst = 0.0
        for uid in sorted(uids):
            # np.maximum keeps NaN, so a poisoned block cannot hide
            worst = float(np.maximum(worst, np.abs(self.scratch(uid).res).max()))
        return worst

    # -- transfers ---------------------------------------------------------

    def _restrict_res_to_parents(self, driver, depth):
        """Children's res volume-averaged into the parents' rhs."""
        r = self.h.refine_factors(depth - 1)
        m = tuple(s // rr for s, rr in zip(self.h.config.block_size, r))

        def fn(parent):
            g = self.h.grids[parent]
            sc_p = self.scratch(parent)
            for child in g.children:
                cg = self.h.grids[child]
                off = tuple(cg.block_coords[a] - g.block_coords[a] * r[a] for a in range(3))
                tls = self._tmp()
                tls.full[1:-1, 1:-1, 1:-1] = self.scratch(child).res
                out = np.empty(m)
                restrict_cell(tls.full, r[0], r[1], r[2], out)
                sc_p.rhs[off[0] * m[0]:(off[0] + 1) * m[0],
                         off[1] * m[1]:(off[1] + 1) * m[1],
                         off[2] * m[2]:(off[2] + 1) * m[2]] = out

        driver.for_each(self.h.level_uids(depth - 1), fn)

    def _prolong_to_children(self, driver, depth):
        """Parent corrections added onto fluid cells of depth-d blocks."""
        r = self.h.refine_factors(depth - 1)
        m = tuple(s // rr for s, rr in zip(self.h.config.block_size, r))

        def fn(child):
            g = self.h.grids[child]
            pg = self.h.grids[g.parent]
            off = tuple(g.block_coords[a] - pg.block_coords[a] * r[a] for a in range(3))
            coarse = np.ascontiguousarray(
                self.h.data[g.parent].p[1 + off[0] * m[0]:1 + (off[0] + 1) * m[0],
                                        1 + off[1] * m[1]:1 + (off[1] + 1) * m[1],
                                        1 + off[2] * m[2]:1 + (off[2] + 1) * m[2]])
            fluid = self.masks.get(self.h, child).fluid
            inject_add_cell(coarse, r[0], r[1], r[2], fluid, self.h.data[child].p)

        driver.for_each(self.h.level_uids(depth), fn)

    # -- direct root solve -------------------------------------------------

    def _root_matrix(self):
        if self._root_lu is not None:
            return self._root_lu
        uid = self.h.root_uid
        ax, ay, az, diag, _, live = self.coeffs(uid)
        fluid = live != 0
        nx, ny, nz = self.h.config.block_size
        n = nx * ny * nz
        idx = np.arange(n).reshape(nx, ny, nz)
        rows = [idx.ravel()]
        cols = [idx.ravel()]
        vals = [np.where(fluid, diag, 1.0).ravel()]
        for arr, axis in ((ax, 0), (ay, 1), (az, 2)):
            inner = [slice(None)] * 3
            inner[axis] = slice(1, -1)  # faces between interior cells only
            t_in = arr[tuple(inner)]
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            a, b = idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()
            tv = t_in.ravel()
            rows.extend([a, b])
            cols.extend([b, a])
            vals.extend([tv, tv])
        mat = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        self._root_lu = (spla.splu(mat), fluid)
        return self._root_lu

    def _solve_root(self):
        lu, fluid = self._root_matrix()
        sc = self.scratch(self.h.root_uid)
        b = np.where(fluid, sc.rhs, 0.0).ravel()
        x = lu.solve(b)
        d = self.h.data[self.h.root_uid]
        d.p[1:-1, 1:-1, 1:-1] = np.where(fluid, x.reshape(sc.rhs.shape), 0.0)

    # -- cycles ------------------------------------------------------------

    def _v_cycle(self, driver, depth, ctrl: PoissonController):
        if depth == 0:
            self._solve_root()
            return
        self._smooth_level(driver, depth, ctrl.nu_pre, ctrl.omega)
        self._refresh_level(driver, depth)
        self._residual_blocks(driver, self.h.level_uids(depth))
        self._restrict_res_to_parents(driver, depth)
        driver.for_each(self.h.level_uids(depth - 1),
                        lambda uid: self.h.data[uid].p.fill(0.0))
        self._v_cycle(driver, depth - 1, ctrl)
        self._prolong_to_children(driver, depth)
        self._smooth_level(driver, depth, ctrl.nu_post, ctrl.omega)

    def _composite_cycle(self, driver, leaf_depths, leaves, ctrl: PoissonController):
        d_c = leaf_depths[0]
        self._smooth_leaves(driver, leaf_depths, leaves, ctrl.nu_pre, ctrl.omega)
        self._refresh_composite(driver, leaf_depths)
        self._residual_blocks(driver, leaves)
        max_d = max(leaf_depths)
        for d in range(max_d, d_c, -1):
            # carry residuals of deeper leaves down to the composite floor
            self._restrict_res_to_nonleaf(driver, d)
        saved = {}

        def stash(uid):
            sc = self.scratch(uid)
            if not self.h.grids[uid].children:
                saved[uid] = (self.h.data[uid].p[1:-1, 1:-1, 1:-1].copy(), sc.rhs.copy())
            sc.rhs[:, :, :] = sc.res
            self.h.data[uid].p.fill(0.0)

        driver.for_each(self.h.level_uids(d_c), stash)
        self._v_cycle(driver, d_c, ctrl)

        def unstash(uid):
            if uid in saved:
                p_old, rhs_old = saved[uid]
                self.h.data[uid].p[1:-1, 1:-1, 1:-1] += p_old
                self.scratch(uid).rhs[:, :, :] = rhs_old

        driver.for_each(self.h.level_uids(d_c), unstash)
        for d in range(d_c + 1, max_d + 1):
            self._cascade_correction(driver, d)
        self._smooth_leaves(driver, leaf_depths, leaves, ctrl.nu_post, ctrl.omega)

    def _restrict_res_to_nonleaf(self, driver, depth):
        r = self.h.refine_factors(depth - 1)
        m = tuple(s // rr for s, rr in zip(self.h.config.block_size, r))

        def fn(parent):
            g = self.h.grids[parent]
            if not g.children:
                return
            sc_p = self.scratch(parent)
            for child in g.children:
                cg = self.h.grids[child]
                off = tuple(cg.block_coords[a] - g.block_coords[a] * r[a] for a in range(3))
                tls = self._tmp()
                tls.full[1:-1, 1:-1, 1:-1] = self.scratch(child).res
                out = np.empty(m)
                restrict_cell(tls.full, r[0], r[1], r[2], out)
                sc_p.res[off[0] * m[0]:(off[0] + 1) * m[0],
                         off[1] * m[1]:(off[1] + 1) * m[1],
                         off[2] * m[2]:(off[2] + 1) * m[2]] = out

        driver.for_each(self.h.level_uids(depth - 1), fn)

    def _cascade_correction(self, driver, depth):
        """Push the composite correction from depth-1 down to depth.

        Non-leaf blocks above the floor hold the pure correction in p
        (the floor leaves already added theirs back); leaf children add
        the injected correction on fluid cells, non-leaf children take
        it verbatim and relay it deeper.
        """
        r = self.h.refine_factors(depth - 1)
        m = tuple(s // rr for s, rr in zip(self.h.config.block_size, r))

        def fn(child):
            g = self.h.grids[child]
            pg = self.h.grids[g.parent]
            if not pg.children:
                return
            off = tuple(g.block_coords[a] - pg.block_coords[a] * r[a] for a in range(3))
            coarse = np.ascontiguousarray(
                self.h.data[g.parent].p[1 + off[0] * m[0]:1 + (off[0] + 1) * m[0],
                                        1 + off[1] * m[1]:1 + (off[1] + 1) * m[1],
                                        1 + off[2] * m[2]:1 + (off[2] + 1) * m[2]])
            if g.children:
                inject_cell(coarse, r[0], r[1], r[2], self.h.data[child].p)
            else:
                fluid = self.masks.get(self.h, child).fluid
                inject_add_cell(coarse, r[0], r[1], r[2], fluid, self.h.data[child].p)

        driver.for_each(self.h.level_uids(depth), fn)

    # -- public entry ------------------------------------------------------

    def solve(self, driver, controller: PoissonController,
              dt_over_rho: float) -> PoissonReport:
        leaves = self.h.leaf_uids()
        leaf_depths = sorted({self.h.grids[u].depth for u in leaves})
        self._refresh_composite(driver, leaf_depths)
        self._residual_blocks(driver, leaves)
        res0 = self.residual_norm(leaves)
        if res0 == 0.0:
            return PoissonReport(0, 0.0, 0.0, 0.0, 0.0)
        res = res0
        cycles = 0
        for _ in range(controller.max_cycles):
            self._composite_cycle(driver, leaf_depths, leaves, controller)
            cycles += 1
            self._refresh_composite(driver, leaf_depths)
            self._residual_blocks(driver, leaves)
            res = self.residual_norm(leaves)
            if (res <= controller.eps_rel * res0
                    and dt_over_rho * res <= controller.div_target):
                break
        return PoissonReport(cycles, res0, res, res / res0, dt_over_rho * res)

    def finalize_ghosts(self, driver):
        """True (inhomogeneous) pressure ghosts for the gradient step."""
        leaves = self.h.leaf_uids()
        leaf_depths = sorted({self.h.grids[u].depth for u in leaves})
        self._refresh_composite(driver, leaf_depths, homogeneous=False)
