"""Per-block momentum and projection steps built on the kernel layer."""

from __future__ import annotations

import numpy as np

from ..exchange import FACE_AXIS, FACE_SIGN, FACES
from ..grid import FLUID, OUTFLOW, GridHierarchy
from ..kernels import (
    correct_x,
    correct_y,
    correct_z,
    divergence,
    explicit_x,
    explicit_y,
    explicit_z,
    predictor,
)
from .bc import BlockMasks, _on_domain


class Scratch:
    """Reusable full-shape temporaries; all blocks share one size."""

    def __init__(self, block_size):
        shape = tuple(n + 2 for n in block_size)
        self.hx = np.zeros(shape)
        self.hy = np.zeros(shape)
        self.hz = np.zeros(shape)


def compute_explicit(h: GridHierarchy, uid: int, nu: float, body, conv: float,
                     scratch: Scratch):
    """Convection + diffusion + body force into the scratch trio."""
    d = h.data[uid]
    dx, dy, dz = h.grids[uid].spacing
    explicit_x(d.ux, d.uy, d.uz, dx, dy, dz, nu, body[0], conv, scratch.hx)
    explicit_y(d.ux, d.uy, d.uz, dx, dy, dz, nu, body[1], conv, scratch.hy)
    explicit_z(d.ux, d.uy, d.uz, dx, dy, dz, nu, body[2], conv, scratch.hz)


def predict_block(h: GridHierarchy, uid: int, masks: BlockMasks, dt: float,
                  first: bool, scratch: Scratch):
    """Advance u in place to the tentative velocity; keep H for next step."""
    d = h.data[uid]
    predictor(d.ux, scratch.hx, d.hx, dt, masks.mux, first, d.ux)
    predictor(d.uy, scratch.hy, d.hy, dt, masks.muy, first, d.uy)
    predictor(d.uz, scratch.hz, d.hz, dt, masks.muz, first, d.uz)
    d.hx[:, :, :] = scratch.hx
    d.hy[:, :, :] = scratch.hy
    d.hz[:, :, :] = scratch.hz


def divergence_block(h: GridHierarchy, uid: int, masks: BlockMasks,
                     out: np.ndarray):
    d = h.data[uid]
    dx, dy, dz = h.grids[uid].spacing
    divergence(d.ux, d.uy, d.uz, masks.fluid, dx, dy, dz, out)


def correct_block(h: GridHierarchy, uid: int, masks: BlockMasks,
                  dt_over_rho: float):
    """Projection: subtract the pressure gradient from the masked faces.

    The kernels cover face planes 1..n.  Closing planes (n+1) are
    corrected here with the ghost pressure: on a domain outflow face
    that is the Dirichlet value, on an interior face the neighbour or
    parent value.  Same-depth neighbours compute the identical update
    for their own plane 1, so the later halo is a numeric no-op; at a
    coarse-fine seam this local update is the only one the face gets.
    The minus-side plane 1 is always kernel territory, so only domain
    outflow can require an extra minus-side pass.
    """
    d = h.data[uid]
    dx, dy, dz = h.grids[uid].spacing
    correct_x(d.ux, d.p, masks.mux, dt_over_rho, dx)
    correct_y(d.uy, d.p, masks.muy, dt_over_rho, dy)
    correct_z(d.uz, d.p, masks.muz, dt_over_rho, dz)
    spacing = (dx, dy, dz)
    comps = (d.ux, d.uy, d.uz)
    for face in FACES:
        axis = FACE_AXIS[face]
        minus = FACE_SIGN[face] < 0
        if minus and not _on_domain(h, uid, face):
            continue
        n = h.config.block_size[axis]
        sl_g = [slice(1, -1)] * 3
        sl_i = [slice(1, -1)] * 3
        sl_f = [slice(1, -1)] * 3
        sl_g[axis] = 0 if minus else n + 1
        sl_i[axis] = 1 if minus else n
        sl_f[axis] = 1 if minus else n + 1
        gf = d.flags[tuple(sl_g)]
        m = ((gf == OUTFLOW) | (gf == FLUID)) & (d.flags[tuple(sl_i)] == FLUID)
        if not m.any():
            continue
        # face gradient toward increasing coordinate, ghost value included
        hi, lo = (sl_i, sl_g) if minus else (sl_g, sl_i)
        grad = (d.p[tuple(hi)] - d.p[tuple(lo)]) / spacing[axis]
        plane = comps[axis][tuple(sl_f)]
        plane[m] -= dt_over_rho * grad[m]


def stable_dt(h: GridHierarchy, uids, nu: float, safety: float,
              dt_max: float) -> float:
    """Advective/diffusive step bound over the given blocks."""
    umax = 0.0
    dmin = np.inf
    for uid in sorted(uids):
        d = h.data[uid]
        for u in (d.ux, d.uy, d.uz):
            # np.maximum keeps NaN so a poisoned field stops the run
            umax = float(np.maximum(umax, np.abs(u[1:-1, 1:-1, 1:-1]).max()))
        dmin = min(dmin, min(h.grids[uid].spacing))
    if not np.isfinite(umax):
        return float("nan")
    adv = dmin / umax if umax > 0 else np.inf
    diff = dmin * dmin / (6.0 * nu) if nu > 0 else np.inf
    return float(safety * min(adv, diff, dt_max))
