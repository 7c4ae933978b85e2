"""Boundary conditions and flag plumbing.

Interior cells are FLUID or SOLID; the six domain faces carry their
condition kind in the ghost layer flags (INFLOW, OUTFLOW, WALL, SLIP),
so every fill below is driven purely by the ghost flags of the block it
touches.  Velocity fills run as three axis sweeps interleaved with the
matching halo sweeps: each sweep writes its two ghost planes over the
full transverse extent, so edge ghost cells end up with mirror-of-mirror
values that are identical no matter how the domain is split into blocks.

Velocity conventions per face kind (n = normal, t = tangential):
  inflow   n on the face = profile, t ghost mirrored to zero at the face
  outflow  zero gradient for n and t
  wall     n on the face = 0, t ghost mirrored to zero (no slip)
  slip     n on the face = 0, t ghost copied (symmetry)
Pressure is Neumann everywhere except outflow, which is Dirichlet via
the affine ghost fill 2*p_out - p_interior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exchange import FACES, FACE_AXIS, FACE_SIGN, NbhRepository
from ..exchange.plan import build_exchange_plan, filter_plan, run_plan_inline
from ..grid import (
    FLUID,
    INFLOW,
    OUTFLOW,
    SLIP,
    SOLID,
    WALL,
    ConfigError,
    GridHierarchy,
)

KIND_CODES = {"inflow": INFLOW, "outflow": OUTFLOW, "wall": WALL, "slip": SLIP}
FACE_ATTRS = ("x_minus", "x_plus", "y_minus", "y_plus", "z_minus", "z_plus")
# attribute order matches FACES = (W, E, S, N, B, T)


@dataclass(frozen=True)
class BoundaryConditions:
    """Domain-face kinds plus the inflow/outflow parameters."""

    x_minus: str = "inflow"
    x_plus: str = "outflow"
    y_minus: str = "wall"
    y_plus: str = "wall"
    z_minus: str = "wall"
    z_plus: str = "wall"
    inflow_velocity: float = 1.0
    inflow_profile: str = "uniform"  # uniform | parabolic_y
    outflow_pressure: float = 0.0

    def __post_init__(self):
        for attr in FACE_ATTRS:
            kind = getattr(self, attr)
            if kind not in KIND_CODES:
                raise ConfigError(f"unknown boundary kind {kind!r} on {attr}")
        if self.inflow_profile not in ("uniform", "parabolic_y"):
            raise ConfigError(f"unknown inflow profile {self.inflow_profile!r}")

    def kind(self, face: str) -> str:
        return getattr(self, FACE_ATTRS[FACES.index(face)])


# ---- flags ---------------------------------------------------------------


def _on_domain(h: GridHierarchy, uid: int, face: str) -> bool:
    g = h.grids[uid]
    axis = FACE_AXIS[face]
    tol = 1e-9 * h.config.extent[axis]
    if FACE_SIGN[face] < 0:
        return abs(g.bbox_min[axis] - h.config.domain_min[axis]) <= tol
    return abs(g.bbox_max[axis] - h.config.domain_max[axis]) <= tol


def _ghost_plane(shape_arr, face):
    """Index tuple selecting one full ghost plane of a block array."""
    axis = FACE_AXIS[face]
    sl = [slice(None)] * 3
    sl[axis] = 0 if FACE_SIGN[face] < 0 else shape_arr.shape[axis] - 1
    return tuple(sl)


def set_domain_flag_ghosts(h: GridHierarchy, bcond: BoundaryConditions, uids=None):
    for uid in (h.grids if uids is None else uids):
        d = h.data[uid]
        for face in FACES:
            if _on_domain(h, uid, face):
                d.flags[_ghost_plane(d.flags, face)] = KIND_CODES[bcond.kind(face)]


def restrict_flags_majority(h: GridHierarchy, parent_uid: int):
    """Parent interior flags from children: SOLID on strict majority."""
    g = h.grids[parent_uid]
    r = h.refine_factors(g.depth)
    s = h.config.block_size
    m = tuple(s[a] // r[a] for a in range(3))
    counts = np.zeros(s, dtype=np.int32)
    for child in g.children:
        cg = h.grids[child]
        off = tuple(cg.block_coords[a] - g.block_coords[a] * r[a] for a in range(3))
        solid = (h.data[child].flags[1:-1, 1:-1, 1:-1] == SOLID).astype(np.int32)
        pooled = solid.reshape(m[0], r[0], m[1], r[1], m[2], r[2]).sum(axis=(1, 3, 5))
        counts[off[0] * m[0]:(off[0] + 1) * m[0],
               off[1] * m[1]:(off[1] + 1) * m[1],
               off[2] * m[2]:(off[2] + 1) * m[2]] = pooled
    half = (r[0] * r[1] * r[2]) / 2.0
    interior = h.data[parent_uid].flags[1:-1, 1:-1, 1:-1]
    interior[:, :, :] = np.where(counts > half, SOLID, FLUID).astype(np.uint8)


def assign_global_solids(h: GridHierarchy, solid_mask: np.ndarray, depth: int):
    """Write a whole-domain solid mask into one depth, restrict upward.

    solid_mask is boolean over the global cell lattice of `depth`; every
    shallower depth gets majority-restricted flags so coarse operators
    see a consistent specimen.
    """
    s = h.config.block_size
    lat = h.level_resolution(depth)
    if tuple(solid_mask.shape) != tuple(lat):
        raise ConfigError(f"solid mask shape {solid_mask.shape} != lattice {lat}")
    for uid in h.level_uids(depth):
        g = h.grids[uid]
        sl = tuple(slice(g.block_coords[a] * s[a], (g.block_coords[a] + 1) * s[a])
                   for a in range(3))
        interior = h.data[uid].flags[1:-1, 1:-1, 1:-1]
        interior[:, :, :] = np.where(solid_mask[sl], SOLID, FLUID).astype(np.uint8)
    for d in range(depth - 1, -1, -1):
        for uid in h.level_uids(d):
            restrict_flags_majority(h, uid)


def sync_flags(h: GridHierarchy, repo: NbhRepository, bcond: BoundaryConditions):
    """Make every block's ghost flags consistent with its surroundings.

    Order: same-depth halos per depth, coarse-fine ghost injection from
    parents (shallow to deep), then domain kinds on top.
    """
    for d in sorted(h.depth_index):
        run_plan_inline(h, build_exchange_plan(repo, "HORIZONTAL", depth=d), fields=("flags",))
        if d + 1 in h.depth_index:
            plan = filter_plan(build_exchange_plan(repo, "TOP_DOWN", depth=d), ("inject_ghost",))
            run_plan_inline(h, plan, fields=("flags",))
    set_domain_flag_ghosts(h, bcond)


# ---- masks ---------------------------------------------------------------


@dataclass
class BlockMasks:
    """Derived per-block masks; rebuild whenever flags change."""

    mux: np.ndarray  # face between two FLUID cells (predict/correct)
    muy: np.ndarray
    muz: np.ndarray
    szx: np.ndarray  # face adjacent to at least one SOLID cell (forced 0)
    szy: np.ndarray
    szz: np.ndarray
    fluid: np.ndarray  # interior-shaped uint8 for the pressure kernels


def build_block_masks(flags: np.ndarray) -> BlockMasks:
    fl = flags == FLUID
    so = flags == SOLID

    def active(axis):
        m = np.zeros(flags.shape, dtype=np.uint8)
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(1, -1)
        m[1:-1, 1:-1, 1:-1] = (fl[tuple(lo)] & fl[tuple(hi)]).astype(np.uint8)
        return m

    def solid_adjacent(axis):
        m = np.zeros(flags.shape, dtype=bool)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        out = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        out[axis] = slice(1, None)
        m[tuple(out)] = so[tuple(lo)] | so[tuple(hi)]
        return m

    return BlockMasks(
        mux=active(0), muy=active(1), muz=active(2),
        szx=solid_adjacent(0), szy=solid_adjacent(1), szz=solid_adjacent(2),
        fluid=np.ascontiguousarray(fl[1:-1, 1:-1, 1:-1].astype(np.uint8)),
    )


class MaskCache:
    """uid -> BlockMasks, dropped wholesale when flags change."""

    def __init__(self):
        self._masks: dict[int, BlockMasks] = {}

    def get(self, h: GridHierarchy, uid: int) -> BlockMasks:
        m = self._masks.get(uid)
        if m is None:
            m = build_block_masks(h.data[uid].flags)
            self._masks[uid] = m
        return m

    def invalidate(self):
        self._masks.clear()


# ---- velocity fills ------------------------------------------------------


def _inflow_plane(h: GridHierarchy, uid: int, face: str, bcond: BoundaryConditions):
    """Inflow speed over one ghost-inclusive transverse plane."""
    g = h.grids[uid]
    s = h.config.block_size
    axis = FACE_AXIS[face]
    t1, t2 = [a for a in range(3) if a != axis]
    if bcond.inflow_profile == "uniform":
        return np.full((s[t1] + 2, s[t2] + 2), float(bcond.inflow_velocity))
    # parabolic across the whole domain's y extent, uniform in z
    sp = g.spacing
    y = g.bbox_min[1] + (np.arange(s[1] + 2) - 0.5) * sp[1]
    y0, y1 = h.config.domain_min[1], h.config.domain_max[1]
    eta = np.clip((y - y0) / (y1 - y0), 0.0, 1.0)
    prof = 6.0 * float(bcond.inflow_velocity) * eta * (1.0 - eta)
    if axis == 0:
        return np.broadcast_to(prof[:, None], (s[1] + 2, s[2] + 2)).copy()
    raise ConfigError("parabolic_y inflow profile requires an x-axis inflow face")


def _plane_ix(nvals, axis, idx):
    sl = [slice(None)] * 3
    sl[axis] = idx
    return tuple(sl)


def fill_velocity_axis(h: GridHierarchy, uid: int, axis: int,
                       bcond: BoundaryConditions, skip_outflow_normal=False):
    """Domain-face velocity fills for one sweep axis on one block."""
    d = h.data[uid]
    s = h.config.block_size
    comps = (d.ux, d.uy, d.uz)
    normal = comps[axis]
    n = s[axis]
    for face in FACES:
        if FACE_AXIS[face] != axis or not _on_domain(h, uid, face):
            continue
        gf = d.flags[_ghost_plane(d.flags, face)]
        is_in = gf == INFLOW
        is_out = gf == OUTFLOW
        is_wall = gf == WALL
        is_slip = gf == SLIP
        if FACE_SIGN[face] < 0:
            face_ix, ghost_ix = 1, 0
            int1_ix, int2_ix = 1, 2  # interior planes nearest the face
        else:
            face_ix, ghost_ix = n + 1, None  # no ghost beyond the closing plane
            int1_ix, int2_ix = n, n - 1
        P = lambda i: _plane_ix(s, axis, i)
        fp = normal[P(face_ix)]
        if is_in.any():
            prof = _inflow_plane(h, uid, face, bcond)
            sign = 1.0 if FACE_SIGN[face] < 0 else -1.0  # into the domain
            fp[is_in] = sign * prof[is_in]
        if not skip_outflow_normal and is_out.any():
            fp[is_out] = normal[P(int1_ix if face_ix != int1_ix else int2_ix)][is_out]
        np.putmask(fp, is_wall | is_slip, 0.0)
        if ghost_ix is not None:
            gp = normal[P(ghost_ix)]
            gp[is_in] = fp[is_in]
            gp[is_out] = fp[is_out]
            m = is_wall | is_slip
            gp[m] = -normal[P(int2_ix)][m]
        # tangential components: ghost plane mirror/copy
        for t_axis in range(3):
            if t_axis == axis:
                continue
            tang = comps[t_axis]
            g_ix = 0 if FACE_SIGN[face] < 0 else n + 1
            i_ix = 1 if FACE_SIGN[face] < 0 else n
            gp = tang[P(g_ix)]
            ip = tang[P(i_ix)]
            m_mirror = is_in | is_wall
            m_copy = is_out | is_slip
            gp[m_mirror] = -ip[m_mirror]
            gp[m_copy] = ip[m_copy]


def zero_solid_faces(d, masks: BlockMasks):
    d.ux[masks.szx] = 0.0
    d.uy[masks.szy] = 0.0
    d.uz[masks.szz] = 0.0


def apply_velocity_bc(h: GridHierarchy, repo: NbhRepository, depth: int,
                      bcond: BoundaryConditions, cache: MaskCache,
                      skip_outflow_normal=False, plans=None):
    """Full velocity boundary pass for one depth, halos included."""
    uids = h.level_uids(depth)
    for uid in uids:
        zero_solid_faces(h.data[uid], cache.get(h, uid))
    if plans is None:
        plan = build_exchange_plan(repo, "HORIZONTAL", depth=depth)
        from ..exchange.plan import message_groups

        groups = message_groups(plan)
        by_axis = {FACE_AXIS[g[0].face]: g for g in groups}
    else:
        by_axis = plans
    from ..exchange.plan import apply_payload, extract_payload

    for axis in range(3):
        for uid in uids:
            fill_velocity_axis(h, uid, axis, bcond, skip_outflow_normal)
        for msg in by_axis.get(axis, ()):
            for f in ("ux", "uy", "uz"):
                apply_payload(h, msg, f, extract_payload(h, msg, f))


# ---- pressure fills ------------------------------------------------------


def fill_pressure_ghosts(h: GridHierarchy, uid: int, bcond: BoundaryConditions,
                         homogeneous: bool):
    """Domain ghost fill for p: Neumann copy, outflow Dirichlet affine."""
    d = h.data[uid]
    s = h.config.block_size
    p_out = 0.0 if homogeneous else float(bcond.outflow_pressure)
    for face in FACES:
        if not _on_domain(h, uid, face):
            continue
        axis = FACE_AXIS[face]
        g_ix = 0 if FACE_SIGN[face] < 0 else s[axis] + 1
        i_ix = 1 if FACE_SIGN[face] < 0 else s[axis]
        gf = d.flags[_ghost_plane(d.flags, face)]
        gp = d.p[_plane_ix(s, axis, g_ix)]
        ip = d.p[_plane_ix(s, axis, i_ix)]
        neumann = (gf == INFLOW) | (gf == WALL) | (gf == SLIP) | (gf == SOLID)
        dirich = gf == OUTFLOW
        gp[neumann] = ip[neumann]
        gp[dirich] = 2.0 * p_out - ip[dirich]
