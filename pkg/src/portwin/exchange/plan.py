"""Deterministic message plans for the three communication phases.

HORIZONTAL moves one interior layer into the facing neighbour's ghost
layer between same-depth blocks.  BOTTOM_UP restricts child interiors
into the parent's covering sub-block (volume average for cell fields,
transverse-average face planes for velocity components).  TOP_DOWN
carries parent values to children: whole-sub-block injection (used to
prolong coarse corrections) and ghost-layer injection for child faces
that lie on a coarse-fine interface.

Messages are value objects; `extract_payload` and `apply_payload` turn
them into concrete array traffic against a hierarchy.  Halo messages
copy the full transverse extent of the layer (ghost corners included)
and run as three ordered sweeps, x then y then z, so edge ghost cells
pick up diagonal-neighbour data by relay; convection stencils read those
corners.  Within one sweep sources are only read on planes no message of
that sweep writes, so application order inside a sweep never matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..grid import FIELD_NAMES, GridHierarchy
from ..kernels import (
    inject_add_cell,
    inject_cell,
    restrict_cell,
    restrict_face_x,
    restrict_face_y,
    restrict_face_z,
)
from .nbh import FACES, FACE_AXIS, FACE_SIGN, NbhRepository

PHASES = ("BOTTOM_UP", "HORIZONTAL", "TOP_DOWN")


@dataclass(frozen=True, order=True)
class Message:
    source: int
    target: int
    kind: str  # halo | restrict | inject | inject_ghost
    face: str | None = None
    child_offset: tuple[int, int, int] | None = None


@dataclass
class ExchangePlan:
    phase: str
    messages: list[Message]


def build_exchange_plan(repo: NbhRepository, phase: str, depth: int | None = None) -> ExchangePlan:
    """All messages of one phase, sorted by (source, target) uid.

    With a depth, HORIZONTAL covers pairs at that depth and the vertical
    phases cover the depth-d parent to depth-(d+1) child links; without
    one, every depth is included.
    """
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    depths = repo.depths if depth is None else [depth]
    messages: list[Message] = []
    if phase == "HORIZONTAL":
        for d in depths:
            for uid in repo.uids_at_depth(d):
                entry = repo.entries[uid]
                for face in FACES:
                    nb = entry.neighbors[face]
                    if nb is not None:
                        # neighbour's layer fills this block's ghost face
                        messages.append(Message(source=nb, target=uid, kind="halo", face=face))
    else:
        children_by_parent: dict[int, list[int]] = {}
        for uid, entry in repo.entries.items():
            if entry.parent is not None and entry.depth - 1 in depths:
                children_by_parent.setdefault(entry.parent, []).append(uid)
        for parent, kids in children_by_parent.items():
            for child in kids:
                if phase == "BOTTOM_UP":
                    messages.append(Message(source=child, target=parent, kind="restrict"))
                else:
                    messages.append(Message(source=parent, target=child, kind="inject"))
                    for face in FACES:
                        nb = repo.query_neighbor(child, face)
                        if nb is not None and repo.entries[nb].depth < repo.entries[child].depth:
                            messages.append(
                                Message(source=parent, target=child, kind="inject_ghost", face=face)
                            )
    messages.sort()
    return ExchangePlan(phase=phase, messages=messages)


# ---- geometry helpers ----------------------------------------------------


def _child_offset(h: GridHierarchy, child_uid: int) -> tuple[int, int, int]:
    g = h.grids[child_uid]
    parent = h.grids[g.parent]
    r = h.refine_factors(parent.depth)
    return tuple(g.block_coords[a] - parent.block_coords[a] * r[a] for a in range(3))


def message_groups(plan: ExchangePlan) -> list[list[Message]]:
    """Ordered execution groups: halo sweeps split by axis, rest in one."""
    halos: list[list[Message]] = [[], [], []]
    rest: list[Message] = []
    for msg in plan.messages:
        if msg.kind == "halo":
            halos[FACE_AXIS[msg.face]].append(msg)
        else:
            rest.append(msg)
    return [g for g in halos if g] + ([rest] if rest else [])


def filter_plan(plan: ExchangePlan, kinds) -> ExchangePlan:
    """Plan reduced to the given message kinds."""
    return ExchangePlan(plan.phase, [m for m in plan.messages if m.kind in kinds])


def _halo_slices(s, face):
    """(source slice, target slice) for one ghost-layer face message."""
    axis = FACE_AXIS[face]
    sl_src = [slice(0, n + 2) for n in s]
    sl_tgt = [slice(0, n + 2) for n in s]
    if FACE_SIGN[face] > 0:
        sl_src[axis] = slice(1, 2)
        sl_tgt[axis] = slice(s[axis] + 1, s[axis] + 2)
    else:
        sl_src[axis] = slice(s[axis], s[axis] + 1)
        sl_tgt[axis] = slice(0, 1)
    return tuple(sl_src), tuple(sl_tgt)


def _parent_sub_cells(s, r, off):
    m = tuple(s[a] // r[a] for a in range(3))
    return tuple(slice(1 + off[a] * m[a], 1 + (off[a] + 1) * m[a]) for a in range(3)), m


def extract_payload(h: GridHierarchy, msg: Message, field: str) -> np.ndarray:
    """Copy the source-side data of one message for one field."""
    s = h.config.block_size
    src = h.data[msg.source].field(field)
    if msg.kind == "halo":
        sl, _ = _halo_slices(s, msg.face)
        return np.ascontiguousarray(src[sl])
    if msg.kind == "restrict":
        parent_depth = h.grids[msg.target].depth
        r = h.refine_factors(parent_depth)
        m = tuple(s[a] // r[a] for a in range(3))
        if field == "ux":
            out = np.empty((m[0] + 1, m[1], m[2]))
            restrict_face_x(src, r[0], r[1], r[2], out)
        elif field == "uy":
            out = np.empty((m[0], m[1] + 1, m[2]))
            restrict_face_y(src, r[0], r[1], r[2], out)
        elif field == "uz":
            out = np.empty((m[0], m[1], m[2] + 1))
            restrict_face_z(src, r[0], r[1], r[2], out)
        else:
            out = np.empty(m)
            restrict_cell(src, r[0], r[1], r[2], out)
        return out
    if msg.kind == "inject":
        off = _child_offset(h, msg.target)
        sub, _ = _parent_sub_cells(s, h.refine_factors(h.grids[msg.source].depth), off)
        return np.ascontiguousarray(src[sub])
    if msg.kind == "inject_ghost":
        off = _child_offset(h, msg.target)
        r = h.refine_factors(h.grids[msg.source].depth)
        m = tuple(s[a] // r[a] for a in range(3))
        axis = FACE_AXIS[msg.face]
        sl = [slice(1 + off[a] * m[a], 1 + (off[a] + 1) * m[a]) for a in range(3)]
        # parent's own ghost layer covers the region beyond the shared face
        sl[axis] = slice(0, 1) if FACE_SIGN[msg.face] < 0 else slice(s[axis] + 1, s[axis] + 2)
        return np.ascontiguousarray(src[tuple(sl)])
    raise ValueError(f"unknown message kind {msg.kind!r}")


def apply_payload(h: GridHierarchy, msg: Message, field: str, payload: np.ndarray,
                  mode: str = "replace"):
    """Write one message's payload into the target block."""
    s = h.config.block_size
    tgt = h.data[msg.target].field(field)
    if msg.kind == "halo":
        _, sl = _halo_slices(s, msg.face)
        tgt[sl] = payload
        return
    if msg.kind == "restrict":
        off = _child_offset(h, msg.source)
        r = h.refine_factors(h.grids[msg.target].depth)
        sub, m = _parent_sub_cells(s, r, off)
        sl = list(sub)
        if field in ("ux", "uy", "uz"):
            axis = {"ux": 0, "uy": 1, "uz": 2}[field]
            sl[axis] = slice(sl[axis].start, sl[axis].stop + 1)
        tgt[tuple(sl)] = payload
        return
    if msg.kind == "inject":
        r = h.refine_factors(h.grids[msg.source].depth)
        if mode == "replace":
            inject_cell(payload, r[0], r[1], r[2], tgt)
        elif mode == "add_fluid":
            from ..grid import FLUID

            flags = h.data[msg.target].flags[1:-1, 1:-1, 1:-1]
            fluid = (flags == FLUID).astype(np.uint8)
            inject_add_cell(payload, r[0], r[1], r[2], fluid, tgt)
        else:
            raise ValueError(f"unknown apply mode {mode!r}")
        return
    if msg.kind == "inject_ghost":
        axis = FACE_AXIS[msg.face]
        if (mode == "ghost_only" and FACE_SIGN[msg.face] > 0
                and field == ("ux", "uy", "uz")[axis]):
            # plane s+1 of the normal component is a real face, not a
            # ghost; a post-correction refresh must leave it alone
            return
        r = h.refine_factors(h.grids[msg.source].depth)
        rt = [r[0], r[1], r[2]]
        rt[axis] = 1
        expanded = payload
        for a in range(3):
            if rt[a] > 1:
                expanded = np.repeat(expanded, rt[a], axis=a)
        sl = [slice(1, n + 1) for n in s]
        sl[axis] = slice(0, 1) if FACE_SIGN[msg.face] < 0 else slice(s[axis] + 1, s[axis] + 2)
        tgt[tuple(sl)] = expanded
        return
    raise ValueError(f"unknown message kind {msg.kind!r}")


def run_plan_inline(h: GridHierarchy, plan: ExchangePlan, fields=FIELD_NAMES,
                    mode: str = "replace"):
    """Execute a whole plan in-process (single execution context)."""
    for group in message_groups(plan):
        for msg in group:
            for field in fields:
                apply_payload(h, msg, field, extract_payload(h, msg, field), mode=mode)
