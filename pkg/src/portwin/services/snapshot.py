"""Immutable per-step captures of field state for client serving.

The stepping loop installs a fresh snapshot at every step boundary and
client sessions read whichever capture is current, so a slow or stalled
client can never touch live solver arrays or block stepping.  A snapshot
duck-types the hierarchy surface used by window selection (``config``,
``grids``, ``depth_index``, ``level_uids``), letting coverage and budget
math run unchanged against live or captured state.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SnapshotBlock:
    """One block's geometry plus read-only interior field copies.

    Velocities are cell-centred here (face pairs averaged), matching what
    viewers draw; pressure and flags are plain interior copies.  Floats
    are 32-bit: half the bytes of the solver arrays, visually lossless.
    """

    uid: int
    depth: int
    bbox_min: tuple
    bbox_max: tuple
    block_coords: tuple
    fields: dict = field(repr=False)
    flags: np.ndarray = field(repr=False)
    children: tuple = ()


def _centred(u: np.ndarray, axis: int) -> np.ndarray:
    """Average the two faces of each interior cell along axis, as f32."""
    left = [slice(1, -1)] * 3
    right = [slice(1, -1)] * 3
    right[axis] = slice(2, None)
    mid = 0.5 * (u[tuple(left)] + u[tuple(right)])
    return np.ascontiguousarray(mid, dtype=np.float32)


class Snapshot:
    """Read-only copy of every block's fields at one step boundary."""

    __slots__ = ("config", "step", "time", "grids", "depth_index", "spheres",
                 "paused", "_win_geo")

    def __init__(self, config, step, time, grids, depth_index, spheres=None,
                 paused=False):
        self.config = config
        self.step = int(step)
        self.time = float(time)
        self.grids = grids
        self.depth_index = depth_index
        self.spheres = spheres
        self.paused = bool(paused)

    def level_uids(self, depth: int) -> list:
        return self.depth_index.get(depth, [])

    def deepest_depth(self) -> int:
        return max(self.depth_index)


def take_snapshot(h, step: int, time: float, spheres=None,
                  paused: bool = False) -> Snapshot:
    """Copy all block interiors of a hierarchy into an immutable capture."""
    grids = {}
    for uid, g in h.grids.items():
        d = h.data[uid]
        fields = {
            "ux": _centred(d.ux, 0),
            "uy": _centred(d.uy, 1),
            "uz": _centred(d.uz, 2),
            "p": np.ascontiguousarray(d.p[1:-1, 1:-1, 1:-1], dtype=np.float32),
        }
        flags = np.ascontiguousarray(d.flags[1:-1, 1:-1, 1:-1])
        grids[uid] = SnapshotBlock(
            uid=uid,
            depth=g.depth,
            bbox_min=g.bbox_min,
            bbox_max=g.bbox_max,
            block_coords=g.block_coords,
            fields=fields,
            flags=flags,
            children=tuple(g.children),
        )
    depth_index = {d: tuple(uids) for d, uids in h.depth_index.items()}
    sph = None if spheres is None else np.array(spheres, dtype=float)
    return Snapshot(h.config, step, time, grids, depth_index, sph, paused)


class SnapshotStore:
    """Latest-wins holder of the current capture.

    ``listener`` hangs off the simulation's per-step callbacks; installing
    a snapshot is a single reference swap, so readers always see either
    the previous complete capture or the new one, never a mix.
    """

    def __init__(self, spheres=None):
        self._lock = threading.Lock()
        self._snap: Snapshot | None = None
        self.spheres = spheres

    def install(self, snap: Snapshot):
        with self._lock:
            self._snap = snap

    def latest(self) -> Snapshot | None:
        with self._lock:
            return self._snap

    def capture(self, sim, paused: bool = False) -> Snapshot:
        snap = take_snapshot(sim.h, sim.step_index, sim.time, self.spheres,
                             paused)
        self.install(snap)
        return snap

    def listener(self, sim, report):
        self.capture(sim)
