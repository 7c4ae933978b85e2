"""Neighbourhood repository: global topology and adjacency answers.

One repository instance holds an entry for every registered grid (no
field data) and keeps a symmetric six-face neighbour table up to date as
grids register.  Faces are named from the querying block's point of
view: E/W along x, N/S along y, T/B along z, positive direction first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

FACES = ("W", "E", "S", "N", "B", "T")
FACE_AXIS = {"W": 0, "E": 0, "S": 1, "N": 1, "B": 2, "T": 2}
FACE_SIGN = {"W": -1, "E": 1, "S": -1, "N": 1, "B": -1, "T": 1}
OPPOSITE_FACE = {"W": "E", "E": "W", "S": "N", "N": "S", "B": "T", "T": "B"}


class RegistrationError(RuntimeError):
    """Duplicate or inconsistent grid registration."""


@dataclass
class NbhEntry:
    uid: int
    bbox_min: tuple[float, float, float]
    bbox_max: tuple[float, float, float]
    depth: int
    parent: int | None
    worker: int
    neighbors: dict[str, int | None] = field(default_factory=lambda: {f: None for f in FACES})


def _faces_touch(a: NbhEntry, b: NbhEntry, face: str) -> bool:
    """True when b lies flush against a's given face with positive overlap."""
    axis = FACE_AXIS[face]
    tol = 1e-9 * max(hi - lo for lo, hi in zip(a.bbox_min, a.bbox_max))
    if FACE_SIGN[face] > 0:
        if abs(a.bbox_max[axis] - b.bbox_min[axis]) > tol:
            return False
    else:
        if abs(a.bbox_min[axis] - b.bbox_max[axis]) > tol:
            return False
    for t in range(3):
        if t == axis:
            continue
        lo = max(a.bbox_min[t], b.bbox_min[t])
        hi = min(a.bbox_max[t], b.bbox_max[t])
        if hi - lo <= tol:
            return False
    return True


class NbhRepository:
    def __init__(self):
        self.entries: dict[int, NbhEntry] = {}
        self._by_depth: dict[int, list[int]] = {}

    def register(self, uid, bbox_min, bbox_max, depth, parent, worker):
        if uid in self.entries:
            raise RegistrationError(f"uid {uid} already registered")
        entry = NbhEntry(
            uid=uid,
            bbox_min=tuple(float(v) for v in bbox_min),
            bbox_max=tuple(float(v) for v in bbox_max),
            depth=int(depth),
            parent=parent,
            worker=int(worker),
        )
        for other_uid in self._by_depth.get(entry.depth, []):
            other = self.entries[other_uid]
            for face in FACES:
                if _faces_touch(entry, other, face):
                    entry.neighbors[face] = other_uid
                    other.neighbors[OPPOSITE_FACE[face]] = uid
        self.entries[uid] = entry
        self._by_depth.setdefault(entry.depth, []).append(uid)

    def register_hierarchy(self, h, partition):
        """Register every grid of a hierarchy with its owning worker."""
        for depth in sorted(h.depth_index):
            for uid in h.depth_index[depth]:
                g = h.grids[uid]
                self.register(uid, g.bbox_min, g.bbox_max, g.depth, g.parent,
                              partition.owner(uid))

    def query_neighbor(self, uid: int, face: str) -> int | None:
        """Same-depth face neighbour, else the coarser grid covering the face.

        Walks up the ancestry: a face interior to the parent always has a
        same-depth sibling, so the first ancestor with a registered
        neighbour on that face covers the queried face.
        """
        if face not in FACES:
            raise ValueError(f"unknown face {face!r}")
        entry = self.entries[uid]
        nb = entry.neighbors[face]
        if nb is not None:
            return nb
        parent = entry.parent
        while parent is not None:
            pe = self.entries[parent]
            nb = pe.neighbors[face]
            if nb is not None:
                return nb
            parent = pe.parent
        return None

    def query_window(self, box, depth: int) -> list[int]:
        """Uids of depth-level grids overlapping the box, ascending."""
        (lo, hi) = box
        found = []
        for uid in self._by_depth.get(depth, []):
            e = self.entries[uid]
            if all(e.bbox_min[a] < hi[a] and lo[a] < e.bbox_max[a] for a in range(3)):
                found.append(uid)
        return sorted(found)

    def worker_of(self, uid: int) -> int:
        return self.entries[uid].worker

    def set_worker(self, uid: int, worker: int):
        self.entries[uid].worker = int(worker)

    def uids_at_depth(self, depth: int) -> list[int]:
        return list(self._by_depth.get(depth, []))

    @property
    def depths(self) -> list[int]:
        return sorted(self._by_depth)
