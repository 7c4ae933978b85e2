"""Hierarchical block-structured Cartesian grid.

A hierarchy starts from one root block covering the whole domain and is
refined block-wise: the root splits by the root refinement factors, deeper
blocks split by the sub refinement factors.  Every block stores the same
interior cell count (the block size) plus one ghost layer per face, so a
depth-d level that is uniformly refined resolves
root_refine * sub_refine^(d-1) * block_size cells.

Topology (LogicalGrid) and field storage (DataGrid) are kept separate;
each logical grid links to exactly one data grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import inject_cell

# cell and ghost flag codes, shared across the package
FLUID = 0
SOLID = 1
INFLOW = 2
OUTFLOW = 3
WALL = 4
SLIP = 5

FLAG_NAMES = {
    FLUID: "FLUID",
    SOLID: "SOLID",
    INFLOW: "INFLOW",
    OUTFLOW: "OUTFLOW",
    WALL: "WALL",
    SLIP: "SLIP",
}

FIELD_NAMES = ("ux", "uy", "uz", "p")

_UID_LIMIT = 1 << 32
_MORTON_LIMIT = 1 << 21


class ConfigError(ValueError):
    """Invalid grid or run configuration."""


class RefineError(RuntimeError):
    """Refinement requested on a grid that cannot be refined."""


def uid_encode(rank: int, local_id: int) -> int:
    """Pack (rank, local_id) into one 64-bit identifier."""
    if not (0 <= rank < _UID_LIMIT and 0 <= local_id < _UID_LIMIT):
        raise ValueError(f"uid parts out of 32-bit range: ({rank}, {local_id})")
    return (rank << 32) | local_id


def uid_decode(uid: int) -> tuple[int, int]:
    if not (0 <= uid < 1 << 64):
        raise ValueError(f"uid out of 64-bit range: {uid}")
    return uid >> 32, uid & (_UID_LIMIT - 1)


def morton_key(block_coords) -> int:
    """Bit-interleave (x, y, z) block coordinates into one scalar key.

    Bit i of x lands on key bit 3i, y on 3i+1, z on 3i+2, so consecutive
    keys trace the Lebesgue curve through the block lattice.
    """
    x, y, z = (int(c) for c in block_coords)
    if not (0 <= x < _MORTON_LIMIT and 0 <= y < _MORTON_LIMIT and 0 <= z < _MORTON_LIMIT):
        raise ValueError(f"block coords out of range for key: {block_coords}")
    key = 0
    for i in range(21):
        key |= ((x >> i) & 1) << (3 * i)
        key |= ((y >> i) & 1) << (3 * i + 1)
        key |= ((z >> i) & 1) << (3 * i + 2)
    return key


def _int_triple(value, name: str) -> tuple[int, int, int]:
    t = tuple(int(v) for v in value)
    if len(t) != 3 or any(v < 1 for v in t):
        raise ConfigError(f"{name} must be three integers >= 1, got {value!r}")
    return t


@dataclass(frozen=True)
class GridConfig:
    """Domain box, refinement factors, block size, and depth limit."""

    domain_min: tuple[float, float, float]
    domain_max: tuple[float, float, float]
    root_refine: tuple[int, int, int]
    sub_refine: tuple[int, int, int]
    block_size: tuple[int, int, int]
    max_depth: int = 0

    def __post_init__(self):
        object.__setattr__(self, "domain_min", tuple(float(v) for v in self.domain_min))
        object.__setattr__(self, "domain_max", tuple(float(v) for v in self.domain_max))
        object.__setattr__(self, "root_refine", _int_triple(self.root_refine, "root_refine"))
        object.__setattr__(self, "sub_refine", _int_triple(self.sub_refine, "sub_refine"))
        object.__setattr__(self, "block_size", _int_triple(self.block_size, "block_size"))
        object.__setattr__(self, "max_depth", int(self.max_depth))
        if len(self.domain_min) != 3 or len(self.domain_max) != 3:
            raise ConfigError("domain corners must have three components")
        if any(hi <= lo for lo, hi in zip(self.domain_min, self.domain_max)):
            raise ConfigError("domain_max must exceed domain_min on every axis")
        if self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")
        for i in range(3):
            s = self.block_size[i]
            for name, r in (("root_refine", self.root_refine[i]),
                            ("sub_refine", self.sub_refine[i])):
                if s % r != 0:
                    raise ConfigError(
                        f"block_size[{i}]={s} not divisible by {name}[{i}]={r}"
                    )

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(hi - lo for lo, hi in zip(self.domain_min, self.domain_max))


@dataclass
class LogicalGrid:
    """Topology node: placement of one block in the hierarchy."""

    uid: int
    depth: int
    bbox_min: tuple[float, float, float]
    bbox_max: tuple[float, float, float]
    block_coords: tuple[int, int, int]
    shape: tuple[int, int, int]
    parent: int | None = None
    children: list[int] = field(default_factory=list)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(
            (hi - lo) / n for lo, hi, n in zip(self.bbox_min, self.bbox_max, self.shape)
        )


def cell_center(grid: LogicalGrid, i: int, j: int, k: int) -> tuple[float, float, float]:
    """Physical centre of interior cell (i, j, k), 0-based."""
    idx = (i, j, k)
    for axis in range(3):
        if not (0 <= idx[axis] < grid.shape[axis]):
            raise IndexError(f"cell index {idx} outside interior {grid.shape}")
    dx = grid.spacing
    return tuple(grid.bbox_min[a] + (idx[a] + 0.5) * dx[a] for a in range(3))


class DataGrid:
    """Field storage for one block: interior cells plus one ghost layer.

    Velocity components sit on cell faces: ``ux[i, j, k]`` is the value on
    the minus-x face of cell (i, j, k), so plane 1 is the block's first
    face and plane nx+1 its closing face.  ``hx/hy/hz`` hold the previous
    step's explicit momentum terms for the two-step time integrator.
    """

    __slots__ = ("owner", "ux", "uy", "uz", "p", "hx", "hy", "hz", "flags")

    def __init__(self, owner: int, block_size):
        self.owner = owner
        shape = tuple(int(s) + 2 for s in block_size)
        self.ux = np.zeros(shape)
        self.uy = np.zeros(shape)
        self.uz = np.zeros(shape)
        self.p = np.zeros(shape)
        self.hx = np.zeros(shape)
        self.hy = np.zeros(shape)
        self.hz = np.zeros(shape)
        self.flags = np.zeros(shape, dtype=np.uint8)

    def field(self, name: str) -> np.ndarray:
        return getattr(self, name)

    @property
    def interior_shape(self) -> tuple[int, int, int]:
        return tuple(s - 2 for s in self.ux.shape)


class GridHierarchy:
    """All logical grids, their data grids, and per-depth indexes."""

    def __init__(self, config: GridConfig):
        self.config = config
        self.grids: dict[int, LogicalGrid] = {}
        self.data: dict[int, DataGrid] = {}
        self.depth_index: dict[int, list[int]] = {}
        self._next_local = 0

    # ---- identifiers ----

    def _alloc_uid(self) -> int:
        if self._next_local >= _UID_LIMIT:
            raise RuntimeError("local id space exhausted (2^32 grids)")
        uid = uid_encode(0, self._next_local)
        self._next_local += 1
        return uid

    # ---- structure queries ----

    @property
    def root_uid(self) -> int:
        return self.depth_index[0][0]

    @property
    def deepest_depth(self) -> int:
        return max(self.depth_index)

    def level_uids(self, depth: int) -> list[int]:
        return self.depth_index.get(depth, [])

    def leaf_uids(self) -> list[int]:
        return [uid for uid, g in self.grids.items() if not g.children]

    def refine_factors(self, depth: int) -> tuple[int, int, int]:
        """Factors splitting a depth-d block into its depth-(d+1) children."""
        return self.config.root_refine if depth == 0 else self.config.sub_refine

    def level_lattice(self, depth: int) -> tuple[int, int, int]:
        """Block-lattice dimensions of a uniformly refined depth level."""
        dims = (1, 1, 1)
        for d in range(depth):
            f = self.refine_factors(d)
            dims = tuple(n * r for n, r in zip(dims, f))
        return dims

    def level_resolution(self, depth: int) -> tuple[int, int, int]:
        lat = self.level_lattice(depth)
        return tuple(n * s for n, s in zip(lat, self.config.block_size))

    def level_spacing(self, depth: int) -> tuple[float, float, float]:
        res = self.level_resolution(depth)
        return tuple(e / n for e, n in zip(self.config.extent, res))

    # ---- construction ----

    def _add_grid(self, depth, bbox_min, bbox_max, block_coords, parent) -> int:
        uid = self._alloc_uid()
        grid = LogicalGrid(
            uid=uid,
            depth=depth,
            bbox_min=tuple(bbox_min),
            bbox_max=tuple(bbox_max),
            block_coords=tuple(block_coords),
            shape=self.config.block_size,
            parent=parent,
        )
        self.grids[uid] = grid
        self.data[uid] = DataGrid(uid, self.config.block_size)
        self.depth_index.setdefault(depth, []).append(uid)
        return uid


def build_hierarchy(config: GridConfig, uniform_depth: int) -> GridHierarchy:
    """Root block refined uniformly down to the requested depth."""
    if uniform_depth > config.max_depth:
        raise ConfigError(
            f"uniform_depth {uniform_depth} exceeds max_depth {config.max_depth}"
        )
    h = GridHierarchy(config)
    h._add_grid(0, config.domain_min, config.domain_max, (0, 0, 0), None)
    for depth in range(uniform_depth):
        for uid in list(h.level_uids(depth)):
            refine(h, uid)
    return h


def refine(h: GridHierarchy, uid: int) -> list[int]:
    """Split a leaf block into its children, copying parent field values.

    Child cells start with the value of the parent cell covering them
    (constant injection); finer structure appears through subsequent
    time stepping.
    """
    if uid not in h.grids:
        raise KeyError(f"unknown grid uid {uid}")
    parent = h.grids[uid]
    if parent.children:
        raise RefineError(f"grid {uid} is not a leaf")
    if parent.depth >= h.config.max_depth:
        raise RefineError(f"grid {uid} already at max depth {h.config.max_depth}")

    r = h.refine_factors(parent.depth)
    s = h.config.block_size
    pmin, pmax = parent.bbox_min, parent.bbox_max
    ext = tuple(hi - lo for lo, hi in zip(pmin, pmax))
    pdata = h.data[uid]

    children = []
    for off in np.ndindex(r):
        cmin = tuple(pmin[a] + off[a] * ext[a] / r[a] for a in range(3))
        cmax = tuple(pmin[a] + (off[a] + 1) * ext[a] / r[a] for a in range(3))
        coords = tuple(parent.block_coords[a] * r[a] + off[a] for a in range(3))
        cuid = h._add_grid(parent.depth + 1, cmin, cmax, coords, uid)
        cdata = h.data[cuid]
        sub = tuple(
            slice(1 + off[a] * s[a] // r[a], 1 + (off[a] + 1) * s[a] // r[a])
            for a in range(3)
        )
        for name in FIELD_NAMES:
            coarse = np.ascontiguousarray(pdata.field(name)[sub])
            inject_cell(coarse, r[0], r[1], r[2], cdata.field(name))
        fsub = np.ascontiguousarray(pdata.flags[sub])
        inject_cell(fsub, r[0], r[1], r[2], cdata.flags)
        children.append(cuid)
    parent.children = children
    return children


def _axis_range(bmin: float, bmax: float, n: int, wlo: float, whi: float):
    """Local index range [lo, hi) of cells whose centre falls in [wlo, whi)."""
    dx = (bmax - bmin) / n

    def center(i):
        return bmin + (i + 0.5) * dx

    lo = int(np.ceil((wlo - bmin) / dx - 0.5))
    lo = min(max(lo, 0), n)
    while lo > 0 and center(lo - 1) >= wlo:
        lo -= 1
    while lo < n and center(lo) < wlo:
        lo += 1

    hi = int(np.ceil((whi - bmin) / dx - 0.5))
    hi = min(max(hi, lo), n)
    while hi > lo and center(hi - 1) >= whi:
        hi -= 1
    while hi < n and center(hi) < whi:
        hi += 1
    return lo, hi


def cells_in_window(h: GridHierarchy, window, depth: int, stride=(1, 1, 1)):
    """Count depth-level cells whose centre lies inside a half-open box.

    Returns (count, records) where each record is (uid, axis_ranges) and
    axis_ranges gives a (start, stop, step) triple of local interior
    indices per axis.  A stride above 1 keeps only cells whose global
    level index is a stride multiple on that axis.
    """
    if depth not in h.depth_index:
        raise ValueError(f"depth {depth} not populated")
    (wlo, whi) = (tuple(float(v) for v in window[0]), tuple(float(v) for v in window[1]))
    st = tuple(int(v) for v in stride)
    if any(v < 1 for v in st):
        raise ValueError(f"stride must be >= 1, got {stride}")

    count = 0
    records = []
    s = h.config.block_size
    for uid in h.level_uids(depth):
        g = h.grids[uid]
        ranges = []
        n_block = 1
        for a in range(3):
            lo, hi = _axis_range(g.bbox_min[a], g.bbox_max[a], s[a], wlo[a], whi[a])
            if st[a] > 1:
                g0 = g.block_coords[a] * s[a] + lo
                g1 = g.block_coords[a] * s[a] + hi
                gs = -(-g0 // st[a]) * st[a]  # first stride multiple >= g0
                if gs >= g1:
                    lo = hi = 0
                else:
                    lo = gs - g.block_coords[a] * s[a]
                    n_axis = (g1 - gs + st[a] - 1) // st[a]
                    hi = lo + (n_axis - 1) * st[a] + 1
            ranges.append((lo, hi, st[a]))
            n_block *= len(range(lo, hi, st[a]))
        if n_block > 0:
            count += n_block
            records.append((uid, tuple(ranges)))
    return count, records


def box_slices(domain_min, spacing, resolution, box):
    """Index slices of the lattice cells whose centres lie inside a box."""
    sl = []
    for a in range(3):
        tol = 1e-9 * spacing[a]
        i0 = int(np.ceil((box[a] - domain_min[a]) / spacing[a] - 0.5 - tol))
        i1 = int(np.floor((box[a + 3] - domain_min[a]) / spacing[a] - 0.5 + tol))
        i0 = max(i0, 0)
        i1 = min(i1, resolution[a] - 1)
        if i1 < i0:
            raise ValueError(f"box selects no cells along axis {a}")
        sl.append(slice(i0, i1 + 1))
    return tuple(sl)
