"""Window-to-level budgeting and payload gathering.

A client names a box and a byte budget; the server answers with the
deepest populated refinement level whose cells in that box fit the
budget uncompressed, falling back to a strided coarse view when even
the root level is too big.  Budgets are checked against uncompressed
size so the cap is deterministic; compression is a bonus, never assumed.
"""

from __future__ import annotations

import numpy as np

from ..grid import cells_in_window

# wire field selector bits; float fields are streamed as f32, flags as u8
FIELD_BITS = {"ux": 1, "uy": 2, "uz": 4, "p": 8, "umag": 16, "flags": 32}
FIELD_ORDER = ("ux", "uy", "uz", "p", "umag", "flags")
ALL_FIELDS = 0x3F

# response header: request u32, step u64, depth u8, stride 3xu16,
# fields u8, n_blocks u32, cell_count u64, raw_size u64
RESPONSE_HEADER_BYTES = 40
# per-block record: uid u64, start 3xu32, count 3xu32
BLOCK_RECORD_BYTES = 32


def mask_fields(mask: int) -> tuple:
    """Field names selected by a bitmask, in canonical stream order."""
    if mask == 0 or mask & ~ALL_FIELDS:
        raise ValueError(f"bad field mask {mask:#x}")
    return tuple(n for n in FIELD_ORDER if mask & FIELD_BITS[n])


def bytes_per_cell(mask: int) -> int:
    names = mask_fields(mask)
    return sum(1 if n == "flags" else 4 for n in names)


def window_cost(cells: int, n_blocks: int, cell_bytes: int) -> int:
    """Uncompressed response size: header, block records, cell payload."""
    return RESPONSE_HEADER_BYTES + n_blocks * BLOCK_RECORD_BYTES + cells * cell_bytes


def _level_geometry(h, depth: int):
    """Per-block bbox arrays of one depth level, cached on the hierarchy.

    The cache key includes the block count, so growing a level through
    refinement invalidates its entry; existing blocks never move.
    """
    cache = getattr(h, "_win_geo", None)
    if cache is None:
        cache = {}
        h._win_geo = cache
    uids = h.level_uids(depth)
    key = (depth, len(uids))
    hit = cache.get(key)
    if hit is not None:
        return hit
    n = len(uids)
    bmin = np.empty((3, n))
    dx = np.empty((3, n))
    coords = np.empty((3, n), dtype=np.int64)
    s = h.config.block_size
    for j, uid in enumerate(uids):
        g = h.grids[uid]
        for a in range(3):
            bmin[a, j] = g.bbox_min[a]
            dx[a, j] = (g.bbox_max[a] - g.bbox_min[a]) / s[a]
            coords[a, j] = g.block_coords[a]
    cache[key] = (bmin, dx, coords)
    return bmin, dx, coords


def count_window(h, window, depth: int, stride=(1, 1, 1)):
    """(cell count, contributing block count) of a window at one depth.

    Exact vectorised mirror of the per-block index math used when
    gathering, so budget decisions and payloads always agree; the two
    correction rounds replay the boundary nudges of the scalar walk.
    """
    bmin, dx, coords = _level_geometry(h, depth)
    s = h.config.block_size
    per_axis = []
    for a in range(3):
        b, d = bmin[a], dx[a]
        wlo, whi = float(window[0][a]), float(window[1][a])
        n = s[a]
        lo = np.clip(np.ceil((wlo - b) / d - 0.5).astype(np.int64), 0, n)
        for _ in range(2):
            lo = np.where((lo > 0) & (b + (lo - 0.5) * d >= wlo), lo - 1, lo)
        for _ in range(2):
            lo = np.where((lo < n) & (b + (lo + 0.5) * d < wlo), lo + 1, lo)
        hi = np.ceil((whi - b) / d - 0.5).astype(np.int64)
        hi = np.minimum(np.maximum(hi, lo), n)
        for _ in range(2):
            hi = np.where((hi > lo) & (b + (hi - 0.5) * d >= whi), hi - 1, hi)
        for _ in range(2):
            hi = np.where((hi < n) & (b + (hi + 0.5) * d < whi), hi + 1, hi)
        st = int(stride[a])
        if st > 1:
            g0 = coords[a] * n + lo
            g1 = coords[a] * n + hi
            gs = -(-g0 // st) * st  # first stride multiple >= g0
            per_axis.append(np.where(gs >= g1, 0, (g1 - gs + st - 1) // st))
        else:
            per_axis.append(hi - lo)
    cells = per_axis[0] * per_axis[1] * per_axis[2]
    return int(cells.sum()), int(np.count_nonzero(cells))


def select_level(h, window, max_bytes: int, cell_bytes: int):
    """Pick (depth, stride) for a window under a byte budget.

    Deepest depth with cells in the window whose uncompressed cost fits
    wins, at stride 1.  If even depth 0 is over budget, the stride over
    depth 0 doubles axis by axis until the cost fits, skipping any axis
    whose doubling would drop its last cell; a thin window thus stays
    visible instead of vanishing, and since doubling keeps a cell
    whenever an axis had two, the walk always ends at a fitting cost or
    a lone cell.  A window holding no cells at any depth returns
    (0, (1, 1, 1)); the response will simply be empty.
    """
    if max_bytes <= 0:
        raise ValueError(f"max_bytes must be positive, got {max_bytes}")
    for depth in sorted(h.depth_index, reverse=True):
        cells, n_blocks = count_window(h, window, depth)
        if cells == 0:
            continue
        if window_cost(cells, n_blocks, cell_bytes) <= max_bytes:
            return depth, (1, 1, 1)
    stride = [1, 1, 1]
    while True:
        st = tuple(stride)
        cells, n_blocks = count_window(h, window, 0, st)
        if cells <= 1 or window_cost(cells, n_blocks, cell_bytes) <= max_bytes:
            if cells == 0:
                return 0, (1, 1, 1)
            return 0, st
        for a in range(3):
            probe = list(stride)
            probe[a] *= 2
            if count_window(h, window, 0, tuple(probe))[0] > 0:
                stride[a] = probe[a]


def gather_window(snap, window, depth: int, stride, mask: int):
    """Collect the selected cells of a snapshot into one byte stream.

    Returns (records, cell_count, payload) where each record is
    (uid, global_start, counts) in level cell coordinates and the payload
    is block-major: every record's cells, selected fields in canonical
    order, C order.  ``umag`` is computed from the captured velocities.
    """
    names = mask_fields(mask)
    count, recs = cells_in_window(snap, window, depth, stride)
    s = snap.config.block_size
    records = []
    parts = []
    for uid, ranges in recs:
        blk = snap.grids[uid]
        sl = tuple(slice(*r) for r in ranges)
        start = tuple(blk.block_coords[a] * s[a] + ranges[a][0] for a in range(3))
        counts = tuple(len(range(*r)) for r in ranges)
        records.append((uid, start, counts))
        for name in names:
            if name == "umag":
                vx = blk.fields["ux"][sl]
                vy = blk.fields["uy"][sl]
                vz = blk.fields["uz"][sl]
                part = np.sqrt(vx * vx + vy * vy + vz * vz, dtype=np.float32)
            elif name == "flags":
                part = blk.flags[sl]
            else:
                part = blk.fields[name][sl]
            parts.append(np.ascontiguousarray(part).tobytes())
    return records, count, b"".join(parts)
