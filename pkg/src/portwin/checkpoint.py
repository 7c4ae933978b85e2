"""Binary checkpoints: grid topology, fields, flags, and run state.

Layout (all little-endian)::

    magic        4s   "PWCK"
    version      u16  currently 1
    grid config  6d domain corners, 3u32 root_refine, 3u32 sub_refine,
                 3u32 block_size, u32 max_depth
    step         u64
    time         f64
    n_spheres    u32, then per sphere 4d (cx, cy, cz, r)
    n_blocks     u32, then per block:
        uid          u64
        depth        u32
        parent uid   u64  (all-ones when the block is the root)
        block_coords 3u32
        bbox         6d   (min corner, max corner)
        ux uy uz p   (s+2)^3 f64 each, C order, ghost layer included
        flags        (s+2)^3 u8

Blocks are written in uid order, which is creation order, so parents
always precede children and reconstruction in file order reproduces
the original child lists and per-depth indexes.  Velocity fields keep
their ghost planes because face plane s+1 carries interior data under
the staggered layout.  The explicit momentum history is not stored: a
resumed run restarts the two-step integrator from a single-step first
update, exactly like a fresh run.

Files are written to a temporary sibling and atomically renamed, so an
interrupt mid-write never leaves a torn checkpoint behind.
"""

import math
import os
import struct

import numpy as np

from .grid import DataGrid, GridConfig, GridHierarchy, LogicalGrid, uid_decode

MAGIC = b"PWCK"
VERSION = 1
NO_PARENT = 0xFFFFFFFFFFFFFFFF

_HEAD = struct.Struct("<4sH")
_CONFIG = struct.Struct("<6d3I3I3II")
_STATE = struct.Struct("<Qd")
_U32 = struct.Struct("<I")
_BLOCK_HEAD = struct.Struct("<QIQ3I6d")

FIELD_NAMES = ("ux", "uy", "uz", "p")


class CheckpointError(ValueError):
    """Unreadable checkpoint: wrong magic, version, or damaged payload."""


def _sphere_rows(spheres) -> np.ndarray:
    if spheres is None:
        return np.zeros((0, 4), dtype=np.float64)
    rows = np.asarray(getattr(spheres, "spheres", spheres), dtype=np.float64)
    if rows.size == 0:
        return np.zeros((0, 4), dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != 4:
        raise ValueError(f"spheres must be (n, 4) rows, got shape {rows.shape}")
    return rows


def save_checkpoint(path, h: GridHierarchy, step: int, time: float,
                    spheres=None):
    """Write the full run state; any existing file is replaced atomically."""
    rows = _sphere_rows(spheres)
    cfg = h.config
    uids = sorted(h.grids)
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_HEAD.pack(MAGIC, VERSION))
        f.write(_CONFIG.pack(*cfg.domain_min, *cfg.domain_max,
                             *cfg.root_refine, *cfg.sub_refine,
                             *cfg.block_size, cfg.max_depth))
        f.write(_STATE.pack(step, float(time)))
        f.write(_U32.pack(len(rows)))
        f.write(rows.astype("<f8", copy=False).tobytes())
        f.write(_U32.pack(len(uids)))
        for uid in uids:
            g = h.grids[uid]
            d = h.data[uid]
            parent = NO_PARENT if g.parent is None else g.parent
            f.write(_BLOCK_HEAD.pack(uid, g.depth, parent, *g.block_coords,
                                     *g.bbox_min, *g.bbox_max))
            for name in FIELD_NAMES:
                f.write(np.ascontiguousarray(
                    d.field(name), dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(d.flags, dtype=np.uint8).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Rebuild (hierarchy, step, time, spheres) from a checkpoint file.

    The hierarchy keeps its original uids, child order, and per-depth
    indexes; further refinement allocates ids past the stored ones.
    """
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def need(n: int) -> int:
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        at = off
        off += n
        return at

    magic, version = _HEAD.unpack_from(blob, need(_HEAD.size))
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    vals = _CONFIG.unpack_from(blob, need(_CONFIG.size))
    try:
        cfg = GridConfig(domain_min=vals[0:3], domain_max=vals[3:6],
                         root_refine=vals[6:9], sub_refine=vals[9:12],
                         block_size=vals[12:15], max_depth=vals[15])
    except ValueError as exc:
        raise CheckpointError(f"invalid grid config: {exc}") from None

    step, time = _STATE.unpack_from(blob, need(_STATE.size))
    (n_spheres,) = _U32.unpack_from(blob, need(_U32.size))
    spheres = np.frombuffer(
        blob, dtype="<f8", count=n_spheres * 4, offset=need(n_spheres * 32)
    ).reshape(n_spheres, 4).copy()

    (n_blocks,) = _U32.unpack_from(blob, need(_U32.size))
    if n_blocks == 0:
        raise CheckpointError("checkpoint has no blocks")

    h = GridHierarchy(cfg)
    shape = tuple(s + 2 for s in cfg.block_size)
    ncell = math.prod(shape)
    for _ in range(n_blocks):
        rec = _BLOCK_HEAD.unpack_from(blob, need(_BLOCK_HEAD.size))
        uid, depth, parent = rec[0], rec[1], rec[2]
        parent = None if parent == NO_PARENT else parent
        if uid in h.grids:
            raise CheckpointError(f"duplicate block uid {uid}")
        if parent is not None and parent not in h.grids:
            raise CheckpointError(f"block {uid} references unknown parent")
        grid = LogicalGrid(uid=uid, depth=depth, bbox_min=rec[6:9],
                           bbox_max=rec[9:12], block_coords=rec[3:6],
                           shape=cfg.block_size, parent=parent)
        data = DataGrid(uid, cfg.block_size)
        for name in FIELD_NAMES:
            data.field(name)[:] = np.frombuffer(
                blob, dtype="<f8", count=ncell, offset=need(ncell * 8)
            ).reshape(shape)
        data.flags[:] = np.frombuffer(
            blob, dtype=np.uint8, count=ncell, offset=need(ncell)
        ).reshape(shape)
        h.grids[uid] = grid
        h.data[uid] = data
        h.depth_index.setdefault(depth, []).append(uid)
        if parent is not None:
            h.grids[parent].children.append(uid)

    if off != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    if 0 not in h.depth_index:
        raise CheckpointError("checkpoint has no root block")
    h._next_local = max(uid_decode(uid)[1] for uid in h.grids) + 1
    return h, step, float(time), spheres
