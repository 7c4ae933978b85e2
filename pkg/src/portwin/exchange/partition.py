"""Morton-curve partitioning of leaf blocks over workers."""

from __future__ import annotations

from dataclasses import dataclass

from ..grid import GridHierarchy, morton_key


@dataclass
class Partition:
    """Leaf ownership plus derived ownership for every coarse block.

    Coarse (non-leaf) blocks belong to the worker owning their first
    child, so restriction targets live where most child data already is
    and the root always lands on worker 0 for uniform hierarchies.
    """

    n_workers: int
    assignment: dict[int, int]
    worker_blocks: list[list[int]]
    full_assignment: dict[int, int]

    def owner(self, uid: int) -> int:
        return self.full_assignment[uid]


def partition_morton(h: GridHierarchy, n_workers: int) -> Partition:
    """Split leaves into Morton-contiguous chunks of near-equal size.

    Leaves are ordered depth-major, key-minor; chunk sizes differ by at
    most one with the larger chunks first.
    """
    if n_workers < 1:
        raise ValueError(f"n_workers must be >= 1, got {n_workers}")
    leaves = h.leaf_uids()
    if n_workers > len(leaves):
        raise ValueError(
            f"{n_workers} workers for {len(leaves)} leaf blocks; "
            "every worker needs at least one block"
        )
    ordered = sorted(
        leaves, key=lambda uid: (h.grids[uid].depth, morton_key(h.grids[uid].block_coords))
    )
    base, extra = divmod(len(ordered), n_workers)
    assignment: dict[int, int] = {}
    worker_blocks: list[list[int]] = []
    pos = 0
    for w in range(n_workers):
        size = base + (1 if w < extra else 0)
        chunk = ordered[pos:pos + size]
        worker_blocks.append(chunk)
        for uid in chunk:
            assignment[uid] = w
        pos += size

    full = dict(assignment)

    def resolve(uid: int) -> int:
        if uid in full:
            return full[uid]
        g = h.grids[uid]
        w = resolve(g.children[0])
        full[uid] = w
        return w

    for uid in h.grids:
        resolve(uid)
    return Partition(
        n_workers=n_workers,
        assignment=assignment,
        worker_blocks=worker_blocks,
        full_assignment=full,
    )
