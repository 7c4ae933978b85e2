"""Specimen generation: sieve curves, sphere packing, and voxel flags.

A specimen is built in three stages.  A sieve curve (grain diameter vs
mass fraction) is turned into per-fraction sphere counts for a target
solid fraction; spheres are then placed largest-first by rejection
sampling so none overlap; finally the sphere set is voxelized onto the
deepest grid level by a centre-in-sphere test and restricted upward so
every depth carries a consistent solid mask.  Placement runs on one RNG
stream and is byte-reproducible for a fixed seed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .grid import FLUID, SOLID, GridHierarchy
from .kernels import voxelize_flags
from .solver import assign_global_solids

# rejection sampling stalls long before dense random packings; refuse
# targets past what it reaches in practice instead of spinning forever
MAX_SOLID_FRACTION = 0.45


class SieveError(ValueError):
    """Malformed or inconsistent sieve-curve input."""


class PackingError(RuntimeError):
    """Sphere placement could not reach the requested count."""


@dataclass(frozen=True)
class SieveCurve:
    """Grain fractions as (diameter [m], mass fraction) pairs, largest first."""

    fractions: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.fractions:
            raise SieveError("sieve curve has no fractions")
        for d, w in self.fractions:
            if not (d > 0.0):
                raise SieveError(f"non-positive diameter {d}")
            if not (0.0 <= w <= 1.0):
                raise SieveError(f"mass fraction {w} outside [0, 1]")
        total = sum(w for _, w in self.fractions)
        if abs(total - 1.0) > 1e-6:
            raise SieveError(f"mass fractions sum to {total}, expected 1")
        ds = [d for d, _ in self.fractions]
        if sorted(ds, reverse=True) != ds or len(set(ds)) != len(ds):
            raise SieveError("diameters must be unique and sorted descending")

    @property
    def largest_diameter(self) -> float:
        return self.fractions[0][0]


def parse_sieve_curve(text: str, normalize: bool = False) -> SieveCurve:
    """Parse ``diameter_mm,mass_fraction`` CSV rows into a curve.

    A header row is skipped if present; diameters convert from mm to m.
    With ``normalize`` the fractions are rescaled to sum to one instead
    of being rejected.
    """
    rows = []
    for ln, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip():
            continue
        if ln == 1 and any(c.isalpha() for c in "".join(row)):
            continue
        if len(row) != 2:
            raise SieveError(f"row {ln}: expected 2 columns, got {len(row)}")
        try:
            d_mm, w = float(row[0]), float(row[1])
        except ValueError as exc:
            raise SieveError(f"row {ln}: non-numeric value ({exc})") from None
        rows.append((d_mm * 1e-3, w))
    if not rows:
        raise SieveError("no data rows")
    if normalize:
        total = sum(w for _, w in rows)
        if total <= 0.0:
            raise SieveError("cannot normalize zero-mass curve")
        rows = [(d, w / total) for d, w in rows]
    rows.sort(key=lambda f: -f[0])
    return SieveCurve(fractions=tuple(rows))


def sphere_counts(curve: SieveCurve, volume: float,
                  solid_fraction: float) -> list[int]:
    """Spheres per fraction filling ``solid_fraction`` of ``volume``."""
    if not (0.0 <= solid_fraction < 1.0):
        raise ValueError(f"solid fraction {solid_fraction} outside [0, 1)")
    return [
        math.floor(volume * solid_fraction * w / (math.pi * d ** 3 / 6.0))
        for d, w in curve.fractions
    ]


@dataclass(frozen=True)
class SphereSet:
    """Placed non-overlapping spheres as (cx, cy, cz, r) rows."""

    spheres: np.ndarray
    seed: int
    target_solid_fraction: float

    def __len__(self) -> int:
        return self.spheres.shape[0]

    def solid_volume(self) -> float:
        r = self.spheres[:, 3]
        return float(np.sum(4.0 / 3.0 * np.pi * r ** 3))

    def to_csv(self) -> str:
        lines = [
            f"# seed={self.seed} target_solid_fraction="
            f"{self.target_solid_fraction!r}",
            "cx,cy,cz,r",
        ]
        for cx, cy, cz, r in self.spheres:
            lines.append(f"{float(cx)!r},{float(cy)!r},{float(cz)!r},{float(r)!r}")
        return "\n".join(lines) + "\n"

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "SphereSet":
        seed, target = 0, 0.0
        rows = []
        for ln, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    key, _, value = token.partition("=")
                    if key == "seed":
                        seed = int(value)
                    elif key == "target_solid_fraction":
                        target = float(value)
                continue
            if line == "cx,cy,cz,r":
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise SieveError(f"row {ln}: expected 4 columns")
            rows.append([float(v) for v in parts])
        spheres = (np.array(rows, dtype=np.float64) if rows
                   else np.zeros((0, 4)))
        return cls(spheres=spheres, seed=seed, target_solid_fraction=target)

    @classmethod
    def load_csv(cls, path) -> "SphereSet":
        with open(path) as f:
            return cls.from_csv(f.read())


def placement_region(domain_min, domain_max, curve: SieveCurve,
                     runup_fraction: float = 0.25):
    """Box spheres may occupy: inflow run-up and near-wall bands excluded.

    The run-up keeps a sphere-free development zone behind the inflow;
    the transverse walls keep one largest-diameter band clear so wall
    agglomerations do not dominate the packing.
    """
    band = curve.largest_diameter
    x0 = domain_min[0] + runup_fraction * (domain_max[0] - domain_min[0])
    region = (
        x0, domain_min[1] + band, domain_min[2] + band,
        domain_max[0], domain_max[1] - band, domain_max[2] - band,
    )
    if any(region[a + 3] - region[a] <= 0.0 for a in range(3)):
        raise ValueError("placement region is empty after exclusions")
    return region


def place_spheres(counts, curve: SieveCurve, region, seed: int,
                  max_attempts: int | None = None) -> SphereSet:
    """Largest-first rejection sampling of non-overlapping spheres.

    Centres are proposed uniformly inside ``region`` shrunk by each
    sphere's radius; a proposal is rejected when it overlaps any placed
    sphere.  One RNG stream and a fixed placement order make the result
    deterministic per seed.
    """
    counts = list(counts)
    if len(counts) != len(curve.fractions):
        raise ValueError("one count per sieve fraction required")
    total = sum(counts)
    region = tuple(float(v) for v in region)
    volume = 1.0
    for a in range(3):
        if region[a + 3] <= region[a]:
            raise ValueError("empty placement region")
        volume *= region[a + 3] - region[a]
    target = sum(
        n * math.pi * d ** 3 / 6.0
        for n, (d, _) in zip(counts, curve.fractions)) / volume
    if target > MAX_SOLID_FRACTION:
        raise PackingError(
            f"target solid fraction {target:.3f} exceeds the "
            f"{MAX_SOLID_FRACTION} rejection-sampling cap")
    if max_attempts is None:
        max_attempts = 5000 * max(total, 1)

    rng = np.random.default_rng(seed)
    placed = np.empty((total, 4))
    n_placed = 0
    tree = None
    tree_size = 0
    max_r = 0.0
    attempts = 0
    for n, (d, _) in zip(counts, curve.fractions):
        r = d / 2.0
        lo = np.array(region[:3]) + r
        hi = np.array(region[3:]) - r
        if np.any(hi < lo):
            raise PackingError(
                f"sphere diameter {d} does not fit the placement region")
        for _ in range(n):
            while True:
                attempts += 1
                if attempts > max_attempts:
                    placed_v = float(np.sum(
                        4.0 / 3.0 * np.pi * placed[:n_placed, 3] ** 3))
                    raise PackingError(
                        f"placement stalled after {attempts - 1} attempts: "
                        f"{n_placed}/{total} spheres, solid fraction "
                        f"{placed_v / volume:.3f} of {target:.3f}")
                c = lo + (hi - lo) * rng.random(3)
                if n_placed and _overlaps(c, r, placed, n_placed, tree,
                                          tree_size, max_r):
                    continue
                placed[n_placed] = (c[0], c[1], c[2], r)
                n_placed += 1
                max_r = max(max_r, r)
                break
            # refresh the shortlist index once the linear tail grows
            if n_placed - tree_size >= 256:
                tree = cKDTree(placed[:n_placed, :3])
                tree_size = n_placed
    return SphereSet(spheres=placed[:n_placed].copy(), seed=int(seed),
                     target_solid_fraction=float(target))


def _overlaps(c, r, placed, n_placed, tree, tree_size, max_r) -> bool:
    if tree is not None:
        idx = tree.query_ball_point(c, r + max_r)
        if idx:
            near = placed[idx]
            d2 = np.sum((near[:, :3] - c) ** 2, axis=1)
            if np.any(d2 < (near[:, 3] + r) ** 2):
                return True
    if n_placed > tree_size:
        tail = placed[tree_size:n_placed]
        d2 = np.sum((tail[:, :3] - c) ** 2, axis=1)
        if np.any(d2 < (tail[:, 3] + r) ** 2):
            return True
    return False


def voxelize_spheres(spheres: np.ndarray, domain_min, spacing,
                     resolution) -> np.ndarray:
    """Boolean solid mask over one global cell lattice (centre test)."""
    flags = np.full(tuple(resolution), FLUID, dtype=np.uint8)
    if spheres.shape[0]:
        voxelize_flags(domain_min[0], domain_min[1], domain_min[2],
                       spacing[0], spacing[1], spacing[2],
                       np.ascontiguousarray(spheres, dtype=np.float64), flags)
    return flags == SOLID


def seal_pockets(solid: np.ndarray) -> int:
    """Turn solid every fluid region with no path to an x-domain face.

    Enclosed pockets carry no flow but would still burden the pressure
    solve; face-connected labelling finds every fluid component and
    keeps only those reaching the inflow or outflow plane.  Returns the
    number of cells sealed.
    """
    fluid = ~solid
    labels, n = ndimage.label(fluid, structure=ndimage.generate_binary_structure(3, 1))
    if n == 0:
        return 0
    open_ids = np.union1d(np.unique(labels[0, :, :]), np.unique(labels[-1, :, :]))
    open_ids = open_ids[open_ids != 0]
    pocket = fluid & ~np.isin(labels, open_ids)
    solid[pocket] = True
    return int(pocket.sum())


def voxelize(spheres: np.ndarray, h: GridHierarchy,
             seal: bool = True) -> np.ndarray:
    """Write the sphere mask into every depth of a hierarchy.

    The deepest stored level gets the centre-in-sphere mask (optionally
    with enclosed pockets sealed); shallower levels receive the
    majority-restricted version.  Returns the deepest-level solid mask.
    """
    depth = h.deepest_depth
    mask = voxelize_spheres(spheres, h.config.domain_min,
                            h.level_spacing(depth), h.level_resolution(depth))
    if seal:
        seal_pockets(mask)
    assign_global_solids(h, mask, depth)
    return mask


def porosity(solid) -> float:
    """Fluid-cell share of the given mask or flag array."""
    arr = np.asarray(solid)
    if arr.size == 0:
        raise ValueError("empty region")
    if arr.dtype == np.bool_:
        return float(1.0 - arr.mean())
    return float(np.mean(arr == FLUID))
