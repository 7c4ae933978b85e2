"""Darcy analytics: directional permeability probes over stored fields.

A probe box is snapped to the cell lattice of one stored depth; the
volume-averaged fluid velocity and the pressure drop between the two
boundary cell layers give a permeability per direction.  Directions
whose pressure drop sits below the guard threshold are reported as
undefined (NaN plus a flag), never as a division blow-up.  All
averages use fluid cells only so solid grains neither dilute the
velocity nor leak their (meaningless) pressure into the layer means.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import FLUID, GridHierarchy, box_slices

EPS_DP = 1e-12  # pressure drops at or below this are noise, not signal


@dataclass(frozen=True)
class DarcySample:
    """One probe: averaged velocities, pressure drops, permeabilities."""

    point: tuple[float, float, float]
    u_mean: tuple[float, float, float]
    dp: tuple[float, float, float]
    length: tuple[float, float, float]
    k: tuple[float, float, float]
    note: str = ""

    def defined(self, axis: int) -> bool:
        return math.isfinite(self.k[axis])


@dataclass(frozen=True)
class PermeabilitySeries:
    """Ordered samples plus per-direction population statistics."""

    samples: tuple[DarcySample, ...]
    mean: tuple[float, float, float]
    sigma: tuple[float, float, float]
    excluded: tuple[int, int, int]

    @classmethod
    def from_samples(cls, samples) -> "PermeabilitySeries":
        samples = tuple(samples)
        mean, sigma, excluded = [], [], []
        for a in range(3):
            ks = [s.k[a] for s in samples if s.defined(a)]
            excluded.append(len(samples) - len(ks))
            if ks:
                m = sum(ks) / len(ks)
                mean.append(m)
                sigma.append(math.sqrt(sum((v - m) ** 2 for v in ks) / len(ks)))
            else:
                mean.append(float("nan"))
                sigma.append(float("nan"))
        return cls(samples=samples, mean=tuple(mean), sigma=tuple(sigma),
                   excluded=tuple(excluded))


def _gather_box(h: GridHierarchy, box, depth: int):
    """Cell-centred p, u, and fluid mask for one lattice-aligned box."""
    dmin, dmax = h.config.domain_min, h.config.domain_max
    tol = 1e-9 * max(b - a for a, b in zip(dmin, dmax))
    for a in range(3):
        if box[a] < dmin[a] - tol or box[a + 3] > dmax[a] + tol:
            raise ValueError(f"probe box outside the domain on axis {a}")
        if box[a + 3] <= box[a]:
            raise ValueError(f"empty probe box on axis {a}")
    if depth not in h.depth_index:
        raise ValueError(f"depth {depth} not populated")
    spacing = h.level_spacing(depth)
    res = h.level_resolution(depth)
    sl = box_slices(dmin, spacing, res, box)
    shape = tuple(s.stop - s.start for s in sl)
    p = np.zeros(shape)
    fluid = np.zeros(shape, dtype=bool)
    uc = [np.zeros(shape) for _ in range(3)]
    s = h.config.block_size
    for uid in h.level_uids(depth):
        g = h.grids[uid]
        lo = [g.block_coords[a] * s[a] for a in range(3)]
        src, dst = [], []
        empty = False
        for a in range(3):
            o0 = max(lo[a], sl[a].start)
            o1 = min(lo[a] + s[a], sl[a].stop)
            if o1 <= o0:
                empty = True
                break
            src.append((o0 - lo[a] + 1, o1 - lo[a] + 1))  # ghost offset
            dst.append(slice(o0 - sl[a].start, o1 - sl[a].start))
        if empty:
            continue
        d = h.data[uid]
        isl = tuple(slice(a0, a1) for a0, a1 in src)
        dsl = tuple(dst)
        p[dsl] = d.p[isl]
        fluid[dsl] = d.flags[isl] == FLUID
        for a, u in enumerate((d.ux, d.uy, d.uz)):
            left = list(isl)
            right = list(isl)
            right[a] = slice(src[a][0] + 1, src[a][1] + 1)
            uc[a][dsl] = 0.5 * (u[tuple(left)] + u[tuple(right)])
    return p, uc, fluid, spacing, shape


def _probe(h: GridHierarchy, box, mu: float, depth: int,
           eps_dp: float) -> DarcySample:
    p, uc, fluid, spacing, shape = _gather_box(h, box, depth)
    point = tuple(0.5 * (box[a] + box[a + 3]) for a in range(3))
    u_mean, dp, length, k = [], [], [], []
    nan = float("nan")
    any_fluid = bool(fluid.any())
    for a in range(3):
        if not any_fluid or shape[a] < 2:
            u_mean.append(nan)
            dp.append(nan)
            length.append(nan)
            k.append(nan)
            continue
        ub = float(uc[a][fluid].mean())
        up = np.take(fluid, 0, axis=a)
        down = np.take(fluid, -1, axis=a)
        if not (up.any() and down.any()):
            u_mean.append(ub)
            dp.append(nan)
            length.append(nan)
            k.append(nan)
            continue
        d = (float(np.take(p, -1, axis=a)[down].mean())
             - float(np.take(p, 0, axis=a)[up].mean()))
        # the drop is measured between the two boundary cell layers, so
        # the matching length is their centre-to-centre distance
        ln = (shape[a] - 1) * spacing[a]
        u_mean.append(ub)
        dp.append(d)
        length.append(ln)
        k.append(-ub * mu * ln / d if abs(d) > eps_dp else nan)
    return DarcySample(point=point, u_mean=tuple(u_mean), dp=tuple(dp),
                       length=tuple(length), k=tuple(k))


def subdomain_permeability(h: GridHierarchy, box, mu: float,
                           depth: int | None = None,
                           eps_dp: float = EPS_DP):
    """Directional permeabilities k_i = -u_i mu L_i / dp_i over a box."""
    if depth is None:
        depth = h.deepest_depth
    return _probe(h, tuple(float(v) for v in box), mu, depth, eps_dp).k


def point_series(h: GridHierarchy, points, edge: float, mu: float,
                 depth: int | None = None,
                 eps_dp: float = EPS_DP) -> PermeabilitySeries:
    """One cubic probe of the given edge length per point, plus statistics.

    Probe failures (box outside the domain, no cells) annotate the
    sample and leave its directions undefined; the series always
    returns one sample per input point in order.
    """
    if depth is None:
        depth = h.deepest_depth
    half = 0.5 * float(edge)
    samples = []
    for pt in points:
        pt = tuple(float(v) for v in pt)
        box = (pt[0] - half, pt[1] - half, pt[2] - half,
               pt[0] + half, pt[1] + half, pt[2] + half)
        try:
            samples.append(_probe(h, box, mu, depth, eps_dp))
        except ValueError as exc:
            nan3 = (float("nan"),) * 3
            samples.append(DarcySample(point=pt, u_mean=nan3, dp=nan3,
                                       length=nan3, k=nan3, note=str(exc)))
    return PermeabilitySeries.from_samples(samples)


def hydraulic_conductivity(k: float, rho: float, g: float, mu: float) -> float:
    """K = k rho g / mu, the head-based counterpart of permeability."""
    if mu <= 0.0:
        raise ValueError(f"viscosity must be positive, got {mu}")
    return k * rho * g / mu


def darcy_velocity(K: float, delta_head: float, length: float) -> float:
    """Seepage flux U = -K dh/L for a head difference over a length."""
    if length <= 0.0:
        raise ValueError(f"length must be positive, got {length}")
    return -K * delta_head / length


def _fmt(v: float) -> str:
    return "undef" if not math.isfinite(v) else repr(float(v))


def export_csv(series: PermeabilitySeries, path):
    """Samples plus trailing mean/stddev rows, byte-deterministic."""
    if not series.samples:
        raise ValueError("empty series")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["px", "py", "pz", "kx", "ky", "kz", "note"])
        for s in series.samples:
            w.writerow([repr(float(c)) for c in s.point]
                       + [_fmt(v) for v in s.k] + [s.note])
        w.writerow(["mean", "", ""] + [_fmt(v) for v in series.mean]
                   + ["excluded=%d;%d;%d" % series.excluded])
        w.writerow(["stddev", "", ""] + [_fmt(v) for v in series.sigma]
                   + ["population"])
