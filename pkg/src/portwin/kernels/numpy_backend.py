"""Vectorised numpy reference implementations of the hot per-block kernels.

All field arrays carry one ghost layer: an array for a block with interior
shape (nx, ny, nz) has shape (nx+2, ny+2, nz+2).  Cell (i, j, k) with
1 <= i <= nx is interior.  Staggered velocity components use the same array
shape with the convention that ``ux[i, j, k]`` is the x-velocity on the
*minus-x face* of cell (i, j, k); the closing face of the block is index
nx+1.  Pressure-operator coefficient arrays (ax, ay, az) live on faces
between interior cells including the two domain/ghost-adjacent faces:
``ax`` has shape (nx+1, ny, nz) and ``ax[i-1, j-1, k-1]`` couples cells
(i-1, j, k) and (i, j, k) of the ghost-inclusive arrays.

The numba backend mirrors these functions loop-for-loop; keep the two in
sync.  Every function writes only interior entries of its output.
"""

import numpy as np

FLUID = 0
SOLID = 1


def jacobi_sweep(p, rhs, ax, ay, az, diag, fluid, omega, out):
    """One damped Jacobi sweep for the 7-point pressure operator.

    ``p`` must have up-to-date ghosts.  ``diag`` already accounts for the
    Dirichlet double coupling; non-fluid cells are forced to zero.
    """
    ap = _apply_operator(p, ax, ay, az)
    pi = p[1:-1, 1:-1, 1:-1]
    upd = pi + omega * (rhs - ap) / diag
    out[1:-1, 1:-1, 1:-1] = np.where(fluid != 0, upd, 0.0)


def residual(p, rhs, ax, ay, az, fluid, out):
    """out = rhs - A p on fluid cells, 0 elsewhere (interior only)."""
    ap = _apply_operator(p, ax, ay, az)
    out[:, :, :] = np.where(fluid != 0, rhs - ap, 0.0)


def _apply_operator(p, ax, ay, az):
    pi = p[1:-1, 1:-1, 1:-1]
    ap = ax[1:, :, :] * (p[2:, 1:-1, 1:-1] - pi)
    ap += ax[:-1, :, :] * (p[:-2, 1:-1, 1:-1] - pi)
    ap += ay[:, 1:, :] * (p[1:-1, 2:, 1:-1] - pi)
    ap += ay[:, :-1, :] * (p[1:-1, :-2, 1:-1] - pi)
    ap += az[:, :, 1:] * (p[1:-1, 1:-1, 2:] - pi)
    ap += az[:, :, :-1] * (p[1:-1, 1:-1, :-2] - pi)
    return ap


def divergence(ux, uy, uz, fluid, dx, dy, dz, out):
    """Net face flux per cell volume for every interior fluid cell."""
    div = (ux[2:, 1:-1, 1:-1] - ux[1:-1, 1:-1, 1:-1]) / dx
    div += (uy[1:-1, 2:, 1:-1] - uy[1:-1, 1:-1, 1:-1]) / dy
    div += (uz[1:-1, 1:-1, 2:] - uz[1:-1, 1:-1, 1:-1]) / dz
    out[:, :, :] = np.where(fluid != 0, div, 0.0)


def explicit_x(ux, uy, uz, dx, dy, dz, nu, bx, conv, out):
    """Explicit momentum term for the x component on faces i=1..nx.

    conv is 1.0 or 0.0 and scales the convective fluxes.
    """
    C, W, E = ux[1:-1, 1:-1, 1:-1], ux[:-2, 1:-1, 1:-1], ux[2:, 1:-1, 1:-1]
    uce = 0.5 * (C + E)
    ucw = 0.5 * (W + C)
    conv_x = (uce * uce - ucw * ucw) / dx

    uy_n = 0.5 * (uy[:-2, 2:, 1:-1] + uy[1:-1, 2:, 1:-1])
    uy_s = 0.5 * (uy[:-2, 1:-1, 1:-1] + uy[1:-1, 1:-1, 1:-1])
    ux_n = 0.5 * (C + ux[1:-1, 2:, 1:-1])
    ux_s = 0.5 * (ux[1:-1, :-2, 1:-1] + C)
    conv_y = (ux_n * uy_n - ux_s * uy_s) / dy

    uz_t = 0.5 * (uz[:-2, 1:-1, 2:] + uz[1:-1, 1:-1, 2:])
    uz_b = 0.5 * (uz[:-2, 1:-1, 1:-1] + uz[1:-1, 1:-1, 1:-1])
    ux_t = 0.5 * (C + ux[1:-1, 1:-1, 2:])
    ux_b = 0.5 * (ux[1:-1, 1:-1, :-2] + C)
    conv_z = (ux_t * uz_t - ux_b * uz_b) / dz

    diff = (E - 2.0 * C + W) / (dx * dx)
    diff += (ux[1:-1, 2:, 1:-1] - 2.0 * C + ux[1:-1, :-2, 1:-1]) / (dy * dy)
    diff += (ux[1:-1, 1:-1, 2:] - 2.0 * C + ux[1:-1, 1:-1, :-2]) / (dz * dz)

    out[1:-1, 1:-1, 1:-1] = -conv * (conv_x + conv_y + conv_z) + nu * diff + bx


def explicit_y(ux, uy, uz, dx, dy, dz, nu, by, conv, out):
    C, S, N = uy[1:-1, 1:-1, 1:-1], uy[1:-1, :-2, 1:-1], uy[1:-1, 2:, 1:-1]
    ucn = 0.5 * (C + N)
    ucs = 0.5 * (S + C)
    conv_y = (ucn * ucn - ucs * ucs) / dy

    ux_e = 0.5 * (ux[2:, :-2, 1:-1] + ux[2:, 1:-1, 1:-1])
    ux_w = 0.5 * (ux[1:-1, :-2, 1:-1] + ux[1:-1, 1:-1, 1:-1])
    uy_e = 0.5 * (C + uy[2:, 1:-1, 1:-1])
    uy_w = 0.5 * (uy[:-2, 1:-1, 1:-1] + C)
    conv_x = (uy_e * ux_e - uy_w * ux_w) / dx

    uz_t = 0.5 * (uz[1:-1, :-2, 2:] + uz[1:-1, 1:-1, 2:])
    uz_b = 0.5 * (uz[1:-1, :-2, 1:-1] + uz[1:-1, 1:-1, 1:-1])
    uy_t = 0.5 * (C + uy[1:-1, 1:-1, 2:])
    uy_b = 0.5 * (uy[1:-1, 1:-1, :-2] + C)
    conv_z = (uy_t * uz_t - uy_b * uz_b) / dz

    diff = (uy[2:, 1:-1, 1:-1] - 2.0 * C + uy[:-2, 1:-1, 1:-1]) / (dx * dx)
    diff += (N - 2.0 * C + S) / (dy * dy)
    diff += (uy[1:-1, 1:-1, 2:] - 2.0 * C + uy[1:-1, 1:-1, :-2]) / (dz * dz)

    out[1:-1, 1:-1, 1:-1] = -conv * (conv_x + conv_y + conv_z) + nu * diff + by


def explicit_z(ux, uy, uz, dx, dy, dz, nu, bz, conv, out):
    C, B, T = uz[1:-1, 1:-1, 1:-1], uz[1:-1, 1:-1, :-2], uz[1:-1, 1:-1, 2:]
    uct = 0.5 * (C + T)
    ucb = 0.5 * (B + C)
    conv_z = (uct * uct - ucb * ucb) / dz

    ux_e = 0.5 * (ux[2:, 1:-1, :-2] + ux[2:, 1:-1, 1:-1])
    ux_w = 0.5 * (ux[1:-1, 1:-1, :-2] + ux[1:-1, 1:-1, 1:-1])
    uz_e = 0.5 * (C + uz[2:, 1:-1, 1:-1])
    uz_w = 0.5 * (uz[:-2, 1:-1, 1:-1] + C)
    conv_x = (uz_e * ux_e - uz_w * ux_w) / dx

    uy_n = 0.5 * (uy[1:-1, 2:, :-2] + uy[1:-1, 2:, 1:-1])
    uy_s = 0.5 * (uy[1:-1, 1:-1, :-2] + uy[1:-1, 1:-1, 1:-1])
    uz_n = 0.5 * (C + uz[1:-1, 2:, 1:-1])
    uz_s = 0.5 * (uz[1:-1, :-2, 1:-1] + C)
    conv_y = (uz_n * uy_n - uz_s * uy_s) / dy

    diff = (uz[2:, 1:-1, 1:-1] - 2.0 * C + uz[:-2, 1:-1, 1:-1]) / (dx * dx)
    diff += (uz[1:-1, 2:, 1:-1] - 2.0 * C + uz[1:-1, :-2, 1:-1]) / (dy * dy)
    diff += (T - 2.0 * C + B) / (dz * dz)

    out[1:-1, 1:-1, 1:-1] = -conv * (conv_x + conv_y + conv_z) + nu * diff + bz


def predictor(u, hn, hprev, dt, mask, first, out):
    """u* on masked faces; Adams-Bashforth 2 or forward Euler when first."""
    ui = u[1:-1, 1:-1, 1:-1]
    if first:
        upd = ui + dt * hn[1:-1, 1:-1, 1:-1]
    else:
        upd = ui + dt * (1.5 * hn[1:-1, 1:-1, 1:-1] - 0.5 * hprev[1:-1, 1:-1, 1:-1])
    out[1:-1, 1:-1, 1:-1] = np.where(mask[1:-1, 1:-1, 1:-1] != 0, upd, ui)


def correct_x(ux, p, mask, dt_over_rho, dx):
    grad = (p[1:-1, 1:-1, 1:-1] - p[:-2, 1:-1, 1:-1]) / dx
    m = mask[1:-1, 1:-1, 1:-1] != 0
    ux[1:-1, 1:-1, 1:-1] -= np.where(m, dt_over_rho * grad, 0.0)


def correct_y(uy, p, mask, dt_over_rho, dy):
    grad = (p[1:-1, 1:-1, 1:-1] - p[1:-1, :-2, 1:-1]) / dy
    m = mask[1:-1, 1:-1, 1:-1] != 0
    uy[1:-1, 1:-1, 1:-1] -= np.where(m, dt_over_rho * grad, 0.0)


def correct_z(uz, p, mask, dt_over_rho, dz):
    grad = (p[1:-1, 1:-1, 1:-1] - p[1:-1, 1:-1, :-2]) / dz
    m = mask[1:-1, 1:-1, 1:-1] != 0
    uz[1:-1, 1:-1, 1:-1] -= np.where(m, dt_over_rho * grad, 0.0)


def restrict_cell(fine, rx, ry, rz, out):
    """Volume-average (rx, ry, rz) groups of interior fine cells."""
    f = fine[1:-1, 1:-1, 1:-1]
    nx, ny, nz = f.shape
    g = f.reshape(nx // rx, rx, ny // ry, ry, nz // rz, rz)
    out[:, :, :] = g.mean(axis=(1, 3, 5))


def inject_cell(coarse, rx, ry, rz, out):
    """Constant injection: each fine interior cell takes its parent value."""
    out[1:-1, 1:-1, 1:-1] = np.repeat(
        np.repeat(np.repeat(coarse, rx, axis=0), ry, axis=1), rz, axis=2
    )


def inject_add_cell(coarse, rx, ry, rz, fluid, out):
    """Add the injected coarse correction to fine fluid cells in place."""
    e = np.repeat(np.repeat(np.repeat(coarse, rx, axis=0), ry, axis=1), rz, axis=2)
    out[1:-1, 1:-1, 1:-1] += np.where(fluid != 0, e, 0.0)


def restrict_face_x(fine_ux, rx, ry, rz, out):
    """Average x-face values over transverse ry x rz groups at coarse planes.

    out has interior shape (nxc+1, nyc, nzc): every coarse x-face, including
    the closing plane.
    """
    f = fine_ux[1:-1, 1:-1, 1:-1]  # face planes 0..nx-1; closing plane is nx
    closing = fine_ux[-1:, 1:-1, 1:-1]
    sel = np.concatenate([f[0::rx], closing], axis=0)
    ny, nz = sel.shape[1], sel.shape[2]
    g = sel.reshape(sel.shape[0], ny // ry, ry, nz // rz, rz)
    out[:, :, :] = g.mean(axis=(2, 4))


def restrict_face_y(fine_uy, rx, ry, rz, out):
    f = fine_uy[1:-1, 1:-1, 1:-1]
    closing = fine_uy[1:-1, -1:, 1:-1]
    sel = np.concatenate([f[:, 0::ry, :], closing], axis=1)
    nx, nz = sel.shape[0], sel.shape[2]
    g = sel.reshape(nx // rx, rx, sel.shape[1], nz // rz, rz)
    out[:, :, :] = g.mean(axis=(1, 4))


def restrict_face_z(fine_uz, rx, ry, rz, out):
    f = fine_uz[1:-1, 1:-1, 1:-1]
    closing = fine_uz[1:-1, 1:-1, -1:]
    sel = np.concatenate([f[:, :, 0::rz], closing], axis=2)
    nx, ny = sel.shape[0], sel.shape[1]
    g = sel.reshape(nx // rx, rx, ny // ry, ry, sel.shape[2])
    out[:, :, :] = g.mean(axis=(1, 3))


def voxelize_flags(origin_x, origin_y, origin_z, dx, dy, dz, spheres, flags):
    """Mark SOLID every cell whose centre lies inside any sphere.

    flags is interior-shaped uint8, modified in place; spheres is (m, 4)
    float64 rows (cx, cy, cz, r).
    """
    nx, ny, nz = flags.shape
    for s in range(spheres.shape[0]):
        cx, cy, cz, r = spheres[s]
        i0 = max(int(np.floor((cx - r - origin_x) / dx - 0.5)), 0)
        i1 = min(int(np.ceil((cx + r - origin_x) / dx - 0.5)) + 1, nx)
        j0 = max(int(np.floor((cy - r - origin_y) / dy - 0.5)), 0)
        j1 = min(int(np.ceil((cy + r - origin_y) / dy - 0.5)) + 1, ny)
        k0 = max(int(np.floor((cz - r - origin_z) / dz - 0.5)), 0)
        k1 = min(int(np.ceil((cz + r - origin_z) / dz - 0.5)) + 1, nz)
        if i0 >= i1 or j0 >= j1 or k0 >= k1:
            continue
        xs = origin_x + (np.arange(i0, i1) + 0.5) * dx - cx
        ys = origin_y + (np.arange(j0, j1) + 0.5) * dy - cy
        zs = origin_z + (np.arange(k0, k1) + 0.5) * dz - cz
        d2 = (
            xs[:, None, None] ** 2
            + ys[None, :, None] ** 2
            + zs[None, None, :] ** 2
        )
        inside = d2 < r * r
        sub = flags[i0:i1, j0:j1, k0:k1]
        sub[inside] = SOLID
