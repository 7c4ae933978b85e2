"""Numba-jitted versions of the hot per-block kernels.

Same contracts as numpy_backend; see that module for the array layout
notes.  fastmath stays off so results are reproducible and independent of
the block decomposition.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True, fastmath=False)

FLUID = 0
SOLID = 1


@njit(**_JIT)
def jacobi_sweep(p, rhs, ax, ay, az, diag, fluid, omega, out):
    nx, ny, nz = rhs.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if fluid[i, j, k] == 0:
                    out[i + 1, j + 1, k + 1] = 0.0
                    continue
                pc = p[i + 1, j + 1, k + 1]
                ap = ax[i + 1, j, k] * (p[i + 2, j + 1, k + 1] - pc)
                ap += ax[i, j, k] * (p[i, j + 1, k + 1] - pc)
                ap += ay[i, j + 1, k] * (p[i + 1, j + 2, k + 1] - pc)
                ap += ay[i, j, k] * (p[i + 1, j, k + 1] - pc)
                ap += az[i, j, k + 1] * (p[i + 1, j + 1, k + 2] - pc)
                ap += az[i, j, k] * (p[i + 1, j + 1, k] - pc)
                out[i + 1, j + 1, k + 1] = pc + omega * (rhs[i, j, k] - ap) / diag[i, j, k]


@njit(**_JIT)
def residual(p, rhs, ax, ay, az, fluid, out):
    nx, ny, nz = rhs.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if fluid[i, j, k] == 0:
                    out[i, j, k] = 0.0
                    continue
                pc = p[i + 1, j + 1, k + 1]
                ap = ax[i + 1, j, k] * (p[i + 2, j + 1, k + 1] - pc)
                ap += ax[i, j, k] * (p[i, j + 1, k + 1] - pc)
                ap += ay[i, j + 1, k] * (p[i + 1, j + 2, k + 1] - pc)
                ap += ay[i, j, k] * (p[i + 1, j, k + 1] - pc)
                ap += az[i, j, k + 1] * (p[i + 1, j + 1, k + 2] - pc)
                ap += az[i, j, k] * (p[i + 1, j + 1, k] - pc)
                out[i, j, k] = rhs[i, j, k] - ap


@njit(**_JIT)
def divergence(ux, uy, uz, fluid, dx, dy, dz, out):
    nx, ny, nz = fluid.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if fluid[i, j, k] == 0:
                    out[i, j, k] = 0.0
                    continue
                d = (ux[i + 2, j + 1, k + 1] - ux[i + 1, j + 1, k + 1]) / dx
                d += (uy[i + 1, j + 2, k + 1] - uy[i + 1, j + 1, k + 1]) / dy
                d += (uz[i + 1, j + 1, k + 2] - uz[i + 1, j + 1, k + 1]) / dz
                out[i, j, k] = d


@njit(**_JIT)
def explicit_x(ux, uy, uz, dx, dy, dz, nu, bx, conv, out):
    nx = ux.shape[0] - 2
    ny = ux.shape[1] - 2
    nz = ux.shape[2] - 2
    for i in range(1, nx + 1):
        for j in range(1, ny + 1):
            for k in range(1, nz + 1):
                c = ux[i, j, k]
                uce = 0.5 * (c + ux[i + 1, j, k])
                ucw = 0.5 * (ux[i - 1, j, k] + c)
                conv_x = (uce * uce - ucw * ucw) / dx

                uy_n = 0.5 * (uy[i - 1, j + 1, k] + uy[i, j + 1, k])
                uy_s = 0.5 * (uy[i - 1, j, k] + uy[i, j, k])
                ux_n = 0.5 * (c + ux[i, j + 1, k])
                ux_s = 0.5 * (ux[i, j - 1, k] + c)
                conv_y = (ux_n * uy_n - ux_s * uy_s) / dy

                uz_t = 0.5 * (uz[i - 1, j, k + 1] + uz[i, j, k + 1])
                uz_b = 0.5 * (uz[i - 1, j, k] + uz[i, j, k])
                ux_t = 0.5 * (c + ux[i, j, k + 1])
                ux_b = 0.5 * (ux[i, j, k - 1] + c)
                conv_z = (ux_t * uz_t - ux_b * uz_b) / dz

                diff = (ux[i + 1, j, k] - 2.0 * c + ux[i - 1, j, k]) / (dx * dx)
                diff += (ux[i, j + 1, k] - 2.0 * c + ux[i, j - 1, k]) / (dy * dy)
                diff += (ux[i, j, k + 1] - 2.0 * c + ux[i, j, k - 1]) / (dz * dz)

                out[i, j, k] = -conv * (conv_x + conv_y + conv_z) + nu * diff + bx


@njit(**_JIT)
def explicit_y(ux, uy, uz, dx, dy, dz, nu, by, conv, out):
    nx = uy.shape[0] - 2
    ny = uy.shape[1] - 2
    nz = uy.shape[2] - 2
    for i in range(1, nx + 1):
        for j in range(1, ny + 1):
            for k in range(1, nz + 1):
                c = uy[i, j, k]
                ucn = 0.5 * (c + uy[i, j + 1, k])
                ucs = 0.5 * (uy[i, j - 1, k] + c)
                conv_y = (ucn * ucn - ucs * ucs) / dy

                ux_e = 0.5 * (ux[i + 1, j - 1, k] + ux[i + 1, j, k])
                ux_w = 0.5 * (ux[i, j - 1, k] + ux[i, j, k])
                uy_e = 0.5 * (c + uy[i + 1, j, k])
                uy_w = 0.5 * (uy[i - 1, j, k] + c)
                conv_x = (uy_e * ux_e - uy_w * ux_w) / dx

                uz_t = 0.5 * (uz[i, j - 1, k + 1] + uz[i, j, k + 1])
                uz_b = 0.5 * (uz[i, j - 1, k] + uz[i, j, k])
                uy_t = 0.5 * (c + uy[i, j, k + 1])
                uy_b = 0.5 * (uy[i, j, k - 1] + c)
                conv_z = (uy_t * uz_t - uy_b * uz_b) / dz

                diff = (uy[i + 1, j, k] - 2.0 * c + uy[i - 1, j, k]) / (dx * dx)
                diff += (uy[i, j + 1, k] - 2.0 * c + uy[i, j - 1, k]) / (dy * dy)
                diff += (uy[i, j, k + 1] - 2.0 * c + uy[i, j, k - 1]) / (dz * dz)

                out[i, j, k] = -conv * (conv_x + conv_y + conv_z) + nu * diff + by


@njit(**_JIT)
def explicit_z(ux, uy, uz, dx, dy, dz, nu, bz, conv, out):
    nx = uz.shape[0] - 2
    ny = uz.shape[1] - 2
    nz = uz.shape[2] - 2
    for i in range(1, nx + 1):
        for j in range(1, ny + 1):
            for k in range(1, nz + 1):
                c = uz[i, j, k]
                uct = 0.5 * (c + uz[i, j, k + 1])
                ucb = 0.5 * (uz[i, j, k - 1] + c)
                conv_z = (uct * uct - ucb * ucb) / dz

                ux_e = 0.5 * (ux[i + 1, j, k - 1] + ux[i + 1, j, k])
                ux_w = 0.5 * (ux[i, j, k - 1] + ux[i, j, k])
                uz_e = 0.5 * (c + uz[i + 1, j, k])
                uz_w = 0.5 * (uz[i - 1, j, k] + c)
                conv_x = (uz_e * ux_e - uz_w * ux_w) / dx

                uy_n = 0.5 * (uy[i, j + 1, k - 1] + uy[i, j + 1, k])
                uy_s = 0.5 * (uy[i, j, k - 1] + uy[i, j, k])
                uz_n = 0.5 * (c + uz[i, j + 1, k])
                uz_s = 0.5 * (uz[i, j - 1, k] + c)
                conv_y = (uz_n * uy_n - uz_s * uy_s) / dy

                diff = (uz[i + 1, j, k] - 2.0 * c + uz[i - 1, j, k]) / (dx * dx)
                diff += (uz[i, j + 1, k] - 2.0 * c + uz[i, j - 1, k]) / (dy * dy)
                diff += (uz[i, j, k + 1] - 2.0 * c + uz[i, j, k - 1]) / (dz * dz)

                out[i, j, k] = -conv * (conv_x + conv_y + conv_z) + nu * diff + bz


@njit(**_JIT)
def predictor(u, hn, hprev, dt, mask, first, out):
    nx, ny, nz = u.shape
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                if mask[i, j, k] == 0:
                    out[i, j, k] = u[i, j, k]
                elif first:
                    out[i, j, k] = u[i, j, k] + dt * hn[i, j, k]
                else:
                    out[i, j, k] = u[i, j, k] + dt * (
                        1.5 * hn[i, j, k] - 0.5 * hprev[i, j, k]
                    )


@njit(**_JIT)
def correct_x(ux, p, mask, dt_over_rho, dx):
    nx, ny, nz = ux.shape
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                if mask[i, j, k] != 0:
                    ux[i, j, k] -= dt_over_rho * ((p[i, j, k] - p[i - 1, j, k]) / dx)


@njit(**_JIT)
def correct_y(uy, p, mask, dt_over_rho, dy):
    nx, ny, nz = uy.shape
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                if mask[i, j, k] != 0:
                    uy[i, j, k] -= dt_over_rho * ((p[i, j, k] - p[i, j - 1, k]) / dy)


@njit(**_JIT)
def correct_z(uz, p, mask, dt_over_rho, dz):
    nx, ny, nz = uz.shape
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                if mask[i, j, k] != 0:
                    uz[i, j, k] -= dt_over_rho * ((p[i, j, k] - p[i, j, k - 1]) / dz)


@njit(**_JIT)
def restrict_cell(fine, rx, ry, rz, out):
    ncx, ncy, ncz = out.shape
    inv = 1.0 / (rx * ry * rz)
    for I in range(ncx):
        for J in range(ncy):
            for K in range(ncz):
                acc = 0.0
                for a in range(rx):
                    for b in range(ry):
                        for c in range(rz):
                            acc += fine[1 + I * rx + a, 1 + J * ry + b, 1 + K * rz + c]
                out[I, J, K] = acc * inv


@njit(**_JIT)
def inject_cell(coarse, rx, ry, rz, out):
    nx = out.shape[0] - 2
    ny = out.shape[1] - 2
    nz = out.shape[2] - 2
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                out[i + 1, j + 1, k + 1] = coarse[i // rx, j // ry, k // rz]


@njit(**_JIT)
def inject_add_cell(coarse, rx, ry, rz, fluid, out):
    nx, ny, nz = fluid.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if fluid[i, j, k] != 0:
                    out[i + 1, j + 1, k + 1] += coarse[i // rx, j // ry, k // rz]


@njit(**_JIT)
def restrict_face_x(fine_ux, rx, ry, rz, out):
    nfx, ncy, ncz = out.shape
    inv = 1.0 / (ry * rz)
    for I in range(nfx):
        for J in range(ncy):
            for K in range(ncz):
                acc = 0.0
                for b in range(ry):
                    for c in range(rz):
                        acc += fine_ux[1 + I * rx, 1 + J * ry + b, 1 + K * rz + c]
                out[I, J, K] = acc * inv


@njit(**_JIT)
def restrict_face_y(fine_uy, rx, ry, rz, out):
    ncx, nfy, ncz = out.shape
    inv = 1.0 / (rx * rz)
    for I in range(ncx):
        for J in range(nfy):
            for K in range(ncz):
                acc = 0.0
                for a in range(rx):
                    for c in range(rz):
                        acc += fine_uy[1 + I * rx + a, 1 + J * ry, 1 + K * rz + c]
                out[I, J, K] = acc * inv


@njit(**_JIT)
def restrict_face_z(fine_uz, rx, ry, rz, out):
    ncx, ncy, nfz = out.shape
    inv = 1.0 / (rx * ry)
    for I in range(ncx):
        for J in range(ncy):
            for K in range(nfz):
                acc = 0.0
                for a in range(rx):
                    for b in range(ry):
                        acc += fine_uz[1 + I * rx + a, 1 + J * ry + b, 1 + K * rz]
                out[I, J, K] = acc * inv


@njit(**_JIT)
def voxelize_flags(origin_x, origin_y, origin_z, dx, dy, dz, spheres, flags):
    nx, ny, nz = flags.shape
    for s in range(spheres.shape[0]):
        cx = spheres[s, 0]
        cy = spheres[s, 1]
        cz = spheres[s, 2]
        r = spheres[s, 3]
        r2 = r * r
        i0 = max(int(np.floor((cx - r - origin_x) / dx - 0.5)), 0)
        i1 = min(int(np.ceil((cx + r - origin_x) / dx - 0.5)) + 1, nx)
        j0 = max(int(np.floor((cy - r - origin_y) / dy - 0.5)), 0)
        j1 = min(int(np.ceil((cy + r - origin_y) / dy - 0.5)) + 1, ny)
        k0 = max(int(np.floor((cz - r - origin_z) / dz - 0.5)), 0)
        k1 = min(int(np.ceil((cz + r - origin_z) / dz - 0.5)) + 1, nz)
        for i in range(i0, i1):
            x = origin_x + (i + 0.5) * dx - cx
            for j in range(j0, j1):
                y = origin_y + (j + 0.5) * dy - cy
                for k in range(k0, k1):
                    z = origin_z + (k + 0.5) * dz - cz
                    if x * x + y * y + z * z < r2:
                        flags[i, j, k] = SOLID
