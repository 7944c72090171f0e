"""Numba kernels for the D2Q9 update: fused collide+stream, boundary links.

Direction numbering (cx, cy):
    0:( 0, 0)  1:( 1, 0)  2:( 0, 1)  3:(-1, 0)  4:( 0,-1)
    5:( 1, 1)  6:(-1, 1)  7:(-1,-1)  8:( 1,-1)
Distributions are stored as f[9, ny, nx] (structure of arrays, x fastest).
Collision is applied per cell and the results pushed to the destination
array, wrapping periodically; boundary conditions then overwrite the
affected populations in place.
"""

import numpy as np
from numba import njit, prange

CX = np.array([0, 1, 0, -1, 0, 1, -1, -1, 1], dtype=np.int64)
CY = np.array([0, 0, 1, 0, -1, 1, 1, -1, -1], dtype=np.int64)
W = np.array(
    [4.0 / 9.0] + [1.0 / 9.0] * 4 + [1.0 / 36.0] * 4, dtype=np.float64
)
OPP = np.array([0, 3, 4, 1, 2, 7, 8, 5, 6], dtype=np.int64)


# Reassociation and FMA are allowed but NaN/Inf semantics are kept so the
# blow-up check below stays sound.
_FASTMATH = {"contract", "reassoc", "arcp", "nsz"}


@njit(parallel=True, fastmath=_FASTMATH, cache=True)
def collide_stream(fsrc, fdst, rho, u, solid, omega_plus, omega_minus, gx, gy):
    """TRT collision fused with push streaming; refreshes rho and u.

    gx, gy are a constant body-force density in lattice units (Guo scheme,
    half-force velocity shift). Pushing is race-free under the row-parallel
    loop because each (direction, destination row) pair has a unique source
    row. Returns the number of cells whose density left (1e-10, 1e10), which
    flags blow-up (NaN fails every comparison and is counted too).
    """
    nk, ny, nx = fsrc.shape
    bad = 0
    ap = 1.0 - 0.5 * omega_plus
    am = 1.0 - 0.5 * omega_minus
    sp = 0.5 * omega_plus
    sm = 0.5 * omega_minus
    forced = gx != 0.0 or gy != 0.0
    for j in prange(ny):
        ju = j + 1
        if ju == ny:
            ju = 0
        jd = j - 1
        if jd < 0:
            jd = ny - 1
        for i in range(nx):
            if solid[j, i]:
                continue
            f0 = fsrc[0, j, i]
            f1 = fsrc[1, j, i]
            f2 = fsrc[2, j, i]
            f3 = fsrc[3, j, i]
            f4 = fsrc[4, j, i]
            f5 = fsrc[5, j, i]
            f6 = fsrc[6, j, i]
            f7 = fsrc[7, j, i]
            f8 = fsrc[8, j, i]
            r = f0 + f1 + f2 + f3 + f4 + f5 + f6 + f7 + f8
            if not (1e-10 < r < 1e10):
                bad += 1
                continue
            inv = 1.0 / r
            # Half-force shift makes u the physically correct velocity.
            ux = (f1 - f3 + f5 - f6 - f7 + f8 + 0.5 * gx) * inv
            uy = (f2 - f4 + f5 + f6 - f7 - f8 + 0.5 * gy) * inv
            rho[j, i] = r
            u[0, j, i] = ux
            u[1, j, i] = uy

            usq = 1.5 * (ux * ux + uy * uy)
            uxx = 4.5 * ux * ux
            uyy = 4.5 * uy * uy
            uxy = 9.0 * ux * uy
            w1r = r * (1.0 / 9.0)
            w5r = r * (1.0 / 36.0)
            e0 = (4.0 / 9.0) * r * (1.0 - usq)
            e1 = w1r * (1.0 + 3.0 * ux + uxx - usq)
            e3 = w1r * (1.0 - 3.0 * ux + uxx - usq)
            e2 = w1r * (1.0 + 3.0 * uy + uyy - usq)
            e4 = w1r * (1.0 - 3.0 * uy + uyy - usq)
            e5 = w5r * (1.0 + 3.0 * (ux + uy) + uxx + uyy + uxy - usq)
            e7 = w5r * (1.0 - 3.0 * (ux + uy) + uxx + uyy + uxy - usq)
            e6 = w5r * (1.0 + 3.0 * (uy - ux) + uxx + uyy - uxy - usq)
            e8 = w5r * (1.0 + 3.0 * (ux - uy) + uxx + uyy - uxy - usq)

            # Symmetric/antisymmetric relaxation per opposing pair.
            d13p = sp * (f1 + f3 - e1 - e3)
            d13m = sm * (f1 - f3 - e1 + e3)
            d24p = sp * (f2 + f4 - e2 - e4)
            d24m = sm * (f2 - f4 - e2 + e4)
            d57p = sp * (f5 + f7 - e5 - e7)
            d57m = sm * (f5 - f7 - e5 + e7)
            d68p = sp * (f6 + f8 - e6 - e8)
            d68m = sm * (f6 - f8 - e6 + e8)
            g0 = f0 - omega_plus * (f0 - e0)
            g1 = f1 - d13p - d13m
            g3 = f3 - d13p + d13m
            g2 = f2 - d24p - d24m
            g4 = f4 - d24p + d24m
            g5 = f5 - d57p - d57m
            g7 = f7 - d57p + d57m
            g6 = f6 - d68p - d68m
            g8 = f8 - d68p + d68m

            if forced:
                # Guo source split into parts even/odd in c, each relaxed
                # with its own TRT rate.
                uf = 3.0 * (ux * gx + uy * gy)
                g0 += (4.0 / 9.0) * (ap * -uf)
                w1 = 1.0 / 9.0
                w5 = 1.0 / 36.0
                g1 += w1 * (ap * (9.0 * ux * gx - uf) + am * 3.0 * gx)
                g3 += w1 * (ap * (9.0 * ux * gx - uf) - am * 3.0 * gx)
                g2 += w1 * (ap * (9.0 * uy * gy - uf) + am * 3.0 * gy)
                g4 += w1 * (ap * (9.0 * uy * gy - uf) - am * 3.0 * gy)
                cupq = ux + uy
                cfpq = gx + gy
                g5 += w5 * (ap * (9.0 * cupq * cfpq - uf) + am * 3.0 * cfpq)
                g7 += w5 * (ap * (9.0 * cupq * cfpq - uf) - am * 3.0 * cfpq)
                cumq = uy - ux
                cfmq = gy - gx
                g6 += w5 * (ap * (9.0 * cumq * cfmq - uf) + am * 3.0 * cfmq)
                g8 += w5 * (ap * (9.0 * cumq * cfmq - uf) - am * 3.0 * cfmq)

            ir = i + 1
            if ir == nx:
                ir = 0
            il = i - 1
            if il < 0:
                il = nx - 1
            fdst[0, j, i] = g0
            fdst[1, j, ir] = g1
            fdst[2, ju, i] = g2
            fdst[3, j, il] = g3
            fdst[4, jd, i] = g4
            fdst[5, ju, ir] = g5
            fdst[6, ju, il] = g6
            fdst[7, jd, il] = g7
            fdst[8, jd, ir] = g8
    return bad


@njit(cache=True)
def apply_links(fdst, rho, link_j, link_i, link_k, link_sj, link_si, link_uwx, link_uwy, link_force):
    """Half-way bounce-back on solid links with a moving-wall correction.

    After push streaming, the population that left fluid cell (j, i) along k
    sits at the solid neighbour (sj, si); it returns to (j, i) reversed,
    minus 2*w*rho*3*(c . u_wall). Links flagged in ``link_force`` accumulate
    the momentum exchanged with the body; the serial loop keeps the reduction
    order fixed. Returns (fx, fy) in lattice units.
    """
    fx = 0.0
    fy = 0.0
    for n in range(link_j.size):
        j = link_j[n]
        i = link_i[n]
        k = link_k[n]
        out = fdst[k, link_sj[n], link_si[n]]
        bounced = out - 6.0 * W[k] * rho[j, i] * (CX[k] * link_uwx[n] + CY[k] * link_uwy[n])
        fdst[OPP[k], j, i] = bounced
        if link_force[n]:
            m = out + bounced
            fx += CX[k] * m
            fy += CY[k] * m
    return fx, fy


@njit(cache=True)
def inlet_velocity(f, j0, j1, ux_in):
    """Wet-node velocity inlet on column 0 (unknowns 1, 5, 8), uy = 0."""
    for j in range(j0, j1):
        f0 = f[0, j, 0]
        f2 = f[2, j, 0]
        f3 = f[3, j, 0]
        f4 = f[4, j, 0]
        f6 = f[6, j, 0]
        f7 = f[7, j, 0]
        r = (f0 + f2 + f4 + 2.0 * (f3 + f6 + f7)) / (1.0 - ux_in)
        f[1, j, 0] = f3 + (2.0 / 3.0) * r * ux_in
        f[5, j, 0] = f7 - 0.5 * (f2 - f4) + (1.0 / 6.0) * r * ux_in
        f[8, j, 0] = f6 + 0.5 * (f2 - f4) + (1.0 / 6.0) * r * ux_in


@njit(cache=True)
def outlet_zero_gradient(f, j0, j1):
    """Copy the left-moving populations from the penultimate column."""
    nx = f.shape[2]
    for j in range(j0, j1):
        f[3, j, nx - 1] = f[3, j, nx - 2]
        f[6, j, nx - 1] = f[6, j, nx - 2]
        f[7, j, nx - 1] = f[7, j, nx - 2]


@njit(cache=True)
def equilibrium(rho, u, solid, f):
    """Fill f with the standard second-order equilibrium for (rho, u)."""
    ny, nx = rho.shape
    for j in range(ny):
        for i in range(nx):
            r = rho[j, i]
            ux = u[0, j, i]
            uy = u[1, j, i]
            if solid[j, i]:
                ux = 0.0
                uy = 0.0
            usq = 1.5 * (ux * ux + uy * uy)
            for k in range(9):
                cu = CX[k] * ux + CY[k] * uy
                f[k, j, i] = W[k] * r * (1.0 + 3.0 * cu + 4.5 * cu * cu - usq)
