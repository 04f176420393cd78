# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled physics kernels.

Mirrors ``_pykernels`` operation for operation; keep the two in sync.
"""
from libc.math cimport sqrt


def vertical_substeps(double[::1] z, double[::1] vz, const double[::1] mass,
                      const double[::1] force, double dt, int n_sub, double gravity):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t i
    cdef int s
    cdef double a, v, zi
    with nogil:
        for s in range(n_sub):
            for i in range(n):
                a = force[i] / mass[i] - gravity
                v = vz[i] + a * dt
                zi = z[i] + v * dt
                if zi <= 0.0:
                    zi = 0.0
                    v = 0.0
                vz[i] = v
                z[i] = zi


cdef enum:
    MAXBLK = 16


cdef void _contact_pass(double[:, ::1] pos, double[:, ::1] vel,
                        const double[::1] inv_mass, const long[::1] blk_body,
                        const double[:, ::1] blk_off, double[::1] fist,
                        double fist_radius, double block_radius, bint shock) noexcept nogil:
    cdef Py_ssize_t nblk = blk_body.shape[0]
    cdef Py_ssize_t nbody = pos.shape[0]
    cdef Py_ssize_t i, j, a, c, b, bi, bj, k
    cdef double rsum, dx, dy, dz, dist, pen, nx, ny, nz, vn, minz, zc
    cdef double wi, wj, wsum, si, sj, jmp
    cdef double zs[MAXBLK]
    cdef Py_ssize_t order[MAXBLK]

    if fist_radius > 0.0:
        rsum = fist_radius + block_radius
        for i in range(nblk):
            b = blk_body[i]
            dx = pos[b, 0] + blk_off[i, 0] - fist[0]
            dy = pos[b, 1] + blk_off[i, 1] - fist[1]
            dz = pos[b, 2] + blk_off[i, 2] - fist[2]
            dist = sqrt(dx * dx + dy * dy + dz * dz)
            pen = rsum - dist
            if pen > 0.0:
                if dist > 0.0:
                    nx = dx / dist
                    ny = dy / dist
                    nz = dz / dist
                else:
                    nx = 1.0
                    ny = 0.0
                    nz = 0.0
                pos[b, 0] += nx * pen
                pos[b, 1] += ny * pen
                pos[b, 2] += nz * pen
                vn = ((vel[b, 0] - fist[3]) * nx + (vel[b, 1] - fist[4]) * ny
                      + (vel[b, 2] - fist[5]) * nz)
                if vn < 0.0:
                    vel[b, 0] -= vn * nx
                    vel[b, 1] -= vn * ny
                    vel[b, 2] -= vn * nz

    for b in range(nbody):
        minz = 1e300
        for i in range(nblk):
            if blk_body[i] == b:
                zc = pos[b, 2] + blk_off[i, 2]
                if zc < minz:
                    minz = zc
        if minz < block_radius:
            pos[b, 2] += block_radius - minz
            if vel[b, 2] < 0.0:
                vel[b, 2] = 0.0

    for i in range(nblk):
        zs[i] = pos[blk_body[i], 2] + blk_off[i, 2]
        order[i] = i
    for a in range(1, nblk):
        k = order[a]
        c = a - 1
        while c >= 0 and zs[order[c]] > zs[k]:
            order[c + 1] = order[c]
            c -= 1
        order[c + 1] = k

    rsum = 2.0 * block_radius
    for a in range(nblk):
        i = order[a]
        bi = blk_body[i]
        for c in range(a + 1, nblk):
            j = order[c]
            bj = blk_body[j]
            if bi == bj:
                continue
            dx = (pos[bj, 0] + blk_off[j, 0]) - (pos[bi, 0] + blk_off[i, 0])
            dy = (pos[bj, 1] + blk_off[j, 1]) - (pos[bi, 1] + blk_off[i, 1])
            dz = (pos[bj, 2] + blk_off[j, 2]) - (pos[bi, 2] + blk_off[i, 2])
            dist = sqrt(dx * dx + dy * dy + dz * dz)
            pen = rsum - dist
            if pen <= 0.0:
                continue
            if dist > 0.0:
                nx = dx / dist
                ny = dy / dist
                nz = dz / dist
            else:
                nx = 1.0
                ny = 0.0
                nz = 0.0
            wi = 0.0 if shock else inv_mass[bi]
            wj = inv_mass[bj]
            wsum = wi + wj
            si = pen * wi / wsum
            sj = pen * wj / wsum
            pos[bi, 0] -= nx * si
            pos[bi, 1] -= ny * si
            pos[bi, 2] -= nz * si
            pos[bj, 0] += nx * sj
            pos[bj, 1] += ny * sj
            pos[bj, 2] += nz * sj
            vn = ((vel[bj, 0] - vel[bi, 0]) * nx + (vel[bj, 1] - vel[bi, 1]) * ny
                  + (vel[bj, 2] - vel[bi, 2]) * nz)
            if vn < 0.0:
                jmp = -vn / wsum
                vel[bi, 0] -= nx * (jmp * wi)
                vel[bi, 1] -= ny * (jmp * wi)
                vel[bi, 2] -= nz * (jmp * wi)
                vel[bj, 0] += nx * (jmp * wj)
                vel[bj, 1] += ny * (jmp * wj)
                vel[bj, 2] += nz * (jmp * wj)


cdef void _resolve(double[:, ::1] pos, double[:, ::1] vel,
                   const double[::1] inv_mass, const long[::1] blk_body,
                   const double[:, ::1] blk_off, double[::1] fist,
                   double fist_radius, double block_radius, int n_iter) noexcept nogil:
    cdef int it
    for it in range(n_iter):
        _contact_pass(pos, vel, inv_mass, blk_body, blk_off, fist, fist_radius,
                      block_radius, False)
    _contact_pass(pos, vel, inv_mass, blk_body, blk_off, fist, fist_radius,
                  block_radius, True)


def resolve_contacts(double[:, ::1] pos, double[:, ::1] vel,
                     const double[::1] inv_mass, const long[::1] blk_body,
                     const double[:, ::1] blk_off, double[::1] fist,
                     double fist_radius, double block_radius, int n_iter):
    if blk_body.shape[0] > MAXBLK:
        raise ValueError("too many primitive blocks for the compiled kernel")
    with nogil:
        _resolve(pos, vel, inv_mass, blk_body, blk_off, fist, fist_radius,
                 block_radius, n_iter)


def tower_substeps(double[:, ::1] pos, double[:, ::1] vel,
                   const double[::1] inv_mass, const long[::1] blk_body,
                   const double[:, ::1] blk_off, const double[:, ::1] force,
                   double[::1] fist, double fist_radius, double dt, int n_sub,
                   double gravity, double damping, double block_radius, int n_iter):
    cdef Py_ssize_t nbody = pos.shape[0]
    cdef Py_ssize_t b
    cdef int s
    cdef double w
    cdef double damp = 1.0 - damping * dt
    if blk_body.shape[0] > MAXBLK:
        raise ValueError("too many primitive blocks for the compiled kernel")
    with nogil:
        for s in range(n_sub):
            for b in range(nbody):
                w = inv_mass[b]
                vel[b, 0] = vel[b, 0] * damp + (force[b, 0] * w) * dt
                vel[b, 1] = vel[b, 1] * damp + (force[b, 1] * w) * dt
                vel[b, 2] = vel[b, 2] * damp + (force[b, 2] * w - gravity) * dt
                pos[b, 0] += vel[b, 0] * dt
                pos[b, 1] += vel[b, 1] * dt
                pos[b, 2] += vel[b, 2] * dt
            if fist_radius > 0.0:
                fist[0] += fist[3] * dt
                fist[1] += fist[4] * dt
                fist[2] += fist[5] * dt
            _resolve(pos, vel, inv_mass, blk_body, blk_off, fist, fist_radius,
                     block_radius, n_iter)
