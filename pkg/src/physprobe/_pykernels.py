"""Pure-Python physics kernels.

Reference implementation of the substep loops in ``_ckernels.pyx``. Both
modules perform the same floating point operations in the same order, so a
world stepped by either backend follows a bitwise-identical trajectory.
"""
from math import sqrt


def vertical_substeps(z, vz, mass, force, dt, n_sub, gravity):
    """Advance vertically-constrained point masses by ``n_sub`` substeps in place."""
    n = z.shape[0]
    for _ in range(n_sub):
        for i in range(n):
            a = force[i] / mass[i] - gravity
            v = vz[i] + a * dt
            zi = z[i] + v * dt
            if zi <= 0.0:
                zi = 0.0
                v = 0.0
            vz[i] = v
            z[i] = zi


def _block_order(pos, blk_body, blk_off, nblk):
    # insertion order by block-center height, ties broken by index
    zs = [pos[blk_body[i], 2] + blk_off[i, 2] for i in range(nblk)]
    order = list(range(nblk))
    for a in range(1, nblk):
        k = order[a]
        b = a - 1
        while b >= 0 and zs[order[b]] > zs[k]:
            order[b + 1] = order[b]
            b -= 1
        order[b + 1] = k
    return order


def _contact_pass(pos, vel, inv_mass, blk_body, blk_off, fist, fist_radius,
                  block_radius, shock):
    nblk = blk_body.shape[0]
    nbody = pos.shape[0]

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

    order = _block_order(pos, blk_body, blk_off, nblk)
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


def resolve_contacts(pos, vel, inv_mass, blk_body, blk_off, fist, fist_radius,
                     block_radius, n_iter):
    for _ in range(n_iter):
        _contact_pass(pos, vel, inv_mass, blk_body, blk_off, fist, fist_radius,
                      block_radius, False)
    _contact_pass(pos, vel, inv_mass, blk_body, blk_off, fist, fist_radius,
                  block_radius, True)


def tower_substeps(pos, vel, inv_mass, blk_body, blk_off, force, fist,
                   fist_radius, dt, n_sub, gravity, damping, block_radius, n_iter):
    """Advance translation-only compound bodies by ``n_sub`` substeps in place.

    ``fist`` is a length-6 buffer ``(px, py, pz, vx, vy, vz)``; a non-positive
    ``fist_radius`` disables it.
    """
    nbody = pos.shape[0]
    damp = 1.0 - damping * dt
    for _ in range(n_sub):
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
        resolve_contacts(pos, vel, inv_mass, blk_body, blk_off, fist, fist_radius,
                         block_radius, n_iter)
