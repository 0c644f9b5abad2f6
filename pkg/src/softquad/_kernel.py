"""Fused compiled stepping loop for batches of clamped rods.

Mirrors the force passes in :mod:`softquad.rod` and
:meth:`softquad.leg.RodSimulator.step` node by node; the numpy path is the
reference and the tests hold the two together.
"""
import math

import numba
import numpy as np


@numba.njit(cache=True)
def leg_substeps(b, x, z, th, vx, vz, om, xr, zr, bend_rest, shear_rest,
                 mass, rot_inertia, k_axial, k_bend, k_shear, shear_on, ds,
                 k_restore, c_damp, tension, pulley_x, pulley_z, n_routed,
                 ground_h, ground_vz, ground_vx, traction, use_traction, contact_mask,
                 k_contact, d_contact, fric_mag, v_stiction, gravity,
                 h, nsub, semi_implicit, implicit_damping, reaction, normal,
                 fx, fz, my, ex, ez, ux, uz):
    """Advance leg ``b`` by ``nsub`` substeps; its mean attachment wrench
    lands in ``reaction[b]`` and mean tip normal load in ``normal[b]``."""
    n = x.shape[1]
    reaction[b, 0] = 0.0
    reaction[b, 1] = 0.0
    reaction[b, 2] = 0.0
    normal[b] = 0.0
    for _ in range(nsub):
        for i in range(n):
            fx[i] = 0.0
            fz[i] = 0.0
            my[i] = 0.0
            ex[i] = 0.0
            ez[i] = 0.0
        # ground contact
        ntot = 0.0
        for i in range(n):
            depth = ground_h - z[b, i]
            if depth > 0.0 and contact_mask[i]:
                f = k_contact * depth + d_contact * (ground_vz - vz[b, i])
                if f > 0.0:
                    ez[i] = f
                    ntot += f
        normal[b] += ntot
        if use_traction:
            if ntot > 0.0:
                for i in range(n):
                    ex[i] += traction * ez[i] / ntot
        else:
            for i in range(n):
                if z[b, i] <= ground_h and contact_mask[i]:
                    slip = vx[b, i] - ground_vx
                    if abs(slip) >= v_stiction:
                        ex[i] -= fric_mag * (1.0 if slip > 0 else -1.0)
        # elasticity
        for i in range(n - 1):
            dx = x[b, i + 1] - x[b, i]
            dz = z[b, i + 1] - z[b, i]
            l = math.sqrt(dx * dx + dz * dz)
            if not l > 0.0:
                return -1
            tx = dx / l
            tz = dz / l
            f = k_axial[i] * (l - ds) / ds
            fx[i] += f * tx
            fz[i] += f * tz
            fx[i + 1] -= f * tx
            fz[i + 1] -= f * tz
            m = k_bend[i] * (th[b, i + 1] - th[b, i] - bend_rest[b, i])
            my[i] += m
            my[i + 1] -= m
            if shear_on:
                g = math.atan2(dz, dx) - 0.5 * (th[b, i] + th[b, i + 1]) - shear_rest[b, i]
                g = (g + math.pi) % (2.0 * math.pi) - math.pi
                q = k_shear[i] * g
                sx = q * tz / l
                sz = -q * tx / l
                fx[i + 1] += sx
                fz[i + 1] += sz
                fx[i] -= sx
                fz[i] -= sz
                my[i] += 0.5 * q
                my[i + 1] += 0.5 * q
        # tendon toward the pulley, resultant renormalised to the tension
        if tension > 0.0:
            px = pulley_x + xr[b, 0]
            pz = pulley_z + zr[b, 0]
            sx = 0.0
            sz = 0.0
            for i in range(n_routed):
                dx = px - x[b, i]
                dz = pz - z[b, i]
                d = math.sqrt(dx * dx + dz * dz)
                if d <= 0.0:
                    d = 1.0
                ux[i] = dx / d
                uz[i] = dz / d
                sx += ux[i]
                sz += uz[i]
            res = math.sqrt(sx * sx + sz * sz)
            if res > 0.0:
                w = tension / res
                for i in range(n_routed):
                    fx[i] += w * ux[i]
                    fz[i] += w * uz[i]
        rx0 = x[b, 0]
        rz0 = z[b, 0]
        rfx = 0.0
        rfz = 0.0
        rmy = 0.0
        for i in range(n):
            fx[i] += ex[i] - k_restore * (x[b, i] - xr[b, i])
            fz[i] += ez[i] - k_restore * (z[b, i] - zr[b, i])
            if not implicit_damping:
                fx[i] -= c_damp * vx[b, i]
                fz[i] -= c_damp * vz[b, i]
                my[i] -= c_damp * om[b, i]
            if i == 0:
                ax = 0.0
                az = 0.0
                al = 0.0
            else:
                ax = fx[i] / mass[i]
                az = fz[i] / mass[i] - gravity
                al = my[i] / rot_inertia[i]
            if semi_implicit:
                nvx = vx[b, i] + h * ax
                nvz = vz[b, i] + h * az
                nom = om[b, i] + h * al
                if implicit_damping:
                    rt = 1.0 + h * c_damp / mass[i]
                    nvx /= rt
                    nvz /= rt
                    nom /= 1.0 + h * c_damp / rot_inertia[i]
                nx = x[b, i] + h * nvx
                nz = z[b, i] + h * nvz
                nth = th[b, i] + h * nom
            else:
                nx = x[b, i] + h * vx[b, i]
                nz = z[b, i] + h * vz[b, i]
                nth = th[b, i] + h * om[b, i]
                nvx = vx[b, i] + h * ax
                nvz = vz[b, i] + h * az
                nom = om[b, i] + h * al
            # attachment wrench: external load less realised inertia
            gx = ex[i] - mass[i] * (nvx - vx[b, i]) / h
            gz = ez[i] - mass[i] * gravity - mass[i] * (nvz - vz[b, i]) / h
            gm = -rot_inertia[i] * (nom - om[b, i]) / h
            rfx += gx
            rfz += gz
            rmy += (x[b, i] - rx0) * gz - (z[b, i] - rz0) * gx + gm
            x[b, i] = nx
            z[b, i] = nz
            th[b, i] = nth
            vx[b, i] = nvx
            vz[b, i] = nvz
            om[b, i] = nom
        reaction[b, 0] += rfx
        reaction[b, 1] += rfz
        reaction[b, 2] += rmy
    reaction[b, 0] /= nsub
    reaction[b, 1] /= nsub
    reaction[b, 2] /= nsub
    normal[b] /= nsub
    for i in range(n):
        if not (math.isfinite(x[b, i]) and math.isfinite(z[b, i]) and math.isfinite(th[b, i])
                and math.isfinite(vx[b, i]) and math.isfinite(vz[b, i])
                and math.isfinite(om[b, i])):
            return -2
    return 0


@numba.njit(cache=True)
def fused_steps(x, z, th, vx, vz, om, xr, zr, bend_rest, shear_rest,
                mass, rot_inertia, k_axial, k_bend, k_shear, shear_on, ds,
                k_restore, c_damp, tension, pulley_x, pulley_z, n_routed,
                ground_h, ground_vz, ground_vx, traction, use_traction, contact_mask,
                k_contact, d_contact, fric_mag, v_stiction, gravity,
                h, nsub, semi_implicit, implicit_damping, reaction, normal):
    nb, n = x.shape
    fx = np.empty(n)
    fz = np.empty(n)
    my = np.empty(n)
    ex = np.empty(n)
    ez = np.empty(n)
    ux = np.empty(n)
    uz = np.empty(n)
    for b in range(nb):
        code = leg_substeps(b, x, z, th, vx, vz, om, xr, zr, bend_rest, shear_rest,
                            mass, rot_inertia, k_axial, k_bend, k_shear, shear_on, ds,
                            k_restore, c_damp, tension[b], pulley_x, pulley_z, n_routed,
                            ground_h[b], ground_vz[b], ground_vx[b], traction[b], use_traction,
                            contact_mask, k_contact, d_contact, fric_mag, v_stiction, gravity,
                            h, nsub, semi_implicit, implicit_damping, reaction, normal,
                            fx, fz, my, ex, ez, ux, uz)
        if code != 0:
            return code
    return 0


@numba.njit(cache=True)
def _wrap(a):
    if -math.pi < a <= math.pi:
        return a
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    if w == -math.pi:
        w = math.pi
    return w


@numba.njit(cache=True)
def body_steps(nsteps, x, z, th, vx, vz, om, xr, zr, bend_rest, shear_rest,
               mass, rot_inertia, k_axial, k_bend, k_shear, shear_on, ds,
               k_restore, c_damp, tensions, pulley_x, pulley_z, n_routed,
               traction, use_traction, mu, contact_mask,
               k_contact, d_contact, fric_mag, v_stiction, gravity,
               h, nsub, semi_implicit, implicit_damping,
               pos, vel, eul, omg, body_mass, inertia, attach, headings,
               include_couples, exact_euler, dt,
               reaction, normal, forces, couples, mean_forces, applied):
    """Co-step four legs and the torso for ``nsteps`` rod steps, matching
    :meth:`softquad.body.WholeBody.step`."""
    nb, n = x.shape
    fx = np.empty(n)
    fz = np.empty(n)
    my = np.empty(n)
    ex = np.empty(n)
    ez = np.empty(n)
    ux = np.empty(n)
    uz = np.empty(n)
    rot = np.empty((3, 3))
    r = np.empty((nb, 3))
    for b in range(nb):
        for j in range(3):
            mean_forces[b, j] = 0.0
    for k in range(nsteps):
        cr, sr = math.cos(eul[0]), math.sin(eul[0])
        cp, sp = math.cos(eul[1]), math.sin(eul[1])
        cy, sy = math.cos(eul[2]), math.sin(eul[2])
        rot[0, 0] = cy * cp
        rot[0, 1] = cy * sp * sr - sy * cr
        rot[0, 2] = cy * sp * cr + sy * sr
        rot[1, 0] = sy * cp
        rot[1, 1] = sy * sp * sr + cy * cr
        rot[1, 2] = sy * sp * cr - cy * sr
        rot[2, 0] = -sp
        rot[2, 1] = cp * sr
        rot[2, 2] = cp * cr
        ftot0 = 0.0
        ftot1 = 0.0
        ftot2 = 0.0
        tq0 = 0.0
        tq1 = 0.0
        tq2 = 0.0
        for b in range(nb):
            for j in range(3):
                r[b, j] = rot[j, 0] * attach[b, 0] + rot[j, 1] * attach[b, 1] + rot[j, 2] * attach[b, 2]
            avx = vel[0] + omg[1] * r[b, 2] - omg[2] * r[b, 1]
            avy = vel[1] + omg[2] * r[b, 0] - omg[0] * r[b, 2]
            avz = vel[2] + omg[0] * r[b, 1] - omg[1] * r[b, 0]
            hd = headings[b] + eul[2]
            ox, oy = math.cos(hd), math.sin(hd)
            lx, ly = -oy, ox
            in_plane = 0.0
            lateral = 0.0
            if use_traction:
                lim = mu[b] * normal[b]
                tx = min(max(traction[b, 0], -lim), lim)
                ty = min(max(traction[b, 1], -lim), lim)
                if not normal[b] > 0.0:
                    tx = 0.0
                    ty = 0.0
                applied[b, 0] = tx
                applied[b, 1] = ty
                in_plane = tx * ox + ty * oy
                lateral = tx * lx + ty * ly
            code = leg_substeps(b, x, z, th, vx, vz, om, xr, zr, bend_rest, shear_rest,
                                mass, rot_inertia, k_axial, k_bend, k_shear, shear_on, ds,
                                k_restore, c_damp, tensions[k, b], pulley_x, pulley_z, n_routed,
                                -(pos[2] + r[b, 2]), -avz, -(avx * ox + avy * oy), in_plane,
                                use_traction, contact_mask, k_contact, d_contact, fric_mag,
                                v_stiction, gravity, h, nsub, semi_implicit, implicit_damping,
                                reaction, normal, fx, fz, my, ex, ez, ux, uz)
            if code != 0:
                return code
            f0 = reaction[b, 0] * ox + lateral * lx
            f1 = reaction[b, 0] * oy + lateral * ly
            f2 = reaction[b, 1]
            forces[b, 0] = f0
            forces[b, 1] = f1
            forces[b, 2] = f2
            # planar moment acts about e_out x z = (oy, -ox, 0)
            c0 = reaction[b, 2] * oy
            c1 = -reaction[b, 2] * ox
            c2 = 0.0
            if use_traction:
                # lateral traction at the tip, lever measured from the attachment
                px_ = x[b, n - 1] * ox
                py_ = x[b, n - 1] * oy
                pz_ = z[b, n - 1]
                gx_ = lateral * lx
                gy_ = lateral * ly
                c0 += py_ * 0.0 - pz_ * gy_
                c1 += pz_ * gx_ - px_ * 0.0
                c2 += px_ * gy_ - py_ * gx_
            couples[b, 0] = c0
            couples[b, 1] = c1
            couples[b, 2] = c2
            ftot0 += f0
            ftot1 += f1
            ftot2 += f2
            tq0 += r[b, 1] * f2 - r[b, 2] * f1
            tq1 += r[b, 2] * f0 - r[b, 0] * f2
            tq2 += r[b, 0] * f1 - r[b, 1] * f0
            if include_couples:
                tq0 += c0
                tq1 += c1
                tq2 += c2
            mean_forces[b, 0] += f0
            mean_forces[b, 1] += f1
            mean_forces[b, 2] += f2
        # torso, gyroscopic term dropped; world inverse inertia R I^-1 R^T
        vel[0] += dt * ftot0 / body_mass
        vel[1] += dt * ftot1 / body_mass
        vel[2] += dt * (ftot2 / body_mass - gravity)
        pos[0] += dt * vel[0]
        pos[1] += dt * vel[1]
        pos[2] += dt * vel[2]
        b0 = (rot[0, 0] * tq0 + rot[1, 0] * tq1 + rot[2, 0] * tq2) / inertia[0]
        b1 = (rot[0, 1] * tq0 + rot[1, 1] * tq1 + rot[2, 1] * tq2) / inertia[1]
        b2 = (rot[0, 2] * tq0 + rot[1, 2] * tq1 + rot[2, 2] * tq2) / inertia[2]
        omg[0] += dt * (rot[0, 0] * b0 + rot[0, 1] * b1 + rot[0, 2] * b2)
        omg[1] += dt * (rot[1, 0] * b0 + rot[1, 1] * b1 + rot[1, 2] * b2)
        omg[2] += dt * (rot[2, 0] * b0 + rot[2, 1] * b1 + rot[2, 2] * b2)
        if exact_euler:
            pr = -sy * omg[0] + cy * omg[1]
            rr = (cy * omg[0] + sy * omg[1]) / cp
            yr = omg[2] + sp / cp * (cy * omg[0] + sy * omg[1])
        else:
            rr = omg[0]
            pr = omg[1]
            yr = omg[2]
        eul[0] = _wrap(eul[0] + dt * rr)
        eul[1] = _wrap(eul[1] + dt * pr)
        eul[2] = _wrap(eul[2] + dt * yr)
        for j in range(3):
            if not (math.isfinite(pos[j]) and math.isfinite(omg[j])):
                return -3
    for b in range(nb):
        for j in range(3):
            mean_forces[b, j] /= nsteps
    return 0
