"""Independent reference implementations used as test oracles."""
import itertools

import numpy as np


def _row_options(l, u):
    """Per row: the bounds it may sit on when active (1 = lower, 2 = upper)."""
    opts = []
    for lo, hi in zip(l, u):
        if lo == hi:
            opts.append((1,))
        else:
            opts.append(tuple(k for k, b in ((1, lo), (2, hi)) if np.isfinite(b)))
    return opts


def active_set_qp(P, q, A, l, u, tol=1e-9):
    """Exhaustive active-set enumeration for a small strictly convex QP.

    Active sets are visited by increasing size and every side assignment is
    tried; the KKT system is solved for each.  For a strictly convex QP the
    KKT point is unique, so the first primal-feasible candidate with
    sign-correct multipliers is the optimum.  Returns ``(x, f)`` or
    ``(None, inf)`` when no candidate qualifies (infeasible).
    """
    n = q.size
    m = A.shape[0]
    opts = _row_options(l, u)
    eq = [i for i in range(m) if l[i] == u[i]]
    free = [i for i in range(m) if l[i] != u[i] and opts[i]]
    for size in range(0, n - len(eq) + 1):
        for subset in itertools.combinations(free, size):
            rows = eq + list(subset)
            for sides in itertools.product(*(opts[i] for i in subset)):
                side = dict(zip(subset, sides))
                b = np.array([l[i] if i in eq or side[i] == 1 else u[i] for i in rows])
                k = len(rows)
                if k:
                    Ar = A[rows]
                    kkt = np.block([[P, Ar.T], [Ar, np.zeros((k, k))]])
                    rhs = np.concatenate([-q, b])
                else:
                    kkt, rhs = P, -q
                try:
                    sol = np.linalg.solve(kkt, rhs)
                except np.linalg.LinAlgError:
                    continue
                x, y = sol[:n], sol[n:]
                ax = A @ x
                if np.any(ax < l - tol) or np.any(ax > u + tol):
                    continue
                signs = [(y[j] <= tol) if side.get(i) == 1 else (y[j] >= -tol)
                         for j, i in enumerate(rows) if i not in eq]
                if all(signs):
                    return x, float(0.5 * x @ P @ x + q @ x)
    return None, np.inf


def random_qp(rng, n_max=8, m_max=12):
    """Strictly convex QP with a known interior-ish feasible point and a mix
    of one-sided, two-sided and equality rows."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.1 * np.eye(n)
    q = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    x_feas = rng.normal(size=n) * 0.5
    ax = A @ x_feas
    l = ax - rng.uniform(0.05, 1.0, m)
    u = ax + rng.uniform(0.05, 1.0, m)
    kind = rng.uniform(size=m)
    l = np.where(kind < 0.35, -np.inf, l)
    u = np.where((kind >= 0.35) & (kind < 0.7), np.inf, u)
    eq = (kind > 0.92) & (np.arange(m) < n - 1)
    l = np.where(eq, ax, l)
    u = np.where(eq, ax, u)
    return P, q, A, l, u


def rod_static_equilibrium(x0, z0, width, h, E, rho, k_r, g, shear_factor=None,
                           iterations=4):
    """Static shape of a clamped planar rod by direct minimisation of its
    potential energy.  Written from the energy expression alone; it shares
    no code with the simulator.

    ``shear_factor`` is ``kappa * G`` when the shear term is on.
    Returns ``(x, z, theta)`` including the clamped node 0.
    """
    n = len(x0)
    ds = np.hypot(x0[1] - x0[0], z0[1] - z0[0])
    area = width * h
    inertia = width * h ** 3 / 12.0
    mass = rho * area * ds
    ka = E * area[:-1]
    kb = E * inertia[:-1] / ds
    ks = None if shear_factor is None else shear_factor * area[:-1] * ds
    th0 = np.arctan2(z0[1] - z0[0], x0[1] - x0[0])

    def unpack(v):
        x = np.concatenate([[x0[0]], v[0::3]])
        z = np.concatenate([[z0[0]], v[1::3]])
        t = np.concatenate([[th0], v[2::3]])
        return x, z, t

    def energy(v):
        x, z, t = unpack(v)
        dx, dz = np.diff(x), np.diff(z)
        ln = np.sqrt(dx ** 2 + dz ** 2)
        e = 0.5 * ka * ((ln - ds) / ds) ** 2 * ds
        e = e + 0.5 * kb * np.diff(t) ** 2
        if ks is not None:
            gam = np.arctan2(dz, dx) - 0.5 * (t[:-1] + t[1:])
            e = e + 0.5 * ks * gam ** 2
        e = e.sum() + 0.5 * k_r * ((x - x0) ** 2 + (z - z0) ** 2).sum()
        return e + (mass * g * z).sum()

    def grad(v, step=1e-8):
        out = np.empty_like(v)
        for k in range(v.size):
            e = np.zeros_like(v)
            e[k] = step
            out[k] = (energy(v + e) - energy(v - e)) / (2 * step)
        return out

    # the rod is too stiff and too badly conditioned for quasi-Newton
    # methods, so take Newton steps on finite-difference derivatives
    v = np.column_stack([x0[1:], z0[1:], np.full(n - 1, th0)]).ravel()
    for _ in range(iterations):
        g0 = grad(v)
        hess = np.empty((v.size, v.size))
        for k in range(v.size):
            e = np.zeros_like(v)
            e[k] = 1e-6
            hess[:, k] = (grad(v + e) - grad(v - e)) / 2e-6
        hess = 0.5 * (hess + hess.T)
        dv = np.linalg.solve(hess, -g0)
        v = v + dv
        if np.abs(dv).max() < 1e-13:
            break
    return unpack(v)
