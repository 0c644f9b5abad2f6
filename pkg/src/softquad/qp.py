"""Operator-splitting (ADMM) solver for convex QPs

    minimise  1/2 x'Px + q'x   subject to  l <= Ax <= u

with Ruiz equilibration, over-relaxation, infeasibility certificates and an
active-set polish that lifts the ADMM iterate to a high-accuracy solution.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

SOLVED = "solved"
MAX_ITER = "max_iter"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"

INF = 1e20


class QpError(ValueError):
    pass


def _is_psd(P) -> bool:
    shift = 1e-8 * max(1.0, float(np.abs(P).max()))
    try:
        np.linalg.cholesky(P + shift * np.eye(P.shape[0]))
        return True
    except np.linalg.LinAlgError:
        return np.linalg.eigvalsh(P).min() >= -shift


@dataclass
class QuadraticProgram:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        A = np.asarray(self.A, dtype=float)
        self.A = A.reshape(-1, n) if A.size else np.zeros((0, n))
        m = self.A.shape[0]
        self.l = np.asarray(self.l, dtype=float).ravel() if m else np.zeros(0)
        self.u = np.asarray(self.u, dtype=float).ravel() if m else np.zeros(0)
        if self.P.shape != (n, n):
            raise QpError(f"P must be {n}x{n}, got {self.P.shape}")
        if self.l.shape != (m,) or self.u.shape != (m,):
            raise QpError("bounds must match the number of constraint rows")
        if not np.allclose(self.P, self.P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.P).max())):
            raise QpError("P must be symmetric")
        if n and not _is_psd(self.P):
            raise QpError("P must be positive semidefinite")
        if np.any(self.l > self.u):
            raise QpError("lower bound exceeds upper bound")
        self.l = np.maximum(self.l, -INF)
        self.u = np.minimum(self.u, INF)

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x)

    def dump(self, path) -> None:
        """Plain-text dump: a header line then P, q, A, l, u blocks."""
        with open(path, "w") as fh:
            fh.write(f"# qp n={self.n} m={self.m}\n")
            for name in ("P", "q", "A", "l", "u"):
                arr = np.atleast_2d(getattr(self, name))
                fh.write(f"# {name} {arr.shape[0]} {arr.shape[1]}\n")
                np.savetxt(fh, arr, fmt="%.17g")

    @classmethod
    def load(cls, path) -> "QuadraticProgram":
        blocks, cur = {}, None
        with open(path) as fh:
            for line in fh:
                if line.startswith("# qp"):
                    continue
                if line.startswith("#"):
                    _, name, r, c = line.split()
                    cur = (name, int(r), int(c))
                    blocks[name] = []
                elif line.strip():
                    blocks[cur[0]].append([float(v) for v in line.split()])
        arr = {k: np.array(v) for k, v in blocks.items()}
        return cls(arr["P"], arr["q"].ravel(), arr["A"], arr["l"].ravel(), arr["u"].ravel())


@dataclass
class QpSolution:
    x: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    y: np.ndarray = None
    objective: float = float("nan")
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


@dataclass
class KktReport:
    stationarity: float
    feasibility: float
    complementarity: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.stationarity, self.feasibility, self.complementarity) <= self.tol


def _multipliers(qp: QuadraticProgram, x):
    """Least-squares multipliers on the constraints active at ``x``."""
    ax = qp.A @ x
    scale = 1e-7 * (1.0 + np.abs(ax))
    lower = ax - qp.l <= scale
    upper = qp.u - ax <= scale
    act = lower | upper
    g = qp.P @ x + qp.q
    y = np.zeros(qp.m)
    if act.any():
        At = qp.A[act].T
        sol, *_ = np.linalg.lstsq(At, -g, rcond=None)
        # sign restrictions: lower-only rows need y <= 0, upper-only rows y >= 0
        lo_only = (lower & ~upper)[act]
        up_only = (upper & ~lower)[act]
        sol[lo_only] = np.minimum(sol[lo_only], 0.0)
        sol[up_only] = np.maximum(sol[up_only], 0.0)
        y[act] = sol
    return y


def kkt_check(qp: QuadraticProgram, x, tol: float = 1e-6, y=None) -> KktReport:
    """Residuals of the KKT conditions at ``x``.

    Without ``y`` the multipliers are fitted on the active set by least
    squares with the sign restrictions enforced.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (qp.n,):
        raise QpError(f"x must have length {qp.n}")
    if y is None:
        y = _multipliers(qp, x)
    ax = qp.A @ x
    feas = float(np.max(np.concatenate([[0.0], qp.l - ax, ax - qp.u])))
    stat = float(np.max(np.abs(qp.P @ x + qp.q + qp.A.T @ y))) if qp.n else 0.0
    yp = np.maximum(y, 0.0)
    ym = np.minimum(y, 0.0)
    comp_u = np.where(yp > 0, yp * np.abs(np.minimum(qp.u, INF) - ax), 0.0)
    comp_l = np.where(ym < 0, -ym * np.abs(ax - np.maximum(qp.l, -INF)), 0.0)
    comp = float(np.max(np.concatenate([[0.0], comp_u, comp_l])))
    return KktReport(stat, feas, comp, tol)


@dataclass
class AdmmSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-5
    eps_rel: float = 1e-5
    eps_prim_inf: float = 1e-6
    eps_dual_inf: float = 1e-6
    max_iter: int = 4000
    scaling_sweeps: int = 10
    check_every: int = 5
    equality_rho_scale: float = 1e3
    polish: bool = True
    polish_refine: int = 5
    polish_delta: float = 1e-9


@dataclass
class _Scaled:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    D: np.ndarray
    E: np.ndarray
    c: float


def ruiz_equilibrate(qp: QuadraticProgram, sweeps: int = 10) -> _Scaled:
    n, m = qp.n, qp.m
    # all scale factors are positive, so the scaled magnitudes can be
    # tracked in place and the matrices formed once at the end
    absP, absA, absq = np.abs(qp.P), np.abs(qp.A), np.abs(qp.q)
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    for _ in range(sweeps):
        if n == 0:
            break
        norm_cols = absP.max(axis=0)
        if m:
            norm_cols = np.maximum(norm_cols, absA.max(axis=0))
        d = 1.0 / np.sqrt(np.clip(norm_cols, 1e-4, 1e4))
        d[norm_cols == 0] = 1.0
        absP *= d[:, None]
        absP *= d[None, :]
        absq *= d
        D *= d
        if m:
            norm_rows = absA.max(axis=1)
            e = 1.0 / np.sqrt(np.clip(norm_rows, 1e-4, 1e4))
            e[norm_rows == 0] = 1.0
            absA *= e[:, None]
            absA *= d[None, :]
            E *= e
        # cost scaling
        mean_p = float(np.mean(absP.max(axis=0)))
        gamma = 1.0 / np.clip(max(mean_p, float(absq.max())), 1e-4, 1e4)
        absP *= gamma
        absq *= gamma
        c *= gamma
    P = c * (D[:, None] * qp.P * D[None, :])
    A = E[:, None] * qp.A * D[None, :]
    q = c * D * qp.q
    l = np.where(qp.l > -INF, E * qp.l, -INF)
    u = np.where(qp.u < INF, E * qp.u, INF)
    return _Scaled(P, q, A, l, u, D, E, c)


def _matrix_key(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        h.update(np.ascontiguousarray(a).view(np.uint8))
        h.update(str(a.shape).encode())
    return h.hexdigest()


@dataclass
class AdmmSolver:
    """Reusable solver.  The scaled KKT factorisation is cached and reused
    while ``P``, ``A`` and the equality pattern stay the same."""

    settings: AdmmSettings = field(default_factory=AdmmSettings)

    def __post_init__(self):
        self._cache_key = None
        self._cache = None

    def _setup(self, qp: QuadraticProgram):
        eq = np.abs(qp.u - qp.l) < 1e-12
        key = _matrix_key(qp.P, qp.A, eq)
        if key != self._cache_key:
            s = self.settings
            sc = ruiz_equilibrate(qp, s.scaling_sweeps)
            rho = np.full(qp.m, s.rho)
            rho[eq] *= s.equality_rho_scale
            K = sc.P + s.sigma * np.eye(qp.n) + sc.A.T @ (rho[:, None] * sc.A)
            self._cache = (sc, rho, cho_factor(K))
            self._cache_key = key
        sc, rho, fac = self._cache
        # bounds and linear term may change without refactoring
        c = sc.c
        sc = _Scaled(sc.P, c * sc.D * qp.q, sc.A,
                     np.where(qp.l > -INF, sc.E * qp.l, -INF),
                     np.where(qp.u < INF, sc.E * qp.u, INF), sc.D, sc.E, c)
        return sc, rho, fac

    def solve(self, qp: QuadraticProgram, x0=None, y0=None) -> QpSolution:
        s = self.settings
        n, m = qp.n, qp.m
        sc, rho, fac = self._setup(qp)
        D, E, c = sc.D, sc.E, sc.c
        x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / D
        z = sc.A @ x
        z = np.clip(z, sc.l, sc.u)
        y = np.zeros(m) if y0 is None else np.asarray(y0, dtype=float) / E * c
        status = MAX_ITER
        prim = dual = np.inf
        it = 0
        for it in range(1, s.max_iter + 1):
            x_prev, y_prev = x, y
            rhs = s.sigma * x - sc.q + sc.A.T @ (rho * z - y)
            xt = cho_solve(fac, rhs)
            zt = sc.A @ xt
            x = s.alpha * xt + (1.0 - s.alpha) * x
            zr = s.alpha * zt + (1.0 - s.alpha) * z
            z_new = np.clip(zr + y / rho, sc.l, sc.u)
            y = y + rho * (zr - z_new)
            z = z_new
            if it % s.check_every and it != s.max_iter:
                continue
            # unscaled residuals
            xu = D * x
            ax = (sc.A @ x) / E
            zu = z / E
            yu = E * y / c
            px = qp.P @ xu
            aty = qp.A.T @ yu
            prim = float(np.max(np.abs(ax - zu))) if m else 0.0
            dual = float(np.max(np.abs(px + qp.q + aty))) if n else 0.0
            eps_p = s.eps_abs + s.eps_rel * max(_inf_norm(ax), _inf_norm(zu))
            eps_d = s.eps_abs + s.eps_rel * max(_inf_norm(px), _inf_norm(aty), _inf_norm(qp.q))
            if prim <= eps_p and dual <= eps_d:
                status = SOLVED
                break
            if self._primal_infeasible(sc, y - y_prev):
                status = PRIMAL_INFEASIBLE
                break
            if self._dual_infeasible(sc, x - x_prev):
                status = DUAL_INFEASIBLE
                break
        xu = D * x
        yu = E * y / c
        sol = QpSolution(xu, status, it, prim, dual, yu,
                         qp.objective(xu) if status == SOLVED else float("nan"))
        if status == SOLVED and s.polish:
            polished = self._polish(qp, sol)
            if polished is not None:
                sol = polished
        return sol

    def _primal_infeasible(self, sc: _Scaled, dy) -> bool:
        norm = _inf_norm(dy)
        if norm < 1e-30:
            return False
        eps = self.settings.eps_prim_inf
        if _inf_norm(sc.A.T @ dy) > eps * norm:
            return False
        ub = np.where(sc.u < INF, sc.u, 0.0) @ np.maximum(dy, 0.0)
        lb = np.where(sc.l > -INF, sc.l, 0.0) @ np.minimum(dy, 0.0)
        # a multiplier pushing against an infinite bound rules out the certificate
        if np.any((sc.u >= INF) & (dy > eps * norm)) or np.any((sc.l <= -INF) & (dy < -eps * norm)):
            return False
        return ub + lb < -eps * norm

    def _dual_infeasible(self, sc: _Scaled, dx) -> bool:
        norm = _inf_norm(dx)
        if norm < 1e-30:
            return False
        eps = self.settings.eps_dual_inf
        if _inf_norm(sc.P @ dx) > eps * norm or sc.q @ dx > -eps * norm:
            return False
        adx = sc.A @ dx
        ok_u = np.where(sc.u < INF, adx <= eps * norm, True)
        ok_l = np.where(sc.l > -INF, adx >= -eps * norm, True)
        return bool(np.all(ok_u & ok_l))

    def _polish(self, qp: QuadraticProgram, sol: QpSolution):
        s = self.settings
        ax = qp.A @ sol.x
        y = sol.y
        lower = (ax - qp.l < -y) & (qp.l > -INF)
        upper = (qp.u - ax < y) & (qp.u < INF)
        eq = np.abs(qp.u - qp.l) < 1e-12
        lower |= eq
        upper &= ~eq
        rows = np.flatnonzero(lower | upper)
        b = np.where(lower[rows], qp.l[rows], qp.u[rows])
        Ar = qp.A[rows]
        n, k = qp.n, rows.size
        delta = s.polish_delta * max(1.0, np.abs(qp.P).max())
        kkt = np.block([[qp.P, Ar.T], [Ar, np.zeros((k, k))]])
        reg = kkt.copy()
        reg[:n, :n] += delta * np.eye(n)
        reg[n:, n:] -= delta * np.eye(k)
        rhs = np.concatenate([-qp.q, b])
        try:
            fac = lu_factor(reg)
        except (ValueError, np.linalg.LinAlgError):
            return None
        z = lu_solve(fac, rhs)
        for _ in range(s.polish_refine):
            z = z + lu_solve(fac, rhs - kkt @ z)
        if not np.all(np.isfinite(z)):
            return None
        x = z[:n]
        yr = z[n:]
        yfull = np.zeros(qp.m)
        yfull[rows] = yr
        axp = qp.A @ x
        scale = 1.0 + max(_inf_norm(axp), 1.0)
        feas = max(0.0, float(np.max(qp.l - axp, initial=0.0)), float(np.max(axp - qp.u, initial=0.0)))
        sign_ok = np.all(yfull[lower & ~eq] <= 1e-9 * (1 + _inf_norm(yfull))) and \
            np.all(yfull[upper] >= -1e-9 * (1 + _inf_norm(yfull)))
        dual = float(np.max(np.abs(qp.P @ x + qp.q + qp.A.T @ yfull), initial=0.0))
        if feas > 1e-9 * scale or not sign_ok:
            return None
        if dual > max(sol.dual_residual, 1e-9 * (1.0 + _inf_norm(qp.q))):
            return None
        return QpSolution(x, SOLVED, sol.iterations, feas, dual, yfull, qp.objective(x), True)


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def solve(qp: QuadraticProgram, eps_abs: float = 1e-5, eps_rel: float = 1e-5,
          max_iter: int = 4000, **kwargs) -> QpSolution:
    settings = AdmmSettings(eps_abs=eps_abs, eps_rel=eps_rel, max_iter=max_iter, **kwargs)
    return AdmmSolver(settings).solve(qp)
