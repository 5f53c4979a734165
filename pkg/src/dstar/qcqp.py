"""Small dense convex QCQP solver (log-barrier interior point) and a generic ADMM loop."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .transforms import QuadraticForm

KKT_TOL = 1e-6
FEAS_TOL = 1e-6
REG = 1e-9


class Status(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


class InfeasibleError(RuntimeError):
    """Raised by callers that cannot continue without a feasible point."""


@dataclass
class SolveResult:
    x_star: np.ndarray
    objective_value: float
    status: Status
    kkt_residual: float
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


# ---------------------------------------------------------------- real core

@dataclass
class QuadBatch:
    """``m`` concave quadratics ``-zs^T P zs + 2 q.zs + r`` with ``zs = z[idx[i]]``.

    ``idx=None`` means every constraint reads the full vector.
    """

    P: np.ndarray
    q: np.ndarray
    r: np.ndarray
    idx: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, float))
        m, s = self.q.shape
        self.P = np.zeros((m, s, s)) if self.P is None else np.asarray(self.P, float).reshape(m, s, s)
        self.r = np.asarray(self.r, float).reshape(m)
        if self.idx is not None:
            self.idx = np.asarray(self.idx, int).reshape(m, s)

    @property
    def m(self) -> int:
        return self.q.shape[0]

    def normalized(self) -> "QuadBatch":
        scale = np.maximum.reduce([np.abs(self.P).reshape(self.m, -1).max(axis=1, initial=0.0),
                                   np.abs(self.q).max(axis=1, initial=0.0), np.abs(self.r)])
        scale = np.where(scale > 0, scale, 1.0)
        return QuadBatch(self.P / scale[:, None, None], self.q / scale[:, None], self.r / scale, self.idx)

    def values(self, z: np.ndarray) -> np.ndarray:
        zs = z[self.idx] if self.idx is not None else np.broadcast_to(z, self.q.shape)
        return -np.einsum("mi,mij,mj->m", zs, self.P, zs) + 2 * np.einsum("mi,mi->m", self.q, zs) + self.r

    def grads(self, z: np.ndarray) -> np.ndarray:
        zs = z[self.idx] if self.idx is not None else np.broadcast_to(z, self.q.shape)
        return 2 * (self.q - np.einsum("mij,mj->mi", self.P, zs))


class _Constraints:
    """All inequalities ``g(z) >= 0`` of one problem in dense form.

    Quadratic batches are expanded to rows of a dense Jacobian; box bounds
    become linear rows. ``-hess g_j = 2 P_j`` is accumulated with ``bincount``.
    """

    def __init__(self, batches, lower, upper, n):
        self.n = n
        self.batches = batches
        self.lo_idx = np.flatnonzero(np.isfinite(lower))
        self.hi_idx = np.flatnonzero(np.isfinite(upper))
        self.lo = lower[self.lo_idx]
        self.hi = upper[self.hi_idx]
        self.sizes = [b.m for b in batches]
        self.m_quad = sum(self.sizes)
        self.m = self.m_quad + len(self.lo_idx) + len(self.hi_idx)
        self._flat = []
        for b in batches:
            if b.idx is None:
                self._flat.append(None)
            else:
                self._flat.append((b.idx[:, :, None] * n + b.idx[:, None, :]).reshape(b.m, -1))
        self._box_cols = np.r_[self.lo_idx, self.hi_idx]
        self._box_sign = np.r_[np.ones(len(self.lo_idx)), -np.ones(len(self.hi_idx))]

    def values(self, z):
        out = [b.values(z) for b in self.batches]
        out.append(z[self.lo_idx] - self.lo)
        out.append(self.hi - z[self.hi_idx])
        return np.concatenate(out)

    def quad_values(self, z):
        return np.concatenate([b.values(z) for b in self.batches]) if self.batches else np.zeros(0)

    def local_grads(self, z):
        return [b.grads(z) for b in self.batches]

    def jt(self, grads, v):
        """``J^T v`` from per-batch local gradients."""
        out = np.zeros(self.n)
        row = 0
        for b, gr in zip(self.batches, grads):
            w = v[row:row + b.m, None] * gr
            if b.idx is None:
                out += w.sum(axis=0)
            else:
                out += np.bincount(b.idx.ravel(), w.ravel(), minlength=self.n)
            row += b.m
        np.add.at(out, self._box_cols, self._box_sign * v[self.m_quad:])
        return out

    def j(self, grads, dz):
        """``J dz`` from per-batch local gradients."""
        out = [np.einsum("mi,mi->m", gr, dz[b.idx]) if b.idx is not None else gr @ dz
               for b, gr in zip(self.batches, grads)]
        out.append(self._box_sign * dz[self._box_cols])
        return np.concatenate(out)

    def hessian(self, grads, lam, g):
        """``sum_j lam_j (-hess g_j) + J^T diag(lam / g) J``."""
        H = np.zeros((self.n, self.n))
        d = lam / g
        row = 0
        for b, gr, flat in zip(self.batches, grads, self._flat):
            w = lam[row:row + b.m]
            dd = d[row:row + b.m]
            blocks = 2 * w[:, None, None] * b.P + dd[:, None, None] * gr[:, :, None] * gr[:, None, :]
            if flat is None:
                H += blocks.sum(axis=0)
            else:
                H += np.bincount(flat.ravel(), blocks.ravel(), minlength=self.n * self.n).reshape(self.n, self.n)
            row += b.m
        np.add.at(H, (self._box_cols, self._box_cols), d[self.m_quad:])
        return H

    def strictly_feasible(self, z) -> bool:
        if np.any(z[self.lo_idx] <= self.lo) or np.any(z[self.hi_idx] >= self.hi):
            return False
        return all(np.all(b.values(z) > 0) for b in self.batches)


def _newton_solve(H, g):
    try:
        return cho_solve(cho_factor(H, check_finite=False), -g, check_finite=False)
    except np.linalg.LinAlgError:
        ridge = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(H)))))
        return np.linalg.lstsq(H + ridge * np.eye(len(g)), -g, rcond=None)[0]


def _primal_dual(P, q, cons: _Constraints, z, budget, tol, mu=10.0, stop=None):
    """Feasible primal-dual interior point for ``min z^T P z - 2 q.z`` s.t. ``g(z) > 0``.

    ``z`` must be strictly feasible. Returns ``(z, lam, steps, residual, converged)``.
    """
    n = len(z)
    Hf = 2 * (P + REG * np.eye(n))
    g = cons.values(z)
    lam = 1.0 / g
    steps = 0
    res_d = eta = np.inf
    converged = False

    def residuals(z, lam, g, grads, t):
        rd = Hf @ z - 2 * q - cons.jt(grads, lam)
        rc = lam * g - 1.0 / t
        return rd, rc

    while steps < budget:
        grads = cons.local_grads(z)
        eta = float(g @ lam)
        rd = Hf @ z - 2 * q - cons.jt(grads, lam)
        res_d = float(np.linalg.norm(rd, np.inf))
        if res_d <= tol and eta <= tol:
            converged = True
            break
        if stop is not None and stop(z):
            break
        t = mu * cons.m / eta
        H = Hf + cons.hessian(grads, lam, g)
        rhs = Hf @ z - 2 * q - cons.jt(grads, 1.0 / (t * g))
        dz = _newton_solve(H, rhs)
        if not np.all(np.isfinite(dz)):
            break
        # dlam from the linearized complementarity
        dlam = (1.0 / t - lam * g - lam * cons.j(grads, dz)) / g
        neg = dlam < 0
        s = 1.0 if not np.any(neg) else min(1.0, 0.99 * float(np.min(-lam[neg] / dlam[neg])))
        rc0 = lam * g - 1.0 / t
        r0 = np.sqrt(rd @ rd + rc0 @ rc0)
        steps += 1
        while s > 1e-14:
            zc = z + s * dz
            if cons.strictly_feasible(zc):
                break
            s *= 0.5
        while s > 1e-14:
            zc = z + s * dz
            lc = lam + s * dlam
            gc = cons.values(zc)
            if np.all(gc > 0):
                rdc, rcc = residuals(zc, lc, gc, cons.local_grads(zc), t)
                if np.sqrt(rdc @ rdc + rcc @ rcc) <= (1 - 0.01 * s) * r0:
                    break
            s *= 0.5
        if s <= 1e-14:
            break
        z, lam, g = zc, lc, gc
    return z, lam, steps, max(res_d, eta), converged


def _augment(b: QuadBatch, n: int) -> QuadBatch:
    """Same batch over ``[z, s]`` with ``+ s`` added to every constraint."""
    s = b.q.shape[1]
    P = np.zeros((b.m, s + 1, s + 1))
    P[:, :s, :s] = b.P
    q = np.concatenate([b.q, np.full((b.m, 1), 0.5)], axis=1)
    if b.idx is None:
        return QuadBatch(P, q, b.r, np.broadcast_to(np.r_[np.arange(n), n], (b.m, n + 1)))
    return QuadBatch(P, q, b.r, np.concatenate([b.idx, np.full((b.m, 1), n)], axis=1))


def solve_real(P0, q0, r0, batches: Sequence[QuadBatch], lower=None, upper=None, z0=None,
               *, gap_tol: float = 1e-9, max_newton: int = 400, mu: float = 10.0) -> SolveResult:
    """Maximize ``-z^T P0 z + 2 q0.z + r0`` subject to every batch ``>= 0`` and box bounds.

    Objective and constraints are normalized internally by their largest
    coefficient; a ``1e-9 ||z||^2`` term picks the minimum-norm optimizer.
    A strictly feasible start is found first by minimizing a common shift.
    """
    P0 = np.asarray(P0, float)
    q0 = np.asarray(q0, float)
    n = q0.shape[0]
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, float)
    if np.any(lower >= upper):
        raise ValueError("box bounds must have a nonempty interior")
    obj_scale = max(float(np.max(np.abs(P0), initial=0.0)), float(np.max(np.abs(q0), initial=0.0)))
    obj_scale = obj_scale if obj_scale > 0 else 1.0
    Pn, qn = 0.5 * (P0 + P0.T) / obj_scale, q0 / obj_scale
    batches = [b.normalized() for b in batches if b.m > 0]

    def true_obj(z):
        return float(-z @ P0 @ z + 2 * q0 @ z + r0)

    z = np.zeros(n) if z0 is None else np.array(z0, float)
    warm = None if z0 is None else np.array(z0, float)
    width = np.where(np.isfinite(upper - lower), upper - lower, 2.0)
    lo_in = np.where(np.isfinite(lower), lower + 1e-3 * width, -np.inf)
    hi_in = np.where(np.isfinite(upper), upper - 1e-3 * width, np.inf)
    z = np.clip(z, lo_in, hi_in)
    total_steps = 0

    cons = _Constraints(batches, lower, upper, n)
    if cons.m == 0:
        H = 2 * (Pn + REG * np.eye(n))
        z = _newton_solve(H, -2 * qn)
        kkt = float(np.linalg.norm(H @ z - 2 * qn, np.inf))
        status = Status.OPTIMAL if kkt <= KKT_TOL and np.all(np.isfinite(z)) else Status.MAX_ITER
        return SolveResult(z, true_obj(z), status, kkt, 1)

    g0 = cons.quad_values(z)
    if not cons.strictly_feasible(z) or np.min(g0, initial=1.0) < 1e-6:
        # a start hugging the boundary makes the first duals explode, so recenter
        s0 = max(0.0, -float(np.min(g0, initial=0.0))) + 1.0
        aug = _Constraints([_augment(b, n) for b in batches], np.r_[lower, -1.0], np.r_[upper, np.inf], n + 1)
        qa = np.zeros(n + 1)
        qa[-1] = -0.5
        zs, _, k, _, _ = _primal_dual(np.zeros((n + 1, n + 1)), qa, aug, np.r_[z, s0], max_newton, gap_tol,
                                      stop=lambda v: v[-1] < -1e-3)
        total_steps += k
        if not (zs[-1] < 0 and cons.strictly_feasible(zs[:-1])):
            x = zs[:-1]
            if (zs[-1] <= FEAS_TOL and warm is not None and np.all(warm >= lower) and np.all(warm <= upper)
                    and np.min(cons.quad_values(warm), initial=0.0) >= -FEAS_TOL):
                # the feasible set has (numerically) no interior; the start is as good as it gets
                return SolveResult(warm, true_obj(warm), Status.MAX_ITER, float(zs[-1]), total_steps,
                                   {"phase1_shift": float(zs[-1]), "kept_warm_start": True})
            viol = float(max(0.0, -np.min(cons.quad_values(x), initial=0.0)))
            return SolveResult(x, true_obj(x), Status.INFEASIBLE, viol, total_steps,
                               {"phase1_shift": float(zs[-1])})
        z = zs[:-1]

    z, lam, k, kkt, converged = _primal_dual(Pn, qn, cons, z, max_newton - total_steps, gap_tol, mu)
    total_steps += k
    status = Status.OPTIMAL if converged and kkt <= KKT_TOL else Status.MAX_ITER
    duals, row = [], 0
    for m in cons.sizes:
        duals.append(lam[row:row + m])
        row += m
    value = true_obj(z)
    info = {"duals": duals}
    if warm is not None and np.all(warm >= lower) and np.all(warm <= upper):
        if np.all(cons.quad_values(warm) >= 0) and true_obj(warm) > value:
            z, value = warm, true_obj(warm)
            info["kept_warm_start"] = True
    if np.min(cons.quad_values(z), initial=0.0) < -FEAS_TOL:
        status = Status.MAX_ITER
    return SolveResult(z, value, status, kkt, total_steps, info)


# ---------------------------------------------------------------- complex API

def lift_form(q: QuadraticForm, real: bool = False):
    """Real ``(P, q, r)`` of a complex form over ``z = [Re x; Im x]`` (or ``x`` if real)."""
    Qr, Qi = np.real(q.Q), np.imag(q.Q)
    lr, li = np.real(q.l), np.imag(q.l)
    if real:
        return 0.5 * (Qr + Qr.T), lr, q.c
    P = np.block([[Qr, -Qi], [Qi, Qr]])
    return 0.5 * (P + P.T), np.r_[lr, -li], q.c


def to_real(x, real=False):
    x = np.asarray(x)
    return np.real(x).astype(float) if real else np.r_[np.real(x), np.imag(x)]


def from_real(z, real=False):
    if real:
        return np.asarray(z, float)
    n = len(z) // 2
    return z[:n] + 1j * z[n:]


@dataclass
class ConvexQcqp:
    """Maximize ``objective`` s.t. each ``constraint.value(x) >= 0`` and ``lower <= x <= upper``.

    For complex problems the bounds apply to ``[Re x; Im x]``; ``real=True``
    restricts ``x`` to real vectors.
    """

    objective: QuadraticForm
    constraints: list = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    real: bool = False

    def __post_init__(self):
        for name, q in [("objective", self.objective)] + [(f"constraint {i}", c) for i, c in enumerate(self.constraints)]:
            if q.n != self.objective.n:
                raise ValueError(f"{name} has dimension {q.n}, expected {self.objective.n}")
            P, _, _ = lift_form(q, self.real)
            if P.size:
                ev = np.linalg.eigvalsh(P)
                scale = max(1.0, float(np.max(np.abs(ev))))
                if ev[0] < -1e-9 * scale:
                    raise ValueError(f"{name} is not concave (min eigenvalue {ev[0]:.3e})")

    def lifted(self):
        P0, q0, r0 = lift_form(self.objective, self.real)
        batches = []
        for c in self.constraints:
            P, q, r = lift_form(c, self.real)
            batches.append(QuadBatch(P[None], q[None], np.array([r])))
        return P0, q0, r0, batches


def solve(problem: ConvexQcqp, warm_start=None, **kw) -> SolveResult:
    P0, q0, r0, batches = problem.lifted()
    z0 = None if warm_start is None else to_real(warm_start, problem.real)
    res = solve_real(P0, q0, r0, batches, problem.lower, problem.upper, z0, **kw)
    res.x_star = from_real(res.x_star, problem.real)
    res.objective_value = problem.objective.value(res.x_star)
    return res


# ---------------------------------------------------------------- ADMM

def admm_generic(f_prox: Callable, g_prox: Callable, A, B, c, rho: float, *,
                 x0=None, z0=None, y0=None, max_iter: int = 5000,
                 eps_primal: float = 1e-6, eps_dual: float = 1e-6) -> SolveResult:
    """Scaled-free ADMM for ``min f(x) + g(z)`` s.t. ``A x + B z = c``.

    ``f_prox(z, y, rho)`` returns ``argmin_x f(x) + y.(Ax) + rho/2 ||Ax + Bz - c||^2``
    and ``g_prox(x, y, rho)`` the analogous z-minimizer. The dual update is
    ``y <- y + rho (A x + B z - c)``. The dual residual is
    ``rho A^T B (z - z_prev)``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    c = np.asarray(c, float).reshape(-1)
    x = np.zeros(A.shape[1]) if x0 is None else np.asarray(x0, float)
    z = np.zeros(B.shape[1]) if z0 is None else np.asarray(z0, float)
    y = np.zeros(A.shape[0]) if y0 is None else np.asarray(y0, float)
    primal_hist, dual_hist = [], []
    status = Status.MAX_ITER
    k = 0
    for k in range(1, max_iter + 1):
        x = np.asarray(f_prox(z, y, rho), float)
        z_prev = z
        z = np.asarray(g_prox(x, y, rho), float)
        r = A @ x + B @ z - c
        y = y + rho * r
        primal = float(np.linalg.norm(r))
        dual = float(np.linalg.norm(rho * A.T @ (B @ (z - z_prev))))
        primal_hist.append(primal)
        dual_hist.append(dual)
        if primal <= eps_primal and dual <= eps_dual:
            status = Status.OPTIMAL
            break
    res = np.r_[x, z]
    return SolveResult(res, float("nan"), status, max(primal_hist[-1], dual_hist[-1]), k,
                       {"x": x, "z": z, "y": y, "primal": primal_hist, "dual": dual_hist})
