"""Active beamforming step: fractional-programming surrogate solved as a convex QCQP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .config import ScenarioConfig
from .model import (BeamformerSet, ChannelSet, StarProfile, effective_dl, effective_si,
                    ul_into_dl, ul_signal)
from .qcqp import ConvexQcqp, InfeasibleError, SolveResult, Status, solve
from .transforms import AuxState, QuadraticForm, jensen_ul_threshold, sca_linearize


@dataclass
class BeamSubproblem:
    """Data of the beam surrogate.

    The stacked variable is ``vec(W)`` with ``W = [W_PD, W_SD]`` read column
    by column, so beam ``j`` occupies entries ``j*N_T:(j+1)*N_T``.
    """

    G: np.ndarray            # effective DL rows, K_DL x N_T
    gamma: np.ndarray
    lam: np.ndarray
    ul_interf: np.ndarray    # UL interference power at each DL user
    sigma2: float
    t_pu: float
    t_su: float
    xi_pu: float
    xi_su: float
    has_pu: bool
    has_su: bool
    S_t: np.ndarray
    p_t: float
    w_lin: np.ndarray        # N_T x K_DL linearization point
    k_pd: int

    def __post_init__(self):
        if min(self.xi_pu, self.xi_su) < 0:
            raise ValueError("UL signal constants must be nonnegative")

    @property
    def n_tx(self) -> int:
        return self.G.shape[1]

    @property
    def k_dl(self) -> int:
        return self.G.shape[0]

    def A_values(self, W) -> np.ndarray:
        return np.abs(np.einsum("kn,nk->k", self.G, W)) ** 2

    def C_values(self, W) -> np.ndarray:
        return np.sum(np.abs(self.G @ W) ** 2, axis=1) + self.ul_interf + self.sigma2

    def A_tilde(self, W) -> np.ndarray:
        """First-order expansion of ``A`` at ``w_lin``."""
        a0 = np.einsum("kn,nk->k", self.G, self.w_lin)
        a = np.einsum("kn,nk->k", self.G, W)
        return np.abs(a0) ** 2 + 2 * np.real(np.conj(a0) * (a - a0))

    def surrogate(self, W) -> float:
        return float(np.sum((1 + self.gamma) * (self.A_tilde(W) - self.lam * self.C_values(W))))

    def si_power(self, W) -> float:
        return float(np.sum(np.abs(self.S_t @ W) ** 2))

    def ul_margins(self, W) -> dict:
        si = self.si_power(W)
        out = {}
        if self.has_pu:
            out["PU"] = self.xi_pu - self.t_pu * (si + self.sigma2)
        if self.has_su:
            out["SU"] = self.xi_su - self.t_su * (si + self.sigma2)
        return out

    # quadratic forms over vec(W)
    def objective_form(self) -> QuadraticForm:
        n, K = self.n_tx, self.k_dl
        weight = (1 + self.gamma) * self.lam
        Qb = (self.G.conj().T * weight) @ self.G
        Qb = 0.5 * (Qb + Qb.conj().T)
        Q = np.kron(np.eye(K), Qb)
        l = np.zeros(n * K, complex)
        a0 = np.einsum("kn,nk->k", self.G, self.w_lin)
        for k in range(K):
            l[k * n:(k + 1) * n] = (1 + self.gamma[k]) * np.conj(a0[k]) * self.G[k]
        c = float(np.sum((1 + self.gamma) * (-np.abs(a0) ** 2 - self.lam * (self.ul_interf + self.sigma2))))
        return QuadraticForm(Q, l, c, _checked=True)

    def constraint_forms(self) -> list[tuple[str, QuadraticForm]]:
        n, K = self.n_tx, self.k_dl
        out = [("power", QuadraticForm(np.eye(n * K), np.zeros(n * K), self.p_t, _checked=True))]
        R = self.S_t.conj().T @ self.S_t
        R = np.kron(np.eye(K), 0.5 * (R + R.conj().T))
        for name, has, t, xi in (("PU", self.has_pu, self.t_pu, self.xi_pu),
                                 ("SU", self.has_su, self.t_su, self.xi_su)):
            if has:
                out.append((name, QuadraticForm(t * R, np.zeros(n * K), xi - t * self.sigma2, _checked=True)))
        return out


def _ul_groups(channels: ChannelSet, scenario: ScenarioConfig, ul_active: bool = True):
    t_pu = jensen_ul_threshold(scenario.ul_rate_threshold_pu)
    t_su = jensen_ul_threshold(scenario.ul_rate_threshold_su)
    has_pu = ul_active and channels.U.shape[1] > 0 and t_pu > 0
    has_su = ul_active and channels.H1.shape[1] > 0 and t_su > 0
    return t_pu, t_su, has_pu, has_su


def build_beam_subproblem(channels: ChannelSet, star: StarProfile, beams_prev: BeamformerSet,
                          aux: AuxState, scenario: ScenarioConfig, *, ul_active: bool = True,
                          waive_su: bool = False) -> BeamSubproblem:
    G = effective_dl(channels, star)
    W = beams_prev.stacked
    if W.shape != (G.shape[1], G.shape[0]):
        raise ValueError(f"beam matrix shape {W.shape} does not match {G.shape[::-1]}")
    if aux.gamma.shape != (G.shape[0],) or aux.lam.shape != (G.shape[0],):
        raise ValueError("auxiliaries must have one entry per DL user")
    pu_int, su_int = ul_into_dl(channels, star)
    interf = pu_int + su_int if ul_active else np.zeros(G.shape[0])
    sig_pu, sig_su = ul_signal(channels, star)
    t_pu, t_su, has_pu, has_su = _ul_groups(channels, scenario, ul_active)
    return BeamSubproblem(
        G=G, gamma=aux.gamma.copy(), lam=aux.lam.copy(), ul_interf=interf,
        sigma2=scenario.noise_watt, t_pu=t_pu, t_su=t_su,
        xi_pu=float(np.sum(sig_pu)), xi_su=float(np.sum(sig_su)),
        has_pu=has_pu, has_su=has_su and not waive_su,
        S_t=effective_si(channels, star), p_t=scenario.power_budget_watt,
        w_lin=np.array(W), k_pd=channels.D.shape[1])


def beam_step(sub: BeamSubproblem) -> tuple[BeamformerSet, SolveResult]:
    """Solve the surrogate and return the beams together with the solver record."""
    for name, margin in sub.ul_margins(np.zeros_like(sub.w_lin)).items():
        if margin <= 0:
            raise InfeasibleError(f"UL threshold of {name} unattainable at the current surface profile")
    scale = np.sqrt(sub.p_t)
    to_v = lambda q: q.substitute(scale * np.eye(q.n))
    obj = to_v(sub.objective_form())
    cons = [to_v(q) for _, q in sub.constraint_forms()]
    v0 = sub.w_lin.reshape(-1, order="F") / scale
    res = solve(ConvexQcqp(obj, cons), warm_start=v0)
    if res.status is Status.INFEASIBLE:
        raise InfeasibleError("beam subproblem infeasible: UL thresholds unattainable")
    W = (scale * res.x_star).reshape(sub.n_tx, sub.k_dl, order="F")
    # absorb solver tolerance so the power budget holds exactly
    p = np.sum(np.abs(W) ** 2)
    if p > sub.p_t:
        W = W * np.sqrt(sub.p_t / p)
    res.info["ul_duals"] = ul_multipliers(sub, W)
    return BeamformerSet.from_stacked(W, sub.k_pd), res


def _real_grad(q, x) -> np.ndarray:
    g = q.gradient(x)
    return 2 * np.r_[np.real(g), -np.imag(g)]


def ul_multipliers(sub: BeamSubproblem, W, rtol: float = 1e-5) -> dict:
    """KKT multipliers of the UL constraints at ``W``, in surrogate-objective units.

    Recovered by nonnegative least squares on the stationarity condition over
    the active constraints, so they do not depend on the solver's internals.
    """
    x = W.reshape(-1, order="F")
    cols, names = [], []
    for name, q in sub.constraint_forms():
        ref = sub.p_t if name == "power" else (sub.xi_pu if name == "PU" else sub.xi_su)
        if q.value(x) <= rtol * max(ref, 1e-300):
            cols.append(-_real_grad(q, x))
            names.append(name)
    out = {"PU": 0.0, "SU": 0.0}
    if not cols:
        return out
    lam, _ = nnls(np.column_stack(cols), _real_grad(sub.objective_form(), x))
    for name, v in zip(names, lam):
        if name in out:
            out[name] = float(v)
    return out


def solve_beam_subproblem(sub: BeamSubproblem) -> BeamformerSet:
    return beam_step(sub)[0]


def initial_beams(channels: ChannelSet, star: StarProfile, scenario: ScenarioConfig,
                  *, ul_active: bool = True, waive_su: bool = False, margin: float = 0.99) -> BeamformerSet:
    """Matched filters with equal power, scaled down until the UL constraints hold.

    The UL margin is quadratic in the common scale factor, so the largest
    admissible factor is found in closed form rather than by bisection.
    """
    G = effective_dl(channels, star)
    k_dl = G.shape[0]
    norms = np.linalg.norm(G, axis=1)
    W = np.zeros((G.shape[1], k_dl), complex)
    nz = norms > 0
    W[:, nz] = (G[nz].conj() / norms[nz, None]).T
    W[:, ~nz] = 1.0 / np.sqrt(G.shape[1])
    W *= np.sqrt(scenario.power_budget_watt / k_dl)
    sub = build_beam_subproblem(channels, star, BeamformerSet.from_stacked(W, channels.D.shape[1]),
                                AuxState(np.zeros(k_dl), np.zeros(k_dl)), scenario,
                                ul_active=ul_active, waive_su=waive_su)
    si = sub.si_power(W)
    factor = 1.0
    for name, has, t, xi in (("PU", sub.has_pu, sub.t_pu, sub.xi_pu), ("SU", sub.has_su, sub.t_su, sub.xi_su)):
        if not has:
            continue
        room = xi / t - sub.sigma2
        if room <= 0:
            raise InfeasibleError(f"UL threshold of {name} unattainable at the current surface profile")
        if si > 0:
            factor = min(factor, margin * room / si)
    return BeamformerSet.from_stacked(W * np.sqrt(factor), channels.D.shape[1])
