"""Surface configuration step: quadratic assembly, ADMM amplitudes, PCCP phases,
coupled-phase selection and quantization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .model import SIDES, BeamformerSet, ChannelSet, StarProfile, cascade_matrix, cascade_vector
from .qcqp import ConvexQcqp, InfeasibleError, QuadBatch, Status, lift_form, solve, solve_real
from .transforms import AuxState, QuadraticForm, abs2_form, jensen_ul_threshold, norm2_form, sca_linearize

COUPLING_TOL = 1e-3


@dataclass
class StarQuadratics:
    """Surrogate objective and UL constraints as quadratic forms in ``phi``.

    The objective is separable per side: ``sum_x obj[x].value(phi_x)``. The
    PU constraint reads ``pu.value(phi_PR) >= 0`` and the SU constraint
    ``su_pr.value(phi_PR) + su_st.value(phi_ST) >= 0``.
    """

    obj: dict
    pu: QuadraticForm | None
    su_pr: QuadraticForm | None
    su_st: QuadraticForm | None
    phi0: dict
    rows: dict = field(default_factory=dict)

    # names used for the printed symbols
    @property
    def Omega_1(self): return self.obj["PR"].Q

    @property
    def Omega_2(self): return self.obj["ST"].Q

    @property
    def Omega_3(self): return self.obj["PT"].Q

    @property
    def Omega_4(self): return self.obj["SR"].Q

    @property
    def f1(self): return self.obj["PR"].l

    @property
    def f2(self): return self.obj["PT"].l

    @property
    def f3(self): return self.obj["SR"].l

    @property
    def Upsilon_1(self): return self.pu.Q if self.pu is not None else None

    @property
    def Upsilon_2(self): return self.su_pr.Q if self.su_pr is not None else None

    @property
    def g1(self): return self.pu.l if self.pu is not None else None

    @property
    def g2(self): return self.su_pr.l if self.su_pr is not None else None

    @property
    def g3(self): return self.su_st.l if self.su_st is not None else None

    @property
    def c1(self): return self.pu.c if self.pu is not None else None

    @property
    def c2(self):
        return self.su_pr.c + self.su_st.c if self.su_pr is not None else None

    @property
    def m(self) -> int:
        return self.obj["PR"].n

    def objective(self, star: StarProfile) -> float:
        return sum(self.obj[s].value(star.phi(s)) for s in SIDES)

    def ul_values(self, star: StarProfile) -> dict:
        out = {}
        if self.pu is not None:
            out["PU"] = self.pu.value(star.phi("PR"))
        if self.su_pr is not None:
            out["SU"] = self.su_pr.value(star.phi("PR")) + self.su_st.value(star.phi("ST"))
        return out

    def scale(self) -> float:
        """Largest coefficient magnitude across the objective forms."""
        s = max(max(np.max(np.abs(q.Q), initial=0.0), np.max(np.abs(q.l), initial=0.0))
                for q in self.obj.values())
        return float(s) if s > 0 else 1.0


def assemble_quadratics(channels: ChannelSet, star_prev: StarProfile, beams: BeamformerSet,
                        aux: AuxState, scenario: ScenarioConfig, *, ul_active: bool = True,
                        waive_su: bool = False) -> StarQuadratics:
    """Build the surrogate of the DL objective and the UL constraints around ``star_prev``."""
    c = channels
    m = c.D1.shape[0]
    k_pd = c.D.shape[1]
    W = beams.stacked
    k_dl = W.shape[1]
    P = c.ul_power_watt
    sp = np.sqrt(P)
    sigma2 = scenario.noise_watt
    phi0 = {s: star_prev.phi(s) for s in SIDES}
    obj = {s: QuadraticForm.zero(m) for s in SIDES}
    DW = c.D1 @ W
    rows = {}

    for k in range(k_dl):
        pd = k < k_pd
        j = k if pd else k - k_pd
        side = "PR" if pd else "PT"
        d_ref = c.D2[:, j] if pd else c.D3[:, j]
        d_dir = c.D[:, j] if pd else c.D_s[:, j]
        w_weight = 1.0 + aux.gamma[k]
        lam = aux.lam[k]

        a_row = cascade_vector(d_ref, c.D1, W[:, k])
        a_const = np.vdot(d_dir, W[:, k])
        obj[side] = obj[side] + w_weight * sca_linearize(abs2_form(a_row, a_const), phi0[side])

        beam_rows = np.array([cascade_vector(d_ref, c.D1, W[:, i]) for i in range(k_dl)])
        beam_const = d_dir.conj() @ W
        obj[side] = obj[side] - (w_weight * lam) * norm2_form(beam_rows, beam_const)
        rows[("dl", k)] = (a_row, a_const, beam_rows, beam_const)

        if ul_active:
            if pd:
                pu_rows = sp * np.array([cascade_vector(d_ref, c.U1, e) for e in np.eye(c.U1.shape[1])]).reshape(-1, m)
                pu_const = sp * c.V_P[:, j].conj()
                su_rows = sp * np.array([cascade_vector(c.H4[:, j], c.H1, e) for e in np.eye(c.H1.shape[1])]).reshape(-1, m)
                obj["PR"] = obj["PR"] - (w_weight * lam) * norm2_form(pu_rows, pu_const)
                obj["ST"] = obj["ST"] - (w_weight * lam) * norm2_form(su_rows)
            else:
                pu_rows = sp * np.array([cascade_vector(d_ref, c.U1, e) for e in np.eye(c.U1.shape[1])]).reshape(-1, m)
                su_rows = sp * np.array([cascade_vector(c.H2[:, j], c.H1, e) for e in np.eye(c.H1.shape[1])]).reshape(-1, m)
                su_const = sp * c.V_S[:, j].conj()
                obj["PT"] = obj["PT"] - (w_weight * lam) * norm2_form(pu_rows)
                obj["SR"] = obj["SR"] - (w_weight * lam) * norm2_form(su_rows, su_const)
        obj[side].c -= w_weight * lam * sigma2

    # UL constraints: linearized signal minus threshold times (SI + noise)
    t_pu = jensen_ul_threshold(scenario.ul_rate_threshold_pu)
    t_su = jensen_ul_threshold(scenario.ul_rate_threshold_su)
    si = QuadraticForm.zero(m)
    for i in range(k_dl):
        si = si + norm2_form(cascade_matrix(c.U2, c.D1, W[:, i]), c.S @ W[:, i])
    pu = su_pr = su_st = None
    if ul_active and c.U.shape[1] > 0 and t_pu > 0:
        sig = QuadraticForm.zero(m)
        for kk, e in enumerate(np.eye(c.U.shape[1])):
            sig = sig + norm2_form(sp * cascade_matrix(c.U2, c.U1, e), sp * c.U[:, kk])
        pu = sca_linearize(sig, phi0["PR"]) - t_pu * si
        pu.c -= t_pu * sigma2
    if ul_active and not waive_su and c.H1.shape[1] > 0 and t_su > 0:
        sig = QuadraticForm.zero(m)
        for kk, e in enumerate(np.eye(c.H1.shape[1])):
            sig = sig + norm2_form(sp * cascade_matrix(c.H3, c.H1, e), sp * c.U_s[:, kk])
        su_st = sca_linearize(sig, phi0["ST"])
        su_pr = -t_su * si
        su_pr.c -= t_su * sigma2
    return StarQuadratics(obj=obj, pu=pu, su_pr=su_pr, su_st=su_st, phi0=phi0, rows=rows)


def price_ul(quad: StarQuadratics, duals: dict) -> StarQuadratics:
    """Add the UL constraint surrogates, weighted by their beam-step multipliers,
    to the objective so the surface step values a wider UL margin."""
    mu_pu = duals.get("PU", 0.0) if quad.pu is not None else 0.0
    mu_su = duals.get("SU", 0.0) if quad.su_pr is not None else 0.0
    if mu_pu <= 0 and mu_su <= 0:
        return quad
    obj = dict(quad.obj)
    if mu_pu > 0:
        obj["PR"] = obj["PR"] + mu_pu * quad.pu
    if mu_su > 0:
        obj["PR"] = obj["PR"] + mu_su * quad.su_pr
        obj["ST"] = obj["ST"] + mu_su * quad.su_st
    return StarQuadratics(obj=obj, pu=quad.pu, su_pr=quad.su_pr, su_st=quad.su_st, phi0=quad.phi0, rows=quad.rows)


# ---------------------------------------------------------------- amplitudes

@dataclass
class AdmmState:
    z_pt: np.ndarray
    z_st: np.ndarray
    u: np.ndarray
    r: np.ndarray
    rho1: float = 1.0
    rho2: float = 1.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rho1 <= 0 or self.rho2 <= 0:
            raise ValueError("ADMM penalties must be positive")

    @classmethod
    def start(cls, star: StarProfile, rho1=1.0, rho2=1.0) -> "AdmmState":
        m = star.m
        return cls(np.array(star.b("PT")), np.array(star.b("ST")), np.zeros(m), np.zeros(m), rho1, rho2)

    def coupling_residual(self, beta_pr, beta_sr) -> float:
        return float(max(np.max(np.abs(self.z_pt ** 2 + beta_pr ** 2 - 1)),
                         np.max(np.abs(self.z_st ** 2 + beta_sr ** 2 - 1))))


def _amp_form(q: QuadraticForm, theta) -> QuadraticForm:
    """The form written in the (real) amplitude vector for fixed phases."""
    return q.substitute(np.diag(theta))


def _coupling_terms(dual, partner, rho, x0) -> QuadraticForm:
    """``-dual (x^2 - (1 - partner^2)) - rho (x - sqrt(1 - partner^2))^2`` for real ``x``.

    Entries with a negative dual make ``-dual x^2`` convex; those are replaced
    by their tangent at ``x0`` so the subproblem stays concave.
    """
    m = len(dual)
    target = np.sqrt(np.clip(1 - partner ** 2, 0.0, 1.0))
    pos = dual >= 0
    Qd = np.where(pos, dual, 0.0) + rho
    l = rho * target - np.where(pos, 0.0, dual * x0)
    c = float(np.sum(dual * (1 - partner ** 2)) - rho * np.sum(target ** 2)
              + np.sum(np.where(pos, 0.0, dual * x0 ** 2)))
    return QuadraticForm(np.diag(Qd).astype(complex), l.astype(complex), c, _checked=True)


def _solve_amp(obj: QuadraticForm, cons: list, x0) -> np.ndarray:
    m = obj.n
    prob = ConvexQcqp(obj, cons, lower=np.zeros(m), upper=np.ones(m), real=True)
    res = solve(prob, warm_start=np.clip(x0, 0.0, 1.0))
    if res.status is Status.INFEASIBLE:
        raise InfeasibleError("amplitude subproblem infeasible")
    return np.clip(np.real(res.x_star), 0.0, 1.0)


def _admm_pass(quad: StarQuadratics, theta: dict, beta_pr, beta_sr, beta_st_prev, st: AdmmState, scale):
    obj = {s: _amp_form(quad.obj[s], theta[s]) * (1.0 / scale) for s in SIDES}
    # reflection amplitudes of STAR-P under both UL constraints
    cons = []
    if quad.pu is not None:
        cons.append(_amp_form(quad.pu, theta["PR"]))
    if quad.su_pr is not None:
        fixed = quad.su_st.value(theta["ST"] * beta_st_prev)
        su = _amp_form(quad.su_pr, theta["PR"])
        cons.append(QuadraticForm(su.Q, su.l, su.c + fixed, _checked=True))
    new_pr = _solve_amp(obj["PR"] + _coupling_terms(st.u, st.z_pt, st.rho1, beta_pr), cons, beta_pr)
    # auxiliary transmission amplitudes, then the STAR-P multiplier
    st.z_pt = _solve_amp(obj["PT"] + _coupling_terms(st.u, new_pr, st.rho1, st.z_pt), [], st.z_pt)
    st.u = st.u + st.rho1 * (st.z_pt ** 2 + new_pr ** 2 - 1)
    # reflection amplitudes of STAR-S
    new_sr = _solve_amp(obj["SR"] + _coupling_terms(st.r, st.z_st, st.rho2, beta_sr), [], beta_sr)
    # auxiliary transmission amplitudes under the SU constraint, then the STAR-S multiplier
    cons = []
    if quad.su_pr is not None:
        fixed = quad.su_pr.value(theta["PR"] * new_pr)
        su = _amp_form(quad.su_st, theta["ST"])
        cons.append(QuadraticForm(su.Q, su.l, su.c + fixed, _checked=True))
    st.z_st = _solve_amp(obj["ST"] + _coupling_terms(st.r, new_sr, st.rho2, st.z_st), cons, st.z_st)
    st.r = st.r + st.rho2 * (st.z_st ** 2 + new_sr ** 2 - 1)
    return new_pr, new_sr


def solve_amplitudes_admm(quad: StarQuadratics, star_prev: StarProfile, state: AdmmState,
                          *, max_passes: int = 30, tol: float = COUPLING_TOL,
                          surfaces=("P", "S")) -> tuple[StarProfile, AdmmState]:
    """ADMM over (reflection amplitude, auxiliary transmission amplitude) pairs.

    Passes of the six-step update repeat until the coupling residual drops
    below ``tol``. Transmission amplitudes then follow the energy split. If
    that rounding breaks the linearized SU constraint, the auxiliary
    transmission amplitudes are used instead, and failing that the previous
    S-surface amplitudes are kept.
    """
    theta = {s: star_prev.t(s) for s in SIDES}
    scale = quad.scale()
    beta_pr = np.array(star_prev.b("PR"))
    beta_sr = np.array(star_prev.b("SR"))
    beta_st_prev = np.array(star_prev.b("ST"))
    passes = 0
    for passes in range(1, max_passes + 1):
        beta_pr, beta_sr = _admm_pass(quad, theta, beta_pr, beta_sr, beta_st_prev, state, scale)
        if state.coupling_residual(beta_pr, beta_sr) <= tol:
            break
    if "P" not in surfaces:
        beta_pr = np.array(star_prev.b("PR"))
    if "S" not in surfaces:
        beta_sr = np.array(star_prev.b("SR"))
    new = StarProfile.from_phases(beta_pr, beta_sr, star_prev.theta)
    keep = {s: star_prev.b(s) for surf, pair in (("P", ("PR", "PT")), ("S", ("SR", "ST")))
            if surf not in surfaces for s in pair}
    if keep:
        new = new.with_sides(beta=keep)
    ul = quad.ul_values(new)
    if ul.get("PU", 0.0) < 0:
        new = new.with_sides(beta={"PR": star_prev.b("PR"), "PT": star_prev.b("PT")})
        ul = quad.ul_values(new)
    if ul.get("SU", 0.0) < 0 and "S" in surfaces:
        alt = StarProfile.from_phases(new.b("PR"), np.sqrt(np.clip(1 - state.z_st ** 2, 0, 1)), star_prev.theta)
        if quad.ul_values(alt).get("SU", 0.0) >= 0:
            new = alt
        else:
            new = new.with_sides(beta={"SR": star_prev.b("SR"), "ST": star_prev.b("ST")})
    state.info = {"passes": passes, "residual": state.coupling_residual(new.b("PR"), new.b("SR"))}
    return new, state


# ---------------------------------------------------------------- phases

@dataclass
class PccpState:
    b: np.ndarray
    kappa: float
    kappa_max: float = 1e3
    last: object = None

    def __post_init__(self):
        if np.any(np.asarray(self.b) < 0):
            raise ValueError("PCCP slacks must be nonnegative")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    @classmethod
    def start(cls, m: int, kappa0: float = 0.1, kappa_max: float = 1e3) -> "PccpState":
        return cls(np.zeros((4, m)), kappa0, kappa_max)


def _phase_problem(quad: StarQuadratics, star: StarProfile, sides, kappa, scale):
    """Real variables ``[Re theta, Im theta, b]`` over the chosen sides."""
    m = star.m
    ns = len(sides)
    nc = ns * m
    n = 3 * nc
    pos = {s: i for i, s in enumerate(sides)}

    def cols(s):
        i = pos[s]
        return np.r_[i * m:(i + 1) * m, nc + i * m:nc + (i + 1) * m]

    P0 = np.zeros((n, n))
    q0 = np.zeros(n)
    r0 = 0.0
    for s in SIDES:
        form = quad.obj[s].substitute(np.diag(star.b(s)))
        if s not in pos:
            r0 += form.value(star.t(s)) / scale
            continue
        P, q, r = lift_form(form * (1.0 / scale))
        ix = cols(s)
        P0[np.ix_(ix, ix)] += P
        q0[ix] += q
        r0 += r
    q0[2 * nc:] -= 0.5 * kappa

    theta0 = np.concatenate([star.t(s) for s in sides])
    el = np.arange(nc)
    idx = np.stack([el, nc + el, 2 * nc + el], axis=1)
    lower_mod = QuadBatch(None, np.stack([0.5 * theta0.real, 0.5 * theta0.imag, np.full(nc, 0.5)], axis=1),
                          -np.ones(nc), idx)
    Pu = np.zeros((nc, 3, 3))
    Pu[:, 0, 0] = Pu[:, 1, 1] = 1.0
    upper_mod = QuadBatch(Pu, np.tile([0.0, 0.0, 0.5], (nc, 1)), np.ones(nc), idx)
    batches = [lower_mod, upper_mod]

    def ul_batch(parts, const):
        ix = np.concatenate([cols(s) for s, _ in parts])
        blocks = [lift_form(f.substitute(np.diag(star.b(s)))) for s, f in parts]
        k = len(ix)
        P = np.zeros((k, k))
        q = np.zeros(k)
        r = const
        o = 0
        for Pb, qb, rb in blocks:
            w = len(qb)
            P[o:o + w, o:o + w] = Pb
            q[o:o + w] = qb
            r += rb
            o += w
        return QuadBatch(P[None], q[None], np.array([r]), ix[None])

    def part_or_const(s, form):
        if s in pos:
            return [(s, form)], 0.0
        return [], form.value(star.phi(s))

    if quad.pu is not None:
        parts, const = part_or_const("PR", quad.pu)
        if parts:
            batches.append(ul_batch(parts, const))
    if quad.su_pr is not None:
        p1, c1 = part_or_const("PR", quad.su_pr)
        p2, c2 = part_or_const("ST", quad.su_st)
        if p1 or p2:
            batches.append(ul_batch(p1 + p2, c1 + c2))
    lower = np.r_[np.full(2 * nc, -np.inf), np.zeros(nc)]
    upper = np.full(n, np.inf)
    return P0, q0, r0, batches, lower, upper, theta0, nc


def solve_phases_pccp(quad: StarQuadratics, star_prev: StarProfile, state: PccpState,
                      *, sides=SIDES) -> tuple[StarProfile, PccpState]:
    """One penalty convex-concave step over the unit-modulus phases.

    Lower modulus bounds are linearized at the previous phases, the upper
    ones kept convex, both relaxed by slacks ``b >= 0`` charged at ``kappa``.
    The result is projected back onto the unit circle and ``kappa`` doubles
    (capped).
    """
    sides = tuple(s for s in sides if np.any(star_prev.b(s) > 0))
    if not sides:
        return star_prev, state
    scale = quad.scale()
    new_theta = np.array(star_prev.theta)
    new_b = np.array(state.b)
    m = star_prev.m
    results = []
    # the objective is separable per side and only the SU constraint couples
    # PR with ST, so the sides split into independent blocks
    blocks = [[s] for s in sides if s not in ("PR", "ST")]
    coupled = [s for s in ("PR", "ST") if s in sides]
    if len(coupled) == 2 and quad.su_pr is None:
        blocks += [[s] for s in coupled]
    elif coupled:
        blocks.append(coupled)
    for block in blocks:
        P0, q0, r0, batches, lower, upper, theta0, nc = _phase_problem(quad, star_prev, block, state.kappa, scale)
        z0 = np.r_[theta0.real, theta0.imag, np.full(nc, 0.1)]
        res = solve_real(P0, q0, r0, batches, lower, upper, z0)
        if res.status is Status.INFEASIBLE:
            raise InfeasibleError("phase subproblem infeasible")
        results.append(res)
        z = res.x_star
        theta = z[:nc] + 1j * z[nc:2 * nc]
        mag = np.abs(theta)
        theta = np.where(mag > 1e-12, theta / np.where(mag > 0, mag, 1.0), theta0)
        for i, s in enumerate(block):
            k = SIDES.index(s)
            new_theta[k] = theta[i * m:(i + 1) * m]
            new_b[k] = np.maximum(z[2 * nc + i * m:2 * nc + (i + 1) * m], 0.0)
    worst = max(results, key=lambda r: list(Status).index(r.status))
    new_state = PccpState(new_b, min(2 * state.kappa, state.kappa_max), state.kappa_max, last=worst)
    return StarProfile(star_prev.beta, new_theta), new_state


# ---------------------------------------------------------------- coupled phases

_PAIRS = (("PT", "PR"), ("ST", "SR"))


def couple_phases(star: StarProfile, quad: StarQuadratics) -> StarProfile:
    """Force a quarter-wave phase offset on every element pair.

    Element by element, four candidates are tried per (transmission,
    reflection) pair: keep one phase and set the other to ``+-j`` times it.
    Candidates that keep the linearized UL constraints satisfied are
    preferred; among them the one with the largest surrogate objective wins.
    """
    theta = np.array(star.theta)
    for t_side, r_side in _PAIRS:
        ti, ri = SIDES.index(t_side), SIDES.index(r_side)
        for m in range(star.m):
            best = None
            for keep_t in (True, False):
                for sgn in (1j, -1j):
                    cand = np.array(theta)
                    if keep_t:
                        cand[ri, m] = sgn * theta[ti, m]
                    else:
                        cand[ti, m] = sgn * theta[ri, m]
                    prof = StarProfile(star.beta, cand)
                    ul = quad.ul_values(prof)
                    feasible = all(v >= 0 for v in ul.values())
                    key = (feasible, quad.objective(prof))
                    if best is None or key > best[0]:
                        best = (key, cand)
            theta = best[1]
    return StarProfile(star.beta, theta)


def coupling_error(star: StarProfile) -> float:
    """Largest |cos| of the transmission/reflection phase differences."""
    err = 0.0
    for t_side, r_side in _PAIRS:
        d = star.t(t_side) * np.conj(star.t(r_side))
        err = max(err, float(np.max(np.abs(np.real(d)))))
    return err


# ---------------------------------------------------------------- quantization

def quantize_amplitude(beta, bits: int) -> np.ndarray:
    levels = 2 ** bits
    return np.floor(np.asarray(beta, float) * levels) / levels


def quantize_phase(theta, bits: int) -> np.ndarray:
    """Uniform phase quantizer on ``(0, 2 pi]`` (floor rule), returned as unit phasors."""
    ang = np.mod(np.angle(theta), 2 * np.pi)
    ang = np.where(ang <= 0, 2 * np.pi, ang)
    levels = 2 ** bits
    # a hair of slack so phases already on the grid stay put despite rounding
    q = np.floor(ang / (2 * np.pi) * levels + 1e-9) * (2 * np.pi / levels)
    return np.exp(1j * q)


def quantize_profile(star: StarProfile, n_amp_bits: int, n_phase_bits: int) -> StarProfile:
    """Quantize reflection amplitudes and all phases; transmission amplitudes
    follow from the energy split."""
    for bits in (n_amp_bits, n_phase_bits):
        if not (1 <= int(bits) <= 16):
            raise ValueError("bit counts must lie in [1, 16]")
    beta_pr = quantize_amplitude(star.b("PR"), n_amp_bits)
    beta_sr = quantize_amplitude(star.b("SR"), n_amp_bits)
    theta = quantize_phase(star.theta, n_phase_bits)
    return StarProfile.from_phases(beta_pr, beta_sr, theta)
