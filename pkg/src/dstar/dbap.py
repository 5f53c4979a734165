"""Alternating optimization of beams, amplitudes and phases (DBAP)."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .beamformer import beam_step, build_beam_subproblem, initial_beams
from .config import Architecture, ScenarioConfig
from .model import (SIDES, BeamformerSet, ChannelSet, SinrReport, StarProfile, check_dimensions,
                    effective_dl, sinr_all, ul_into_dl)
from .qcqp import InfeasibleError, Status
from .star import (AdmmState, PccpState, assemble_quadratics, couple_phases, price_ul,
                   solve_amplitudes_admm, solve_phases_pccp)
from .transforms import AuxState

log = logging.getLogger(__name__)

UL_SLACK = 1e-6


class RunStatus(str, Enum):
    CONVERGED_RATE = "Converged_Rate"
    CONVERGED_VARS = "Converged_Vars"
    MAX_ITER = "MaxIter"


TRACE_COLUMNS = ("iteration", "dl_rate", "r_pd", "r_sd", "r_pu", "r_su", "best_rate", "surrogate",
                 "power_slack", "pu_slack", "su_slack", "beam_status", "amp_status", "phase_status",
                 "star_accepted", "d_beam", "d_beta", "d_theta", "kappa", "admm_residual")


@dataclass
class DbapTrace:
    """Per-iteration record of one run; row 0 is the initial point."""

    rows: list = field(default_factory=list)
    status: RunStatus = RunStatus.MAX_ITER
    best_iteration: int = 0

    @property
    def iterations(self) -> int:
        return max(0, len(self.rows) - 1)

    @property
    def init_rate(self) -> float:
        return self.rows[0]["dl_rate"]

    @property
    def best_rates(self) -> np.ndarray:
        return np.array([r["best_rate"] for r in self.rows])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in TRACE_COLUMNS})
        buf.write(f"# status={self.status.value} best_iteration={self.best_iteration}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    if isinstance(v, Enum):
        return v.value
    return v


# ---------------------------------------------------------------- evaluation

def evaluate_solution(beams: BeamformerSet, star: StarProfile, channels: ChannelSet,
                      scenario: ScenarioConfig) -> SinrReport:
    """True rates. Half-duplex runs split the frame into a DL and a UL slot of equal length."""
    if scenario.architecture is Architecture.HDX_DSTAR:
        dl = sinr_all(channels, star, beams, scenario, ul_active=False)
        ul = sinr_all(channels, star, beams, scenario, dl_active=False)
        gamma = {"PD": dl.gamma["PD"], "SD": dl.gamma["SD"], "PU": ul.gamma["PU"], "SU": ul.gamma["SU"]}
        rate = {"PD": dl.rate["PD"] / 2, "SD": dl.rate["SD"] / 2, "PU": ul.rate["PU"] / 2, "SU": ul.rate["SU"] / 2}
        return SinrReport(gamma=gamma, rate=rate, interference=dl.interference)
    return sinr_all(channels, star, beams, scenario)


def dl_terms(channels: ChannelSet, star: StarProfile, beams: BeamformerSet, scenario: ScenarioConfig,
             ul_active: bool = True):
    """Signal ``A`` and interference-plus-noise ``B`` of every DL user."""
    G = effective_dl(channels, star)
    rx = np.abs(G @ beams.stacked) ** 2
    A = np.diag(rx).copy()
    B = rx.sum(axis=1) - A + scenario.noise_watt
    if ul_active:
        pu, su = ul_into_dl(channels, star)
        B = B + pu + su
    return A, B


# ---------------------------------------------------------------- options per architecture

@dataclass
class _Options:
    optimize_amplitudes: bool = True
    optimize_phases: bool = True
    coupled: bool = False
    ul_active: bool = True
    waive_su: bool = False
    surfaces: tuple = ("P", "S")
    phase_sides: tuple = SIDES


def _options(arch: Architecture) -> _Options:
    A = Architecture
    if arch is A.DSTAR_COUPLED:
        return _Options(coupled=True)
    if arch is A.FIXED_PHASE:
        return _Options(optimize_phases=False)
    if arch in (A.FIXED_AMPLITUDE, A.MODE_SWITCH):
        return _Options(optimize_amplitudes=False)
    if arch is A.DOUBLE_RIS:
        return _Options(optimize_amplitudes=False, phase_sides=("PR", "SR"))
    if arch is A.SINGLE_STAR:
        # STAR-S is absent, so the SU group has no path to the BS
        return _Options(surfaces=("P",), phase_sides=("PR", "PT"), waive_su=True)
    if arch is A.HDX_DSTAR:
        return _Options(ul_active=False)
    return _Options()


def initial_profile(scenario: ScenarioConfig, seed: int | None = None, start: int = 0) -> StarProfile:
    """Random phases, balanced energy split, with architecture-specific switches."""
    seed = scenario.seed if seed is None else seed
    key = (1000,) if start == 0 else (1000, start)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
    m = scenario.m_elems
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(4, m)))
    arch = scenario.architecture
    beta_pr = np.full(m, np.sqrt(0.5))
    beta_sr = np.full(m, np.sqrt(0.5))
    if arch is Architecture.DSTAR_COUPLED:
        theta[0] = 1j * theta[1]
        theta[2] = 1j * theta[3]
    star = StarProfile.from_phases(beta_pr, beta_sr, theta)
    if arch is Architecture.DOUBLE_RIS:
        star = StarProfile.from_phases(np.ones(m), np.ones(m), theta)
    if arch is Architecture.SINGLE_STAR:
        beta = np.array(star.beta)
        beta[2:] = 0.0
        star = StarProfile(beta, theta)
    return star


def _align(R, r, theta, iters=100):
    """Phase-alignment ascent on ``theta^H R theta + 2 Re(r^H theta)`` over the unit circle."""
    for _ in range(iters):
        new = R @ theta + r
        new = np.where(np.abs(new) > 0, np.exp(1j * np.angle(new)), theta)
        if np.allclose(new, theta, atol=1e-12):
            break
        theta = new
    return theta


def restore_ul(channels: ChannelSet, star: StarProfile, scenario: ScenarioConfig,
               opts: _Options | None = None) -> StarProfile:
    """Steer the surfaces toward the BS for UL users whose threshold fails with zero DL power."""
    opts = _options(scenario.architecture) if opts is None else opts
    from .beamformer import _ul_groups
    from .model import ul_signal

    t_pu, t_su, has_pu, has_su = _ul_groups(channels, scenario, opts.ul_active)
    has_su = has_su and not opts.waive_su
    sigma2 = scenario.noise_watt
    P = channels.ul_power_watt
    c = channels

    def margins(s):
        sig_pu, sig_su = ul_signal(c, s)
        out = {}
        if has_pu:
            out["PU"] = sig_pu.sum() - t_pu * sigma2
        if has_su:
            out["SU"] = sig_su.sum() - t_su * sigma2
        return out

    m = margins(star)
    if all(v > 0 for v in m.values()):
        return star
    theta = np.array(star.theta)
    beta = np.array(star.beta)
    if m.get("PU", 1) <= 0 and opts.optimize_phases:
        R = sum((c.U2 * c.U1[:, k]).conj().T @ (c.U2 * c.U1[:, k]) for k in range(c.U1.shape[1]))
        r = sum((c.U2 * c.U1[:, k]).conj().T @ c.U[:, k] for k in range(c.U1.shape[1]))
        theta[0] = _align(P * R * beta[0] ** 2, P * r * beta[0], theta[0])
    if m.get("SU", 1) <= 0:
        if opts.optimize_amplitudes and "S" in opts.surfaces:
            beta[3], beta[2] = 1.0, 0.0
        if opts.optimize_phases:
            R = sum((c.H3 * c.H1[:, k]).conj().T @ (c.H3 * c.H1[:, k]) for k in range(c.H1.shape[1]))
            r = sum((c.H3 * c.H1[:, k]).conj().T @ c.U_s[:, k] for k in range(c.H1.shape[1]))
            theta[3] = _align(P * R * beta[3] ** 2, P * r * beta[3], theta[3])
    if opts.coupled:
        theta[1] = -1j * theta[0]
        theta[2] = 1j * theta[3]
    restored = StarProfile(beta, theta)
    bad = [k for k, v in margins(restored).items() if v <= 0]
    if bad:
        raise InfeasibleError(f"UL rate threshold of {', '.join(bad)} unattainable even without DL power")
    return restored


# ---------------------------------------------------------------- main loop

def _ul_ok(report: SinrReport, scenario: ScenarioConfig, opts: _Options) -> dict:
    out = {}
    if not opts.ul_active:
        return out
    if report.gamma["PU"].size and scenario.ul_rate_threshold_pu > 0:
        out["PU"] = report.rate["PU"] - scenario.ul_rate_threshold_pu
    if report.gamma["SU"].size and scenario.ul_rate_threshold_su > 0 and not opts.waive_su:
        out["SU"] = report.rate["SU"] - scenario.ul_rate_threshold_su
    return out


def _is_feasible(slacks: dict) -> bool:
    return all(v >= -UL_SLACK for v in slacks.values())


BACKTRACK = (0.5, 0.25, 0.125, 0.0625)


def _blend(old: StarProfile, new: StarProfile, frac: float) -> StarProfile:
    """Point ``frac`` of the way from ``old`` to ``new``, projected back onto the
    energy split and the unit circle."""
    beta = (1 - frac) * old.beta + frac * new.beta
    for i in (0, 2):
        norm = np.hypot(beta[i], beta[i + 1])
        ok = norm > 0
        beta[i][ok] /= norm[ok]
        beta[i + 1][ok] /= norm[ok]
    if np.array_equal(old.theta, new.theta):
        return StarProfile(beta, new.theta)
    theta = (1 - frac) * old.theta + frac * new.theta
    mag = np.abs(theta)
    theta = np.where(mag > 1e-12, theta / np.where(mag > 0, mag, 1.0), old.theta)
    # keep any exact quarter-wave pairing of the target profile
    for t, r in ((1, 0), (3, 2)):
        for sgn in (1j, -1j):
            paired = new.theta[r] == sgn * new.theta[t]
            theta[r][paired] = sgn * theta[t][paired]
    return StarProfile(beta, theta)


def _surface_quad(channels, star, beams, sc, opts, a, duals):
    A, B = dl_terms(channels, star, beams, sc, opts.ul_active)
    aux = AuxState.from_terms(A, np.maximum(B, 1e-300), a)
    quad = assemble_quadratics(channels, star, beams, aux, sc, ul_active=opts.ul_active, waive_su=opts.waive_su)
    return price_ul(quad, duals) if duals else quad


def _scale_to_ul(beams, star, channels, scenario, opts, steps: int = 40):
    """Largest common beam scaling (by bisection) that meets the UL thresholds, or None."""
    def check(c):
        b = BeamformerSet(beams.w_pd * np.sqrt(c), beams.w_sd * np.sqrt(c))
        rep = evaluate_solution(b, star, channels, scenario)
        sl = _ul_ok(rep, scenario, opts)
        return _is_feasible(sl), (rep.dl_sum_rate, b, star, rep, sl)

    ok, out = check(0.0)
    if not ok:
        return None
    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        good, res = check(mid)
        if good:
            lo, out = mid, res
        else:
            hi = mid
    return out


def _loop(scenario, channels, star, beams, opts: _Options, max_iters: int):
    sc = scenario
    p_t = sc.power_budget_watt
    trace = DbapTrace()
    admm = AdmmState.start(star, sc.rho1, sc.rho2)
    pccp = PccpState.start(star.m, sc.kappa0, sc.kappa_max)

    report = evaluate_solution(beams, star, channels, sc)
    slacks = _ul_ok(report, sc, opts)
    best = (report.dl_sum_rate, beams, star, report, 0)
    trace.rows.append(dict(iteration=0, dl_rate=report.dl_sum_rate, r_pd=report.rate["PD"],
                           r_sd=report.rate["SD"], r_pu=report.rate["PU"], r_su=report.rate["SU"],
                           best_rate=report.dl_sum_rate, surrogate=np.nan, power_slack=p_t - beams.power,
                           pu_slack=slacks.get("PU", np.nan), su_slack=slacks.get("SU", np.nan),
                           beam_status="", amp_status="", phase_status="", star_accepted=True,
                           d_beam=np.nan, d_beta=np.nan, d_theta=np.nan, kappa=pccp.kappa,
                           admm_residual=np.nan))
    status = RunStatus.MAX_ITER
    prev_rate = report.dl_sum_rate

    for a in range(1, max_iters + 1):
        A, B = dl_terms(channels, star, beams, sc, opts.ul_active)
        aux = AuxState.from_terms(A, np.maximum(B, 1e-300), a)
        sub = build_beam_subproblem(channels, star, beams, aux, sc, ul_active=opts.ul_active,
                                    waive_su=opts.waive_su)
        new_beams, bres = beam_step(sub)
        surrogate = sub.surrogate(new_beams.stacked)

        new_star = star
        amp_status = phase_status = ""
        admm_res = np.nan
        try:
            duals = bres.info.get("ul_duals", {}) if sc.price_ul else {}
            # phases first: amplitudes chosen against random phases would
            # switch off reflection paths before they can be steered
            for step in ("phase", "amp"):
                if step == "amp" and opts.optimize_amplitudes:
                    quad = _surface_quad(channels, new_star, new_beams, sc, opts, a, duals)
                    prev = new_star
                    new_star, admm = solve_amplitudes_admm(quad, new_star, admm, surfaces=opts.surfaces)
                    if sc.amp_step < 1:
                        new_star = _blend(prev, new_star, sc.amp_step)
                    admm_res = admm.info["residual"]
                    amp_status = "ok"
                if step == "phase" and opts.optimize_phases:
                    quad = _surface_quad(channels, new_star, new_beams, sc, opts, a, duals)
                    new_star, pccp = solve_phases_pccp(quad, new_star, pccp, sides=opts.phase_sides)
                    phase_status = pccp.last.status.value
                    if opts.coupled:
                        new_star = couple_phases(new_star, quad)
        except InfeasibleError as exc:
            log.debug("surface step failed at iteration %d: %s", a, exc)
            new_star = star
            amp_status = amp_status or "infeasible"
            phase_status = phase_status or "infeasible"

        new_report = evaluate_solution(new_beams, new_star, channels, sc)
        slacks = _ul_ok(new_report, sc, opts)
        accepted = True
        if not _is_feasible(slacks):
            # the projected surface step broke a UL threshold: try partial steps
            # toward the old surfaces, and the full step with the beams scaled
            # down until the thresholds hold again; keep the best feasible one
            accepted = False
            options = []
            for frac in BACKTRACK:
                cand = _blend(star, new_star, frac)
                rep = evaluate_solution(new_beams, cand, channels, sc)
                sl = _ul_ok(rep, sc, opts)
                if _is_feasible(sl):
                    options.append((rep.dl_sum_rate, new_beams, cand, rep, sl))
                    break
            scaled = _scale_to_ul(new_beams, new_star, channels, sc, opts)
            if scaled is not None:
                options.append(scaled)
            if options:
                _, new_beams, new_star, new_report, slacks = max(options, key=lambda o: o[0])
                accepted = True
            else:
                new_star = star
                new_report = evaluate_solution(new_beams, new_star, channels, sc)
                slacks = _ul_ok(new_report, sc, opts)

        d_beam = float(np.linalg.norm(new_beams.stacked - beams.stacked) / np.sqrt(p_t))
        d_beta = float(np.max(np.abs(new_star.beta - star.beta)))
        d_theta = float(np.max(np.abs(new_star.theta - star.theta)))
        rate = new_report.dl_sum_rate
        if _is_feasible(slacks) and rate > best[0]:
            best = (rate, new_beams, new_star, new_report, a)
        trace.rows.append(dict(iteration=a, dl_rate=rate, r_pd=new_report.rate["PD"], r_sd=new_report.rate["SD"],
                               r_pu=new_report.rate["PU"], r_su=new_report.rate["SU"], best_rate=best[0],
                               surrogate=surrogate, power_slack=p_t - new_beams.power,
                               pu_slack=slacks.get("PU", np.nan), su_slack=slacks.get("SU", np.nan),
                               beam_status=bres.status.value, amp_status=amp_status,
                               phase_status=phase_status, star_accepted=accepted, d_beam=d_beam,
                               d_beta=d_beta, d_theta=d_theta, kappa=pccp.kappa, admm_residual=admm_res))
        beams, star = new_beams, new_star
        if abs(rate - prev_rate) <= sc.delta_rate:
            status = RunStatus.CONVERGED_RATE
            break
        if max(d_beam, d_beta, d_theta) <= sc.delta_vars:
            status = RunStatus.CONVERGED_VARS
            break
        prev_rate = rate

    trace.status = status
    trace.best_iteration = best[4]
    return best[1], best[2], trace


def run_dbap(scenario: ScenarioConfig, channels: ChannelSet) -> tuple[BeamformerSet, StarProfile, DbapTrace]:
    """Run the alternating optimization and return the best feasible iterate.

    Raises ``InfeasibleError`` when a UL rate threshold cannot be met even
    with zero DL power after steering the surfaces toward the BS.
    """
    check_dimensions(channels, scenario)
    opts = _options(scenario.architecture)
    mode_switch = scenario.architecture is Architecture.MODE_SWITCH
    # mode switching starts from the energy-splitting solution
    first_opts = _Options() if mode_switch else opts
    # several random starts are probed for a few iterations; the most
    # promising one is then run to completion
    n_starts = scenario.n_starts
    probe = min(scenario.probe_iters, scenario.max_iters) if n_starts > 1 else scenario.max_iters

    def begin(start):
        star = initial_profile(scenario, start=start)
        star = restore_ul(channels, star, scenario, first_opts)
        beams = initial_beams(channels, star, scenario, ul_active=first_opts.ul_active, waive_su=first_opts.waive_su)
        return star, beams

    best = None
    for start in range(n_starts):
        star, beams = begin(start)
        out = _loop(scenario, channels, star, beams, first_opts, probe)
        if best is None or out[2].rows[-1]["best_rate"] > best[1][2].rows[-1]["best_rate"]:
            best = (start, out)
    if probe < scenario.max_iters:
        star, beams = begin(best[0])
        beams, star, trace = _loop(scenario, channels, star, beams, first_opts, scenario.max_iters)
    else:
        beams, star, trace = best[1]

    if mode_switch:
        # each element becomes reflection-only or transmission-only, then
        # phases and beams are refined with the amplitudes frozen
        on_pr = star.b("PR") ** 2 >= 0.5
        on_sr = star.b("SR") ** 2 >= 0.5
        ms = StarProfile.from_phases(on_pr.astype(float), on_sr.astype(float), star.theta)
        try:
            ms = restore_ul(channels, ms, scenario, opts)
        except InfeasibleError:
            # give the SU path every S-surface element
            ms = StarProfile.from_phases(on_pr.astype(float), np.zeros(star.m), star.theta)
            ms = restore_ul(channels, ms, scenario, opts)
        ms_beams = initial_beams(channels, ms, scenario)
        beams, star, tail = _loop(scenario, channels, ms, ms_beams, opts, scenario.max_iters)
        first = trace.rows[-1]["best_rate"]
        for row in tail.rows[1:]:
            row = dict(row)
            row["iteration"] += trace.iterations
            trace.rows.append(row)
        trace.status = tail.status
        trace.best_iteration = tail.best_iteration + (trace.iterations - tail.iterations)
        trace.ms_es_rate = first
    return beams, star, trace


def run_summary(beams, star, trace, channels, scenario) -> dict:
    report = evaluate_solution(beams, star, channels, scenario)
    return {"dl_rate": report.dl_sum_rate, "r_pu": report.rate["PU"], "r_su": report.rate["SU"],
            "iterations": trace.iterations, "status": trace.status.value}


__all__ = ["DbapTrace", "RunStatus", "TRACE_COLUMNS", "dl_terms", "evaluate_solution", "initial_profile",
           "restore_ul", "run_dbap", "run_summary", "Status"]
