"""Reference implementations used only by the tests.

Everything here is written element by element from the signal model so it
shares no code path with the package.
"""
from __future__ import annotations

import numpy as np

from dstar.config import ScenarioConfig
from dstar.model import BeamformerSet, ChannelSet, StarProfile


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_star(rng, m) -> StarProfile:
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, (4, m)))
    return StarProfile.from_phases(rng.uniform(0, 1, m), rng.uniform(0, 1, m), theta)


def random_channels(rng, n_tx, n_rx, m, k_pd, k_sd, k_pu, k_su, p_user=1.0, direct_s=True) -> ChannelSet:
    def c(*s):
        return crandn(rng, *s)
    return ChannelSet(
        D=c(n_tx, k_pd), D1=c(m, n_tx), D2=c(m, k_pd), D3=c(m, k_sd), U=c(n_rx, k_pu), U1=c(m, k_pu),
        U2=c(n_rx, m), H1=c(m, k_su), H2=c(m, k_sd), H3=c(n_rx, m), H4=c(m, k_pd), S=0.1 * c(n_rx, n_tx),
        V_P=c(k_pu, k_pd), V_S=c(k_su, k_sd), ul_power_watt=p_user,
        D_s=c(n_tx, k_sd) if direct_s else None, U_s=c(n_rx, k_su) if direct_s else None)


def _cascade(a, phi, b):
    """sum_m conj(a_m) phi_m b_m"""
    return sum(np.conj(a[m]) * phi[m] * b[m] for m in range(len(phi)))


def sinr_oracle(ch: ChannelSet, star: StarProfile, beams: BeamformerSet, sigma2: float) -> dict:
    """SINR of every user, one scalar at a time."""
    P = ch.ul_power_watt
    n_tx, k_pd = ch.D.shape
    k_sd = ch.D3.shape[1]
    k_pu = ch.U.shape[1]
    k_su = ch.H1.shape[1]
    n_rx, m = ch.U2.shape
    f = {s: star.phi(s) for s in ("PR", "PT", "SR", "ST")}
    beams_all = [beams.w_pd[:, k] for k in range(k_pd)] + [beams.w_sd[:, k] for k in range(k_sd)]

    def dl_gain(k, is_pd, w):
        total = 0j
        for n in range(n_tx):
            if is_pd:
                total += (_cascade(ch.D2[:, k], f["PR"], ch.D1[:, n]) + np.conj(ch.D[n, k])) * w[n]
            else:
                total += (_cascade(ch.D3[:, k], f["PT"], ch.D1[:, n]) + np.conj(ch.D_s[n, k])) * w[n]
        return abs(total) ** 2

    def ul_interf(k, is_pd):
        total = 0.0
        for i in range(k_pu):
            if is_pd:
                h = _cascade(ch.D2[:, k], f["PR"], ch.U1[:, i]) + np.conj(ch.V_P[i, k])
            else:
                h = _cascade(ch.D3[:, k], f["PT"], ch.U1[:, i])
            total += P * abs(h) ** 2
        for i in range(k_su):
            if is_pd:
                h = _cascade(ch.H4[:, k], f["ST"], ch.H1[:, i])
            else:
                h = _cascade(ch.H2[:, k], f["SR"], ch.H1[:, i]) + np.conj(ch.V_S[i, k])
            total += P * abs(h) ** 2
        return total

    out = {"PD": [], "SD": []}
    for group, is_pd, K, offset in (("PD", True, k_pd, 0), ("SD", False, k_sd, k_pd)):
        for k in range(K):
            gains = [dl_gain(k, is_pd, w) for w in beams_all]
            signal = gains[offset + k]
            interf = sum(gains) - signal
            out[group].append(signal / (interf + ul_interf(k, is_pd) + sigma2))

    si = 0.0
    for w in beams_all:
        for r in range(n_rx):
            acc = 0j
            for n in range(n_tx):
                refl = sum(ch.U2[r, mm] * f["PR"][mm] * ch.D1[mm, n] for mm in range(m))
                acc += (ch.S[r, n] + refl) * w[n]
            si += abs(acc) ** 2

    def ul_power(U_dir, U_in, U_out, phi, i):
        total = 0.0
        for r in range(n_rx):
            h = U_dir[r, i] + sum(U_out[r, mm] * phi[mm] * U_in[mm, i] for mm in range(m))
            total += abs(h) ** 2
        return P * total

    out["PU"] = [ul_power(ch.U, ch.U1, ch.U2, f["PR"], i) / (si + sigma2) for i in range(k_pu)]
    out["SU"] = [ul_power(ch.U_s, ch.H1, ch.H3, f["ST"], i) / (si + sigma2) for i in range(k_su)]
    return {k: np.array(v, float) for k, v in out.items()}


# ---------------------------------------------------------------- brute force

def _effective(ch: ChannelSet, phi_pr, phi_pt):
    """Effective DL rows for a batch of profiles: (S, 2, N_T) with one PD and one SD user."""
    g_pd = np.einsum("m,sm,mn->sn", ch.D2[:, 0].conj(), phi_pr, ch.D1) + ch.D[:, 0].conj()
    g_sd = np.einsum("m,sm,mn->sn", ch.D3[:, 0].conj(), phi_pt, ch.D1) + ch.D_s[:, 0].conj()
    return np.stack([g_pd, g_sd], axis=1)


def brute_force_rate(ch: ChannelSet, scenario: ScenarioConfig, samples: int = 100_000, rng=None,
                     grid: int = 64, sweeps: int = 2, return_profile: bool = False):
    """Best DL sum rate found by random search plus a per-element phase grid.

    One user per group. Each sampled surface profile is paired with MRT and
    ZF beams at eleven PD/SD power splits; the beams are then scaled down in
    closed form until both UL users reach their threshold. The best sample is
    refined by coordinate search over ``grid`` phases per element.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    sigma2 = scenario.noise_watt
    p_t = scenario.power_budget_watt
    P = ch.ul_power_watt
    t_pu = 2.0 ** scenario.ul_rate_threshold_pu - 1
    t_su = 2.0 ** scenario.ul_rate_threshold_su - 1
    m = ch.D1.shape[0]
    splits = np.linspace(0, 1, 11)

    def evaluate(beta_pr, beta_sr, theta):
        """beta_*: (S, M), theta: (S, 4, M); returns (S,) best rate over the beam candidates."""
        S = theta.shape[0]
        beta = np.stack([beta_pr, np.sqrt(1 - beta_pr ** 2), beta_sr, np.sqrt(1 - beta_sr ** 2)], axis=1)
        phi = beta * theta
        G = _effective(ch, phi[:, 0], phi[:, 1])                      # S x 2 x N_T
        # UL signals (independent of beams)
        h_pu = np.einsum("rm,sm,m->sr", ch.U2, phi[:, 0], ch.U1[:, 0]) + ch.U[:, 0]
        h_su = np.einsum("rm,sm,m->sr", ch.H3, phi[:, 3], ch.H1[:, 0]) + ch.U_s[:, 0]
        sig_pu = P * np.sum(np.abs(h_pu) ** 2, axis=1)
        sig_su = P * np.sum(np.abs(h_su) ** 2, axis=1)
        # UL interference at DL users
        i_pd = P * (np.abs(np.einsum("m,sm,m->s", ch.D2[:, 0].conj(), phi[:, 0], ch.U1[:, 0]) + np.conj(ch.V_P[0, 0])) ** 2
                    + np.abs(np.einsum("m,sm,m->s", ch.H4[:, 0].conj(), phi[:, 3], ch.H1[:, 0])) ** 2)
        i_sd = P * (np.abs(np.einsum("m,sm,m->s", ch.D3[:, 0].conj(), phi[:, 1], ch.U1[:, 0])) ** 2
                    + np.abs(np.einsum("m,sm,m->s", ch.H2[:, 0].conj(), phi[:, 2], ch.H1[:, 0]) + np.conj(ch.V_S[0, 0])) ** 2)
        St = ch.S[None] + np.einsum("rm,sm,mn->srn", ch.U2, phi[:, 0], ch.D1)
        room = np.minimum(sig_pu / t_pu, sig_su / t_su) - sigma2     # allowed SI power
        # beam directions
        mrt = G.conj() / np.maximum(np.linalg.norm(G, axis=2, keepdims=True), 1e-300)
        Ginv = np.linalg.pinv(G)                                      # S x N_T x 2
        zf = np.swapaxes(Ginv, 1, 2)
        zf = zf / np.maximum(np.linalg.norm(zf, axis=2, keepdims=True), 1e-300)
        best = np.full(S, -np.inf)
        for dirs in (mrt, zf):                                        # S x 2 x N_T
            for a in splits:
                W = dirs * np.sqrt(np.array([a, 1 - a]) * p_t)[None, :, None]
                si = np.sum(np.abs(np.einsum("srn,skn->skr", St, W)) ** 2, axis=(1, 2))
                scale = np.where(si > 0, np.clip(room / np.where(si > 0, si, 1.0), 0.0, 1.0), 1.0)
                W = W * np.sqrt(scale)[:, None, None]
                rx = np.abs(np.einsum("sun,skn->suk", G, W)) ** 2
                own = np.stack([rx[:, 0, 0], rx[:, 1, 1]], axis=1)
                noise = np.stack([i_pd, i_sd], axis=1) + sigma2
                gam = own / (rx.sum(axis=2) - own + noise)
                rate = np.sum(np.log2(1 + gam), axis=1)
                best = np.maximum(best, np.where(room > 0, rate, -np.inf))
        return best

    best_rate, best_arg = -np.inf, None
    chunk = 10_000
    for start in range(0, samples, chunk):
        s = min(chunk, samples - start)
        bp, bs = rng.uniform(0, 1, (s, m)), rng.uniform(0, 1, (s, m))
        th = np.exp(1j * rng.uniform(0, 2 * np.pi, (s, 4, m)))
        r = evaluate(bp, bs, th)
        i = int(np.argmax(r))
        if r[i] > best_rate:
            best_rate, best_arg = float(r[i]), (bp[i], bs[i], th[i])

    if best_arg is None:
        return (float("nan"), None) if return_profile else float("nan")
    # coordinate refinement: a phase grid per element, then an amplitude grid per element
    bp, bs, th = best_arg
    phases = np.exp(2j * np.pi * np.arange(grid) / grid)
    amps = np.linspace(0, 1, 41)
    rep = lambda a, n: np.repeat(a[None], n, axis=0)
    for _ in range(sweeps):
        for side in range(4):
            for el in range(m):
                cand = rep(th, grid)
                cand[:, side, el] = phases
                r = evaluate(rep(bp, grid), rep(bs, grid), cand)
                i = int(np.argmax(r))
                if r[i] > best_rate:
                    best_rate, th = float(r[i]), cand[i]
        for which in (0, 1):
            for el in range(m):
                cp, cs = rep(bp, len(amps)), rep(bs, len(amps))
                (cp if which == 0 else cs)[:, el] = amps
                r = evaluate(cp, cs, rep(th, len(amps)))
                i = int(np.argmax(r))
                if r[i] > best_rate:
                    best_rate, bp, bs = float(r[i]), cp[i], cs[i]
    if return_profile:
        return best_rate, StarProfile.from_phases(bp, bs, th)
    return best_rate
