"""Physical system model: channels, surface profiles, beams, SINRs and rates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import Architecture, ScenarioConfig

SIDES = ("PR", "PT", "SR", "ST")
_SIDE_INDEX = {s: i for i, s in enumerate(SIDES)}


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------- containers

@dataclass(frozen=True, eq=False)
class StarProfile:
    """Amplitudes and unit-modulus phases of both surfaces.

    ``beta`` and ``theta`` are ``(4, M)`` arrays whose rows follow ``SIDES``
    (PR, PT, SR, ST).
    """

    beta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        beta = _frozen(self.beta, float)
        theta = _frozen(self.theta, complex)
        if beta.ndim != 2 or beta.shape[0] != 4 or beta.shape != theta.shape:
            raise ValueError(f"expected (4, M) amplitude/phase arrays, got {beta.shape} / {theta.shape}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)

    @property
    def m(self) -> int:
        return self.beta.shape[1]

    def b(self, side: str) -> np.ndarray:
        return self.beta[_SIDE_INDEX[side]]

    def t(self, side: str) -> np.ndarray:
        return self.theta[_SIDE_INDEX[side]]

    def phi(self, side: str) -> np.ndarray:
        i = _SIDE_INDEX[side]
        return self.beta[i] * self.theta[i]

    def with_sides(self, beta: dict | None = None, theta: dict | None = None) -> "StarProfile":
        b = np.array(self.beta)
        t = np.array(self.theta)
        for side, v in (beta or {}).items():
            b[_SIDE_INDEX[side]] = v
        for side, v in (theta or {}).items():
            t[_SIDE_INDEX[side]] = v
        return StarProfile(b, t)

    @classmethod
    def from_phases(cls, beta_pr, beta_sr, theta) -> "StarProfile":
        """Build a profile whose transmission amplitudes follow the energy split."""
        beta_pr = np.clip(np.asarray(beta_pr, float), 0.0, 1.0)
        beta_sr = np.clip(np.asarray(beta_sr, float), 0.0, 1.0)
        beta = np.stack([beta_pr, np.sqrt(1 - beta_pr**2), beta_sr, np.sqrt(1 - beta_sr**2)])
        return cls(beta, theta)


@dataclass(frozen=True, eq=False)
class BeamformerSet:
    w_pd: np.ndarray
    w_sd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_pd", _frozen(self.w_pd, complex))
        object.__setattr__(self, "w_sd", _frozen(self.w_sd, complex))

    @property
    def stacked(self) -> np.ndarray:
        """``[W_PD, W_SD]`` as an ``N_T x (K_PD + K_SD)`` matrix."""
        return np.hstack([self.w_pd, self.w_sd])

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.w_pd) ** 2) + np.sum(np.abs(self.w_sd) ** 2))

    @classmethod
    def from_stacked(cls, W: np.ndarray, k_pd: int) -> "BeamformerSet":
        return cls(W[:, :k_pd], W[:, k_pd:])

    @classmethod
    def zeros(cls, n_tx: int, k_pd: int, k_sd: int) -> "BeamformerSet":
        return cls(np.zeros((n_tx, k_pd), complex), np.zeros((n_tx, k_sd), complex))


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Every complex link matrix of the network.

    ``D_s`` (BS to SD users) and ``U_s`` (SU users to BS) are the S-region
    direct links; they are all-zero unless the architecture re-enables them.
    """

    D: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    U: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    H3: np.ndarray
    H4: np.ndarray
    S: np.ndarray
    V_P: np.ndarray
    V_S: np.ndarray
    ul_power_watt: float
    D_s: np.ndarray = None
    U_s: np.ndarray = None

    def __post_init__(self):
        for name in _LINKS:
            value = getattr(self, name)
            if value is None:
                value = np.zeros(self._shape_of(name), complex)
            object.__setattr__(self, name, _frozen(value, complex))
        object.__setattr__(self, "ul_power_watt", float(self.ul_power_watt))
        self._check_shapes()

    def _shape_of(self, name):
        n_tx, k_sd = self.D.shape[0], self.D3.shape[1]
        n_rx, k_su = self.U.shape[0], self.H1.shape[1]
        return {"D_s": (n_tx, k_sd), "U_s": (n_rx, k_su)}[name]

    @property
    def dims(self) -> dict:
        return dict(n_tx=self.D.shape[0], n_rx=self.U.shape[0], m=self.D1.shape[0],
                    k_pd=self.D.shape[1], k_sd=self.D3.shape[1],
                    k_pu=self.U.shape[1], k_su=self.H1.shape[1])

    def _check_shapes(self):
        d = self.dims
        expected = _expected_shapes(**d)
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"channel {name} has shape {getattr(self, name).shape}, expected {shape}")

    def scaled(self, factor: complex) -> "ChannelSet":
        kw = {name: getattr(self, name) * factor for name in _LINKS}
        return ChannelSet(ul_power_watt=self.ul_power_watt, **kw)


_LINKS = ("D", "D1", "D2", "D3", "U", "U1", "U2", "H1", "H2", "H3", "H4", "S", "V_P", "V_S", "D_s", "U_s")


def _expected_shapes(n_tx, n_rx, m, k_pd, k_sd, k_pu, k_su) -> dict:
    return {
        "D": (n_tx, k_pd), "D1": (m, n_tx), "D2": (m, k_pd), "D3": (m, k_sd),
        "U": (n_rx, k_pu), "U1": (m, k_pu), "U2": (n_rx, m),
        "H1": (m, k_su), "H2": (m, k_sd), "H3": (n_rx, m), "H4": (m, k_pd),
        "S": (n_rx, n_tx), "V_P": (k_pu, k_pd), "V_S": (k_su, k_sd),
        "D_s": (n_tx, k_sd), "U_s": (n_rx, k_su),
    }


def check_dimensions(channels: ChannelSet, scenario: ScenarioConfig) -> None:
    """Raise ``ValueError`` unless the channel shapes match the scenario counts."""
    want = dict(n_tx=scenario.n_tx, n_rx=scenario.n_rx, m=scenario.m_elems,
                k_pd=scenario.k_pd, k_sd=scenario.k_sd, k_pu=scenario.k_pu, k_su=scenario.k_su)
    if channels.dims != want:
        raise ValueError(f"channel dimensions {channels.dims} do not match scenario {want}")


# ---------------------------------------------------------------- channels

def element_positions(center, m: int, n_panels: int, spacing: float) -> np.ndarray:
    """Per-element coordinates: panels sit on a line perpendicular to the
    x axis through ``center``, ``spacing`` meters apart."""
    per = m // n_panels
    offsets = (np.arange(n_panels) - (n_panels - 1) / 2) * spacing
    y = np.repeat(offsets, per)
    pos = np.empty((m, 2))
    pos[:, 0] = center[0]
    pos[:, 1] = center[1] + y
    return pos


def path_gain(dist, pl0_db: float, alpha: float) -> np.ndarray:
    dist = np.asarray(dist, float)
    if np.any(dist <= 0):
        raise ValueError("link distances must be strictly positive")
    return 10.0 ** (-(pl0_db + 10.0 * alpha * np.log10(dist)) / 10.0)


def _dist(a, b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, float))
    b = np.atleast_2d(np.asarray(b, float))
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


# Draw order is fixed so every link has its own stream (common random numbers).
_DRAW_ORDER = ("D", "D1", "D2", "D3", "U", "U1", "U2", "H1", "H2", "H3", "H4", "S", "V_P", "V_S", "D_s", "U_s")


def _rayleigh(seed: int, link: str, shape) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(_DRAW_ORDER.index(link),))
    rng = np.random.default_rng(ss)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def link_gains(scenario: ScenarioConfig) -> dict:
    """Large-scale power gain of every link entry, with the shape of the link."""
    sc = scenario
    m = sc.m_elems
    P = element_positions(sc.star_p_pos, m, sc.n_panels, sc.panel_spacing_m)
    Sx = element_positions(sc.star_s_pos, m, sc.n_panels, sc.panel_spacing_m)
    star = lambda a, b: path_gain(_dist(a, b), sc.pl0_star_db, sc.alpha_star)
    direct = lambda a, b: path_gain(_dist(a, b), sc.pl0_direct_db, sc.alpha_direct)
    user = lambda a, b: path_gain(_dist(a, b), sc.pl0_user_db, sc.alpha_user)
    bs = sc.bs_pos
    blocked = 10.0 ** (-sc.blockage_penalty_db / 10.0)
    # per-entry gains broadcast along antenna / user axes
    g = {
        "D": np.broadcast_to(direct(bs, sc.pd_pos), (sc.n_tx, sc.k_pd)),
        "D1": np.broadcast_to(star(P, bs), (m, sc.n_tx)),
        "D2": np.broadcast_to(star(P, sc.pd_pos), (m, sc.k_pd)),
        "D3": np.broadcast_to(star(P, sc.sd_pos), (m, sc.k_sd)),
        "U": np.broadcast_to(direct(bs, sc.pu_pos), (sc.n_rx, sc.k_pu)),
        "U1": np.broadcast_to(star(P, sc.pu_pos), (m, sc.k_pu)),
        "U2": np.broadcast_to(star(bs, P), (sc.n_rx, m)),
        "H1": np.broadcast_to(star(Sx, sc.su_pos), (m, sc.k_su)),
        "H2": np.broadcast_to(star(Sx, sc.sd_pos), (m, sc.k_sd)),
        "H3": np.broadcast_to(star(bs, Sx), (sc.n_rx, m)),
        "H4": np.broadcast_to(star(Sx, sc.pd_pos), (m, sc.k_pd)),
        "S": np.full((sc.n_rx, sc.n_tx), 10.0 ** (-sc.si_attenuation_db / 10.0)),
        "V_P": np.broadcast_to(user(sc.pu_pos, sc.pd_pos), (sc.k_pu, sc.k_pd)),
        "V_S": np.broadcast_to(user(sc.su_pos, sc.sd_pos), (sc.k_su, sc.k_sd)),
        "D_s": np.broadcast_to(blocked * direct(bs, sc.sd_pos), (sc.n_tx, sc.k_sd)),
        "U_s": np.broadcast_to(blocked * direct(bs, sc.su_pos), (sc.n_rx, sc.k_su)),
    }
    return g


def gen_channels(scenario: ScenarioConfig, seed: int | None = None) -> ChannelSet:
    """Draw Rayleigh channels scaled by log-distance path loss.

    Each link uses its own random stream derived from ``seed`` so that the
    same seed yields the same small-scale fading across architectures.
    """
    seed = scenario.seed if seed is None else int(seed)
    gains = link_gains(scenario)
    links = {}
    for name in _DRAW_ORDER:
        g = gains[name]
        links[name] = np.sqrt(g) * _rayleigh(seed, name, g.shape)
    if scenario.architecture is not Architecture.DOUBLE_RIS:
        links["D_s"] = np.zeros_like(links["D_s"])
        links["U_s"] = np.zeros_like(links["U_s"])
    return ChannelSet(ul_power_watt=scenario.user_power_watt, **links)


# ---------------------------------------------------------------- cascades

def cascade_vector(d, Dm, w) -> np.ndarray:
    """Row ``c`` with ``c @ phi == d^H diag(phi) Dm w`` for every ``phi``.

    Built as ``w^T (rep(d^H, N2, 1) * Dm^T)``.
    """
    d = np.asarray(d)
    Dm = np.atleast_2d(np.asarray(Dm))
    w = np.asarray(w)
    n1, n2 = Dm.shape
    if d.shape != (n1,) or w.shape != (n2,):
        raise ValueError(f"cascade_vector: d{d.shape}, Dm{Dm.shape}, w{w.shape} are not conformable")
    rep = np.tile(d.conj(), (n2, 1))
    return w @ (rep * Dm.T)


def cascade_matrix(Um, Dm, w) -> np.ndarray:
    """Matrix ``C`` with ``C @ phi == Um diag(phi) Dm w`` for every ``phi``.

    Uses the block-diagonal Kronecker construction: one ``rep``-stacked
    block per row of ``Um``, folded back to an ``N3 x N1`` matrix.
    """
    Um = np.atleast_2d(np.asarray(Um))
    Dm = np.atleast_2d(np.asarray(Dm))
    w = np.asarray(w)
    n3, n1 = Um.shape
    if Dm.shape[0] != n1 or w.shape != (Dm.shape[1],):
        raise ValueError(f"cascade_matrix: Um{Um.shape}, Dm{Dm.shape}, w{w.shape} are not conformable")
    n2 = Dm.shape[1]
    blocks = np.zeros((n3 * n2, n3 * n1), dtype=complex)
    for n in range(n3):
        blocks[n * n2:(n + 1) * n2, n * n1:(n + 1) * n1] = np.tile(Um[n], (n2, 1))
    kron_d = np.kron(np.eye(n3), Dm.T)
    kron_w = np.kron(np.eye(n3), w[None, :])
    full = kron_w @ (blocks * kron_d)          # N3 x (N3*N1), block diagonal
    return full.reshape(n3, n3, n1).sum(axis=1)


# ---------------------------------------------------------------- SINR

@dataclass(frozen=True, eq=False)
class SinrReport:
    """Per-user SINRs, per-group rates and the DL interference breakdown."""

    gamma: dict
    rate: dict
    interference: dict = field(default_factory=dict)

    @property
    def dl_sum_rate(self) -> float:
        return self.rate["PD"] + self.rate["SD"]

    @property
    def ul_rates(self) -> tuple[float, float]:
        return self.rate["PU"], self.rate["SU"]


def effective_dl(channels: ChannelSet, star: StarProfile) -> np.ndarray:
    """Rows of effective DL channels: PD users first, then SD users."""
    c = channels
    g_pd = (c.D2.conj().T * star.phi("PR")) @ c.D1 + c.D.conj().T
    g_sd = (c.D3.conj().T * star.phi("PT")) @ c.D1 + c.D_s.conj().T
    return np.vstack([g_pd, g_sd])


def effective_si(channels: ChannelSet, star: StarProfile) -> np.ndarray:
    """S_t = S + U2 diag(phi_PR) D1."""
    return channels.S + (channels.U2 * star.phi("PR")) @ channels.D1


def ul_into_dl(channels: ChannelSet, star: StarProfile) -> tuple[np.ndarray, np.ndarray]:
    """UL interference powers received by each PD and SD user, split by source."""
    c = channels
    P = c.ul_power_watt
    pu_pd = (c.D2.conj().T * star.phi("PR")) @ c.U1 + c.V_P.conj().T   # K_PD x K_PU
    su_pd = (c.H4.conj().T * star.phi("ST")) @ c.H1                    # K_PD x K_SU
    pu_sd = (c.D3.conj().T * star.phi("PT")) @ c.U1                    # K_SD x K_PU
    su_sd = (c.H2.conj().T * star.phi("SR")) @ c.H1 + c.V_S.conj().T   # K_SD x K_SU
    pu = np.concatenate([P * np.sum(np.abs(pu_pd) ** 2, axis=1), P * np.sum(np.abs(pu_sd) ** 2, axis=1)])
    su = np.concatenate([P * np.sum(np.abs(su_pd) ** 2, axis=1), P * np.sum(np.abs(su_sd) ** 2, axis=1)])
    return pu, su


def ul_signal(channels: ChannelSet, star: StarProfile) -> tuple[np.ndarray, np.ndarray]:
    """Received UL signal power per PU and per SU user."""
    c = channels
    P = c.ul_power_watt
    pu = (c.U2 * star.phi("PR")) @ c.U1 + c.U
    su = (c.H3 * star.phi("ST")) @ c.H1 + c.U_s
    return P * np.sum(np.abs(pu) ** 2, axis=0), P * np.sum(np.abs(su) ** 2, axis=0)


def sinr_all(channels: ChannelSet, star: StarProfile, beams: BeamformerSet,
             scenario: ScenarioConfig, *, ul_active: bool = True, dl_active: bool = True) -> SinrReport:
    """SINRs and rates of all four user groups.

    ``ul_active=False`` removes UL interference at DL users, ``dl_active=False``
    removes DL self-interference at the BS (half-duplex slots).
    """
    sigma2 = scenario.noise_watt
    k_pd = channels.D.shape[1]
    G = effective_dl(channels, star)
    W = beams.stacked
    if not dl_active:
        W = np.zeros_like(W)
    rx = np.abs(G @ W) ** 2                      # user x beam
    own = np.diag(rx).copy() if rx.size else np.zeros(0)
    k_dl = rx.shape[0]
    grp = np.r_[np.zeros(k_pd, int), np.ones(k_dl - k_pd, int)]
    same = grp[:, None] == grp[None, :]
    intra = np.sum(np.where(same, rx, 0.0), axis=1) - own
    cross = np.sum(np.where(same, 0.0, rx), axis=1)
    pu_int, su_int = ul_into_dl(channels, star)
    if not ul_active:
        pu_int = np.zeros_like(pu_int)
        su_int = np.zeros_like(su_int)
    gamma_dl = own / (intra + cross + pu_int + su_int + sigma2)

    si = float(np.sum(np.abs(effective_si(channels, star) @ W) ** 2))
    sig_pu, sig_su = ul_signal(channels, star)
    gamma_pu = sig_pu / (si + sigma2)
    gamma_su = sig_su / (si + sigma2)

    gamma = {"PD": gamma_dl[:k_pd], "SD": gamma_dl[k_pd:], "PU": gamma_pu, "SU": gamma_su}
    rate = {u: float(np.sum(np.log2(1.0 + g))) for u, g in gamma.items()}
    interference = {"intra": intra, "cross": cross, "pu": pu_int, "su": su_int, "si": si,
                    "signal": own}
    return SinrReport(gamma=gamma, rate=rate, interference=interference)


# ---------------------------------------------------------------- feasibility

@dataclass(frozen=True)
class Feasibility:
    """Per-constraint flags with the measured slack (positive is satisfied)."""

    slack: dict
    ok: dict

    @property
    def all_ok(self) -> bool:
        return all(self.ok.values())

    def violations(self) -> list[str]:
        return [k for k, v in self.ok.items() if not v]


def check_feasibility(star: StarProfile, beams: BeamformerSet, report: SinrReport,
                      scenario: ScenarioConfig, tol: float = 1e-3,
                      coupled: bool | None = None) -> Feasibility:
    if coupled is None:
        coupled = scenario.architecture is Architecture.DSTAR_COUPLED
    slack, ok = {}, {}

    modulus = float(np.max(np.abs(np.abs(star.theta) - 1.0)))
    slack["unit_modulus"] = -modulus
    ok["unit_modulus"] = modulus <= tol

    single = scenario.architecture is Architecture.SINGLE_STAR
    split = float(np.max(np.abs(star.beta[0] ** 2 + star.beta[1] ** 2 - 1.0)))
    if single:
        # the second surface is switched off entirely
        split = max(split, float(np.max(np.abs(star.beta[2:]))))
    else:
        split = max(split, float(np.max(np.abs(star.beta[2] ** 2 + star.beta[3] ** 2 - 1.0))))
    slack["energy_split"] = -split
    ok["energy_split"] = split <= tol and bool(np.all((star.beta >= -tol) & (star.beta <= 1 + tol)))

    if coupled:
        dev = max(float(np.max(np.abs(np.cos(np.angle(star.t("PT")) - np.angle(star.t("PR")))))),
                  float(np.max(np.abs(np.cos(np.angle(star.t("ST")) - np.angle(star.t("SR")))))))
        slack["coupling"] = -dev
        ok["coupling"] = dev <= tol

    for u, thr in (("PU", scenario.ul_rate_threshold_pu), ("SU", scenario.ul_rate_threshold_su)):
        if report.gamma[u].size == 0 or (single and u == "SU"):
            continue
        s = report.rate[u] - thr
        slack[f"ul_{u.lower()}"] = s
        ok[f"ul_{u.lower()}"] = s >= -tol

    p = scenario.power_budget_watt - beams.power
    slack["power"] = p
    ok["power"] = p >= -1e-6
    return Feasibility(slack=slack, ok=ok)
