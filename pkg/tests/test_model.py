import numpy as np
import pytest

from dstar.config import Architecture, ScenarioConfig
from dstar.model import (BeamformerSet, ChannelSet, StarProfile, cascade_matrix, cascade_vector,
                         check_dimensions, check_feasibility, gen_channels, link_gains, path_gain,
                         sinr_all)
from oracles import crandn, random_channels, random_star, sinr_oracle


# ---------------------------------------------------------------- channels

def test_channels_deterministic():
    sc = ScenarioConfig()
    a, b = gen_channels(sc, 42), gen_channels(sc, 42)
    for name in ("D", "D1", "D2", "D3", "U", "U1", "U2", "H1", "H2", "H3", "H4", "S", "V_P", "V_S"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_s_region_direct_links_blocked():
    ch = gen_channels(ScenarioConfig(), 3)
    assert not np.any(ch.D_s)
    assert not np.any(ch.U_s)
    ris = gen_channels(ScenarioConfig(architecture=Architecture.DOUBLE_RIS), 3)
    assert np.all(np.abs(ris.D_s) > 0)


def test_same_seed_same_fading_across_architectures():
    a = gen_channels(ScenarioConfig(), 7)
    b = gen_channels(ScenarioConfig(architecture="DOUBLE_RIS"), 7)
    assert np.array_equal(a.D1, b.D1)
    assert np.array_equal(a.H3, b.H3)


def test_entry_variance_matches_path_gain():
    # one BS -> STAR-P entry at 100 m, 10^4 independent draws
    sc = ScenarioConfig(n_tx=1, m_elems=1, k_pd=1, k_sd=1, k_pu=1, k_su=1)
    target = path_gain(100.0, sc.pl0_star_db, sc.alpha_star)
    samples = np.array([gen_channels(sc, s).D1[0, 0] for s in range(10_000)])
    var = np.mean(np.abs(samples) ** 2)
    assert abs(var / target - 1) < 0.05
    assert abs(np.mean(samples)) < 0.05 * np.sqrt(target)


def test_link_gains_shapes_and_values():
    sc = ScenarioConfig()
    g = link_gains(sc)
    assert g["D1"].shape == (sc.m_elems, sc.n_tx)
    np.testing.assert_allclose(g["D1"], path_gain(100.0, sc.pl0_star_db, sc.alpha_star))
    np.testing.assert_allclose(g["S"], 10 ** (-sc.si_attenuation_db / 10))


def test_path_gain_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        path_gain([1.0, 0.0], 30, 2)


def test_channel_shape_mismatch_rejected(rng):
    ch = random_channels(rng, 2, 2, 3, 1, 1, 1, 1)
    kw = {n: getattr(ch, n) for n in ("D", "D1", "D2", "D3", "U", "U1", "U2", "H1", "H2", "H3", "H4",
                                       "S", "V_P", "V_S")}
    kw["H4"] = np.zeros((2, 1))
    with pytest.raises(ValueError):
        ChannelSet(ul_power_watt=1.0, **kw)
    with pytest.raises(ValueError):
        check_dimensions(ch, ScenarioConfig())


# ---------------------------------------------------------------- cascades

def test_cascade_vector_all_ones():
    c = cascade_vector(np.ones(3), np.ones((3, 2)), np.ones(2))
    assert np.isclose(c @ np.ones(3), 6)
    assert c @ np.zeros(3) == 0


def test_cascade_vector_random(rng):
    worst = 0.0
    for _ in range(1000):
        n1, n2 = rng.integers(1, 7, 2)
        d, Dm, w, phi = crandn(rng, n1), crandn(rng, n1, n2), crandn(rng, n2), crandn(rng, n1)
        direct = d.conj() @ np.diag(phi) @ Dm @ w
        worst = max(worst, abs(cascade_vector(d, Dm, w) @ phi - direct))
    assert worst <= 1e-10


def test_cascade_matrix_random(rng):
    worst = 0.0
    for _ in range(1000):
        n1, n2, n3 = rng.integers(1, 6, 3)
        Um, Dm, w, phi = crandn(rng, n3, n1), crandn(rng, n1, n2), crandn(rng, n2), crandn(rng, n1)
        direct = Um @ np.diag(phi) @ Dm @ w
        worst = max(worst, np.max(np.abs(cascade_matrix(Um, Dm, w) @ phi - direct)))
    assert worst <= 1e-10


def test_cascade_matrix_single_row_and_zero(rng):
    d, Dm, w = crandn(rng, 4), crandn(rng, 4, 3), crandn(rng, 3)
    np.testing.assert_allclose(cascade_matrix(d.conj()[None], Dm, w)[0], cascade_vector(d, Dm, w), atol=1e-14)
    assert not np.any(cascade_matrix(crandn(rng, 2, 4), np.zeros((4, 3)), w))


def test_cascade_dimension_errors(rng):
    with pytest.raises(ValueError):
        cascade_vector(crandn(rng, 3), crandn(rng, 4, 2), crandn(rng, 2))
    with pytest.raises(ValueError):
        cascade_matrix(crandn(rng, 2, 3), crandn(rng, 3, 2), crandn(rng, 3))


# ---------------------------------------------------------------- SINR

def _tiny(rng, max_dim=3):
    dims = rng.integers(1, max_dim + 1, 7)
    n_tx, n_rx, m, k_pd, k_sd, k_pu, k_su = (int(x) for x in dims)
    ch = random_channels(rng, n_tx, n_rx, m, k_pd, k_sd, k_pu, k_su, p_user=float(rng.uniform(0.1, 2)))
    star = random_star(rng, m)
    beams = BeamformerSet(crandn(rng, n_tx, k_pd), crandn(rng, n_tx, k_sd))
    sc = ScenarioConfig(n_tx=n_tx, n_rx=n_rx, m_elems=m, k_pd=k_pd, k_sd=k_sd, k_pu=k_pu, k_su=k_su,
                        noise_dbm=0.0)
    return ch, star, beams, sc


def test_sinr_matches_elementwise_oracle(rng):
    for _ in range(100):
        ch, star, beams, sc = _tiny(rng)
        rep = sinr_all(ch, star, beams, sc)
        ref = sinr_oracle(ch, star, beams, sc.noise_watt)
        for u in ("PD", "SD", "PU", "SU"):
            np.testing.assert_allclose(rep.gamma[u], ref[u], rtol=1e-10, atol=1e-12)
            assert np.isclose(rep.rate[u], np.sum(np.log2(1 + ref[u])), rtol=1e-12)


def test_single_user_interference_free(rng):
    sc = ScenarioConfig(n_tx=3, k_pd=1, k_sd=0, k_pu=0, k_su=0, m_elems=2, noise_dbm=-30)
    ch = random_channels(rng, 3, 2, 2, 1, 0, 0, 0)
    star = StarProfile(np.zeros((4, 2)), np.ones((4, 2)))
    w = crandn(rng, 3, 1)
    rep = sinr_all(ch, star, BeamformerSet(w, np.zeros((3, 0))), sc)
    expected = abs(ch.D[:, 0].conj() @ w[:, 0]) ** 2 / sc.noise_watt
    assert np.isclose(rep.gamma["PD"][0], expected, rtol=1e-12)


def test_one_interferer():
    # orthonormal direct channels, beam 2 aimed at user 1
    sc = ScenarioConfig(n_tx=2, k_pd=2, k_sd=0, k_pu=0, k_su=0, m_elems=1, noise_dbm=0)
    z = lambda *s: np.zeros(s, complex)
    ch = ChannelSet(D=np.eye(2, dtype=complex), D1=z(1, 2), D2=z(1, 2), D3=z(1, 0), U=z(8, 0), U1=z(1, 0),
                    U2=z(8, 1), H1=z(1, 0), H2=z(1, 0), H3=z(8, 1), H4=z(1, 2), S=z(8, 2), V_P=z(0, 2),
                    V_S=z(0, 0), ul_power_watt=0.1)
    P = 2.0
    W = np.sqrt(P) * np.array([[1, 1], [0, 0]], complex)
    rep = sinr_all(ch, StarProfile(np.zeros((4, 1)), np.ones((4, 1))), BeamformerSet(W, z(2, 0)), sc)
    assert np.isclose(rep.gamma["PD"][0], P / (P + sc.noise_watt))


def test_zero_st_amplitude_kills_su_signal(rng):
    ch, star, beams, sc = _tiny(rng)
    ch = random_channels(rng, 2, 2, 3, 1, 1, 1, 2, direct_s=False)
    star = random_star(rng, 3).with_sides(beta={"ST": np.zeros(3)})
    sc = sc.replace(n_tx=2, n_rx=2, m_elems=3, k_pd=1, k_sd=1, k_pu=1, k_su=2)
    rep = sinr_all(ch, star, BeamformerSet(crandn(rng, 2, 1), crandn(rng, 2, 1)), sc)
    assert np.all(rep.gamma["SU"] == 0)


def test_sinr_phase_invariance(rng):
    ch, star, beams, sc = _tiny(rng)
    rep = sinr_all(ch, star, beams, sc)
    turned = BeamformerSet(beams.w_pd * np.exp(0.7j), beams.w_sd * np.exp(0.7j))
    rot = sinr_all(ch, star, turned, sc)
    for u in rep.gamma:
        np.testing.assert_allclose(rot.gamma[u], rep.gamma[u], rtol=1e-10)


# ---------------------------------------------------------------- feasibility

def test_zero_beams_power_slack():
    sc = ScenarioConfig()
    ch = gen_channels(sc, 0)
    star = StarProfile.from_phases(np.full(8, 0.5 ** 0.5), np.full(8, 0.5 ** 0.5), np.ones((4, 8)))
    beams = BeamformerSet.zeros(8, 2, 2)
    feas = check_feasibility(star, beams, sinr_all(ch, star, beams, sc), sc)
    assert feas.ok["power"]
    assert np.isclose(feas.slack["power"], sc.power_budget_watt)


def test_energy_split_violation_flagged():
    sc = ScenarioConfig(m_elems=2)
    beta = np.array([[1.0, 0.6], [1.0, 0.8], [0.6, 0.6], [0.8, 0.8]])
    star = StarProfile(beta, np.ones((4, 2)))
    ch = gen_channels(sc, 0)
    beams = BeamformerSet.zeros(8, 2, 2)
    feas = check_feasibility(star, beams, sinr_all(ch, star, beams, sc), sc)
    assert not feas.ok["energy_split"]
    assert "energy_split" in feas.violations()


def test_coupling_checked_only_in_coupled_mode():
    sc = ScenarioConfig(m_elems=2, architecture="DSTAR_COUPLED")
    star = StarProfile.from_phases(np.full(2, 0.6), np.full(2, 0.6), np.ones((4, 2)))
    ch = gen_channels(sc, 0)
    beams = BeamformerSet.zeros(8, 2, 2)
    feas = check_feasibility(star, beams, sinr_all(ch, star, beams, sc), sc)
    assert not feas.ok["coupling"]
    theta = np.ones((4, 2), complex)
    theta[1] = 1j
    theta[3] = -1j
    feas = check_feasibility(StarProfile(star.beta, theta), beams, sinr_all(ch, star, beams, sc), sc)
    assert feas.ok["coupling"]


def test_profile_validation():
    with pytest.raises(ValueError):
        StarProfile(np.zeros((3, 2)), np.ones((3, 2)))
    s = StarProfile.from_phases([0.6], [1.0], np.ones((4, 1)))
    assert np.isclose(s.b("PT")[0], 0.8)
    assert s.b("ST")[0] == 0
    with pytest.raises(ValueError):
        s.beta[0, 0] = 1.0
