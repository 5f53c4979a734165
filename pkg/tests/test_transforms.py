import numpy as np
import pytest

from dstar.config import ScenarioConfig
from dstar.model import BeamformerSet, sinr_all
from dstar.transforms import (AuxState, QuadraticForm, abs2_form, jensen_ul_threshold, norm2_form,
                              sca_linearize, update_gamma, update_lambda)
from oracles import crandn, random_channels, random_star


def test_update_gamma_examples():
    assert update_gamma(3, 1) == 3
    assert update_gamma(0, 5) == 0
    with pytest.raises(ValueError):
        update_gamma(1, 0)


def test_update_lambda_examples():
    assert update_lambda(2, 4) == 0.5
    assert update_lambda(0, 1) == 0
    A, C = 0.37, 1.91
    lam = update_lambda(A, C)
    assert A - lam * C == pytest.approx(0, abs=1e-16)
    with pytest.raises(ValueError):
        update_lambda(1, -1)


def test_gamma_matches_sinr(rng):
    ch = random_channels(rng, 2, 2, 3, 2, 1, 1, 1)
    sc = ScenarioConfig(n_tx=2, n_rx=2, m_elems=3, k_pd=2, k_sd=1, k_pu=1, k_su=1, noise_dbm=0)
    beams = BeamformerSet(crandn(rng, 2, 2), crandn(rng, 2, 1))
    rep = sinr_all(ch, random_star(rng, 3), beams, sc)
    for k in range(2):
        A = rep.gamma["PD"][k] * 2.5
        assert abs(update_gamma(A, 2.5) - rep.gamma["PD"][k]) <= 1e-12 * max(1, rep.gamma["PD"][k])


def test_jensen_threshold():
    assert jensen_ul_threshold(1) == 1
    assert jensen_ul_threshold(0) == 0
    assert jensen_ul_threshold(3) == 7
    with pytest.raises(ValueError):
        jensen_ul_threshold(-1)


def test_aux_state_validation():
    aux = AuxState.from_terms([1.0, 2.0], [1.0, 4.0])
    np.testing.assert_allclose(aux.gamma, [1.0, 0.5])
    np.testing.assert_allclose(aux.lam, [0.5, 1 / 3])
    with pytest.raises(ValueError):
        AuxState([-1.0], [0.0])
    with pytest.raises(ValueError):
        AuxState([np.nan], [0.0])


def test_quadratic_form_value_and_hermitian_check(rng):
    A = crandn(rng, 3, 3)
    Q = A @ A.conj().T
    l = crandn(rng, 3)
    q = QuadraticForm(Q, l, 2.0)
    x = crandn(rng, 3)
    expected = -np.vdot(x, Q @ x).real + 2 * np.real(l @ x) + 2.0
    assert q.value(x) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        QuadraticForm(A, l)
    with pytest.raises(ValueError):
        QuadraticForm(Q, l[:2])


def test_abs2_and_norm2_forms(rng):
    a, b, x = crandn(rng, 4), complex(crandn(rng)), crandn(rng, 4)
    assert -abs2_form(a, b).value(x) * -1 == pytest.approx(abs(a @ x + b) ** 2, rel=1e-12)
    A, bv = crandn(rng, 3, 4), crandn(rng, 3)
    assert norm2_form(A, bv).value(x) == pytest.approx(np.linalg.norm(A @ x + bv) ** 2, rel=1e-12)


def test_sca_touching_point_and_minorant(rng):
    x0 = crandn(rng, 4)
    f = norm2_form(np.eye(4))
    lin = sca_linearize(f, x0)
    assert lin.value(x0) == pytest.approx(np.linalg.norm(x0) ** 2, rel=1e-12)
    for _ in range(1000):
        x = 3 * crandn(rng, 4)
        assert lin.value(x) <= np.linalg.norm(x) ** 2 + 1e-9


def test_sca_gradient_finite_differences(rng):
    A, b = crandn(rng, 3, 4), crandn(rng, 3)
    f = norm2_form(A, b)
    x0 = crandn(rng, 4)
    g = sca_linearize(f, x0).l
    h = 1e-6
    for i in range(4):
        for direction in (1.0, 1j):
            e = np.zeros(4, complex)
            e[i] = direction * h
            fd = (f.value(x0 + e) - f.value(x0 - e)) / (2 * h)
            an = 2 * np.real(g @ (e / h))
            assert abs(fd - an) <= 1e-6 * max(1.0, abs(an))


def test_substitute_and_embed(rng):
    A = crandn(rng, 3, 3)
    q = QuadraticForm(A @ A.conj().T, crandn(rng, 3), 0.5)
    T, x0, y = crandn(rng, 3, 2), crandn(rng, 3), crandn(rng, 2)
    assert q.substitute(T, x0).value(y) == pytest.approx(q.value(T @ y + x0), rel=1e-10)
    big = q.embed(5, [4, 0, 2])
    z = crandn(rng, 5)
    assert big.value(z) == pytest.approx(q.value(z[[4, 0, 2]]), rel=1e-12)
