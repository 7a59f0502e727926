import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from manakov_rp.models import (ArFitError, MrParams, MrState, PdParams, PdState, WhitenFilter,
                               ar_fit, ar_is_stable, ar_stationary_history, irrps_matrix,
                               irrps_sample, mr_matrix, mr_simulate, mr_step, nearest_unitary,
                               pd_rotation, pd_step, whiten)

from .conftest import cgauss

PAULI = (np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.array([[1, 0], [0, -1]]))


def batch_mean_se(x, nb=100):
    """Mean and batch-means standard error of a (possibly correlated) series."""
    b = np.asarray(x)[: len(x) // nb * nb].reshape(nb, -1).mean(axis=1)
    return b.mean(), b.std(ddof=1) / math.sqrt(nb)


def autocov(x, lags):
    x = x - x.mean()
    return np.array([np.mean(x[l:] * np.conj(x[:len(x) - l])) for l in lags])


def max_unitarity_error(u):
    eye = np.eye(2)
    return float(np.max(np.abs(u @ np.conj(np.swapaxes(u, -1, -2)) - eye)))


# -- isotropic rotations -----------------------------------------------------

def test_irrps_zero_is_identity(rng):
    np.testing.assert_array_equal(irrps_sample(0.0, rng), np.eye(2))
    with pytest.raises(ValueError):
        irrps_sample(-1.0, rng)


@given(hnp.arrays(np.float64, 3, elements=st.floats(-4, 4)))
def test_irrps_matches_pauli_exponential(alpha):
    import scipy.linalg
    ref = scipy.linalg.expm(1j * sum(a * s for a, s in zip(alpha, PAULI)))
    u = irrps_matrix(alpha)
    np.testing.assert_allclose(u, ref, atol=1e-12)
    assert max_unitarity_error(u) < 1e-12
    assert abs(abs(np.linalg.det(u)) - 1) < 1e-12


def test_irrps_rotation_angle_against_direct_sampling():
    sigma = 0.3
    n = 1_000_000
    u = irrps_sample(sigma, np.random.default_rng(5), n)
    # Stokes-space rotation angle of exp(j a.sigma) is 2|a|; recover it from the trace
    ang = 2 * np.arccos(np.clip(np.real(np.trace(u, axis1=-2, axis2=-1)) / 2, -1, 1))
    direct = 2 * np.linalg.norm(sigma * np.random.default_rng(6).standard_normal((n, 3)), axis=1)
    diff = ang.mean() - direct.mean()
    se = math.sqrt(ang.var() / n + direct.var() / n)
    assert abs(diff) < 3 * se
    assert max_unitarity_error(u[:1000]) < 1e-12


def test_nearest_unitary_fixes_drift(rng):
    u = irrps_sample(1.0, rng, 5) * (1 + 1e-6)
    v = nearest_unitary(u)
    assert max_unitarity_error(v) < 1e-13
    assert np.max(np.abs(v - u)) < 1e-5


# -- polarization drift ------------------------------------------------------

def test_pd_zero_variance_is_static(rng):
    s = PdState()
    for _ in range(20):
        th, j = pd_step(s, PdParams(0.0, 0.0), rng)
    assert th == 0
    np.testing.assert_array_equal(j, np.eye(2))
    with pytest.raises(ValueError):
        PdParams(-0.1, 0.0)


def test_pd_wiener_phase_variance():
    rng = np.random.default_rng(3)
    p = PdParams(0.05, 0.0)
    paths, m = 10_000, 8
    th = np.empty(paths)
    for i in range(paths):
        s = PdState()
        for _ in range(m):
            t, _ = pd_step(s, p, rng)
        th[i] = t
    est = np.mean(th ** 2)
    se = np.std(th ** 2) / math.sqrt(paths)
    assert abs(est - m * 0.05 ** 2) < 3 * se


def test_pd_stays_unitary_over_long_runs():
    rng = np.random.default_rng(4)
    s = PdState()
    p = PdParams(0.01, 0.05)
    for _ in range(100_000):
        th, j = pd_step(s, p, rng)
    assert max_unitarity_error(pd_rotation(th, j)) < 1e-10
    # the common phase factor leaves the determinant phase at 2 theta
    assert abs(np.angle(np.linalg.det(pd_rotation(th, j)) / np.linalg.det(j))
               - np.angle(np.exp(2j * th))) < 1e-9


def test_pd_from_autocovariance():
    r = np.array([1.0, 0.9, 0.7])
    p = PdParams.from_autocovariance(r)
    assert p.sigma_delta == pytest.approx(math.sqrt(0.5 * (0.1 + 0.08)))
    assert p.sigma_a == pytest.approx(math.sqrt(0.02))
    q = PdParams.from_autocovariance(r, s_delta=2.0, s_a=0.0)
    assert q.sigma_delta == pytest.approx(2 * p.sigma_delta) and q.sigma_a == 0


# -- autoregressive fits -----------------------------------------------------

@given(rho=st.floats(-0.95, 0.95))
def test_ar1_scalar_formulas(rho):
    g, s = ar_fit(np.array([1.0, rho]), 1)
    assert g[0] == pytest.approx(rho, abs=1e-14)
    assert s * s == pytest.approx(1 - rho * rho, abs=1e-14)


def test_white_target():
    g, s = ar_fit(np.array([2.0, 0, 0, 0]), 3)
    np.testing.assert_array_equal(g, 0)
    assert s == pytest.approx(math.sqrt(2.0))


@given(hnp.arrays(np.float64, 5, elements=st.floats(-1, 1)), st.floats(0.05, 1.0))
def test_levinson_matches_block_solve(coef, nugget):
    # any PSD spectrum gives a positive-definite Toeplitz matrix
    x = np.convolve(coef, coef[::-1])[4:]
    r = x.copy()
    r[0] += nugget
    mu = 4
    g, s = ar_fit(r, mu)
    c = np.array([[r[abs(i - j)] for j in range(mu)] for i in range(mu)])
    ref = np.linalg.solve(c, r[1:mu + 1])
    np.testing.assert_allclose(g, ref, atol=1e-9 * max(1, np.max(np.abs(ref))))
    assert s * s == pytest.approx(r[0] - ref @ r[1:mu + 1], abs=1e-10 * r[0])
    assert ar_is_stable(g)


def test_non_positive_definite_rejected():
    with pytest.raises(ArFitError) as e:
        ar_fit(np.array([1.0, 0.9, -0.9]), 2)
    assert e.value.pivot == 2
    with pytest.raises(ArFitError):
        ar_fit(np.array([-1.0, 0.0]), 1)
    with pytest.raises(ValueError):
        ar_fit(np.array([1.0]), 2)


def test_complex_target():
    r = np.array([1.0, 0.5 + 0.3j])
    g, s = ar_fit(r, 1)
    assert g[0] == pytest.approx(0.5 + 0.3j)
    assert s * s == pytest.approx(1 - 0.34)


def test_simulated_ar_reproduces_target():
    r = 0.01 * np.array([1.0, 0.95, 0.88, 0.8, 0.71])
    g, s = ar_fit(r, 4)
    x = ar_stationary_history(g, s, 1_000_000, np.random.default_rng(8))
    nb = 100
    est = np.array([autocov(b, range(5)) for b in x.reshape(nb, -1)]).real
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / math.sqrt(nb)
    assert np.all(np.abs(mean - r) < 3 * se)


# -- Markov rotation ---------------------------------------------------------

def test_mr_zero_state_is_identity(rng):
    p = MrParams.zero(4)
    np.testing.assert_array_equal(mr_step(MrState.zeros(4), p, rng), np.eye(2))
    np.testing.assert_array_equal(mr_matrix(0.0, 0.0, 0.0), np.eye(2))
    with pytest.raises(ValueError):
        MrParams(2, [0.1], 0.1, [0.1, 0.1], 0.1)


def test_mr_matrix_unitary_for_many_states(rng):
    n = 1_000_000
    u = mr_matrix(rng.standard_normal(n), rng.standard_normal(n), cgauss(rng, n))
    assert max_unitarity_error(u) < 1e-12


def test_mr_stationary_ratio_and_targets():
    r = 0.01 * np.array([1.0, 0.97, 0.93, 0.9, 0.86])
    p = MrParams.from_autocovariance(r, 4)
    phi, phib, psi = mr_simulate(p, 1_000_000, np.random.default_rng(9))
    th, thb = 2 * phi + phib, phi + 2 * phib
    nb = 100
    blocks = [(autocov(a, range(5)).real,
               np.array([np.mean((a - a.mean())[l:] * (b - b.mean())[:len(a) - l])
                         for l in range(5)]),
               autocov(c, range(5)))
              for a, b, c in zip(th.reshape(nb, -1), thb.reshape(nb, -1), psi.reshape(nb, -1))]
    rt = np.array([b[0] for b in blocks])
    rx = np.array([b[1] for b in blocks])
    rp = np.array([b[2] for b in blocks])
    se = lambda a: a.std(axis=0, ddof=1) / math.sqrt(nb)  # noqa: E731
    # theta autocovariance equals the target r
    assert np.all(np.abs(rt.mean(axis=0) - r) < 3 * rt.std(axis=0, ddof=1) / math.sqrt(nb))
    # theta vs theta-bar: 5/4
    d = rt - 1.25 * rx
    assert np.all(np.abs(d.mean(axis=0)) < 3 * d.std(axis=0, ddof=1) / math.sqrt(nb))
    # psi defaults to r / 5 and is proper
    dp = rp.real - r / 5
    assert np.all(np.abs(dp.mean(axis=0)) < 3 * dp.std(axis=0, ddof=1) / math.sqrt(nb))
    pseudo = np.array([np.mean(b * b) for b in psi.reshape(nb, -1)])
    assert abs(pseudo.mean()) < 3 * se(pseudo)
    # phi and psi independent
    cross = np.array([np.mean(a * b) for a, b in zip(phi.reshape(nb, -1), psi.reshape(nb, -1))])
    assert abs(cross.mean()) < 3 * se(cross)


def test_mr_step_matches_recursion(rng):
    p = MrParams.from_autocovariance(0.01 * np.array([1.0, 0.9, 0.8]), 2)
    s = MrState.stationary(p, rng)
    prev = s.phi.copy()
    r2 = np.random.default_rng(77)
    m = mr_step(s, p, r2)
    d = np.random.default_rng(77).standard_normal(4)
    assert s.phi[0] == pytest.approx(p.ar_coeffs @ prev + p.innovation_sd * d[0])
    assert s.phi[1] == prev[0]
    assert max_unitarity_error(m) < 1e-12


# -- whitening ---------------------------------------------------------------

def test_whiten_identity(rng):
    y = cgauss(rng, (2, 50))
    a1, a2 = whiten(y[0], y[1], WhitenFilter.identity())
    np.testing.assert_array_equal(a1, y[0])
    np.testing.assert_array_equal(a2, y[1])


def test_whiten_valid_convolution(rng):
    f = WhitenFilter(np.array([0.6, 0.8]), np.array([0.8, -0.6]))
    y1, y2 = cgauss(rng, 10), cgauss(rng, 10)
    a1, a2 = whiten(y1, y2, f)
    assert a1.shape == (9,)
    np.testing.assert_allclose(a1, 0.6 * y1[1:] + 0.8 * y1[:-1])
    np.testing.assert_allclose(a2, 0.8 * y2[1:] - 0.6 * y2[:-1])
    with pytest.raises(ValueError):
        WhitenFilter(np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        whiten(y1[:1], y2[:1], f)


@given(taps=hnp.arrays(np.float64, 3, elements=st.floats(-1, 1)).filter(
    lambda t: np.dot(t, t) > 0.01))
def test_whiten_preserves_white_variance(taps):
    taps = taps / np.linalg.norm(taps)
    rng = np.random.default_rng(0)
    n = 200_000
    y = cgauss(rng, (2, n))
    a1, _ = whiten(y[0], y[1], WhitenFilter(taps))
    p = np.abs(a1) ** 2
    assert abs(p.mean() - 1) < 4 * p.std() * math.sqrt(3) / math.sqrt(n)


def test_whiten_ar1_with_matched_taps():
    rho = 0.6
    rng = np.random.default_rng(2)
    n = 400_000
    y = ar_stationary_history([rho], 1.0, n, rng, cplx=True)
    t = np.array([1.0, -rho]) / math.sqrt(1 + rho * rho)
    a, _ = whiten(y, y, WhitenFilter(t))
    prod = a[1:] * np.conj(a[:-1])
    m, se = batch_mean_se(prod)
    assert abs(m) < 3 * abs(se) + 1e-12
    raw, _ = batch_mean_se(y[1:] * np.conj(y[:-1]))
    assert abs(raw) > 100 * abs(se)


def test_symmetric3_is_unit_norm():
    f = WhitenFilter.symmetric3(0.3)
    assert np.dot(f.h, f.h) == pytest.approx(1)
    assert f.length == 3 and f.h[0] == f.h[2]


def test_zero_target_gives_zero_process():
    g, s = ar_fit(np.zeros(5), 4)
    assert s == 0 and np.all(g == 0) and len(g) == 4
    p = MrParams.from_autocovariance(np.zeros(5), 4)
    assert p.innovation_sd == 0 and p.psi_innovation_sd == 0
