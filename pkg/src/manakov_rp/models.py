"""Hidden-process models used by the mismatched receiver.

PD: common Wiener phase times a random walk of isotropic Poincare-sphere
rotations. MR: phases theta = 2 phi + phi_bar, theta_bar = phi + 2 phi_bar
and the coupling psi driven by autoregressive Gaussian processes fitted to a
target autocovariance.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import lfilter

from .surrogate import rotation_matrices

RENORM_EVERY = 10_000


# ---------------------------------------------------------------------------
# Isotropic rotations


def irrps_matrix(alpha):
    """exp[j (a1 s1 + a2 s2 + a3 s3)] for Pauli matrices s_i.

    ``alpha`` has shape (..., 3); the result has shape (..., 2, 2).
    """
    alpha = np.asarray(alpha, float)
    a1, a2, a3 = alpha[..., 0], alpha[..., 1], alpha[..., 2]
    r = np.sqrt(a1 * a1 + a2 * a2 + a3 * a3)
    c = np.cos(r)
    s = np.sinc(r / math.pi)  # sin(r) / r
    out = np.empty(alpha.shape[:-1] + (2, 2), complex)
    out[..., 0, 0] = c + 1j * s * a3
    out[..., 1, 1] = c - 1j * s * a3
    out[..., 0, 1] = 1j * s * (a1 - 1j * a2)
    out[..., 1, 0] = 1j * s * (a1 + 1j * a2)
    return out


def irrps_sample(sigma_a, rng, size=None):
    """Random isotropic rotation(s) with i.i.d. N(0, sigma_a^2) generators."""
    if sigma_a < 0:
        raise ValueError("sigma_a must be non-negative")
    shape = (3,) if size is None else tuple(np.atleast_1d(size)) + (3,)
    return irrps_matrix(sigma_a * rng.standard_normal(shape))


def nearest_unitary(m):
    """Polar factor of a stack of square matrices."""
    u, _, vh = np.linalg.svd(m)
    return u @ vh


# ---------------------------------------------------------------------------
# Polarization drift


@dataclass
class PdParams:
    sigma_delta: float
    sigma_a: float

    def __post_init__(self):
        if self.sigma_delta < 0 or self.sigma_a < 0:
            raise ValueError("PD standard deviations must be non-negative")

    @classmethod
    def from_autocovariance(cls, r_theta, r_theta_cross=None, r_psi=None,
                            s_delta=1.0, s_a=1.0):
        """Increment variances matched to the lag-1 decorrelation of the targets.

        The common phase (theta + theta_bar) / 2 has increment variance
        (r_theta[0] - r_theta[1] + r_cross[0] - r_cross[1]) / 2 and the
        coupling increments (r_psi[0] - r_psi[1]). Missing targets default
        to the synchronized Gaussian ratios 4/5 and 1/5 of ``r_theta``.
        """
        r = np.real(np.asarray(r_theta, float))
        rx = 0.8 * r if r_theta_cross is None else np.real(np.asarray(r_theta_cross))
        rp = 0.2 * r if r_psi is None else np.real(np.asarray(r_psi))
        var_d = max(0.5 * ((r[0] - r[1]) + (rx[0] - rx[1])), 0.0)
        var_a = max(rp[0] - rp[1], 0.0)
        return cls(s_delta * math.sqrt(var_d), s_a * math.sqrt(var_a))

    def to_dict(self):
        return asdict(self)


@dataclass
class PdState:
    theta: float = 0.0
    jones: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))
    steps: int = 0


def pd_step(state, params, rng):
    """Advance one symbol; returns (theta_m, J_m) and updates ``state``."""
    state.theta += params.sigma_delta * rng.standard_normal()
    state.jones = irrps_sample(params.sigma_a, rng) @ state.jones
    state.steps += 1
    if state.steps % RENORM_EVERY == 0:
        state.jones = nearest_unitary(state.jones)
    return state.theta, state.jones


def pd_rotation(theta, jones):
    """Emitted rotation e^{j theta} J."""
    return np.exp(1j * np.asarray(theta))[..., None, None] * jones


# ---------------------------------------------------------------------------
# Autoregressive fits


class ArFitError(ValueError):
    """Toeplitz covariance not positive definite."""

    def __init__(self, pivot, value):
        super().__init__(f"covariance not positive definite: pivot {pivot} "
                         f"has prediction error {value:.3g}")
        self.pivot = pivot
        self.value = value


def ar_fit(r, mu):
    """Order-``mu`` linear predictor from autocovariance r[0..mu].

    Levinson-Durbin recursion on the Hermitian Toeplitz matrix with first
    column r[0..mu] (r[l] = <X_{m+l} X_m^*>). Returns ``(g, sigma)`` with
    X_m = sum_p g[p-1] X_{m-p} + sigma * innovation.

    Raises
    ------
    ArFitError
        At the first order whose prediction error is not positive.
    """
    r = np.asarray(r)
    if r.ndim != 1 or len(r) < mu + 1:
        raise ValueError(f"need autocovariance at lags 0..{mu}")
    cplx = np.iscomplexobj(r)
    r = r[:mu + 1].astype(complex if cplx else float)
    err = r[0].real
    if not err > 0:
        if err == 0 and not np.any(r):
            # zero process (no nonlinearity): nothing to predict
            return np.zeros(mu, r.dtype), 0.0
        raise ArFitError(0, err)
    a = np.zeros(mu, r.dtype)
    for p in range(mu):
        acc = r[p + 1] - np.dot(a[:p], r[p:0:-1])
        k = acc / err
        a_prev = a[:p].copy()
        a[:p] = a_prev - k * np.conj(a_prev[::-1])
        a[p] = k
        err = err * (1 - abs(k) ** 2)
        if not err > 0:
            # a white or exactly predictable target stops here
            if err == 0 and np.allclose(r[p + 1:], 0):
                break
            raise ArFitError(p + 1, float(np.real(err)))
    return a, math.sqrt(max(float(np.real(err)), 0.0))


def ar_is_stable(g):
    """Companion-matrix spectral radius below one."""
    g = np.asarray(g)
    if len(g) == 0:
        return True
    return bool(np.all(np.abs(np.roots(np.concatenate([[1.0], -g]))) < 1))


def ar_stationary_history(g, sigma, n, rng, cplx=False, burn=None):
    """``n`` samples of a stationary AR path (after a burn-in), shape (n,)."""
    mu = len(g)
    burn = 50 * (mu + 1) if burn is None else burn
    tot = n + burn
    if cplx:
        d = (rng.standard_normal(tot) + 1j * rng.standard_normal(tot)) / math.sqrt(2)
    else:
        d = rng.standard_normal(tot)
    x = lfilter([sigma], np.concatenate([[1.0], -np.asarray(g)]), d)
    return x[burn:]


# ---------------------------------------------------------------------------
# Markov rotation


@dataclass
class MrParams:
    """AR description of phi, phi_bar (shared) and psi."""

    memory: int
    ar_coeffs: np.ndarray
    innovation_sd: float
    psi_ar_coeffs: np.ndarray
    psi_innovation_sd: float
    s_phi: float = 1.0
    s_psi: float = 1.0

    def __post_init__(self):
        self.ar_coeffs = np.asarray(self.ar_coeffs, float).reshape(-1)
        self.psi_ar_coeffs = np.asarray(self.psi_ar_coeffs).reshape(-1)
        if len(self.ar_coeffs) != self.memory or len(self.psi_ar_coeffs) != self.memory:
            raise ValueError("AR coefficient length must equal the memory")
        if self.innovation_sd < 0 or self.psi_innovation_sd < 0:
            raise ValueError("innovation standard deviations must be non-negative")

    @classmethod
    def from_autocovariance(cls, r_theta, mu=4, s_phi=1.0, s_psi=1.0, r_psi=None):
        """Fit phi to s_phi r_theta / 5 and psi to s_psi r_psi.

        ``r_psi`` defaults to ``r_theta / 5``, the synchronized Gaussian
        ratio.
        """
        r = np.real(np.asarray(r_theta, float))[:mu + 1]
        rp = r / 5 if r_psi is None else np.real(np.asarray(r_psi))[:mu + 1]
        g, sd = ar_fit(s_phi * r / 5, mu)
        gp, sdp = ar_fit(s_psi * rp, mu)
        return cls(mu, g, sd, gp, sdp, s_phi, s_psi)

    @classmethod
    def zero(cls, mu=4):
        z = np.zeros(mu)
        return cls(mu, z, 0.0, z, 0.0, 0.0, 0.0)

    def to_dict(self):
        d = asdict(self)
        d["ar_coeffs"] = [float(v) for v in self.ar_coeffs]
        d["psi_ar_coeffs"] = [float(np.real(v)) for v in self.psi_ar_coeffs]
        return d


@dataclass
class MrState:
    """Histories, most recent first."""

    phi: np.ndarray
    phi_bar: np.ndarray
    psi: np.ndarray

    @classmethod
    def zeros(cls, mu):
        return cls(np.zeros(mu), np.zeros(mu), np.zeros(mu, complex))

    @classmethod
    def stationary(cls, params, rng):
        mu = params.memory
        a = ar_stationary_history(params.ar_coeffs, params.innovation_sd, mu, rng)
        b = ar_stationary_history(params.ar_coeffs, params.innovation_sd, mu, rng)
        c = ar_stationary_history(np.real(params.psi_ar_coeffs), params.psi_innovation_sd,
                                  mu, rng, cplx=True)
        return cls(a[::-1].copy(), b[::-1].copy(), c[::-1].astype(complex))


def mr_matrix(phi, phi_bar, psi):
    """exp(j [[2 phi + phi_bar, psi], [psi*, phi + 2 phi_bar]])."""
    phi = np.asarray(phi, float)
    phi_bar = np.asarray(phi_bar, float)
    return rotation_matrices(2 * phi + phi_bar, phi + 2 * phi_bar, psi)


def mr_step(state, params, rng):
    """Advance the three AR processes and return M_m."""
    d = rng.standard_normal(4)
    new_phi = np.dot(params.ar_coeffs, state.phi) + params.innovation_sd * d[0]
    new_phib = np.dot(params.ar_coeffs, state.phi_bar) + params.innovation_sd * d[1]
    new_psi = np.dot(params.psi_ar_coeffs, state.psi) \
        + params.psi_innovation_sd * (d[2] + 1j * d[3]) / math.sqrt(2)
    if params.memory:
        state.phi = np.concatenate([[new_phi], state.phi[:-1]])
        state.phi_bar = np.concatenate([[new_phib], state.phi_bar[:-1]])
        state.psi = np.concatenate([[new_psi], state.psi[:-1]])
    return mr_matrix(new_phi, new_phib, new_psi)


def mr_simulate(params, n, rng):
    """Stationary paths (phi, phi_bar, psi), each of length ``n``."""
    g, sd = params.ar_coeffs, params.innovation_sd
    gp = np.real(params.psi_ar_coeffs)
    return (ar_stationary_history(g, sd, n, rng),
            ar_stationary_history(g, sd, n, rng),
            ar_stationary_history(gp, params.psi_innovation_sd, n, rng, cplx=True))


# ---------------------------------------------------------------------------
# Whitening


@dataclass
class WhitenFilter:
    """Real per-polarization FIR taps with unit norm."""

    h: np.ndarray
    h_bar: np.ndarray = None

    def __post_init__(self):
        self.h = np.asarray(self.h, float).reshape(-1)
        self.h_bar = self.h.copy() if self.h_bar is None else \
            np.asarray(self.h_bar, float).reshape(-1)
        if len(self.h) != len(self.h_bar) or len(self.h) == 0:
            raise ValueError("taps must be non-empty and of equal length")
        for t in (self.h, self.h_bar):
            if abs(np.dot(t, t) - 1) > 1e-9:
                raise ValueError("whitening taps must have unit norm")

    @property
    def length(self):
        return len(self.h)

    @classmethod
    def identity(cls):
        return cls(np.ones(1))

    @classmethod
    def symmetric3(cls, h2):
        """Taps [h2, 1, h2] normalized, equal on both polarizations."""
        t = np.array([h2, 1.0, h2]) / math.sqrt(1 + 2 * h2 * h2)
        return cls(t, t.copy())


def whiten(y1, y2, filt):
    """a_m = sum_l h_l y_{m-l} per polarization, valid part only.

    Works on (M,) or (B, M) arrays; output length is M - L + 1.
    """
    def conv(y, h):
        y = np.asarray(y)
        L = len(h)
        m = y.shape[-1]
        if m < L:
            raise ValueError("block shorter than the filter")
        out = np.zeros(y.shape[:-1] + (m - L + 1,), complex)
        for l, t in enumerate(h):
            out += t * y[..., L - 1 - l:m - l]
        return out
    return conv(y1, filt.h), conv(y2, filt.h_bar)
