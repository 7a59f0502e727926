"""Parameter estimation and mismatched entropies.

The achievable rate of a block of M symbol pairs is
(h_q(A) - h_q(A|X)) / (2 M'), with M' the number of whitened outputs. The
output entropy uses the Gaussian Toeplitz law of the whitened signal; the
conditional entropy runs a particle filter over the hidden rotation.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky_banded, cho_solve_banded
from scipy.optimize import minimize_scalar
from scipy.signal import lfilter
from scipy.special import ive

from . import kernels
from .models import MrParams, PdParams, WhitenFilter, whiten

LOG2E = 1.0 / math.log(2.0)


class EstimationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Training-data estimates


def _flat(*arrays):
    return [np.asarray(a, complex).reshape(-1) for a in arrays]


def _xi_loglik(s2, nx, ny):
    z = 2 * ny * nx / s2
    return np.sum(-np.log(s2) - (ny * ny + nx * nx) / s2 + np.log(ny / nx)
                  + np.log(ive(1, z)) + z)


def estimate_sigma_xi(x1, x2, y1, y2, max_expand=4):
    """Maximum-likelihood noise variance per complex component.

    ||y_m|| given ||x_m|| is modelled as noncentral chi with four degrees
    of freedom. The search runs over log sigma^2 in [0.1, 10] times the
    moment estimate <||y - x||^2> / 2, widening the bracket when the
    optimum sits on an edge.
    """
    x1, x2, y1, y2 = _flat(x1, x2, y1, y2)
    if len(x1) < 1000:
        warnings.warn("fewer than 1000 symbol pairs for the noise estimate", stacklevel=2)
    seed = 0.5 * np.mean(np.abs(y1 - x1) ** 2 + np.abs(y2 - x2) ** 2)
    if seed == 0:
        warnings.warn("output equals input; noise variance estimate is 0 (boundary)",
                      stacklevel=2)
        return 0.0
    nx = np.sqrt(np.abs(x1) ** 2 + np.abs(x2) ** 2)
    ny = np.sqrt(np.abs(y1) ** 2 + np.abs(y2) ** 2)
    keep = (nx > 0) & (ny > 0)
    nx, ny = nx[keep], ny[keep]
    lo, hi = math.log(0.1 * seed), math.log(10 * seed)
    for _ in range(max_expand + 1):
        res = minimize_scalar(lambda t: -_xi_loglik(math.exp(t), nx, ny),
                              bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-6})
        edge = 1e-3 * (hi - lo)
        if res.x - lo > edge and hi - res.x > edge:
            return float(math.exp(res.x))
        lo, hi = lo - math.log(10), hi + math.log(10)
    raise EstimationError(f"noise variance search did not converge (last {math.exp(res.x):.3g})")


def estimate_mean_phase(x, y):
    """angle(mean(y x^*)) for one polarization."""
    x, y = _flat(x, y)
    c = np.mean(y * np.conj(x))
    scale = math.sqrt(np.mean(np.abs(x) ** 2) * np.mean(np.abs(y) ** 2))
    if not abs(c) > 1e-12 * scale:
        warnings.warn("input and output uncorrelated; mean phase undefined", stacklevel=2)
        return 0.0
    return float(np.angle(c))


# ---------------------------------------------------------------------------
# Output entropy


def whitened_autocorrelation(energy, taps, sigma2):
    """r_A[l] = E sum_k h_k h_{k+l} + sigma^2 delta[l] for l = 0..L-1."""
    h = np.asarray(taps, float)
    L = len(h)
    r = np.array([energy * np.dot(h[:L - l], h[l:]) for l in range(L)])
    r[0] += sigma2
    return r


def _toeplitz_banded_factor(r, m):
    L = len(r)
    ab = np.zeros((L, m))
    for l in range(L):
        ab[L - 1 - l, l:] = r[l]
    try:
        return cholesky_banded(ab, lower=False)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("output covariance is not positive definite") from exc


def gaussian_block_nll(a, r):
    """-log2 of the circular Gaussian density with banded Toeplitz covariance.

    ``a`` is (M,) or (N, M); ``r`` is the covariance first column up to the
    band edge. Returns one value per block.
    """
    a = np.atleast_2d(np.asarray(a, complex))
    m = a.shape[-1]
    cb = _toeplitz_banded_factor(np.asarray(r, float), m)
    logdet = 2 * np.sum(np.log(cb[-1]))
    out = np.empty(a.shape[0])
    for i, blk in enumerate(a):
        sol = cho_solve_banded((cb, False), blk.real) + 1j * cho_solve_banded((cb, False), blk.imag)
        quad = np.real(np.vdot(blk, sol))
        out[i] = (quad + m * math.log(math.pi) + logdet) * LOG2E
    return out


def output_entropy(a1, a2, energy, filt, sigma2, energy_bar=None):
    """Per-block -log2 q(a) summed over the two polarizations (bits)."""
    eb = energy if energy_bar is None else energy_bar
    return (gaussian_block_nll(a1, whitened_autocorrelation(energy, filt.h, sigma2))
            + gaussian_block_nll(a2, whitened_autocorrelation(eb, filt.h_bar, sigma2)))


def gaussian_entropy_rate(energy, taps, sigma2, n_grid=1 << 14):
    """Entropy rate in bits per symbol of the Gaussian process with r_A.

    Szego: mean of log2(pi e S(w)) over frequency, S the spectral density.
    """
    r = whitened_autocorrelation(energy, taps, sigma2)
    w = 2 * math.pi * np.arange(n_grid) / n_grid
    s = r[0] + 2 * sum(r[l] * np.cos(l * w) for l in range(1, len(r)))
    return float(np.mean(np.log2(math.pi * math.e * s)))


# ---------------------------------------------------------------------------
# Conditional entropy


@dataclass
class ParticleFilterConfig:
    n_particles: int = 256
    resample_threshold: float = 0.5


@dataclass
class PfResult:
    """Per-run conditional entropies (bits) with diagnostics."""

    h_cond: np.ndarray
    resamples: np.ndarray
    failed: list = field(default_factory=list)


def _model_args(model):
    if model is None:
        return kernels.MODEL_NONE, np.zeros(0), 0.0, np.zeros(0), 0.0, 0.0, 0.0
    if isinstance(model, MrParams):
        return (kernels.MODEL_MR, model.ar_coeffs, model.innovation_sd,
                np.asarray(model.psi_ar_coeffs, complex), model.psi_innovation_sd, 0.0, 0.0)
    if isinstance(model, PdParams):
        return kernels.MODEL_PD, np.zeros(0), 0.0, np.zeros(0), 0.0, \
            model.sigma_delta, model.sigma_a
    raise TypeError(f"unsupported model {type(model).__name__}")


def _stationary_histories(g, sd, k, rng, cplx=False):
    mu = len(g)
    if mu == 0:
        return np.zeros((k, 0), complex if cplx else float)
    burn = 50 * (mu + 1)
    if cplx:
        d = (rng.standard_normal((k, burn + mu)) + 1j * rng.standard_normal((k, burn + mu))) \
            / math.sqrt(2)
    else:
        d = rng.standard_normal((k, burn + mu))
    x = lfilter([sd], np.concatenate([[1.0], -np.real(np.asarray(g))]), d, axis=1)
    return np.ascontiguousarray(x[:, -1:-mu - 1:-1])


def pf_conditional_entropy(a1, a2, x1, x2, model, filt, sigma2, config=None, rng=None,
                           backend=None):
    """-sum_m log2 D_m for each run.

    Parameters
    ----------
    a1, a2 : ndarray (M - L + 1,) or (N, M - L + 1)
        Whitened outputs.
    x1, x2 : ndarray (M,) or (N, M)
        Transmitted symbols.
    model : MrParams, PdParams or None
        ``None`` fixes the rotation to the identity.
    filt : WhitenFilter
    sigma2 : float
        Noise variance per complex component.
    rng : numpy.random.Generator
        Source of all random numbers (drawn before filtering).

    Returns
    -------
    PfResult
        Runs whose weights underflow hold NaN and are listed in ``failed``.
    """
    config = config or ParticleFilterConfig()
    rng = np.random.default_rng() if rng is None else rng
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    a1, a2, x1, x2 = (np.atleast_2d(np.asarray(v, complex)) for v in (a1, a2, x1, x2))
    n_runs, m = x1.shape
    if a1.shape != (n_runs, m - filt.length + 1):
        raise ValueError("outputs must be the valid part of the whitened blocks")
    k = int(config.n_particles)
    if k < 1:
        raise ValueError("need at least one particle")
    code, g, sd, gp, sdp, sig_d, sig_a = _model_args(model)
    h_cond = np.empty(n_runs)
    res = np.empty(n_runs, int)
    failed = []
    for i in range(n_runs):
        hp = _stationary_histories(g, sd, k, rng)
        hpb = _stationary_histories(g, sd, k, rng)
        hps = _stationary_histories(gp, sdp, k, rng, cplx=True)
        rn = rng.standard_normal((m, k, 4))
        u = rng.random(m)
        logd, n_res = kernels.particle_filter(
            a1[i], a2[i], x1[i], x2[i], filt.h, filt.h_bar, code, g, sd, gp, sdp,
            sig_d, sig_a, sigma2, rn, u, config.resample_threshold, hp, hpb, hps, backend)
        res[i] = n_res
        if n_res < 0 or not np.all(np.isfinite(logd)):
            failed.append(i)
            h_cond[i] = np.nan
        else:
            h_cond[i] = -np.sum(logd) * LOG2E
    if failed:
        warnings.warn(f"particle weights underflowed in runs {failed}; excluded",
                      stacklevel=2)
    return PfResult(h_cond, res, failed)


# ---------------------------------------------------------------------------
# Rates


@dataclass
class RateEstimate:
    h_out: float
    h_cond: float
    rate: float
    std_error: float
    runs: int
    n_out: int
    per_run: np.ndarray = None


def achievable_rate(h_out, h_cond, n_out):
    """Rate in bits per symbol per polarization from per-run entropies.

    ``n_out`` is the number of symbol pairs behind each entropy value. The
    standard error is the delete-one jackknife over runs (equal to the
    standard error of the mean for this linear statistic). Runs with a
    non-finite entropy are dropped.
    """
    h_out = np.atleast_1d(np.asarray(h_out, float))
    h_cond = np.atleast_1d(np.asarray(h_cond, float))
    ok = np.isfinite(h_out) & np.isfinite(h_cond)
    per = (h_out[ok] - h_cond[ok]) / (2 * n_out)
    n = len(per)
    if n == 0:
        raise EstimationError("no valid runs")
    if n > 1:
        loo = (per.sum() - per) / (n - 1)
        se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    else:
        se = 0.0
    return RateEstimate(float(h_out[ok].mean()), float(h_cond[ok].mean()), float(per.mean()),
                        se, n, int(n_out), per)


# ---------------------------------------------------------------------------
# Model fitting


SCALING_GRID = tuple(np.geomspace(1 / 8, 8, 13))


def build_model(kind, base, s1, s2, mu=4):
    """Model of ``kind`` ('MR' or 'PD') from base autocovariances and scalings.

    ``base`` maps 'r_theta' (required), 'r_theta_cross' and 'r_psi'
    (optional) to lag sequences.
    """
    r = base["r_theta"]
    if kind == "MR":
        # both scalings act on the r_theta shape; r_psi keeps its own scale
        rp = base.get("r_psi")
        return MrParams.from_autocovariance(r, mu, s1, s2, None if rp is None else np.real(rp))
    if kind == "PD":
        return PdParams.from_autocovariance(r, base.get("r_theta_cross"), base.get("r_psi"),
                                            s1, s2)
    if kind == "memoryless":
        return None
    raise ValueError(f"unknown model kind {kind!r}")


def golden_section(f, lo, hi, tol=1e-3):
    """Minimize a unimodal ``f`` on [lo, hi] to an interval of width ``tol``."""
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (a + b) / 2


@dataclass
class FitResult:
    kind: str
    model: object
    scalings: tuple
    h2: float
    filt: WhitenFilter
    objective: np.ndarray = None
    objective_se: np.ndarray = None
    flags: list = field(default_factory=list)
    sigma2: float | None = None


def _pf_mean(x1, x2, y1, y2, model, filt, sigma2, config, seed, backend):
    a1, a2 = whiten(y1, y2, filt)
    r = pf_conditional_entropy(a1, a2, x1, x2, model, filt, sigma2, config,
                               np.random.default_rng(seed), backend)
    v = r.h_cond[np.isfinite(r.h_cond)]
    if len(v) == 0:
        return np.inf, np.inf
    n_out = a1.shape[-1]
    se = v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else 0.0
    return v.mean() / n_out, se / n_out


def training_rate(x1, x2, y1, y2, model, filt, sigma2, energy, energy_bar=None, config=None,
                  seed=0, backend=None):
    """Mean achievable rate (bits/symbol/pol) on training blocks."""
    config = config or ParticleFilterConfig()
    a1, a2 = whiten(y1, y2, filt)
    h_out = output_entropy(a1, a2, energy, filt, sigma2, energy_bar)
    r = pf_conditional_entropy(a1, a2, x1, x2, model, filt, sigma2, config,
                               np.random.default_rng(seed), backend)
    ok = np.isfinite(r.h_cond)
    if not ok.any():
        return -np.inf
    return float(np.mean(h_out[ok] - r.h_cond[ok]) / (2 * a1.shape[-1]))


def fit_whitening(x1, x2, y1, y2, model, sigma2, energy, energy_bar=None, config=None, seed=0,
                  backend=None, bounds=(-0.5, 0.5), tol=1e-3):
    """Outer tap of the symmetric 3-tap whitener maximizing the training rate.

    The filter changes both entropies, so the objective is their difference
    rather than the conditional entropy alone.
    """
    return golden_section(
        lambda t: -training_rate(x1, x2, y1, y2, model, WhitenFilter.symmetric3(t), sigma2,
                                 energy, energy_bar, config, seed, backend), *bounds, tol)


def fit_model_scalings(x1, x2, y1, y2, kind, base, sigma2, config=None, grid=SCALING_GRID,
                       mu=4, fit_filter=True, seed=0, backend=None, energy=None,
                       energy_bar=None):
    """Grid search of the two scalings, then the symmetric 3-tap whitener.

    Training blocks ``x``/``y`` are (N, M) arrays with the mean phase
    already removed. The scalings minimize the conditional entropy (the
    output entropy does not depend on them); the filter tap maximizes the
    training rate and needs ``energy``. Every grid point reuses the same random numbers so the
    objective differences are not masked by particle noise.
    """
    config = config or ParticleFilterConfig()
    grid = np.asarray(grid, float)
    flags = []
    ident = WhitenFilter.identity()
    if kind == "memoryless":
        obj = np.zeros((1, 1))
        best = (1.0, 1.0)
        model = None
        objective_se = None
    else:
        obj = np.empty((len(grid), len(grid)))
        objective_se = np.empty_like(obj)
        for i, s1 in enumerate(grid):
            for j, s2 in enumerate(grid):
                mdl = build_model(kind, base, s1, s2, mu)
                obj[i, j], objective_se[i, j] = _pf_mean(x1, x2, y1, y2, mdl, ident, sigma2,
                                                         config, seed, backend)
        i, j = np.unravel_index(np.argmin(obj), obj.shape)
        if np.nanmax(obj) - obj[i, j] <= objective_se[i, j]:
            flags.append("flat objective; using the grid center")
            warnings.warn(flags[-1], stacklevel=2)
            i = j = len(grid) // 2
        best = (float(grid[i]), float(grid[j]))
        model = build_model(kind, base, *best, mu)
    h2 = 0.0
    filt = ident
    if fit_filter:
        if energy is None:
            raise ValueError("fitting the whitening filter needs the symbol energy")
        h2 = fit_whitening(x1, x2, y1, y2, model, sigma2, energy, energy_bar, config, seed,
                           backend)
        filt = WhitenFilter.symmetric3(h2)
    return FitResult(kind, model, best, h2, filt, obj, objective_se, flags)
