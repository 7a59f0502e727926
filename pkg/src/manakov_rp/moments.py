"""First- and second-order statistics of the phase, coupling and residual
NLI terms.

Analytic moments are exact for cyclic blocks whose length equals the
coefficient period N. Every moment is a polynomial in the channel energies
and fourth moments times energy-free tensor sums, so :class:`MomentKernels`
computes those sums once per link and plan geometry and
:meth:`MomentKernels.combine` evaluates any power point.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .nli import default_period, engine_for

_FAMILIES = ("C", "C~", "D")


@dataclass
class MomentSet:
    """Means and correlation functions at lags 0..lag_max.

    ``isi`` and ``isi_bar`` hold <V_m X_{m+l}^*> for l = -lag_max..lag_max.
    Fields ending in ``_se`` are standard errors (empirical estimates only).
    """

    theta_mean: float
    theta_bar_mean: float
    r_theta: np.ndarray
    r_theta_bar: np.ndarray
    r_theta_cross: np.ndarray
    r_psi: np.ndarray
    r_v: np.ndarray | None = None
    r_v_bar: np.ndarray | None = None
    isi: np.ndarray | None = None
    isi_bar: np.ndarray | None = None
    se: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def isi_cross(self):
        return self.isi

    @property
    def lag_max(self):
        return len(self.r_theta) - 1

    def r_z(self, n_ase):
        """Combined additive-noise autocorrelation N_ASE delta[l] + r_V[l]."""
        if self.r_v is None:
            raise ValueError("r_v not available")
        out = np.array(self.r_v, complex)
        out[0] += n_ase
        return out

    def to_csv(self, path):
        lags = np.arange(self.lag_max + 1)
        rv = self.r_v if self.r_v is not None else np.full(len(lags), np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lag", "r_theta", "r_theta_cross", "re_r_psi", "im_r_psi",
                        "re_r_v", "im_r_v"])
            for i in lags:
                w.writerow([int(i), repr(float(np.real(self.r_theta[i]))),
                            repr(float(np.real(self.r_theta_cross[i]))),
                            repr(float(np.real(self.r_psi[i]))), repr(float(np.imag(self.r_psi[i]))),
                            repr(float(np.real(rv[i]))), repr(float(np.imag(rv[i])))])


# ---------------------------------------------------------------------------
# Analytic moments


def _xcorr(a, b, lags):
    """sum over rows and k of a[., k] conj(b[., k - l]) for each lag l."""
    fa = np.fft.fft(np.atleast_2d(a), axis=-1)
    fb = np.fft.fft(np.atleast_2d(b), axis=-1)
    c = np.fft.ifft((fa * np.conj(fb)).sum(axis=0))
    return c[lags % c.shape[0]]


def _shift_corr(a, b, lag, skip):
    """sum over n not in ``skip`` and k of a[n, k] conj(b[n - lag, k - lag])."""
    rolled = np.roll(b, (lag, lag), axis=(0, 1))
    prod = (a * np.conj(rolled)).sum(axis=1)
    keep = np.ones(a.shape[0], bool)
    for s in skip:
        keep[s % a.shape[0]] = False
    return prod[keep].sum()


class _Family:
    """Energy-free sums of one coefficient family (unit energies)."""

    def __init__(self, eng, scale, lags, with_v):
        n = eng.n
        self.scale = scale
        r0 = scale * eng.rows0()
        self.rows0 = r0
        self.diag_row0 = r0[0]
        self.mean = r0[0].sum()
        if with_v:
            self.diag = scale * eng.diagonals()
            self.g = self.diag.sum(axis=1)
            full = abs(scale) ** 2 * eng.shift_energy(lags)
            rows = {0: r0}
            for l in lags:
                if l:
                    rows[l % n] = scale * eng.rows(l)
                    rows[-l % n] = scale * eng.rows(-l)
            s2 = np.empty(len(lags), complex)
            sd = np.empty(len(lags), complex)
            for i, l in enumerate(lags):
                # shifting (n, k, k') by l moves the row index d to d - l
                corr = _xcorr(rows[0], np.roll(rows[-l % n], l, axis=0), np.array([l]))[0]
                if l % n:
                    corr += _xcorr(rows[l % n], np.roll(rows[0], l, axis=0),
                                   np.array([l]))[0]
                s2[i] = full[i] - corr
                sd[i] = _shift_corr(self.diag, self.diag, l, (0, l))
            self.s2, self.sdiag = s2, sd


class MomentKernels:
    """Energy-free tensor sums for one link, plan geometry and period.

    Parameters
    ----------
    link : LinkConfig
    plan : WdmPlan
        Only frequencies and delays are used; energies enter in
        :meth:`combine`.
    n_sym : int
        Coefficient period; equals the cyclic block length of the
        Monte-Carlo channel for exact agreement.
    lag_max : int
    with_v : bool
        Also compute the sums behind r_V and the ISI correlation.
    """

    def __init__(self, link, plan, n_sym, lag_max=64, with_v=True):
        n = int(n_sym)
        if n < 2 * lag_max + 1:
            raise ValueError(f"period {n} too short for lag_max={lag_max}; "
                             f"need N_max >= {2 * lag_max + 1}")
        self.n, self.lag_max, self.with_v = n, int(lag_max), with_v
        self.lags = np.arange(self.lag_max + 1)
        self.channels = [ch.index for ch in plan.interferers]
        self.fam = {}
        cache = {}
        for c in self.channels:
            for pol in (1, 2):
                for kind in _FAMILIES:
                    eng, scale = engine_for(link, plan, kind, c, pol, n_sym=n)
                    key = (id(eng), with_v)
                    if key not in cache:
                        cache[key] = _Family(eng, 1.0, self.lags, with_v)
                    self.fam[kind, c, pol] = _scaled(cache[key], scale)
        self._pair = {}
        for c in self.channels:
            f = lambda k, p: self.fam[k, c, p]
            for name, a, b in (("CC", f("C", 1), f("C", 1)), ("TT", f("C~", 1), f("C~", 1)),
                               ("bCC", f("C", 2), f("C", 2)), ("bTT", f("C~", 2), f("C~", 2)),
                               ("xC", f("C", 1), f("C~", 2)), ("xT", f("C~", 1), f("C", 2)),
                               ("DD", f("D", 1), f("D", 1))):
                full = a.scale * np.conj(b.scale) * _xcorr(a.base.rows0, b.base.rows0, self.lags)
                diag = a.scale * np.conj(b.scale) * _xcorr(a.base.diag_row0, b.base.diag_row0,
                                                           self.lags)
                self._pair[name, c] = (full, diag)

    def combine(self, plan):
        """Moments for the energies and fourth moments of ``plan``."""
        th_m = thb_m = 0.0
        L = self.lag_max
        r_t = np.zeros(L + 1, complex)
        r_tb = np.zeros(L + 1, complex)
        r_x = np.zeros(L + 1, complex)
        r_p = np.zeros(L + 1, complex)
        coi = plan.coi
        e0, e0b = coi.energy, coi.energy_bar
        for c in self.channels:
            ch = plan.channel(c)
            e, eb, q, qb = ch.energy, ch.energy_bar, ch.fourth_moment, ch.fourth_moment_bar
            fam = self.fam
            th_m += (e * fam["C", c, 1].mean + eb * fam["C~", c, 1].mean).real
            thb_m += (eb * fam["C", c, 2].mean + e * fam["C~", c, 2].mean).real
            p = lambda name: self._pair[name, c]
            r_t += e * e * p("CC")[0] + (q - 2 * e * e) * p("CC")[1] \
                + eb * eb * p("TT")[0] + (qb - 2 * eb * eb) * p("TT")[1]
            r_tb += eb * eb * p("bCC")[0] + (qb - 2 * eb * eb) * p("bCC")[1] \
                + e * e * p("bTT")[0] + (q - 2 * e * e) * p("bTT")[1]
            r_x += e * e * p("xC")[0] + (q - 2 * e * e) * p("xC")[1] \
                + eb * eb * p("xT")[0] + (qb - 2 * eb * eb) * p("xT")[1]
            r_p += e * eb * p("DD")[0]
        out = MomentSet(float(th_m), float(thb_m), r_t.real, r_tb.real, r_x.real, r_p)
        if self.with_v:
            out.r_v, out.isi = self._v_terms(plan, 1, e0, e0b)
            out.r_v_bar, out.isi_bar = self._v_terms(plan, 2, e0b, e0)
        return out

    def _v_terms(self, plan, pol, e_own, e_other):
        n, L = self.n, self.lag_max
        g = np.zeros(n, complex)
        r_v = np.zeros(L + 1, complex)
        for c in self.channels:
            ch = plan.channel(c)
            e, eb, q, qb = ch.energy, ch.energy_bar, ch.fourth_moment, ch.fourth_moment_bar
            if pol == 2:
                e, eb, q, qb = eb, e, qb, q
            fc, ft, fd = (self.fam[k, c, pol] for k in _FAMILIES)
            g += e * fc.g + eb * ft.g
            r_v += e_own * ((q - 2 * e * e) * fc.sdiag + e * e * fc.s2
                            + (qb - 2 * eb * eb) * ft.sdiag + eb * eb * ft.s2)
            r_v += e_other * e * eb * fd.s2
        for i, l in enumerate(self.lags):
            keep = np.ones(n, bool)
            keep[0] = False
            keep[l % n] = False
            r_v[i] += e_own * np.sum((g * np.conj(np.roll(g, l)))[keep])
        lag_all = np.arange(-L, L + 1)
        isi = 1j * e_own * g[lag_all % n]
        isi[L] = 0.0
        return r_v, isi


class _scaled:
    """A family seen through a constant scale factor."""

    def __init__(self, base, scale):
        self.base, self.scale = base, scale
        self.mean = scale * base.mean
        if hasattr(base, "g"):
            self.g = scale * base.g
            self.s2 = abs(scale) ** 2 * base.s2
            self.sdiag = abs(scale) ** 2 * base.sdiag


def moment_period(link, plan, lag_max):
    """Shared coefficient period covering every walk-off plus ``lag_max``."""
    return max(default_period(link, plan, lag_max, ch.index) for ch in plan.interferers)


def analytic_moments(link, plan, lag_max=64, n_sym=None, with_v=True):
    """Exact moments for cyclic blocks of ``n_sym`` symbols (DBP receiver).

    ``n_sym`` defaults to :func:`moment_period`. A period shorter than
    ``2 lag_max + 1`` raises ``ValueError``.
    """
    if n_sym is None:
        n_sym = moment_period(link, plan, lag_max)
    return MomentKernels(link, plan, n_sym, lag_max, with_v).combine(plan)


def large_dispersion_moments(plan, link, lag_max=64):
    """Triangular approximation valid when every walk-off spans many symbols.

    Returns
    -------
    (theta_mean, r_theta) with ``r_theta`` at lags 0..lag_max.
    """
    T = plan.symbol_period
    L = link.length_km
    g = link.gamma_nl
    lags = np.arange(lag_max + 1)
    mean = 0.0
    r = np.zeros(lag_max + 1)
    for ch in plan.interferers:
        spread = abs(link.beta2_si * ch.center_freq)
        if spread * L / T < 10:
            warnings.warn(f"channel {ch.index}: walk-off {spread * L / T:.3g} symbols is "
                          "not large; the approximation may be poor", stacklevel=2)
        mean += 3 * g * L / T * ch.energy
        r += 5 * g * g * L / T * (ch.fourth_moment - ch.energy ** 2) / spread \
            * np.clip(1 - lags * T / (spread * L), 0, None)
    return mean, r


# ---------------------------------------------------------------------------
# Empirical moments


def _jackknife(per_block_num, per_block_den, fn):
    """Estimate and delete-one jackknife SE of fn(sum num / sum den)."""
    num = per_block_num.sum(axis=0)
    den = per_block_den.sum(axis=0)
    est = fn(num, den)
    b = per_block_num.shape[0]
    reps = np.array([fn(num - per_block_num[i], den - per_block_den[i]) for i in range(b)])
    se = np.sqrt((b - 1) / b * np.sum(np.abs(reps - reps.mean(axis=0)) ** 2, axis=0))
    return est, se


def _lag_products(a, b, lags):
    """Per-block cyclic sums over m of a_m conj(b_{m+l})."""
    fa = np.fft.fft(a, axis=-1)
    fb = np.fft.fft(b, axis=-1)
    c = np.fft.ifft(np.conj(fa) * fb, axis=-1)
    # c[l] = sum_m conj(a_m) b_{m+l}; conjugate to get a_m conj(b_{m+l})
    return np.conj(c[:, lags % a.shape[-1]])


def empirical_moments(decomposition, lag_max=8, x=None, x_bar=None):
    """Monte-Carlo moments over cyclic blocks with jackknife standard errors.

    Parameters
    ----------
    decomposition : NliDecomposition or list of NliDecomposition
        Batched arrays (B, M) or a list of single blocks; at least two blocks.
    x, x_bar : ndarray, optional
        Transmitted symbols of the channel of interest, shaped like the
        decomposition, for the ISI correlation.
    """
    if isinstance(decomposition, (list, tuple)):
        cat = lambda f: np.stack([getattr(d, f) for d in decomposition])
        th, thb, ps, v, vb = (cat(f) for f in ("theta", "theta_bar", "psi", "v", "v_bar"))
    else:
        d = decomposition
        th, thb, ps, v, vb = (np.atleast_2d(getattr(d, f))
                              for f in ("theta", "theta_bar", "psi", "v", "v_bar"))
    nb, m = th.shape
    if nb < 2:
        raise ValueError("need at least two blocks for jackknife errors")
    lags = np.arange(lag_max + 1)
    cnt = np.full((nb, 1), float(m))
    se = {}
    flags = []

    def mean_of(a):
        est, s = _jackknife(a.sum(axis=1, keepdims=True), cnt, lambda u, w: u / w)
        return est[0], s[0]

    th_m, se["theta_mean"] = mean_of(th)
    thb_m, se["theta_bar_mean"] = mean_of(thb)

    def cov(a, b, ma, mb):
        prods = _lag_products(a, b, lags)
        sa = a.sum(axis=1)
        sb = b.sum(axis=1)
        num = np.concatenate([prods, sa[:, None], sb[:, None]], axis=1)
        den = np.repeat(cnt, num.shape[1], axis=1)

        def fn(u, w):
            return u[:-2] / w[:-2] - (u[-2] / w[-2]) * np.conj(u[-1] / w[-1])
        return _jackknife(num, den, fn)

    def corr(a, b):
        prods = _lag_products(a, b, lags)
        return _jackknife(prods, np.repeat(cnt, len(lags), axis=1), lambda u, w: u / w)

    r_t, se["r_theta"] = cov(th, th, th_m, th_m)
    r_tb, se["r_theta_bar"] = cov(thb, thb, thb_m, thb_m)
    r_x, se["r_theta_cross"] = cov(th, thb, th_m, thb_m)
    r_p, se["r_psi"] = corr(ps, ps)
    r_v, se["r_v"] = corr(v, v)
    r_vb, se["r_v_bar"] = corr(vb, vb)
    pseudo, se["psi_pseudo"] = corr(ps, np.conj(ps))
    for name in ("r_theta", "r_psi", "r_v"):
        if np.all(se[name] == 0):
            flags.append(f"{name}: zero variance across blocks (degenerate SE)")
    out = MomentSet(float(th_m.real), float(thb_m.real), r_t.real, r_tb.real, r_x.real,
                    r_p, r_v, r_vb, se=se, flags=flags)
    out.se["psi_pseudo_value"] = pseudo
    if x is not None:
        x = np.atleast_2d(x)
        lag_all = np.arange(-lag_max, lag_max + 1)
        prods = _lag_products(v, x, lag_all)
        out.isi, se["isi"] = _jackknife(prods, np.repeat(cnt, len(lag_all), axis=1),
                                        lambda u, w: u / w)
    if x_bar is not None:
        xb = np.atleast_2d(x_bar)
        lag_all = np.arange(-lag_max, lag_max + 1)
        prods = _lag_products(vb, xb, lag_all)
        out.isi_bar, se["isi_bar"] = _jackknife(prods, np.repeat(cnt, len(lag_all), axis=1),
                                                lambda u, w: u / w)
    return out
