"""Discrete-time first-order regular-perturbation channel.

Two evaluation routes share one definition:

* :class:`RpOperator` works in the time domain. For each node of a composite
  Gauss-Legendre rule in z it disperses the symbol blocks, forms the Kerr
  products and matched-filters them against the dispersed pulse. Blocks are
  cyclic, so the result is exactly the contraction with the periodic
  coefficient tensors of period M, up to the z-quadrature error.
* :func:`contract_decomposition` contracts stored :class:`NliTensor` objects
  directly. It is slow and used as the independent reference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import accumulate_pair, contract_sparse, kerr_mix
from .params import QuadratureSettings
from .signal import SymbolBlock, band_bins

MODES = ("dbp", "disp-comp")


@dataclass
class NliDecomposition:
    """Per-symbol phase, coupling and residual terms of one or more blocks.

    Arrays have shape (M,) for one block or (B, M) for a batch.
    """

    theta: np.ndarray
    theta_bar: np.ndarray
    psi: np.ndarray
    v: np.ndarray
    v_bar: np.ndarray

    def __post_init__(self):
        if np.iscomplexobj(self.theta) or np.iscomplexobj(self.theta_bar):
            raise TypeError("theta and theta_bar must be real")

    @property
    def psi_bar(self):
        # the pol-2 coupling is the conjugate of psi for any delays: both are
        # overlap integrals of the same two pulses against K and K*
        return np.conj(self.psi)

    def __len__(self):
        return self.theta.shape[-1]

    def blocks(self):
        """Iterate over single-block decompositions."""
        if self.theta.ndim == 1:
            yield self
            return
        for i in range(self.theta.shape[0]):
            yield NliDecomposition(self.theta[i], self.theta_bar[i], self.psi[i],
                                   self.v[i], self.v_bar[i])


def gauss_legendre_panels(length, phase_rate, nodes_per_radian=0.75, panel_order=16,
                          min_panels=1):
    """Composite Gauss-Legendre nodes and weights on [0, length].

    The number of panels follows the largest phase rate of the integrand so
    that each radian of accumulated phase gets ``nodes_per_radian`` nodes.
    """
    total = phase_rate * length * nodes_per_radian
    n_panels = max(min_panels, int(math.ceil(total / panel_order)))
    x, w = np.polynomial.legendre.leggauss(panel_order)
    h = length / n_panels
    starts = np.arange(n_panels) * h
    z = (starts[:, None] + 0.5 * h * (x[None, :] + 1)).ravel()
    wt = np.tile(0.5 * h * w, n_panels)
    return z, wt


class RpOperator:
    """Periodic first-order RP operator for one link, plan and block length.

    Parameters
    ----------
    link : LinkConfig
    plan : WdmPlan
        Delays are relative to the first polarization of the channel of
        interest.
    n_sym : int
        Block length M; blocks are cyclic with period M T.
    mode : {"dbp", "disp-comp"}
        DBP removes intra-channel terms; dispersion compensation keeps them.
    quad : QuadratureSettings, optional
        ``nodes_per_radian`` and ``panel_order`` control the z-rule.
    spm_scale : float
        Weight of the intra-channel terms in ``disp-comp`` mode.
    backend : {None, "numba", "numpy"}
        Implementation of the elementwise Kerr products.
    """

    def __init__(self, link, plan, n_sym, mode="dbp", quad=None, spm_scale=1.0,
                 backend=None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        quad = quad or QuadratureSettings()
        m = int(n_sym)
        if m < 2:
            raise ValueError("block length must be at least 2")
        self.link, self.plan, self.m, self.mode = link, plan, m, mode
        self.spm = 0.0 if mode == "dbp" else float(spm_scale)
        T = plan.symbol_period
        self.P = m * T
        self.ns = 2 * m
        self.r = band_bins(m)
        self.w = 2 * math.pi * self.r / self.P
        self.dbar0 = plan.coi.delay_bar
        self.interferers = [ch for ch in plan.interferers]
        wb = 2 * math.pi * plan.channel_bandwidth
        om = max([abs(ch.center_freq) for ch in self.interferers] + [0.0])
        rate = abs(link.beta2_si) * wb * (wb + om)
        self.z, self.wz = gauss_legendre_panels(link.length_km, rate, quad.nodes_per_radian,
                                                quad.panel_order)
        self._pulse_cache = None
        self.backend = backend

    # -- pulse overlap spectra (block independent) ---------------------------
    def _pulse_terms(self):
        if self._pulse_cache is not None:
            return self._pulse_cache
        b2 = self.link.beta2_si
        ns, r, w = self.ns, self.r, self.w
        amp = math.sqrt(self.plan.symbol_period) / self.P
        q = np.fft.fftfreq(ns, 1.0 / ns)
        wq = 2 * math.pi * q / self.P
        shift_q = np.exp(-1j * wq * self.dbar0)
        shift_r = np.exp(-1j * w * self.dbar0)
        acc_s = []
        for z in self.z:
            sr = amp * np.exp(0.5j * b2 * w ** 2 * z)
            spec = np.zeros(ns, complex)
            spec[r % ns] = sr
            s = ns * np.fft.ifft(spec)
            spec[r % ns] = sr * shift_r
            sd = ns * np.fft.ifft(spec)
            f_abs = np.fft.fft(np.abs(s) ** 2) / ns
            f_cross = np.fft.fft(s * np.conj(sd)) / ns
            acc_s.append((sr, f_abs, f_cross))
        self._pulse_cache = (acc_s, shift_q, shift_r)
        return self._pulse_cache

    def _coeffs(self, seq):
        """Band Fourier coefficients of cyclic symbol sequences, shape (B, M)."""
        amp = math.sqrt(self.plan.symbol_period) / self.P
        return amp * np.fft.fft(seq, axis=-1)[..., self.r % self.m]

    def decompose(self, x1, x2, interferers):
        """Decompose cyclic blocks.

        Parameters
        ----------
        x1, x2 : array_like, shape (M,) or (B, M)
            Symbols of the channel of interest.
        interferers : dict
            ``{c: (b1, b2)}`` with arrays shaped like ``x1``.

        Returns
        -------
        NliDecomposition
        """
        x1 = np.asarray(x1, complex)
        squeeze = x1.ndim == 1
        x1 = np.atleast_2d(x1)
        x2 = np.atleast_2d(np.asarray(x2, complex))
        if x1.shape != x2.shape or x1.shape[-1] != self.m:
            raise ValueError(f"blocks must have length {self.m} in both polarizations")
        ib = {}
        for ch in self.interferers:
            if ch.index not in interferers:
                continue
            b1, b2 = interferers[ch.index]
            b1 = np.atleast_2d(np.asarray(b1, complex))
            b2 = np.atleast_2d(np.asarray(b2, complex))
            if b1.shape != x1.shape or b2.shape != x1.shape:
                raise ValueError(f"interferer {ch.index} block shape mismatch")
            ib[ch] = (self._coeffs(b1), self._coeffs(b2))
        unknown = set(interferers) - {ch.index for ch in self.interferers}
        if unknown:
            raise ValueError(f"interferers {sorted(unknown)} are not in the plan")
        out = self._run(self._coeffs(x1), self._coeffs(x2), ib, x1, x2)
        if squeeze:
            out = NliDecomposition(*(a[0] for a in (out.theta, out.theta_bar, out.psi,
                                                     out.v, out.v_bar)))
        return out

    def _run(self, X1, X2, ib, x1, x2):
        b2 = self.link.beta2_si
        gamma = self.link.gamma_nl
        ns, r, w, m = self.ns, self.r, self.w, self.m
        nb = X1.shape[0]
        pulses, shift_q, shift_r = self._pulse_terms()
        idx = r % ns
        neg = (-np.arange(ns)) % ns
        acc_x1 = np.zeros((nb, m), complex)
        acc_x2 = np.zeros((nb, m), complex)
        acc_th = np.zeros((nb, ns), complex)
        acc_tb = np.zeros((nb, ns), complex)
        acc_ps = np.zeros((nb, ns), complex)
        spec = np.zeros((nb, ns), complex)
        X2d = X2 * shift_r
        chans = [(ch.center_freq, np.exp(-1j * w * ch.delay), np.exp(-1j * w * ch.delay_bar),
                  B1, B2) for ch, (B1, B2) in ib.items()]
        for (sr, f_abs, f_cross), z, wz in zip(pulses, self.z, self.wz):
            disp = np.exp(0.5j * b2 * w ** 2 * z)
            spec[:, idx] = X1 * disp
            u1 = ns * np.fft.ifft(spec, axis=-1)
            spec[:, idx] = X2d * disp
            u2 = ns * np.fft.ifft(spec, axis=-1)
            inten = np.zeros((nb, ns))
            inten_b = np.zeros((nb, ns))
            kk = np.zeros((nb, ns), complex)
            for om, d1, d2, B1, B2 in chans:
                walk = disp * np.exp(1j * b2 * om * w * z)
                spec[:, idx] = B1 * (walk * d1)
                a1 = ns * np.fft.ifft(spec, axis=-1)
                spec[:, idx] = B2 * (walk * d2)
                a2 = ns * np.fft.ifft(spec, axis=-1)
                accumulate_pair(a1, a2, inten, inten_b, kk, self.backend)
            n1, n2, packed = kerr_mix(u1, u2, inten, inten_b, kk, self.spm, self.backend)
            n1 = np.fft.fft(n1, axis=-1)[:, idx] / ns
            n2 = np.fft.fft(n2, axis=-1)[:, idx] / ns
            acc_x1 += wz * np.conj(sr) * n1
            acc_x2 += wz * np.conj(sr * shift_r) * n2
            # I and Ibar are real: split one FFT by Hermitian symmetry
            fp = np.fft.fft(packed, axis=-1) / ns
            fr = np.conj(fp[:, neg])
            fi = 0.5 * (fp + fr)
            fib = -0.5j * (fp - fr)
            fk = np.fft.fft(kk, axis=-1) / ns
            acc_th += wz * np.conj(f_abs) * fi
            acc_tb += wz * np.conj(f_abs * shift_q) * fib
            acc_ps += wz * np.conj(f_cross) * fk
        c = gamma * self.P
        to_m = np.zeros((nb, m), complex)
        to_m[:, r % m] = acc_x1
        dx1 = 1j * c * m * np.fft.ifft(to_m, axis=-1)
        to_m[:, r % m] = acc_x2
        dx2 = 1j * c * m * np.fft.ifft(to_m, axis=-1)
        theta = c * self._fold(acc_th).real
        theta_b = c * self._fold(acc_tb).real
        psi = c * self._fold(acc_ps)
        v1 = dx1 - 1j * (theta * x1 + psi * x2)
        v2 = dx2 - 1j * (theta_b * x2 + np.conj(psi) * x1)
        return NliDecomposition(theta, theta_b, psi, v1, v2)

    def _fold(self, acc):
        m, ns = self.m, self.ns
        folded = acc.reshape(acc.shape[0], ns // m, m).sum(axis=1)
        return m * np.fft.ifft(folded, axis=-1)


# ---------------------------------------------------------------------------
# Direct tensor contraction


def _split(t):
    zero = t.index[:, 0] == 0
    return (t.index[zero], t.values[zero]), (t.index[~zero], t.values[~zero])


def contract_decomposition(x1, x2, interferers, tensors, spm=None, backend=None):
    """Decomposition by explicit contraction of sparse tensors.

    Parameters
    ----------
    x1, x2 : ndarray, shape (M,) or (B, M)
    interferers : dict
        ``{c: (b1, b2)}``.
    tensors : dict
        ``{(kind, c, pol): NliTensor}`` with kinds "C", "C~", "D" for every
        interferer and both polarizations.
    spm : dict, optional
        ``{(kind, pol): NliTensor}`` with kinds "S", "S~" for the
        dispersion-compensation model.
    """
    x1 = np.asarray(x1, complex)
    x2 = np.asarray(x2, complex)
    ones = np.ones_like(x1)
    theta = np.zeros(x1.shape)
    theta_b = np.zeros(x1.shape)
    psi = np.zeros(x1.shape, complex)
    v1 = np.zeros(x1.shape, complex)
    v2 = np.zeros(x1.shape, complex)

    def add(t, a, b, c):
        (i0, v0), (i1, vv) = _split(t)
        return (contract_sparse(i0, v0, ones, b, c, backend),
                contract_sparse(i1, vv, a, b, c, backend))

    for c, (b1, b2) in interferers.items():
        b1 = np.asarray(b1, complex)
        b2 = np.asarray(b2, complex)
        t0, tv = add(tensors["C", c, 1], x1, b1, b1)
        theta += t0.real
        v1 += 1j * tv
        t0, tv = add(tensors["C~", c, 1], x1, b2, b2)
        theta += t0.real
        v1 += 1j * tv
        t0, tv = add(tensors["D", c, 1], x2, b1, b2)
        psi += t0
        v1 += 1j * tv
        t0, tv = add(tensors["C", c, 2], x2, b2, b2)
        theta_b += t0.real
        v2 += 1j * tv
        t0, tv = add(tensors["C~", c, 2], x2, b1, b1)
        theta_b += t0.real
        v2 += 1j * tv
        t0, tv = add(tensors["D", c, 2], x1, b2, b1)
        v2 += 1j * tv
    if spm:
        for pol, (a, o) in ((1, (x1, x2)), (2, (x2, x1))):
            t0, tv = add(spm["S", pol], a, a, a)
            s0, sv = add(spm["S~", pol], a, o, o)
            if pol == 1:
                theta += (t0 + s0).real
                v1 += 1j * (tv + sv)
            else:
                theta_b += (t0 + s0).real
                v2 += 1j * (tv + sv)
    return NliDecomposition(theta, theta_b, psi, v1, v2)


# ---------------------------------------------------------------------------
# Channel


def expm_2x2_apply(theta, theta_bar, psi, x1, x2):
    """Apply exp(j [[theta, psi], [psi*, theta_bar]]) to (x1, x2) elementwise.

    Closed form for a Hermitian 2x2 argument: with mean phase
    a = (theta + theta_bar) / 2, half spread h = (theta - theta_bar) / 2 and
    r = sqrt(h^2 + |psi|^2),

        exp(jH) = e^{ja} [cos r I + j sin(r)/r (H - a I)].
    """
    a = 0.5 * (theta + theta_bar)
    h = 0.5 * (theta - theta_bar)
    r = np.sqrt(h * h + np.abs(psi) ** 2)
    cr = np.cos(r)
    sr = np.sinc(r / math.pi)
    ph = np.exp(1j * a)
    y1 = ph * (cr * x1 + 1j * sr * (h * x1 + psi * x2))
    y2 = ph * (cr * x2 + 1j * sr * (np.conj(psi) * x1 - h * x2))
    return y1, y2


def rotation_matrices(theta, theta_bar, psi):
    """Stack of 2x2 unitary matrices exp(jH_m), shape (..., 2, 2)."""
    theta = np.asarray(theta, float)
    one = np.ones_like(theta, dtype=complex)
    zero = np.zeros_like(one)
    c1 = expm_2x2_apply(theta, theta_bar, psi, one, zero)
    c2 = expm_2x2_apply(theta, theta_bar, psi, zero, one)
    out = np.empty(theta.shape + (2, 2), complex)
    out[..., 0, 0], out[..., 1, 0] = c1
    out[..., 0, 1], out[..., 1, 1] = c2
    return out


def rp_channel(x1, x2, decomposition, link, rng=None, noise=True):
    """Received symbols y = M x + w + v of the dual-polarization model.

    Parameters
    ----------
    x1, x2 : ndarray
        Transmitted symbols of the channel of interest.
    decomposition : NliDecomposition
        Output of :meth:`RpOperator.decompose` for the same blocks.
    link : LinkConfig
        ``n_ase_psd`` sets the per-polarization noise variance.
    rng : numpy.random.Generator, optional
        Required when ``noise`` is set and the noise PSD is positive.

    Returns
    -------
    tuple of ndarray
        ``(y1, y2)``.
    """
    d = decomposition
    x1 = np.asarray(x1, complex)
    x2 = np.asarray(x2, complex)
    if x1.shape != d.theta.shape:
        raise ValueError("decomposition does not match the symbol blocks")
    y1, y2 = expm_2x2_apply(d.theta, d.theta_bar, d.psi, x1, x2)
    y1 = y1 + d.v
    y2 = y2 + d.v_bar
    if noise and link.n_ase_psd > 0:
        if rng is None:
            raise ValueError("rng required for noisy channel")
        sd = math.sqrt(link.n_ase_psd / 2)
        z = rng.standard_normal((4,) + x1.shape)
        y1 = y1 + sd * (z[0] + 1j * z[1])
        y2 = y2 + sd * (z[2] + 1j * z[3])
    return y1, y2


def rp_decompose(coi, interferers, operator):
    """Decompose one cyclic block given as :class:`SymbolBlock` objects."""
    lengths = {len(coi)} | {len(b) for b in interferers.values()}
    if len(lengths) != 1:
        raise ValueError("all symbol blocks must have the same length")
    return operator.decompose(coi.pol1, coi.pol2,
                              {c: (b.pol1, b.pol2) for c, b in interferers.items()})


def remove_mean_phase(block, theta_mean, theta_bar_mean):
    """Rotate each polarization by the negated mean phase."""
    return SymbolBlock(block.pol1 * np.exp(-1j * theta_mean),
                       block.pol2 * np.exp(-1j * theta_bar_mean),
                       block.energy_per_symbol, block.seed, dict(block.meta))
