"""Sampled dual-polarization signals, sinc pulse trains and the basic
linear operators (dispersion, band-pass, matched filtering).

Symbol blocks are treated as periodic: a block of M symbols with period T
spans P = M T and every waveform lives on the Fourier-series grid
omega_q = 2 pi q / P. A sinc pulse train is then exactly band-limited and
its spectrum occupies M consecutive bins per channel, so synthesis and
matched filtering are exact discrete Fourier operations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SampledSignal:
    """Two-polarization waveform on a uniform periodic grid.

    Parameters
    ----------
    pol1, pol2 : ndarray of complex
        Samples of u(t) and its second polarization.
    sample_rate : float
        Samples per second.
    t0 : float
        Time of the first sample in seconds.
    """

    pol1: np.ndarray
    pol2: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        self.pol1 = np.asarray(self.pol1, dtype=complex)
        self.pol2 = np.asarray(self.pol2, dtype=complex)
        if self.pol1.shape != self.pol2.shape:
            raise ValueError("polarizations must have equal length")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return self.pol1.shape[-1]

    @property
    def duration(self):
        return len(self) / self.sample_rate

    def energy(self):
        """Energy per polarization (J) over one period."""
        dt = 1.0 / self.sample_rate
        return (np.sum(np.abs(self.pol1) ** 2) * dt,
                np.sum(np.abs(self.pol2) ** 2) * dt)

    def copy(self):
        return SampledSignal(self.pol1.copy(), self.pol2.copy(),
                             self.sample_rate, self.t0)


@dataclass
class SymbolBlock:
    """Aligned symbol sequences of the two polarizations."""

    pol1: np.ndarray
    pol2: np.ndarray
    energy_per_symbol: float = 1.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pol1 = np.asarray(self.pol1, dtype=complex)
        self.pol2 = np.asarray(self.pol2, dtype=complex)
        if self.pol1.shape != self.pol2.shape:
            raise ValueError("polarizations must have equal length")
        if not (np.all(np.isfinite(self.pol1)) and np.all(np.isfinite(self.pol2))):
            raise ValueError("symbol block has non-finite entries")

    def __len__(self):
        return self.pol1.shape[-1]

    @classmethod
    def gaussian(cls, length, energy, rng, seed=None):
        """i.i.d. circular Gaussian symbols of variance ``energy`` per pol."""
        z = rng.standard_normal((2, 2, length))
        x = math.sqrt(energy / 2.0) * (z[:, 0] + 1j * z[:, 1])
        return cls(x[0], x[1], energy, seed)

    def stacked(self):
        return np.stack([self.pol1, self.pol2])


def sinc_pulse(T, t):
    """Unit-energy sinc pulse (1/sqrt(T)) sinc(t/T)."""
    if not T > 0:
        raise ValueError("T must be positive")
    return np.sinc(np.asarray(t, dtype=float) / T) / math.sqrt(T)


def angular_frequencies(n, sample_rate):
    """Angular frequency of each FFT bin."""
    return 2 * math.pi * np.fft.fftfreq(n, d=1.0 / sample_rate)


def dispersion_apply(sig, beta2, z):
    """Apply the all-pass dispersion operator over distance ``z``.

    Parameters
    ----------
    sig : SampledSignal
    beta2 : float
        Dispersion coefficient in ps^2/km.
    z : float
        Distance in km (negative values invert the operator).

    Returns
    -------
    SampledSignal
    """
    n = len(sig)
    if n == 0:
        raise ValueError("empty signal")
    w = angular_frequencies(n, sig.sample_rate)
    h = np.exp(0.5j * beta2 * 1e-24 * w ** 2 * z)
    return SampledSignal(np.fft.ifft(np.fft.fft(sig.pol1) * h),
                         np.fft.ifft(np.fft.fft(sig.pol2) * h),
                         sig.sample_rate, sig.t0)


def band_bins(n_sym):
    """Signed bin offsets r of one channel band with M = ``n_sym`` symbols.

    Odd M gives a symmetric range; even M gives [-M/2, M/2 - 1].
    """
    lo = -(n_sym // 2)
    return np.arange(lo, lo + n_sym)


def _center_bin(center_freq, period):
    q = center_freq * period / (2 * math.pi)
    qi = int(round(q))
    if abs(q - qi) > 1e-6:
        raise ValueError("channel frequency is not on the block frequency grid; "
                         "choose M so that spacing * M * T is an integer")
    return qi


def synthesize_wdm(plan, symbols, sample_rate, min_oversampling=2.0):
    """Superpose delayed, frequency-shifted periodic sinc pulse trains.

    Parameters
    ----------
    plan : WdmPlan
        Channels with center frequencies and per-polarization delays.
    symbols : dict
        ``{channel index: SymbolBlock}``; missing channels are silent.
    sample_rate : float
        Must be an integer multiple of 1/T.
    min_oversampling : float
        Required ratio of sample rate to the occupied bandwidth.

    Returns
    -------
    SampledSignal
        One block period starting at t = 0.
    """
    T = plan.symbol_period
    lengths = {len(b) for b in symbols.values()}
    if len(lengths) != 1:
        raise ValueError("all symbol blocks must have the same length")
    m = lengths.pop()
    sps = sample_rate * T
    if abs(sps - round(sps)) > 1e-9:
        raise ValueError("sample_rate must be an integer multiple of 1/T")
    sps = int(round(sps))
    ns = m * sps
    period = m * T
    freqs = [ch.center_freq for ch in plan.channels]
    occupied = (max(freqs) - min(freqs)) / (2 * math.pi) + plan.channel_bandwidth
    if sample_rate < min_oversampling * occupied * (1 - 1e-12):
        raise ValueError(f"sample rate {sample_rate:.4g} Hz too low for occupied "
                         f"bandwidth {occupied:.4g} Hz (aliasing)")
    r = band_bins(m)
    w = 2 * math.pi * r / period
    spec1 = np.zeros(ns, complex)
    spec2 = np.zeros(ns, complex)
    amp = math.sqrt(T) / period
    for ch in plan.channels:
        blk = symbols.get(ch.index)
        if blk is None:
            continue
        qc = _center_bin(ch.center_freq, period)
        q = qc + r
        if q.min() < -(ns // 2) or q.max() >= ns - ns // 2:
            raise ValueError("channel band aliases at this sample rate")
        b1 = np.fft.fft(blk.pol1)[r % m]
        b2 = np.fft.fft(blk.pol2)[r % m]
        spec1[q % ns] += amp * b1 * np.exp(-1j * w * ch.delay)
        spec2[q % ns] += amp * b2 * np.exp(-1j * w * ch.delay_bar)
    return SampledSignal(ns * np.fft.ifft(spec1), ns * np.fft.ifft(spec2),
                         float(sample_rate), 0.0)


def band_spectrum(sig, center_freq, n_sym, symbol_period):
    """Fourier-series coefficients of both pols on one channel's band.

    Returns an array of shape (2, M) ordered like ``band_bins``.
    """
    ns = len(sig)
    period = n_sym * symbol_period
    if abs(ns / sig.sample_rate - period) > 1e-9 * period:
        raise ValueError("signal duration does not match the block period")
    q = (_center_bin(center_freq, period) + band_bins(n_sym)) % ns
    return np.stack([np.fft.fft(sig.pol1)[q], np.fft.fft(sig.pol2)[q]]) / ns


def bandpass_and_match(sig, plan, channel=0, pol_delay=None, n_sym=None):
    """Ideal band-pass, matched filter and symbol-rate sampling.

    Parameters
    ----------
    sig : SampledSignal
    plan : WdmPlan
    channel : int
        Channel index to extract.
    pol_delay : tuple of float, optional
        Sampling offsets (pol 1, pol 2); defaults to the channel's delays.
    n_sym : int, optional
        Symbols per block; inferred from duration and T when omitted.

    Returns
    -------
    SymbolBlock
    """
    ch = plan.channel(channel)
    T = plan.symbol_period
    if n_sym is None:
        n_sym = int(round(len(sig) / sig.sample_rate / T))
    if pol_delay is None:
        pol_delay = (ch.delay, ch.delay_bar)
    period = n_sym * T
    r = band_bins(n_sym)
    w = 2 * math.pi * r / period
    coef = band_spectrum(sig, ch.center_freq, n_sym, T)
    out = []
    for p in range(2):
        v = np.zeros(n_sym, complex)
        v[r % n_sym] = coef[p] * np.exp(1j * w * pol_delay[p])
        out.append(math.sqrt(T) * n_sym * np.fft.ifft(v))
    return SymbolBlock(out[0], out[1])


def band_limit(sig, center_freq, bandwidth):
    """Keep only the bins within ``bandwidth`` (Hz) around ``center_freq`` (rad/s)."""
    n = len(sig)
    f = np.fft.fftfreq(n, d=1.0 / sig.sample_rate)
    f0 = center_freq / (2 * math.pi)
    # half-open band so adjacent bands partition the grid
    mask = (f >= f0 - bandwidth / 2 - 1e-9 * bandwidth) & (f < f0 + bandwidth / 2 - 1e-9 * bandwidth)
    return SampledSignal(np.fft.ifft(np.fft.fft(sig.pol1) * mask),
                         np.fft.ifft(np.fft.fft(sig.pol2) * mask),
                         sig.sample_rate, sig.t0)


def psd_estimate(x, sample_rate):
    """Periodogram of a periodic sequence, W/Hz per bin."""
    n = len(x)
    return np.abs(np.fft.fft(x)) ** 2 / (n * sample_rate)
