import math

import numpy as np
import pytest
from hypothesis import given
from scipy.integrate import trapezoid
from hypothesis import strategies as st

from manakov_rp.params import Channel, WdmPlan
from manakov_rp.signal import (SampledSignal, SymbolBlock, band_limit, bandpass_and_match,
                               dispersion_apply, psd_estimate, sinc_pulse, synthesize_wdm)

from .conftest import OMEGA, T, cgauss

M = 64


def single_plan(delay=0.0, delay_bar=0.0):
    return WdmPlan((Channel.gaussian(0, 0.0, T, delay, delay_bar),), T, 50e9, 1)


def test_sinc_pulse_values():
    assert sinc_pulse(T, 0.0) == pytest.approx(1 / math.sqrt(T))
    k = np.array([-3, -1, 1, 2, 7])
    np.testing.assert_allclose(sinc_pulse(T, k * T), 0.0, atol=1e-12 / math.sqrt(T))
    with pytest.raises(ValueError):
        sinc_pulse(0.0, 1.0)


def test_sinc_unit_energy():
    t = np.linspace(-200 * T, 200 * T, 400 * 64 + 1)
    e = trapezoid(sinc_pulse(T, t) ** 2, t)
    assert abs(e - 1) < 1e-3


def _sig(rng, n=256, fs=4 / T):
    return SampledSignal(cgauss(rng, n), cgauss(rng, n), fs)


def test_dispersion_identity_inverse_and_energy(rng):
    s = _sig(rng)
    z0 = dispersion_apply(s, -21.7, 0.0)
    np.testing.assert_allclose(z0.pol1, s.pol1, atol=1e-14)
    d = dispersion_apply(s, -21.7, 500.0)
    np.testing.assert_allclose(d.energy(), s.energy(), rtol=1e-12)
    back = dispersion_apply(d, -21.7, -500.0)
    assert np.max(np.abs(back.pol1 - s.pol1)) <= 1e-9 * np.max(np.abs(s.pol1))
    with pytest.raises(ValueError):
        dispersion_apply(SampledSignal(np.zeros(0), np.zeros(0), 1.0), -21.7, 1.0)


def test_dispersion_group_delay_of_shifted_pulse():
    # a pulse at offset Omega0 acquires delay beta2 Omega0 z and phase (beta2/2) Omega0^2 z
    n, fs = 4096, 16 / T
    b2, z = -21.7, 40.0
    beta_si = b2 * 1e-24
    t = (np.arange(n) - n // 2) / fs
    om = 2 * math.pi * 100e9
    # slowly varying Gaussian envelope so higher-order spreading is negligible
    tau = 40 * T
    env = lambda tt: np.exp(-tt ** 2 / (2 * tau ** 2))  # noqa: E731
    x = env(t) * np.exp(1j * om * t)
    out = dispersion_apply(SampledSignal(x, x, fs), b2, z).pol1
    delay = -beta_si * om * z
    ref = env(t - delay) * np.exp(1j * om * t) * np.exp(0.5j * beta_si * om ** 2 * z)
    # remove the residual envelope broadening: compare at the peak
    i = np.argmax(np.abs(out))
    assert abs(t[i] - delay) <= 1 / fs
    spread = 0.5 * beta_si * z / tau ** 2
    assert abs(out[i] / abs(out[i]) - ref[i] / abs(ref[i])) < 1e-6 + 2 * abs(spread)


def test_synthesis_samples_symbols(rng):
    x = SymbolBlock.gaussian(M, T, rng)
    sig = synthesize_wdm(single_plan(), {0: x}, 4 / T)
    np.testing.assert_allclose(sig.pol1[::4] * math.sqrt(T), x.pol1, atol=1e-6 * np.abs(x.pol1).max())
    z = synthesize_wdm(single_plan(), {0: SymbolBlock(np.zeros(M), np.zeros(M))}, 4 / T)
    assert np.all(z.pol1 == 0) and np.all(z.pol2 == 0)


def test_synthesis_rejects_aliasing(rng):
    x = SymbolBlock.gaussian(M, T, rng)
    with pytest.raises(ValueError):
        synthesize_wdm(single_plan(), {0: x}, 1 / T)


@given(a=st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
       b=st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
       seed=st.integers(0, 2 ** 16))
def test_synthesis_linear(a, b, seed):
    r = np.random.default_rng(seed)
    plan = WdmPlan((Channel.gaussian(0, 0.0, T, 0.0, 0.3 * T),
                    Channel.gaussian(1, OMEGA, T, 0.2 * T, -0.1 * T)), T, 50e9, 1)
    x = {c: SymbolBlock.gaussian(16, 1.0, r) for c in (0, 1)}
    y = {c: SymbolBlock.gaussian(16, 1.0, r) for c in (0, 1)}
    comb = {c: SymbolBlock(a * x[c].pol1 + b * y[c].pol1, a * x[c].pol2 + b * y[c].pol2)
            for c in (0, 1)}
    fs = 8 / T
    sx, sy, sc = (synthesize_wdm(plan, s, fs) for s in (x, y, comb))
    ref = a * sx.pol1 + b * sy.pol1
    assert np.max(np.abs(sc.pol1 - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_back_to_back_identity(rng):
    x = SymbolBlock.gaussian(M, T, rng)
    plan = single_plan(0.0, 0.3 * T)
    sig = synthesize_wdm(plan, {0: x}, 4 / T)
    d = dispersion_apply(dispersion_apply(sig, -21.7, 300.0), -21.7, -300.0)
    out = bandpass_and_match(d, plan, 0, n_sym=M)
    np.testing.assert_allclose(out.pol1, x.pol1, atol=1e-6 * np.abs(x.pol1).max())
    np.testing.assert_allclose(out.pol2, x.pol2, atol=1e-6 * np.abs(x.pol2).max())


def test_out_of_band_tone_rejected():
    fs, n = 4 / T, 4 * M
    t = np.arange(n) / fs
    # 75 GHz lies on the block frequency grid and outside the 50 GHz band
    tone = np.exp(2j * math.pi * 75e9 * t)
    out = bandpass_and_match(SampledSignal(tone, tone, fs), single_plan(), 0, n_sym=M)
    assert np.max(np.abs(out.pol1)) < 1e-6


def test_band_isolation(rng):
    plan = WdmPlan((Channel.gaussian(0, -OMEGA, T), Channel.gaussian(1, OMEGA, T)), T, 50e9, 1)
    x = SymbolBlock.gaussian(M, T, rng)
    sig = synthesize_wdm(plan, {0: x}, 8 / T)
    f = np.fft.fftfreq(len(sig), T / 8)
    p = psd_estimate(sig.pol1, sig.sample_rate)
    in_band = p[np.abs(f + 50e9) < 25e9].mean()
    other = p[np.abs(f - 50e9) < 25e9].mean()
    assert 10 * np.log10(in_band / max(other, 1e-300)) >= 40


def test_band_limit_partitions_spectrum(rng):
    s = _sig(rng, 512, 8 / T)
    lo = band_limit(s, -2 * math.pi * 50e9, 100e9)
    hi = band_limit(s, 2 * math.pi * 50e9, 100e9)
    rest = s.pol1 - lo.pol1 - hi.pol1
    f = np.fft.fftfreq(512, T / 8)
    spec = np.fft.fft(rest)
    assert np.all(np.abs(spec[np.abs(f) < 99e9]) < 1e-9)


def test_white_noise_variance():
    # white noise of PSD N over the band -> matched-filter output variance N
    r = np.random.default_rng(5)
    n_sym, sps, blocks = 1024, 4, 100
    fs = sps / T
    psd = 2.5e-18
    vals = []
    for _ in range(blocks):
        w = cgauss(r, n_sym * sps, psd * fs)
        out = bandpass_and_match(SampledSignal(w, w, fs), single_plan(), 0, n_sym=n_sym)
        vals.append(np.mean(np.abs(out.pol1) ** 2))
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(blocks)
    assert abs(vals.mean() - psd) < 3 * se
