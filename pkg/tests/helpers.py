"""Shared oracles for the test suite."""
import math
from functools import lru_cache

import numpy as np

from manakov_rp.nli import build_tensor


def brute_coefficient(n_sym, T, beta2_si, gamma, length_km, n, k, kp, t1, t2, t3, omega,
                      nz=4001, sps=3):
    """Direct time-domain evaluation of one periodic four-pulse coefficient.

    Every pulse train is synthesized on a sampled periodic grid (exact for
    the band-limited product at ``sps`` >= 3) and the product is integrated
    over t by a Riemann sum and over z by the trapezoid rule, refined by
    one Richardson step (trapezoid on ``nz`` and on every other node).
    """
    if nz % 2 == 0:
        raise ValueError("nz must be odd")
    q = np.arange(n_sym) - (n_sym - 1) // 2
    period = n_sym * T
    w = 2 * math.pi * q / period
    ns = sps * n_sym
    dt = period / ns

    def pulse(z, shift):
        spec = np.zeros(ns, complex)
        spec[q % ns] = math.sqrt(T) * np.exp(0.5j * beta2_si * w ** 2 * z - 1j * w * shift)
        return np.fft.ifft(spec) * ns / period

    zs = np.linspace(0.0, length_km, nz)
    vals = np.empty(nz, complex)
    for i, z in enumerate(zs):
        walk = -beta2_si * omega * z
        a = pulse(z, 0.0)
        b = pulse(z, n * T + t1)
        c = pulse(z, k * T + t2 + walk)
        d = pulse(z, kp * T + t3 + walk)
        vals[i] = np.sum(np.conj(a) * b * c * np.conj(d)) * dt
    h = zs[1] - zs[0]
    fine = h * (vals.sum() - 0.5 * (vals[0] + vals[-1]))
    half = vals[::2]
    coarse = 2 * h * (half.sum() - 0.5 * (half[0] + half[-1]))
    return gamma * (4 * fine - coarse) / 3


@lru_cache(maxsize=None)
def cube_tensor(link, plan, kind, c, pol=1, grid=8):
    """Dense |n|, |k|, |k'| <= grid array of one tensor (nothing dropped)."""
    t = build_tensor(link, plan, kind, c, pol, grid, box=((-grid, grid),) * 3, threshold=0.0)
    a = np.zeros((2 * grid + 1,) * 3, complex)
    a[tuple((t.index + grid).T)] = t.values
    return a


def symmetry_errors(a, b=None):
    """Max relative violation of the three index-symmetry families on a cube.

    Returns errors of X(n,k,k') vs X(-n,k'-n,k-n)*, vs X(k'-k,k'-n,k') and
    vs Y(-n,-k,-k') where ``b`` holds Y (the mirrored channel).
    """
    g = (a.shape[0] - 1) // 2
    b = a if b is None else b
    r = np.arange(-g, g + 1)
    nn, kk, qq = np.meshgrid(r, r, r, indexing="ij")
    peak = np.abs(a).max()

    def family(tn, tk, tq, src, conj):
        ok = (np.abs(tn) <= g) & (np.abs(tk) <= g) & (np.abs(tq) <= g)
        other = src[tn[ok] + g, tk[ok] + g, tq[ok] + g]
        if conj:
            other = np.conj(other)
        return float(np.abs(a[ok] - other).max() / peak)

    return (family(-nn, qq - nn, kk - nn, a, True),
            family(qq - kk, qq - nn, qq, a, False),
            family(-nn, -kk, -qq, b, False))
