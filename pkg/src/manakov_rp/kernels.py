"""Hot loops with paired numba / numpy implementations.

Each public function takes a ``backend`` argument (``None`` follows the
``MANAKOV_RP_NUMBA`` environment flag). The two flavours compute the same
quantity; tests compare them and ``benchmarks/bench_kernels.py`` times them.
"""
from __future__ import annotations

import numpy as np

from ._accel import njit, resolve_backend


# ---------------------------------------------------------------------------
# Weighted fold of a signed-offset array (coefficient planes)


@njit
def _weighted_fold_nb(base, lo, hi1, table, qmin, inv, n, out):
    m = base.shape[0]
    for i in range(m):
        ri = (i + 1) % n
        for j in range(m):
            b = base[i, j]
            if b == 0:
                continue
            g = (table[lo[i, j] - qmin] - table[hi1[i, j] - qmin]) * inv
            out[ri, (j + 1) % n] += b * g


def _weighted_fold_np(base, lo, hi1, table, qmin, inv, n):
    g = (table[lo - qmin] - table[hi1 - qmin]) * inv
    return fold_offsets(base * g, n)


def fold_offsets(a, n):
    """Sum a (2n-1, 2n-1) array over signed offsets -(n-1)..n-1 modulo n."""
    m = a.shape[0]
    pad = np.zeros((2 * n, 2 * n), dtype=a.dtype)
    pad[:m, :m] = a
    s = pad.reshape(2, n, 2, n).sum(axis=(0, 2))
    # position i holds offset i - (n - 1), i.e. residue (i + 1) mod n
    return np.roll(s, (1, 1), axis=(0, 1))


def weighted_fold(base, lo, hi1, table, qmin, inv, n, backend=None):
    """Fold ``base * (table[lo] - table[hi1]) * inv`` modulo ``n``.

    This is the geometric-series weighting of the free frequency followed by
    the reduction of signed offsets onto the DFT grid.
    """
    if resolve_backend(backend) == "numba":
        out = np.zeros((n, n), complex)
        _weighted_fold_nb(base, lo, hi1, table, qmin, complex(inv), n, out)
        return out
    return _weighted_fold_np(base, lo, hi1, table, qmin, inv, n)


# ---------------------------------------------------------------------------
# Sparse cyclic contraction  out[m] = sum_e t_e a[m+n] b[m+k] conj(c[m+k'])


@njit
def _contract_nb(idx, vals, a, b, c, out):
    m_len = a.shape[-1]
    nblk = a.shape[0]
    for e in range(idx.shape[0]):
        n = idx[e, 0]
        k = idx[e, 1]
        kp = idx[e, 2]
        t = vals[e]
        for blk in range(nblk):
            for m in range(m_len):
                out[blk, m] += t * a[blk, (m + n) % m_len] * b[blk, (m + k) % m_len] \
                    * np.conj(c[blk, (m + kp) % m_len])


def _contract_np(idx, vals, a, b, c):
    m_len = a.shape[-1]
    out = np.zeros(a.shape, complex)
    m = np.arange(m_len)
    for (n, k, kp), t in zip(idx, vals):
        out += t * a[:, (m + n) % m_len] * b[:, (m + k) % m_len] \
            * np.conj(c[:, (m + kp) % m_len])
    return out


def contract_sparse(idx, vals, a, b, c, backend=None):
    """Cyclic trilinear contraction of a sparse tensor with three sequences.

    Parameters
    ----------
    idx : (E, 3) int array
        Offsets (n, k, k').
    vals : (E,) complex array
    a, b, c : (B, M) or (M,) complex arrays
        Blocks are treated as periodic; ``c`` enters conjugated.

    Returns
    -------
    ndarray, same shape as ``a``
    """
    a = np.asarray(a, complex)
    squeeze = a.ndim == 1
    a2 = np.atleast_2d(a)
    b2 = np.atleast_2d(np.asarray(b, complex))
    c2 = np.atleast_2d(np.asarray(c, complex))
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1, 3)
    vals = np.ascontiguousarray(vals, dtype=complex).reshape(-1)
    if resolve_backend(backend) == "numba":
        out = np.zeros(a2.shape, complex)
        _contract_nb(idx, vals, np.ascontiguousarray(a2), np.ascontiguousarray(b2),
                     np.ascontiguousarray(c2), out)
    else:
        out = _contract_np(idx, vals, a2, b2, c2)
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# Kerr products of the time-domain RP operator


@njit
def _accumulate_pair_nb(a1, a2, inten, inten_b, kk):
    nb, ns = a1.shape
    for b in range(nb):
        for i in range(ns):
            x = a1[b, i]
            y = a2[b, i]
            p1 = x.real * x.real + x.imag * x.imag
            p2 = y.real * y.real + y.imag * y.imag
            inten[b, i] += 2.0 * p1 + p2
            inten_b[b, i] += 2.0 * p2 + p1
            kk[b, i] += x * np.conj(y)


def accumulate_pair(a1, a2, inten, inten_b, kk, backend=None):
    """Add one interferer's intensities and cross term in place.

    inten += 2|a1|^2 + |a2|^2, inten_b += 2|a2|^2 + |a1|^2, kk += a1 a2*.
    """
    if resolve_backend(backend) == "numba":
        _accumulate_pair_nb(a1, a2, inten, inten_b, kk)
        return
    p1 = a1.real ** 2 + a1.imag ** 2
    p2 = a2.real ** 2 + a2.imag ** 2
    inten += 2 * p1 + p2
    inten_b += 2 * p2 + p1
    kk += a1 * np.conj(a2)


@njit
def _kerr_mix_nb(u1, u2, inten, inten_b, kk, spm, n1, n2, packed):
    nb, ns = u1.shape
    for b in range(nb):
        for i in range(ns):
            x = u1[b, i]
            y = u2[b, i]
            i1 = inten[b, i]
            i2 = inten_b[b, i]
            if spm != 0.0:
                own = spm * (x.real * x.real + x.imag * x.imag + y.real * y.real + y.imag * y.imag)
                i1 += own
                i2 += own
            k = kk[b, i]
            n1[b, i] = i1 * x + k * y
            n2[b, i] = i2 * y + np.conj(k) * x
            packed[b, i] = i1 + 1j * i2


def kerr_mix(u1, u2, inten, inten_b, kk, spm=0.0, backend=None):
    """Nonlinear drive of both polarizations.

    Returns ``(n1, n2, packed)`` with n1 = I u1 + K u2, n2 = Ibar u2 + K* u1
    and ``packed = I + j Ibar`` (the two real intensities share one FFT).
    ``spm`` adds that multiple of the own-channel intensity to I and Ibar.
    """
    if resolve_backend(backend) == "numba":
        n1 = np.empty_like(u1)
        n2 = np.empty_like(u1)
        packed = np.empty_like(u1)
        _kerr_mix_nb(u1, u2, inten, inten_b, kk, float(spm), n1, n2, packed)
        return n1, n2, packed
    if spm:
        own = spm * (u1.real ** 2 + u1.imag ** 2 + u2.real ** 2 + u2.imag ** 2)
        inten = inten + own
        inten_b = inten_b + own
    return inten * u1 + kk * u2, inten_b * u2 + np.conj(kk) * u1, inten + 1j * inten_b


# ---------------------------------------------------------------------------
# Particle filter over the mismatched channel

MODEL_NONE, MODEL_MR, MODEL_PD = 0, 1, 2
RENORM_EVERY = 10_000


@njit
def _polar2(j):
    # three Newton steps X <- (X + X^{-H}) / 2 towards the nearest unitary
    for _ in range(3):
        a, b, c, d = j[0, 0], j[0, 1], j[1, 0], j[1, 1]
        det = a * d - b * c
        inv_h = np.empty((2, 2), np.complex128)
        inv_h[0, 0] = np.conj(d / det)
        inv_h[0, 1] = np.conj(-c / det)
        inv_h[1, 0] = np.conj(-b / det)
        inv_h[1, 1] = np.conj(a / det)
        j[:, :] = 0.5 * (j + inv_h)


def _polar2_np(j):
    for _ in range(3):
        a, b, c, d = j[:, 0, 0], j[:, 0, 1], j[:, 1, 0], j[:, 1, 1]
        det = a * d - b * c
        inv_h = np.empty_like(j)
        inv_h[:, 0, 0] = np.conj(d / det)
        inv_h[:, 0, 1] = np.conj(-c / det)
        inv_h[:, 1, 0] = np.conj(-b / det)
        inv_h[:, 1, 1] = np.conj(a / det)
        j = 0.5 * (j + inv_h)
    return j


@njit
def _pf_nb(a1, a2, x1, x2, h, hb, model, g, sd, gp, sdp, sig_d, sig_a, sigma2,
           rn, u, thr, hist_phi, hist_phib, hist_psi, theta, jones, rot1, rot2,
           w, logd):
    n_sym = x1.shape[0]
    k_part = w.shape[0]
    mu = g.shape[0]
    L = h.shape[0]
    lognorm = 2.0 * np.log(np.pi * sigma2)
    logp = np.empty(k_part)
    cum = np.empty(k_part)
    n_res = 0
    for m in range(n_sym):
        for k in range(k_part):
            for l in range(L - 1, 0, -1):
                rot1[k, l] = rot1[k, l - 1]
                rot2[k, l] = rot2[k, l - 1]
            if model == 1:
                phi = sd * rn[m, k, 0]
                phib = sd * rn[m, k, 1]
                psi = sdp * (rn[m, k, 2] + 1j * rn[m, k, 3]) / np.sqrt(2.0)
                for p in range(mu):
                    phi += g[p] * hist_phi[k, p]
                    phib += g[p] * hist_phib[k, p]
                    psi += gp[p] * hist_psi[k, p]
                for p in range(mu - 1, 0, -1):
                    hist_phi[k, p] = hist_phi[k, p - 1]
                    hist_phib[k, p] = hist_phib[k, p - 1]
                    hist_psi[k, p] = hist_psi[k, p - 1]
                if mu > 0:
                    hist_phi[k, 0] = phi
                    hist_phib[k, 0] = phib
                    hist_psi[k, 0] = psi
                th = 2.0 * phi + phib
                thb = phi + 2.0 * phib
                am = 0.5 * (th + thb)
                hd = 0.5 * (th - thb)
                r = np.sqrt(hd * hd + psi.real * psi.real + psi.imag * psi.imag)
                cr = np.cos(r)
                sr = np.sin(r) / r if r > 0 else 1.0
                ph = np.exp(1j * am)
                rot1[k, 0] = ph * (cr * x1[m] + 1j * sr * (hd * x1[m] + psi * x2[m]))
                rot2[k, 0] = ph * (cr * x2[m] + 1j * sr * (np.conj(psi) * x1[m] - hd * x2[m]))
            elif model == 2:
                theta[k] += sig_d * rn[m, k, 0]
                b1 = sig_a * rn[m, k, 1]
                b2 = sig_a * rn[m, k, 2]
                b3 = sig_a * rn[m, k, 3]
                r = np.sqrt(b1 * b1 + b2 * b2 + b3 * b3)
                c = np.cos(r)
                s = np.sin(r) / r if r > 0 else 1.0
                u00 = c + 1j * s * b3
                u11 = c - 1j * s * b3
                u01 = 1j * s * (b1 - 1j * b2)
                u10 = 1j * s * (b1 + 1j * b2)
                j00 = u00 * jones[k, 0, 0] + u01 * jones[k, 1, 0]
                j01 = u00 * jones[k, 0, 1] + u01 * jones[k, 1, 1]
                j10 = u10 * jones[k, 0, 0] + u11 * jones[k, 1, 0]
                j11 = u10 * jones[k, 0, 1] + u11 * jones[k, 1, 1]
                jones[k, 0, 0] = j00
                jones[k, 0, 1] = j01
                jones[k, 1, 0] = j10
                jones[k, 1, 1] = j11
                if (m + 1) % RENORM_EVERY == 0:
                    _polar2(jones[k])
                ph = np.exp(1j * theta[k])
                rot1[k, 0] = ph * (jones[k, 0, 0] * x1[m] + jones[k, 0, 1] * x2[m])
                rot2[k, 0] = ph * (jones[k, 1, 0] * x1[m] + jones[k, 1, 1] * x2[m])
            else:
                rot1[k, 0] = x1[m]
                rot2[k, 0] = x2[m]
        if m < L - 1:
            continue
        o = m - (L - 1)
        mx = -np.inf
        for k in range(k_part):
            p1 = 0j
            p2 = 0j
            for l in range(L):
                p1 += h[l] * rot1[k, l]
                p2 += hb[l] * rot2[k, l]
            e1 = a1[o] - p1
            e2 = a2[o] - p2
            logp[k] = -(e1.real * e1.real + e1.imag * e1.imag
                        + e2.real * e2.real + e2.imag * e2.imag) / sigma2
            if w[k] > 0 and logp[k] > mx:
                mx = logp[k]
        tot = 0.0
        for k in range(k_part):
            w[k] *= np.exp(logp[k] - mx)
            tot += w[k]
        if not tot > 0:
            logd[o] = np.nan
            return -1
        logd[o] = np.log(tot) + mx - lognorm
        ess = 0.0
        for k in range(k_part):
            w[k] /= tot
            ess += w[k] * w[k]
        if 1.0 / ess < thr * k_part:
            n_res += 1
            acc = 0.0
            for k in range(k_part):
                acc += w[k]
                cum[k] = acc
            idx = np.empty(k_part, np.int64)
            j = 0
            for i in range(k_part):
                pos = (u[m] + i) / k_part
                while j < k_part - 1 and cum[j] <= pos:
                    j += 1
                idx[i] = j
            hist_phi[:, :] = hist_phi[idx].copy()
            hist_phib[:, :] = hist_phib[idx].copy()
            hist_psi[:, :] = hist_psi[idx].copy()
            theta[:] = theta[idx].copy()
            jones[:, :, :] = jones[idx].copy()
            rot1[:, :] = rot1[idx].copy()
            rot2[:, :] = rot2[idx].copy()
            w[:] = 1.0 / k_part
    return n_res


def _pf_np(a1, a2, x1, x2, h, hb, model, g, sd, gp, sdp, sig_d, sig_a, sigma2,
           rn, u, thr, hist_phi, hist_phib, hist_psi, theta, jones, rot1, rot2, w, logd):
    n_sym = x1.shape[0]
    k_part = w.shape[0]
    mu = len(g)
    L = len(h)
    lognorm = 2.0 * np.log(np.pi * sigma2)
    n_res = 0
    for m in range(n_sym):
        rot1[:, 1:] = rot1[:, :-1].copy()
        rot2[:, 1:] = rot2[:, :-1].copy()
        if model == MODEL_MR:
            phi = sd * rn[m, :, 0] + hist_phi @ g
            phib = sd * rn[m, :, 1] + hist_phib @ g
            psi = sdp * (rn[m, :, 2] + 1j * rn[m, :, 3]) / np.sqrt(2.0) + hist_psi @ gp
            if mu:
                hist_phi[:, 1:] = hist_phi[:, :-1].copy()
                hist_phib[:, 1:] = hist_phib[:, :-1].copy()
                hist_psi[:, 1:] = hist_psi[:, :-1].copy()
                hist_phi[:, 0], hist_phib[:, 0], hist_psi[:, 0] = phi, phib, psi
            th = 2 * phi + phib
            thb = phi + 2 * phib
            am, hd = 0.5 * (th + thb), 0.5 * (th - thb)
            r = np.sqrt(hd * hd + np.abs(psi) ** 2)
            cr = np.cos(r)
            sr = np.sinc(r / np.pi)
            ph = np.exp(1j * am)
            rot1[:, 0] = ph * (cr * x1[m] + 1j * sr * (hd * x1[m] + psi * x2[m]))
            rot2[:, 0] = ph * (cr * x2[m] + 1j * sr * (np.conj(psi) * x1[m] - hd * x2[m]))
        elif model == MODEL_PD:
            theta += sig_d * rn[m, :, 0]
            b = sig_a * rn[m, :, 1:4]
            r = np.sqrt((b * b).sum(axis=1))
            c = np.cos(r)
            s = np.sinc(r / np.pi)
            um = np.empty((k_part, 2, 2), complex)
            um[:, 0, 0] = c + 1j * s * b[:, 2]
            um[:, 1, 1] = c - 1j * s * b[:, 2]
            um[:, 0, 1] = 1j * s * (b[:, 0] - 1j * b[:, 1])
            um[:, 1, 0] = 1j * s * (b[:, 0] + 1j * b[:, 1])
            jones[:] = um @ jones
            if (m + 1) % RENORM_EVERY == 0:
                jones[:] = _polar2_np(jones)
            ph = np.exp(1j * theta)
            rot1[:, 0] = ph * (jones[:, 0, 0] * x1[m] + jones[:, 0, 1] * x2[m])
            rot2[:, 0] = ph * (jones[:, 1, 0] * x1[m] + jones[:, 1, 1] * x2[m])
        else:
            rot1[:, 0] = x1[m]
            rot2[:, 0] = x2[m]
        if m < L - 1:
            continue
        o = m - (L - 1)
        e1 = a1[o] - rot1 @ h
        e2 = a2[o] - rot2 @ hb
        logp = -(np.abs(e1) ** 2 + np.abs(e2) ** 2) / sigma2
        live = w > 0
        if not live.any():
            logd[o] = np.nan
            return -1
        mx = logp[live].max()
        w *= np.exp(logp - mx)
        tot = w.sum()
        if not tot > 0:
            logd[o] = np.nan
            return -1
        logd[o] = np.log(tot) + mx - lognorm
        w /= tot
        if 1.0 / np.sum(w * w) < thr * k_part:
            n_res += 1
            cum = np.cumsum(w)
            pos = (u[m] + np.arange(k_part)) / k_part
            idx = np.minimum(np.searchsorted(cum, pos, side="right"), k_part - 1)
            for arr in (hist_phi, hist_phib, hist_psi, theta, jones, rot1, rot2):
                arr[:] = arr[idx]
            w[:] = 1.0 / k_part
    return n_res


def particle_filter(a1, a2, x1, x2, h, hb, model, g, sd, gp, sdp, sig_d, sig_a,
                    sigma2, rn, u, thr, hist_phi, hist_phib, hist_psi, backend=None):
    """Run one particle filter; returns ``(log D_m array, resample count)``.

    ``rn`` (M, K, 4) and ``u`` (M,) hold all random numbers, so both
    backends follow the same particle paths. A resample count of -1 flags
    weight underflow.
    """
    k_part = rn.shape[1]
    L = len(h)
    state = (np.array(hist_phi, float), np.array(hist_phib, float),
             np.array(hist_psi, complex), np.zeros(k_part),
             np.tile(np.eye(2, dtype=complex), (k_part, 1, 1)),
             np.zeros((k_part, L), complex), np.zeros((k_part, L), complex),
             np.full(k_part, 1.0 / k_part))
    logd = np.full(len(a1), np.nan)
    args = (np.ascontiguousarray(a1, complex), np.ascontiguousarray(a2, complex),
            np.ascontiguousarray(x1, complex), np.ascontiguousarray(x2, complex),
            np.ascontiguousarray(h, float), np.ascontiguousarray(hb, float), int(model),
            np.ascontiguousarray(g, float), float(sd), np.ascontiguousarray(gp, complex),
            float(sdp), float(sig_d), float(sig_a), float(sigma2),
            np.ascontiguousarray(rn, float), np.ascontiguousarray(u, float), float(thr))
    fn = _pf_nb if resolve_backend(backend) == "numba" else _pf_np
    n_res = fn(*args, *state, logd)
    return logd, int(n_res)
