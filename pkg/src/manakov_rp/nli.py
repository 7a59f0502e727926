"""Four-pulse interaction coefficients and the SPM/XPM tensors.

The coefficient A(n, k, k'; t1, t2, t3) is the z- and t-integral of four
dispersed sinc pulses. For a block of N symbols the pulses are periodic with
period P = N T, and the t-integral becomes a finite sum over the band bins
q1 + q4 = q2 + q3. Writing u = w2 - w4 and v = w3 - w4, the z-integral of the
dispersion and walk-off phases depends on (u, v) only,

    int_0^L exp(-j beta2 v (u - Omega) z) dz,

which is evaluated in closed form. The remaining sum over w4 is a geometric
series. Grouping entries by d = n + k - k' turns the (n, k) plane into a
single 2-D FFT.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .kernels import fold_offsets, weighted_fold
from .signal import band_bins

KINDS = ("S", "S~", "C", "C~", "D")


class QuadratureError(RuntimeError):
    """Coefficient did not converge to the requested tolerance."""


def _cbincount(idx, w, n):
    return np.bincount(idx, weights=w.real, minlength=n) \
        + 1j * np.bincount(idx, weights=w.imag, minlength=n)


class CoefficientEngine:
    """Exact periodic four-pulse coefficients for one delay signature.

    Parameters
    ----------
    n_sym : int
        Block length N (period in symbols).
    symbol_period : float
        T in seconds.
    beta2_si : float
        Dispersion in s^2/km.
    gamma : float
        Nonlinear coefficient in 1/(W km).
    length_km : float
        Link length.
    omega : float
        Angular frequency offset of the pulses carrying indices k, k'
        (walk-off of an interfering channel); 0 for SPM.
    t1, t2, t3 : float
        Constant delays of the pulses with indices n, k, k'.
    scale : float
        Extra factor applied to every coefficient.
    """

    def __init__(self, n_sym, symbol_period, beta2_si, gamma, length_km,
                 omega=0.0, t1=0.0, t2=0.0, t3=0.0, scale=1.0):
        n = int(n_sym)
        if n < 1:
            raise ValueError("n_sym must be positive")
        self.n = n
        self.T = float(symbol_period)
        self.P = n * self.T
        self.omega = float(omega)
        self.t = (float(t1), float(t2), float(t3))
        r = band_bins(n)
        qlo, qhi = int(r[0]), int(r[-1])
        off = np.arange(-(n - 1), n)
        w = 2 * math.pi / self.P
        u = (off * w)[:, None]
        v = (off * w)[None, :]
        x = beta2_si * v * (u - self.omega)
        phi = length_km * np.exp(-0.5j * x * length_km) * np.sinc(x * length_km / (2 * math.pi))
        iu = off[:, None]
        iv = off[None, :]
        mn = np.minimum(np.minimum(0, iu), np.minimum(iv, iu + iv))
        mx = np.maximum(np.maximum(0, iu), np.maximum(iv, iu + iv))
        lo = qlo - mn
        hi = qhi - mx
        cnt = hi - lo + 1
        valid = cnt > 0
        c0 = scale * gamma * self.T ** 2 / self.P ** 3
        self._base = np.where(valid, c0 * phi * np.exp(-1j * (u * t1 + v * t2)), 0)
        self._lo = np.where(valid, lo, 0).astype(np.int64)
        self._hi1 = np.where(valid, hi + 1, 0).astype(np.int64)
        self._cnt = np.where(valid, cnt, 0).astype(np.int64)
        self._sum = self._lo + self._hi1 - 1
        self._qmin = int(self._lo.min())
        self._qmax = int(self._hi1.max())
        self._theta0 = w * (t1 + t2 - t3)

    # -- geometric sum over the free frequency -------------------------------
    def _theta(self, d):
        return 2 * math.pi * d / self.n + self._theta0

    def _weighted(self, d):
        theta = self._theta(d)
        half = math.sin(0.5 * theta)
        if abs(half) < 1e-3:
            # near-resonant: closed form avoids cancellation in 1 - z
            g = np.exp(-0.5j * theta * self._sum)
            if abs(half) < 1e-300:
                g = g * self._cnt
            else:
                g = g * (np.sin(0.5 * theta * self._cnt) / half)
            return self._base * g
        table, inv = self._table(theta)
        g = (table[self._lo - self._qmin] - table[self._hi1 - self._qmin]) * inv
        return self._base * g

    def _table(self, theta):
        q = np.arange(self._qmin, self._qmax + 1)
        return np.exp(-1j * theta * q), 1.0 / (1 - np.exp(-1j * theta))

    def folded(self, d, backend=None):
        """Weighted offsets of plane ``d`` reduced onto the (N, N) DFT grid."""
        theta = self._theta(d)
        if abs(math.sin(0.5 * theta)) < 1e-3:
            return fold_offsets(self._weighted(d), self.n)
        table, inv = self._table(theta)
        return weighted_fold(self._base, self._lo, self._hi1, table, self._qmin,
                             inv, self.n, backend)

    def plane(self, d, backend=None):
        """All A(n, k, n + k - d) as an (N, N) array indexed [n mod N, k mod N]."""
        return np.fft.fft2(self.folded(d, backend))

    def row0(self, d, backend=None):
        """A(0, k, k - d) for all k, indexed [k mod N]."""
        return np.fft.fft(self.folded(d, backend).sum(axis=0))

    def rows0(self):
        """A(0, k, k - d) for every d and k as an (N, N) array [d mod N, k mod N]."""
        return self.rows(0)

    def rows(self, n_idx):
        """A(n, k, n + k - d) for one n and every d, k, indexed [d mod N, k mod N].

        The free-frequency sum is regrouped: for fixed q4 and v the admissible
        u form an interval, so prefix sums over u give
        H(q4, v) = sum_u base(u, v) exp(-2 pi j u n / N) in O(N^2), and a DFT
        over q4 evaluates the geometric weights of every d at once.
        """
        n = self.n
        r = band_bins(n)
        qlo, qhi = int(r[0]), int(r[-1])
        off = np.arange(-(n - 1), n)
        base = self._base
        if n_idx % n:
            base = base * np.exp(-2j * math.pi * off * (n_idx % n) / n)[:, None]
        # cum[i, j] = sum of base[:i, j]
        cum = np.zeros((2 * n, 2 * n - 1), complex)
        np.cumsum(base, axis=0, out=cum[1:])
        q4 = r[:, None]
        iv = off[None, :]
        ulo = np.maximum(qlo - q4, qlo - q4 - iv)
        uhi = np.minimum(qhi - q4, qhi - q4 - iv)
        ok = (q4 + iv >= qlo) & (q4 + iv <= qhi) & (uhi >= ulo)
        ilo = np.clip(ulo + (n - 1), 0, 2 * n - 1)
        ihi = np.clip(uhi + n, 0, 2 * n - 1)
        cols = np.broadcast_to(np.arange(2 * n - 1)[None, :], ilo.shape)
        h = np.where(ok, cum[ihi, cols] - cum[ilo, cols], 0)
        h *= np.exp(-1j * self._theta0 * q4)
        hq = np.zeros((n, 2 * n - 1), complex)
        hq[r % n] = h
        # sum_q4 exp(-2 pi j d q4 / N) h[q4, v] for every d
        col = np.fft.fft(hq, axis=0)
        pad = np.zeros((n, 2 * n), complex)
        pad[:, :2 * n - 1] = col
        folded = np.roll(pad.reshape(n, 2, n).sum(axis=1), 1, axis=1)
        return np.fft.fft(folded, axis=1)

    def shift_energy(self, lags):
        """sum over n, k, k' of A(n, k, k') A*(n-l, k-l, k'-l) for each lag l.

        Parseval over the plane index reduces the sum to the free-frequency
        ranges shared by the (at most four) offsets folding onto each DFT
        bin. A lag weights each shared frequency q by exp(-2j pi l q / N);
        the geometric sum over a range [a, b) then splits into two
        histograms over (s + a) mod N and (s + b) mod N, so all lags cost
        one FFT.
        """
        n = self.n
        lags = np.asarray(lags)
        p = np.arange(n)
        shifts = (0, -n)
        # offsets (p + su, q + sv) stored at array index offset + n - 1
        parts = []
        for su in shifts:
            iu = p + su
            ou = (iu >= -(n - 1)) & (iu <= n - 1)
            for sv in shifts:
                iv = p + sv
                ov = (iv >= -(n - 1)) & (iv <= n - 1)
                ii = np.clip(iu + n - 1, 0, 2 * n - 2)[:, None]
                jj = np.clip(iv + n - 1, 0, 2 * n - 2)[None, :]
                mask = ou[:, None] & ov[None, :]
                parts.append((np.where(mask, self._base[ii, jj], 0),
                              np.where(mask, self._lo[ii, jj], 0),
                              np.where(mask, self._hi1[ii, jj], 0)))
        s = (p[:, None] + p[None, :]) % n
        count = np.zeros(n, complex)
        edges = np.zeros(n, complex)
        for ba, la, ha in parts:
            for bb, lb, hb in parts:
                lo = np.maximum(la, lb)
                hi = np.minimum(ha, hb)
                live = hi > lo
                prod = (ba * np.conj(bb))[live]
                sl = s[live]
                count += _cbincount(sl, prod * (hi - lo)[live], n)
                edges += _cbincount((sl + lo[live]) % n, prod, n)
                edges -= _cbincount((sl + hi[live]) % n, prod, n)
        out = np.empty(len(lags), complex)
        fe = np.fft.fft(edges)
        for i, l in enumerate(lags % n):
            if l == 0:
                out[i] = count.sum()
            else:
                z = np.exp(-2j * math.pi * l / n)
                out[i] = fe[l] / (1 - z)
        return float(n) ** 3 * out

    def diagonals(self):
        """A(n, k, k) for every n and k as an (N, N) array [n mod N, k mod N].

        With s = u + q4 the weights exp(-j theta0 q4) become a convolution
        along u for each v; the remaining sum is a 2-D DFT over (s, v).
        """
        n = self.n
        r = band_bins(n)
        qlo, qhi = int(r[0]), int(r[-1])
        off = np.arange(-(n - 1), n)
        iv = off[None, :]
        q4 = r[:, None]
        inside = (q4 + iv >= qlo) & (q4 + iv <= qhi)
        wgt = np.where(inside, np.exp(-1j * self._theta0 * q4), 0)
        # base has validity built in; convolve along u: s = u + q4
        size = 1 << int(math.ceil(math.log2(4 * n)))
        conv = np.fft.ifft(np.fft.fft(self._base, size, axis=0)
                           * np.fft.fft(wgt, size, axis=0), axis=0)
        # conv row i <-> s = i - (n - 1) + qlo
        s = np.arange(size) - (n - 1) + qlo
        keep = (s >= qlo) & (s <= qhi)
        h = conv[keep]
        sk = s[keep]
        h = h * ((sk[:, None] + iv >= qlo) & (sk[:, None] + iv <= qhi))
        hs = np.zeros((n, 2 * n - 1), complex)
        hs[sk % n] = h
        pad = np.zeros((n, 2 * n), complex)
        pad[:, :2 * n - 1] = hs
        folded = np.roll(pad.reshape(n, 2, n).sum(axis=1), 1, axis=1)
        return np.fft.fft2(folded)

    def plane_row(self, n_idx, d):
        """A(n, k, n + k - d) for one n and all k."""
        f = self._weighted(d)
        off = np.arange(-(self.n - 1), self.n)
        ph = np.exp(-2j * math.pi * off * n_idx / self.n)
        col = ph @ f
        n = self.n
        pad = np.zeros(2 * n, complex)
        pad[:2 * n - 1] = col
        s = np.roll(pad.reshape(2, n).sum(axis=0), 1)
        return np.fft.fft(s)

    def entry(self, n_idx, k, kp):
        """Single coefficient A(n, k, k')."""
        d = n_idx + k - kp
        f = self._weighted(d)
        off = np.arange(-(self.n - 1), self.n)
        a = np.exp(-2j * math.pi * off * n_idx / self.n)
        b = np.exp(-2j * math.pi * off * k / self.n)
        return complex(a @ f @ b)

    def box(self, n_range, k_range, kp_range):
        """Dense array over the index box (inclusive integer ranges)."""
        ns = np.arange(n_range[0], n_range[1] + 1)
        ks = np.arange(k_range[0], k_range[1] + 1)
        kps = np.arange(kp_range[0], kp_range[1] + 1)
        out = np.zeros((len(ns), len(ks), len(kps)), complex)
        nn, kk, qq = np.meshgrid(ns, ks, kps, indexing="ij")
        dd = nn + kk - qq
        for d in np.unique(dd):
            sel = dd == d
            pl = self.plane(int(d))
            out[sel] = pl[nn[sel] % self.n, kk[sel] % self.n]
        return out


_ENGINE_CACHE: OrderedDict = OrderedDict()
_ENGINE_CACHE_SIZE = 12


def get_engine(n_sym, symbol_period, link, omega, t1, t2, t3):
    """Memoized unit-scale engine for one delay signature."""
    key = (int(n_sym), float(symbol_period), link.beta2_si, link.gamma_nl,
           link.length_km, float(omega), float(t1), float(t2), float(t3))
    eng = _ENGINE_CACHE.get(key)
    if eng is None:
        eng = CoefficientEngine(n_sym, symbol_period, link.beta2_si,
                                link.gamma_nl, link.length_km, omega, t1, t2, t3)
        _ENGINE_CACHE[key] = eng
        while len(_ENGINE_CACHE) > _ENGINE_CACHE_SIZE:
            _ENGINE_CACHE.popitem(last=False)
    else:
        _ENGINE_CACHE.move_to_end(key)
    return eng


# ---------------------------------------------------------------------------
# Tensor signatures


@dataclass(frozen=True)
class Signature:
    """Delay signature of one coefficient family: A(.; t1, t2, t3) * scale."""

    omega: float
    t1: float
    t2: float
    t3: float
    scale: float


def signature(plan, kind, c=None, pol=1):
    """Delay signature of tensor ``kind`` for interferer ``c`` seen from ``pol``.

    Delays are re-referenced to the sampling instant of polarization ``pol``
    of the channel of interest; for ``pol=2`` the roles of the two
    polarizations are swapped.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown tensor kind {kind!r}")
    coi = plan.coi
    a = (coi.delay, coi.delay_bar)
    own, other = (0, 1) if pol == 1 else (1, 0)
    ref = a[own]
    if kind in ("S", "S~"):
        if kind == "S":
            return Signature(0.0, 0.0, 0.0, 0.0, 1.0)
        dt = a[other] - ref
        return Signature(0.0, 0.0, dt, dt, 1.0)
    if c is None or c == 0:
        raise ValueError("XPM tensors need an interfering channel c != 0")
    ch = plan.channel(c)
    tau = (ch.delay, ch.delay_bar)
    if kind == "C":
        dt = tau[own] - ref
        return Signature(ch.center_freq, 0.0, dt, dt, 2.0)
    if kind == "C~":
        dt = tau[other] - ref
        return Signature(ch.center_freq, 0.0, dt, dt, 1.0)
    return Signature(ch.center_freq, a[other] - ref, tau[own] - ref,
                     tau[other] - ref, 1.0)


def walkoff_symbols(link, plan, c):
    """Signed walk-off beta2 * Omega * L / T of channel ``c`` in symbols."""
    return link.beta2_si * plan.channel(c).center_freq * link.length_km / plan.symbol_period


def spread_symbols(link, plan):
    """Dispersive spread |beta2| 2 pi B L / T of one pulse in symbols."""
    return (abs(link.beta2_si) * 2 * math.pi * plan.channel_bandwidth
            * link.length_km / plan.symbol_period)


def default_period(link, plan, n_max, c=None, minimum=63):
    """Odd period large enough that the truncation box does not wrap."""
    w = 0.0 if c is None else abs(walkoff_symbols(link, plan, c))
    need = 2 * (w + spread_symbols(link, plan) + 2 * n_max) + 1
    n = max(int(math.ceil(need)), minimum)
    return n + 1 - n % 2


def engine_for(link, plan, kind, c=None, pol=1, n_sym=None, n_max=16):
    """(engine, scale) for one tensor family."""
    sig = signature(plan, kind, c, pol)
    if n_sym is None:
        n_sym = default_period(link, plan, n_max, c)
    eng = get_engine(n_sym, plan.symbol_period, link, sig.omega, sig.t1, sig.t2, sig.t3)
    return eng, sig.scale


def compute_A(n, k, kp, t1, t2, t3, link, plan, omega=0.0, quad=None,
              check=False):
    """Single coefficient A(n, k, k'; t1, t2, t3) in 1/J.

    ``t2`` and ``t3`` are constant delays; the walk-off of a channel at
    angular offset ``omega`` is added internally. With ``check`` the value
    is recomputed on a larger period and a :class:`QuadratureError` is
    raised when the two differ by more than ``quad.tol`` (relative).
    """
    if link.gamma_nl == 0:
        return 0j
    from .params import QuadratureSettings
    quad = quad or QuadratureSettings()
    n_sym = quad.period_symbols
    eng = CoefficientEngine(n_sym, plan.symbol_period, link.beta2_si,
                            link.gamma_nl, link.length_km, omega, t1, t2, t3)
    val = eng.entry(n, k, kp)
    if check:
        big = CoefficientEngine(2 * n_sym + 1, plan.symbol_period, link.beta2_si,
                                link.gamma_nl, link.length_km, omega, t1, t2, t3)
        ref = big.entry(n, k, kp)
        err = abs(ref - val) / max(abs(ref), 1e-300)
        if err > quad.tol:
            raise QuadratureError(f"coefficient not converged: relative change "
                                  f"{err:.3g} > {quad.tol:.3g} when doubling the period")
    return val


# ---------------------------------------------------------------------------
# Sparse tensors


@dataclass
class NliTensor:
    """Truncated sparse coefficient map (n, k, k') -> value in 1/J."""

    kind: str
    channel: int
    index: np.ndarray
    values: np.ndarray
    n_max: int
    provenance_key: bytes
    pol: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = np.asarray(self.index, dtype=np.int32).reshape(-1, 3)
        self.values = np.asarray(self.values, dtype=complex).reshape(-1)
        if len(self.index) != len(self.values):
            raise ValueError("index/value length mismatch")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("tensor has non-finite entries")

    def __len__(self):
        return len(self.values)

    def as_dict(self):
        return {tuple(int(v) for v in i): complex(x)
                for i, x in zip(self.index, self.values)}

    def get(self, n, k, kp, default=0j):
        hit = np.flatnonzero((self.index[:, 0] == n) & (self.index[:, 1] == k)
                             & (self.index[:, 2] == kp))
        return complex(self.values[hit[0]]) if len(hit) else default

    def peak(self):
        return float(np.abs(self.values).max()) if len(self) else 0.0


def provenance_key(link, plan, kind, c, pol, n_max, n_sym, threshold):
    blob = json.dumps({"link": asdict(link), "plan": asdict(plan), "kind": kind,
                       "c": c, "pol": pol, "n_max": n_max, "n_sym": n_sym,
                       "threshold": threshold}, sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).digest()


def xpm_box(link, plan, c, n_max):
    """Index box for an XPM tensor: |n| <= n_max and k, k' around the walk-off."""
    w = walkoff_symbols(link, plan, c)
    lo = int(math.floor(min(0.0, w))) - n_max
    hi = int(math.ceil(max(0.0, w))) + n_max
    return (-n_max, n_max), (lo, hi), (lo, hi)


def _tensor_layout(link, plan, kind, c, n_max, box=None, n_sym=None):
    if box is None:
        if kind in ("S", "S~"):
            box = ((-n_max, n_max),) * 3
        else:
            box = xpm_box(link, plan, c, n_max)
    if n_sym is None:
        span = max(b[1] - b[0] for b in box)
        n_sym = max(default_period(link, plan, n_max, c if kind not in ("S", "S~") else None),
                    2 * span + 1)
        n_sym += 1 - n_sym % 2
    return box, n_sym


def tensor_key(link, plan, kind, c=None, pol=1, n_max=16, n_sym=None, threshold=1e-4):
    """Provenance key that :func:`build_tensor` with the same arguments assigns."""
    _, n_sym = _tensor_layout(link, plan, kind, c, n_max, None, n_sym)
    return provenance_key(link, plan, kind, c, pol, n_max, n_sym, threshold)


def build_tensor(link, plan, kind, c=None, pol=1, n_max=16, box=None,
                 n_sym=None, threshold=1e-4):
    """Evaluate one tensor on its truncation box and drop small entries.

    Parameters
    ----------
    box : tuple of (lo, hi) pairs, optional
        Index ranges for n, k, k'. Defaults to the cube |.| <= n_max for SPM
        and to :func:`xpm_box` for XPM.
    threshold : float
        Entries below ``threshold`` times the tensor peak are dropped.
    """
    box, n_sym = _tensor_layout(link, plan, kind, c, n_max, box, n_sym)
    eng, scale = engine_for(link, plan, kind, c, pol, n_sym, n_max)
    dense = scale * eng.box(*box)
    ns = np.arange(box[0][0], box[0][1] + 1)
    ks = np.arange(box[1][0], box[1][1] + 1)
    kps = np.arange(box[2][0], box[2][1] + 1)
    nn, kk, qq = np.meshgrid(ns, ks, kps, indexing="ij")
    mag = np.abs(dense)
    peak = mag.max() if dense.size else 0.0
    keep = mag >= threshold * peak if peak > 0 else np.zeros(mag.shape, bool)
    idx = np.stack([nn[keep], kk[keep], qq[keep]], axis=1)
    key = provenance_key(link, plan, kind, c, pol, n_max, n_sym, threshold)
    return NliTensor(kind, 0 if c is None else int(c), idx, dense[keep], n_max,
                     key, pol, {"n_sym": n_sym, "box": box})


def periodic_tensor(link, plan, kind, c=None, pol=1, n_sym=64, backend=None):
    """Every entry of one tensor for cyclic blocks of ``n_sym`` symbols.

    Indices are reduced modulo ``n_sym``; contracting with cyclic blocks of
    the same length reproduces the periodic channel exactly.
    """
    eng, scale = engine_for(link, plan, kind, c, pol, n_sym)
    n = eng.n
    nn, kk = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    idx, vals = [], []
    for d in range(n):
        pl = eng.plane(d, backend)
        idx.append(np.stack([nn.ravel(), kk.ravel(), ((nn + kk - d) % n).ravel()], axis=1))
        vals.append(scale * pl.ravel())
    key = provenance_key(link, plan, kind, c, pol, n, n, 0.0)
    return NliTensor(kind, 0 if c is None else int(c), np.concatenate(idx),
                     np.concatenate(vals), n, key, pol, {"n_sym": n, "periodic": True})


def spm_tensors(link, plan, quad=None, n_max=16, pol=1):
    """(S, S~) tensors of the channel of interest."""
    n_sym = None if quad is None else max(quad.period_symbols, 4 * n_max + 1)
    return (build_tensor(link, plan, "S", None, pol, n_max, n_sym=n_sym),
            build_tensor(link, plan, "S~", None, pol, n_max, n_sym=n_sym))


def xpm_tensors(link, plan, c, quad=None, n_max=32, pol=1):
    """(C, C~, D) tensors for interfering channel ``c``."""
    if c == 0:
        raise ValueError("c must differ from the channel of interest")
    n_sym = None if quad is None else quad.period_symbols
    return tuple(build_tensor(link, plan, kind, c, pol, n_max, n_sym=n_sym)
                 for kind in ("C", "C~", "D"))
