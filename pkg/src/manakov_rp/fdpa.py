"""Frequency-dependent power allocation over subcarriers."""
from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression

from .params import dbm_to_watt, watt_to_dbm


@dataclass
class RateCurve:
    """Rate of one subcarrier versus its own power (mW).

    Interpolation is linear in dBm between grid points, linear in mW from
    (0, 0) up to the first point and flat beyond the last one.
    """

    subcarrier: int
    powers_mw: np.ndarray
    rates: np.ndarray
    std_errors: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.powers_mw, float)
        order = np.argsort(p)
        self.powers_mw = p[order]
        self.rates = np.asarray(self.rates, float)[order]
        if self.std_errors is not None:
            self.std_errors = np.asarray(self.std_errors, float)[order]
        if len(p) < 2:
            raise ValueError("a rate curve needs at least two points")
        if np.any(self.powers_mw <= 0) or np.any(np.diff(self.powers_mw) == 0):
            raise ValueError("curve powers must be positive and distinct")

    @property
    def powers_dbm(self):
        return 10 * np.log10(self.powers_mw)

    def __call__(self, p_mw):
        p = np.asarray(p_mw, float)
        out = np.interp(10 * np.log10(np.maximum(p, 1e-300)), self.powers_dbm, self.rates)
        low = p < self.powers_mw[0]
        out = np.where(low, self.rates[0] * np.clip(p, 0, None) / self.powers_mw[0], out)
        return out if out.ndim else float(out)


def total_rate(curves, powers):
    return float(sum(c(p) for c, p in zip(curves, powers)))


def _marginals(curve, quantum, n_quanta):
    q = np.arange(n_quanta + 1) * quantum
    return np.diff(curve(q))


def greedy_allocate(curves, total_power_mw, n_quanta=2000):
    """Quantized greedy allocation, quantum = P / ``n_quanta``.

    Each quantum goes to the largest marginal rate, ties to the lowest
    subcarrier index. Marginals are made non-increasing by isotonic
    regression first, so the result is optimal on the quantum grid for
    concave curves.
    """
    quantum = total_power_mw / n_quanta
    marg = np.array([isotonic_regression(_marginals(c, quantum, n_quanta), increasing=False).x
                     for c in curves])
    return _greedy_counts(marg, n_quanta) * quantum


def fdpa_allocate(curves, total_power_mw, n_quanta=2000):
    """Maximize sum_s rate_s(P_s) subject to sum_s P_s = total power.

    Runs :func:`greedy_allocate` and returns the uniform split instead
    whenever that scores at least as high on the unsmoothed curves.
    """
    if not total_power_mw > 0:
        raise ValueError("total power must be positive")
    s = len(curves)
    if s == 0:
        raise ValueError("no curves")
    if total_power_mw / s < min(c.powers_mw[0] for c in curves):
        warnings.warn("total power below the curve grid; allocation uses the "
                      "linear extension towards zero power", stacklevel=2)
    powers = greedy_allocate(curves, total_power_mw, n_quanta)
    powers[np.argmax(powers)] += total_power_mw - powers.sum()
    uniform = np.full(s, total_power_mw / s)
    if total_rate(curves, uniform) >= total_rate(curves, powers):
        return uniform
    return powers


def _greedy_counts(marg, n_quanta):
    s, q = marg.shape
    # rank every (subcarrier, quantum) marginal: value desc, subcarrier asc, quantum asc
    val = marg.ravel()
    sub = np.repeat(np.arange(s), q)
    pos = np.tile(np.arange(q), s)
    order = np.lexsort((pos, sub, -val))
    take = order[:n_quanta]
    return np.bincount(sub[take], minlength=s).astype(float)


def exhaustive_allocate(curves, total_power_mw, n_quanta=20):
    """Best allocation over all quantized splits (small instances only)."""
    s = len(curves)
    quantum = total_power_mw / n_quanta
    best, best_val = None, -np.inf
    for cut in itertools.combinations(range(n_quanta + s - 1), s - 1):
        bounds = (-1,) + cut + (n_quanta + s - 1,)
        counts = np.array([bounds[i + 1] - bounds[i] - 1 for i in range(s)], float)
        val = total_rate(curves, counts * quantum)
        if val > best_val + 1e-15:
            best, best_val = counts * quantum, val
    return best


def build_rate_curves(n_subcarriers, powers_dbm, evaluate):
    """Per-subcarrier rate curves at uniform allocation.

    ``evaluate(channel_power_w, subcarrier)`` returns a RateEstimate for
    the given subcarrier when every subcarrier carries 1/S of the channel
    power. The curve abscissa is the subcarrier power.
    """
    curves = []
    for s in range(n_subcarriers):
        p_sc, r, se = [], [], []
        for pdbm in powers_dbm:
            try:
                est = evaluate(float(dbm_to_watt(pdbm)), s)
            except Exception as exc:
                raise RuntimeError(f"subcarrier {s}, {pdbm} dBm: {exc}") from exc
            p_sc.append(float(dbm_to_watt(pdbm)) * 1e3 / n_subcarriers)
            r.append(est.rate)
            se.append(est.std_error)
        curves.append(RateCurve(s, p_sc, r, se))
    return curves


def iterate_allocation(build_curves, total_power_mw, n_subcarriers, rounds=1,
                       n_quanta=2000):
    """Alternate curve simulation and allocation.

    ``build_curves(weights)`` returns the curves measured when subcarrier
    powers are proportional to ``weights`` (summing to S). Round 0 is the
    uniform split.
    """
    powers = np.full(n_subcarriers, total_power_mw / n_subcarriers)
    for _ in range(rounds):
        weights = powers / powers.sum() * n_subcarriers
        powers = fdpa_allocate(build_curves(weights), total_power_mw, n_quanta)
    return powers


def write_curves(curves, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subcarrier", "power_mw", "power_dbm", "rate_bits", "se_bits"])
        for c in curves:
            se = c.std_errors if c.std_errors is not None else np.full(len(c.rates), np.nan)
            for p, r, e in zip(c.powers_mw, c.rates, se):
                w.writerow([c.subcarrier, repr(float(p)), repr(float(watt_to_dbm(p * 1e-3))),
                            repr(float(r)), repr(float(e))])


def read_curves(path):
    rows = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(int(row["subcarrier"]), []).append(
                (float(row["power_mw"]), float(row["rate_bits"]), float(row["se_bits"])))
    out = []
    for s in sorted(rows):
        p, r, e = zip(*rows[s])
        out.append(RateCurve(s, p, r, None if all(math.isnan(v) for v in e) else e))
    return out


def write_allocation(powers, path, total_power_mw):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subcarrier", "power_mw", "power_dbm", "total_power_mw"])
        for s, p in enumerate(powers):
            w.writerow([s, repr(float(p)),
                        repr(float(watt_to_dbm(p * 1e-3))) if p > 0 else "-inf",
                        repr(float(total_power_mw))])
