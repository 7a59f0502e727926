"""Time the numba kernels against their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

Each case runs once untimed (so numba compilation is excluded), then
``repeat`` times; the best wall time is reported together with the largest
difference (relative to the peak output) between the two backends' outputs.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from manakov_rp._accel import HAVE_NUMBA
from manakov_rp.inference import ParticleFilterConfig, pf_conditional_entropy
from manakov_rp.kernels import contract_sparse, kerr_mix
from manakov_rp.models import MrParams, WhitenFilter
from manakov_rp.nli import CoefficientEngine
from manakov_rp.params import desk_layout, reference_link
from manakov_rp.surrogate import RpOperator


def _cgauss(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def cases(rng):
    link = reference_link(250.0)
    plan = desk_layout().plan(1e-3)

    eng = CoefficientEngine(255, plan.symbol_period, link.beta2_si, link.gamma_nl,
                            link.length_km, 0.0, 0.0, 0.0, 0.0)
    yield "coefficient plane (N=255)", lambda be: eng.plane(3, be)

    e = 20000
    idx = rng.integers(-16, 17, size=(e, 3))
    vals = _cgauss(rng, e)
    a, b, c = (_cgauss(rng, 8, 1024) for _ in range(3))
    yield "contract_sparse (20k entries, 8x1024)", lambda be: contract_sparse(idx, vals, a, b, c, be)

    u1, u2, kk = (_cgauss(rng, 4, 1 << 15) for _ in range(3))
    i1, i2 = (rng.random((4, 1 << 15)) for _ in range(2))
    yield "kerr_mix (4x32768)", lambda be: np.stack(kerr_mix(u1, u2, i1, i2, kk, 0.5, be))

    op = {be: RpOperator(link, plan, 256, "dbp", backend=be) for be in ("numba", "numpy")}
    x1, x2 = _cgauss(rng, 2, 256) * 1e-7, _cgauss(rng, 2, 256) * 1e-7
    inter = {ch.index: (_cgauss(rng, 2, 256) * 1e-7, _cgauss(rng, 2, 256) * 1e-7)
             for ch in plan.interferers}
    yield "RP surrogate decompose (2x256)", \
        lambda be: op[be].decompose(x1, x2, inter).theta

    mr = MrParams.from_autocovariance(np.array([1.0, 0.99, 0.97, 0.95, 0.93]) * 2e-3, 4)
    y1, y2 = _cgauss(rng, 2, 1024), _cgauss(rng, 2, 1024)
    f = WhitenFilter.symmetric3(0.1)
    yield "particle filter (K=256, 2x1024)", lambda be: pf_conditional_entropy(
        y1[:, 1:-1], y2[:, 1:-1], y1, y2, mr, f, 0.05, ParticleFilterConfig(256),
        np.random.default_rng(0), be).h_cond


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path can run", file=sys.stderr)
        return 1
    rows = []
    print(f"{'case':42s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s} {'rel diff':>10s}")
    for name, fn in cases(np.random.default_rng(1)):
        t_nb, o_nb = best_time(lambda: fn("numba"), args.repeat)
        t_np, o_np = best_time(lambda: fn("numpy"), args.repeat)
        ref = np.asarray(o_np)
        diff = float(np.max(np.abs(np.asarray(o_nb) - ref)) / max(np.max(np.abs(ref)), 1e-300))
        rows.append((name, t_nb, t_np, t_np / t_nb, diff))
        print(f"{name:42s} {t_nb:10.4g} {t_np:10.4g} {t_np / t_nb:8.2f} {diff:10.3g}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "numba_s", "numpy_s", "speedup", "max_rel_diff"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
