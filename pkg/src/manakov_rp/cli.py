"""Command-line entry point ``manakov-rp``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cache import CacheError, cache_load, cache_path, cached_tensor, dump_csv
from .config import ConfigError, ExperimentConfig, desk_config, load_config
from .fdpa import (RateCurve, fdpa_allocate, read_curves, total_rate, write_allocation,
                   write_curves)
from .moments import analytic_moments, empirical_moments
from .nli import KINDS, build_tensor, engine_for, tensor_key, walkoff_symbols
from .params import WdmLayout, _trim_delays, dbm_to_watt, reference_link
from .pipeline import (MODELS, ChannelSimulator, StageError, _draw, config_hash,
                       evaluate_point, rate_rows, write_rates)
from .surrogate import RpOperator

log = logging.getLogger("manakov_rp")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    p = _Parser(prog="manakov-rp", description="Dual-polarization RP channel models, "
                "achievable rates and power allocation.")
    p.add_argument("--config", help="INI experiment file (desk defaults when omitted)")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--outdir", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    co = sub.add_parser("coeffs", help="build or dump coefficient tensors")
    co_sub = co.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name in ("build", "dump"):
        q = co_sub.add_parser(name)
        q.add_argument("--kind", choices=KINDS, action="append",
                       help="tensor kind (repeatable; default all)")
        q.add_argument("--channel", type=int, action="append",
                       help="interfering channel for XPM kinds (default all)")
        q.add_argument("--pol", type=int, choices=(1, 2), default=1)
        q.add_argument("--n-max", type=int, default=8)
        q.add_argument("--power-dbm", type=float, default=-6.0)

    st = sub.add_parser("stats", help="analytic (and optionally empirical) NLI moments")
    st.add_argument("--power-dbm", type=float, default=-6.0)
    st.add_argument("--lag-max", type=int)
    st.add_argument("--empirical", type=int, metavar="BLOCKS", default=0,
                    help="also estimate from this many surrogate blocks")

    si = sub.add_parser("simulate", help="write transmitted/received blocks (.npz)")
    si.add_argument("--power-dbm", type=float, default=-6.0)
    si.add_argument("--blocks", type=int, default=4)
    si.add_argument("--subcarrier", type=int, default=0)

    ra = sub.add_parser("rates", help="rate sweep over the configured powers")
    ra.add_argument("--powers", type=float, nargs="+", help="launch powers in dBm")
    ra.add_argument("--models", nargs="+", choices=MODELS)
    ra.add_argument("--subcarrier", type=int, action="append")

    fd = sub.add_parser("fdpa", help="power allocation from a curves CSV")
    fd.add_argument("--curves", required=True)
    fd.add_argument("--total-power-dbm", type=float, required=True,
                    help="total channel power (all subcarriers)")
    fd.add_argument("--quanta", type=int, default=2000)

    rp = sub.add_parser("reproduce", help="figure data series")
    rp.add_argument("figure", choices=FIGURES)
    rp.add_argument("--scale", choices=("desk", "full"), default="desk")
    return p


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(f"manakov-rp: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else desk_config()
        if args.seed is not None:
            cfg.settings = replace(cfg.settings, seed=args.seed)
        if args.outdir:
            cfg.output_dir = args.outdir
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except ConfigError as exc:
        print(f"manakov-rp: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        out = COMMANDS[args.cmd](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"manakov-rp: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, CacheError, RuntimeError, ValueError, OSError) as exc:
        print(f"manakov-rp: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in out or ():
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Subcommands


def _plan(cfg, power_dbm, subcarrier=0, full=False):
    return cfg.layout.plan(float(dbm_to_watt(power_dbm)), subcarrier, include_coi_channel=full)


def _tensor_jobs(cfg, args):
    plan = _plan(cfg, args.power_dbm)
    kinds = args.kind or list(KINDS)
    chans = args.channel or [c.index for c in plan.interferers]
    for kind in kinds:
        for c in ([None] if kind in ("S", "S~") else chans):
            if c is not None and c not in [ch.index for ch in plan.interferers]:
                raise ConfigError(f"channel {c} is not an interferer of this layout")
            yield plan, kind, c


def cmd_coeffs(cfg, args):
    paths = []
    for plan, kind, c in _tensor_jobs(cfg, args):
        build = lambda: build_tensor(cfg.link, plan, kind, c, args.pol, args.n_max)  # noqa: E731
        key = tensor_key(cfg.link, plan, kind, c, args.pol, args.n_max)
        if args.action == "build":
            t = cached_tensor(cfg.cache_dir, key, build)
            paths.append(str(cache_path(cfg.cache_dir, key)))
            log.info("%s c=%s: %d entries", kind, c, len(t))
        else:
            try:
                t = cache_load(key, cfg.cache_dir)
            except FileNotFoundError:
                t = cached_tensor(cfg.cache_dir, key, build)
            name = f"tensor_{kind.replace('~', 't')}_c{0 if c is None else c}_p{args.pol}.csv"
            p = Path(cfg.output_dir) / name
            dump_csv(t, p)
            paths.append(str(p))
    return paths


def cmd_stats(cfg, args):
    plan = _plan(cfg, args.power_dbm)
    lag = args.lag_max or cfg.lag_max
    paths = []
    m = analytic_moments(cfg.link, plan, lag_max=lag)
    p = Path(cfg.output_dir) / "moments_analytic.csv"
    m.to_csv(p)
    paths.append(str(p))
    if args.empirical:
        op = RpOperator(cfg.link, plan, cfg.settings.n_sym, "dbp")
        full = _plan(cfg, args.power_dbm, full=True)
        decs = []
        for s in cfg.settings.train_seeds()[0] + np.arange(args.empirical):
            sym = _draw(full, cfg.settings.n_sym, np.random.default_rng(int(s)))
            inter = {c.index: (sym[c.index].pol1, sym[c.index].pol2) for c in plan.interferers}
            decs.append(op.decompose(sym[0].pol1, sym[0].pol2, inter))
        e = empirical_moments(decs, lag_max=lag)
        p = Path(cfg.output_dir) / "moments_empirical.csv"
        e.to_csv(p)
        paths.append(str(p))
    return paths


def cmd_simulate(cfg, args):
    sim = ChannelSimulator(cfg.link, cfg.layout, float(dbm_to_watt(args.power_dbm)),
                           args.subcarrier, cfg.settings)
    seeds = [cfg.settings.seed + i for i in range(args.blocks)]
    try:
        x1, x2, y1, y2 = sim.blocks(seeds)
    except Exception as exc:
        raise StageError("channel", f"P={args.power_dbm} dBm", exc) from exc
    p = Path(cfg.output_dir) / "blocks.npz"
    np.savez(p, x1=x1, x2=x2, y1=y1, y2=y2, seeds=np.array(seeds),
             config_hash=config_hash(cfg.link, cfg.layout, cfg.settings))
    return [str(p)]


def _point(job):
    link, layout, settings, pdbm, s, models = job
    return evaluate_point(link, layout, float(dbm_to_watt(pdbm)), s, settings, models)


def run_sweep(cfg, powers, subcarriers=(0,), models=None, threads=1, layout=None):
    """Evaluate every (power, subcarrier) point; results in job order."""
    layout = layout or cfg.layout
    models = tuple(models or cfg.models)
    jobs = [(cfg.link, layout, cfg.settings, p, s, models) for s in subcarriers for p in powers]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(_point, jobs))
    return [_point(j) for j in jobs]


def _write_sweep(cfg, results, name, layout=None):
    chash = config_hash(cfg.link, layout or cfg.layout, cfg.settings)
    rows = [r for res in results for r in rate_rows(res, cfg.settings, chash)]
    p = Path(cfg.output_dir) / f"{name}_{chash}.csv"
    write_rates(rows, p)
    return p


def cmd_rates(cfg, args):
    powers = args.powers or cfg.powers_dbm
    subs = args.subcarrier or [0]
    for s in subs:
        if not 0 <= s < cfg.layout.subcarriers:
            raise ConfigError(f"subcarrier {s} out of range")
    res = run_sweep(cfg, powers, subs, args.models, args.threads)
    return [str(_write_sweep(cfg, res, "rates"))]


def cmd_fdpa(cfg, args):
    curves = read_curves(args.curves)
    total = float(dbm_to_watt(args.total_power_dbm)) * 1e3
    powers = fdpa_allocate(curves, total, args.quanta)
    p = Path(cfg.output_dir) / "allocation.csv"
    write_allocation(powers, p, total)
    log.info("allocated %.6g bits vs uniform %.6g", total_rate(curves, powers),
             total_rate(curves, np.full(len(curves), total / len(curves))))
    return [str(p)]


# ---------------------------------------------------------------------------
# Figure reproduction


def _scale_config(cfg, scale):
    if scale == "desk":
        return cfg
    warnings.warn("full scale runs for many hours (overnight job)", stacklevel=2)
    log.warning("full scale: 5 channels, 1000 km, split-step channel, N=120")
    return ExperimentConfig(reference_link(1000.0), WdmLayout(5, delays=_trim_delays("auto", 1, 5)),
                            replace(cfg.settings, channel="ssfm", n_train=24, n_test=120,
                                    n_sym=6825, ssfm_step_km=0.1),
                            (-9.0, -8.0, -7.0, -6.0, -5.0, -4.0, -3.0), MODELS, cfg.lag_max,
                            cfg.output_dir, cfg.cache_dir)


def _layout_like(cfg, subcarriers, delays):
    lay = cfg.layout
    return WdmLayout(lay.n_channels, lay.channel_spacing, lay.channel_bandwidth, subcarriers,
                     _trim_delays(delays, subcarriers, lay.n_channels))


def fig_spm_table(link, plan, n_max=4):
    """S tensor on the full cube |.| <= n_max (nothing dropped)."""
    return build_tensor(link, plan, "S", None, 1, n_max, threshold=0.0)


def _signed(i, n):
    return (i + n // 2) % n - n // 2


def fig_xpm_summary(link, plan, floor=0.01):
    """n = 0 slice of C for every interferer.

    Returns ``(c, peak, extent, walkoff, entries)``: the extent counts the k
    whose row reaches 10% of the peak, and ``entries`` lists (k, k', |C|)
    for every coefficient above ``floor`` times the peak.
    """
    out = []
    for ch in plan.interferers:
        eng, scale = engine_for(link, plan, "C", ch.index, 1)
        n = eng.n
        sl = np.abs(scale * eng.rows(0))  # [d, k] -> C(0, k, k - d)
        peak = float(sl.max())
        ks = np.nonzero((sl >= 0.1 * peak).any(axis=0))[0]
        ks = (ks + n // 2) % n  # unwrap around the walk-off centre
        d, k = np.nonzero(sl >= floor * peak)
        ks_signed = _signed(k, n)
        entries = [(int(a), int(_signed(a - b, n)), float(sl[b, a0]))
                   for a, b, a0 in zip(ks_signed, d, k)]
        out.append((ch.index, peak, int(ks.max() - ks.min() + 1),
                    walkoff_symbols(link, plan, ch.index), entries))
    return out


def cmd_reproduce(cfg, args):
    cfg = _scale_config(cfg, args.scale)
    out = Path(cfg.output_dir)
    fig = args.figure
    if fig == "fig1":
        link = reference_link(1000.0)
        plan = WdmLayout(cfg.layout.n_channels).plan(float(dbm_to_watt(-6.0)))
        t = fig_spm_table(link, plan, 4)
        p = out / f"fig1_{args.scale}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "k", "kp", "abs_S", "dominant"])
            for (n, k, kp), v in zip(t.index, t.values):
                w.writerow([int(n), int(k), int(kp), repr(float(abs(v))), int(kp == n + k)])
        return [str(p)]
    if fig == "fig2":
        link = cfg.link if args.scale == "desk" else reference_link(1000.0)
        plan = WdmLayout(5).plan(float(dbm_to_watt(-6.0)))
        p = out / f"fig2_{args.scale}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["c", "n", "k", "kp", "abs_C", "peak", "extent_10pct", "walkoff_symbols"])
            for c, peak, ext, wo, entries in fig_xpm_summary(link, plan):
                for k, kp, v in entries:
                    w.writerow([c, 0, k, kp, repr(v), repr(peak), ext, repr(float(wo))])
        return [str(p)]
    if fig == "fig3":
        lay = _layout_like(cfg, 4, "zero")
        res = run_sweep(cfg, cfg.powers_dbm, range(4), ("2pCPAN",), args.threads, lay)
        curves = curves_from_results(res, 4, "2pCPAN")
        p = out / f"fig3_{args.scale}.csv"
        write_curves(curves, p)
        return [str(p)]
    if fig in ("fig4", "fig5"):
        subc = 4 if fig == "fig4" else 6
        paths = []
        lay1 = _layout_like(cfg, 1, "auto")
        res = run_sweep(cfg, cfg.powers_dbm, (0,), None, args.threads, lay1)
        paths.append(str(_write_sweep(cfg, res, f"{fig}_sc_{args.scale}", lay1)))
        lay_s = _layout_like(cfg, subc, "auto")
        res = run_sweep(cfg, cfg.powers_dbm, range(subc), ("2pCPAN",), args.threads, lay_s)
        paths.append(str(_write_sweep(cfg, res, f"{fig}_{subc}sc_{args.scale}", lay_s)))
        curves = curves_from_results(res, subc, "2pCPAN")
        cp = out / f"{fig}_{subc}sc_curves_{args.scale}.csv"
        write_curves(curves, cp)
        paths.append(str(cp))
        return paths
    raise ConfigError(f"unknown figure {fig!r}")


def curves_from_results(results, n_sub, model):
    """Per-subcarrier RateCurves (abscissa: subcarrier power in mW)."""
    by = {}
    for r in results:
        est = r.outcomes[model].rate
        by.setdefault(r.subcarrier, []).append((r.power_w * 1e3 / n_sub, est.rate,
                                                 est.std_error))
    out = []
    for s in sorted(by):
        p, v, e = zip(*by[s])
        out.append(RateCurve(s, p, v, e))
    return out


COMMANDS = {"coeffs": cmd_coeffs, "stats": cmd_stats, "simulate": cmd_simulate,
            "rates": cmd_rates, "fdpa": cmd_fdpa, "reproduce": cmd_reproduce}


if __name__ == "__main__":
    sys.exit(main())
