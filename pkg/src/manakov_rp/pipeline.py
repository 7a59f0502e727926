"""End-to-end rate evaluation: symbols, channel, estimation, entropies.

Each block has its own seed. Training seeds and test seeds come from
disjoint ranges, so estimation never sees a test block. All receiver models
are scored on the same test blocks, so rate differences between models are
paired.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .inference import (SCALING_GRID, FitResult, ParticleFilterConfig, achievable_rate,
                        estimate_mean_phase, estimate_sigma_xi, fit_model_scalings,
                        fit_whitening, output_entropy, pf_conditional_entropy)
from .models import WhitenFilter, whiten
from .moments import large_dispersion_moments
from .params import QuadratureSettings
from .signal import SymbolBlock, band_limit, bandpass_and_match, synthesize_wdm
from .ssfm import SsfmConfig, receiver_dbp, ssfm_propagate
from .surrogate import RpOperator, rp_channel

MODELS = ("2pCPAN", "MR", "PD", "memoryless")
TEST_SEED_OFFSET = 1_000_000
CSV_SCHEMA_VERSION = 1


class StageError(RuntimeError):
    """Failure in one pipeline stage, with the stage name and context."""

    def __init__(self, stage, context, exc):
        super().__init__(f"[{stage}] {context}: {type(exc).__name__}: {exc}")
        self.stage = stage


@dataclass
class RunSettings:
    """Monte-Carlo and receiver settings for one rate evaluation."""

    n_sym: int = 1024
    n_train: int = 6
    n_test: int = 20
    n_particles: int = 256
    resample_threshold: float = 0.5
    memory: int = 4
    seed: int = 0
    channel: str = "rp-surrogate"
    ssfm_step_km: float = 0.2
    grid: tuple = SCALING_GRID
    whitening: bool = True
    nodes_per_radian: float = 0.5
    backend: str | None = None

    def __post_init__(self):
        if self.channel not in ("rp-surrogate", "ssfm"):
            raise ValueError(f"unknown channel backend {self.channel!r}")
        if self.n_train < 1 or self.n_test < 2:
            raise ValueError("need at least one training and two test blocks")

    @property
    def pf(self):
        return ParticleFilterConfig(self.n_particles, self.resample_threshold)

    def train_seeds(self):
        return [self.seed + i for i in range(self.n_train)]

    def test_seeds(self):
        return [self.seed + TEST_SEED_OFFSET + i for i in range(self.n_test)]


def config_hash(*objs):
    blob = json.dumps([asdict(o) if hasattr(o, "__dataclass_fields__") else o for o in objs],
                      sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Channel simulation


def _draw(plan, n_sym, rng):
    """Gaussian symbols for every channel of ``plan``."""
    out = {}
    for ch in plan.channels:
        z = rng.standard_normal((4, n_sym))
        out[ch.index] = SymbolBlock(math.sqrt(ch.energy / 2) * (z[0] + 1j * z[1]),
                                    math.sqrt(ch.energy_bar / 2) * (z[2] + 1j * z[3]))
    return out


class ChannelSimulator:
    """Produces (x, y) block pairs of the channel of interest."""

    def __init__(self, link, layout, power_w, coi_subcarrier, settings):
        self.link = link
        self.layout = layout
        self.settings = settings
        self.coi_subcarrier = coi_subcarrier
        self.plan = layout.plan(power_w, coi_subcarrier)
        self.full_plan = layout.plan(power_w, coi_subcarrier, include_coi_channel=True)
        self._op = None

    @property
    def operator(self):
        if self._op is None:
            q = QuadratureSettings(nodes_per_radian=self.settings.nodes_per_radian)
            self._op = RpOperator(self.link, self.plan, self.settings.n_sym, "dbp", q,
                                  backend=self.settings.backend)
        return self._op

    def blocks(self, seeds):
        """Arrays (x1, x2, y1, y2), each (len(seeds), M)."""
        xs, ys = [], []
        for s in seeds:
            rng = np.random.default_rng(s)
            sym = _draw(self.full_plan, self.settings.n_sym, rng)
            x = sym[0]
            if self.settings.channel == "rp-surrogate":
                inter = {c.index: (sym[c.index].pol1, sym[c.index].pol2)
                         for c in self.plan.interferers}
                d = self.operator.decompose(x.pol1, x.pol2, inter)
                y = rp_channel(x.pol1, x.pol2, d, self.link, rng)
            else:
                y = self._ssfm(sym, s)
            xs.append((x.pol1, x.pol2))
            ys.append(y)
        x = np.array(xs)
        y = np.array(ys)
        return x[:, 0], x[:, 1], y[:, 0], y[:, 1]

    def _ssfm(self, sym, seed):
        plan = self.full_plan
        T = plan.symbol_period
        freqs = [ch.center_freq for ch in plan.channels]
        occupied = (max(freqs) - min(freqs)) / (2 * math.pi) + plan.channel_bandwidth
        sps = int(math.ceil(2 * occupied * T))
        sig = synthesize_wdm(plan, sym, sps / T)
        cfg = SsfmConfig(self.settings.ssfm_step_km, "per-step", seed)
        out = ssfm_propagate(sig, self.link, cfg)
        # the plan frame puts the COI subcarrier at 0 Hz; channel 0 sits at -f(0, s)
        c0 = -2 * math.pi * self.layout.frequency(0, self.coi_subcarrier)
        out = band_limit(out, c0, self.layout.channel_bandwidth)
        out = receiver_dbp(out, self.link, SsfmConfig(self.settings.ssfm_step_km, "off"))
        blk = bandpass_and_match(out, self.plan, 0, n_sym=self.settings.n_sym)
        return blk.pol1, blk.pol2


# ---------------------------------------------------------------------------
# Rate evaluation


@dataclass
class ModelOutcome:
    model: str
    rate: object
    fit: object


@dataclass
class PointResult:
    """Rates of every requested model at one operating point."""

    power_w: float
    subcarrier: int
    energy: float
    sigma2: float
    mean_phase: tuple
    outcomes: dict = field(default_factory=dict)
    elapsed_s: float = 0.0

    @property
    def power_dbm(self):
        return 10 * math.log10(self.power_w / 1e-3)


def base_autocovariance(link, plan, lag_max):
    """Triangular r_Theta shape that the fitted scalings multiply."""
    _, r = large_dispersion_moments(plan, link, lag_max)
    return {"r_theta": r}


def evaluate_point(link, layout, power_w, subcarrier, settings, models=MODELS):
    """Estimate on training blocks and score every model on test blocks."""
    t0 = time.time()
    ctx = f"P={10 * math.log10(power_w / 1e-3):.2f} dBm, subcarrier {subcarrier}"
    try:
        sim = ChannelSimulator(link, layout, power_w, subcarrier, settings)
        tr = sim.blocks(settings.train_seeds())
        te = sim.blocks(settings.test_seeds())
    except Exception as exc:
        raise StageError("channel", ctx, exc) from exc
    coi = sim.plan.coi
    try:
        ph1 = estimate_mean_phase(tr[0], tr[2])
        ph2 = estimate_mean_phase(tr[1], tr[3])
        rot = (np.exp(-1j * ph1), np.exp(-1j * ph2))
        tr = (tr[0], tr[1], tr[2] * rot[0], tr[3] * rot[1])
        te = (te[0], te[1], te[2] * rot[0], te[3] * rot[1])
        sigma2 = estimate_sigma_xi(*tr)
        if sigma2 <= 0:
            raise ValueError("estimated noise variance is zero")
    except Exception as exc:
        raise StageError("estimation", ctx, exc) from exc
    res = PointResult(power_w, subcarrier, coi.energy, sigma2, (ph1, ph2))
    base = base_autocovariance(link, sim.plan, settings.memory) \
        if sim.plan.interferers else {"r_theta": np.zeros(settings.memory + 1)}
    fits = {}
    for name in models:
        try:
            fit = _fit(name, tr, base, sigma2, settings, fits, coi)
            fits[name] = fit
            res.outcomes[name] = ModelOutcome(name, _score(te, coi, fit, sigma2, settings), fit)
        except Exception as exc:
            raise StageError(f"model {name}", ctx, exc) from exc
    res.elapsed_s = time.time() - t0
    return res


def _fit(name, tr, base, sigma2, settings, fits, coi):
    common = dict(config=settings.pf, grid=settings.grid, mu=settings.memory,
                  seed=settings.seed + 7, backend=settings.backend)
    if name == "memoryless":
        fit = fit_model_scalings(*tr, "memoryless", base, sigma2, fit_filter=False, **common)
        # best memoryless Gaussian: the variance absorbs the untracked rotations
        fit.sigma2 = residual_variance(*tr)
        return fit
    if name == "PD":
        return fit_model_scalings(*tr, "PD", base, sigma2, fit_filter=False, **common)
    if name in ("MR", "2pCPAN"):
        mr = fits.get("MR")
        if mr is None:
            mr = fit_model_scalings(*tr, "MR", base, sigma2, fit_filter=False, **common)
            fits["MR"] = mr
        if name == "MR":
            return mr
        if not settings.whitening:
            return mr
        h2 = fit_whitening(*tr, mr.model, sigma2, coi.energy, coi.energy_bar, settings.pf,
                           settings.seed + 7, settings.backend)
        return FitResult("2pCPAN", mr.model, mr.scalings, h2, WhitenFilter.symmetric3(h2),
                         mr.objective, mr.objective_se, list(mr.flags))
    raise ValueError(f"unknown model {name!r}")


def residual_variance(x1, x2, y1, y2):
    """Per-component variance of y - x, pooled over both polarizations."""
    return float(0.5 * np.mean(np.abs(y1 - x1) ** 2 + np.abs(y2 - x2) ** 2))


def _score(te, coi, fit, sigma2, settings):
    x1, x2, y1, y2 = te
    if fit.sigma2 is not None:
        sigma2 = fit.sigma2
    a1, a2 = whiten(y1, y2, fit.filt)
    h_out = output_entropy(a1, a2, coi.energy, fit.filt, sigma2, coi.energy_bar)
    pf = pf_conditional_entropy(a1, a2, x1, x2, fit.model, fit.filt, sigma2, settings.pf,
                                np.random.default_rng(settings.seed + 11), settings.backend)
    return achievable_rate(h_out, pf.h_cond, a1.shape[-1])


def awgn_rate(energy, sigma2):
    return math.log2(1 + energy / sigma2)


# ---------------------------------------------------------------------------
# CSV output

RATE_COLUMNS = ("power_dBm", "subcarrier", "model", "rate_bits", "se_bits", "h_out",
                "h_cond", "K", "M", "N", "seed", "s1", "s2", "h2", "sigma2", "config_hash",
                "schema")


def rate_rows(result, settings, chash):
    rows = []
    for name, out in result.outcomes.items():
        r, f = out.rate, out.fit
        rows.append({"power_dBm": repr(round(result.power_dbm, 6)),
                     "subcarrier": result.subcarrier, "model": name,
                     "rate_bits": repr(r.rate), "se_bits": repr(r.std_error),
                     "h_out": repr(r.h_out), "h_cond": repr(r.h_cond),
                     "K": settings.n_particles, "M": settings.n_sym, "N": r.runs,
                     "seed": settings.seed, "s1": repr(float(f.scalings[0])),
                     "s2": repr(float(f.scalings[1])), "h2": repr(float(f.h2)),
                     "sigma2": repr(f.sigma2 if f.sigma2 is not None else result.sigma2), "config_hash": chash,
                     "schema": CSV_SCHEMA_VERSION})
    return rows


def write_rates(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RATE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def read_rates(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
