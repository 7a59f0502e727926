"""Experiment configuration files (INI: ``key = value`` under sections).

Schema::

    [link]        length_km, alpha_db_per_km, beta2, gamma_nl, eta_phonon,
                  wavelength_nm
    [layout]      n_channels, channel_spacing_ghz, channel_bandwidth_ghz,
                  subcarriers, delays (preset name or "auto"/"zero"),
                  subcarrier_weights (comma list)
    [simulation]  channel (rp-surrogate | ssfm), n_sym, n_train, n_test, seed,
                  ssfm_step_km, powers_dbm (comma list)
    [receiver]    models (comma list), n_particles, resample_threshold,
                  memory, whitening (yes/no)
    [statistics]  lag_max
    [output]      directory, cache_dir

Every key is optional; missing keys take the desk-scale defaults.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .params import WdmLayout, _trim_delays, reference_link
from .pipeline import MODELS, RunSettings


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


SCHEMA = {
    "link": {"length_km", "alpha_db_per_km", "beta2", "gamma_nl", "eta_phonon",
             "wavelength_nm"},
    "layout": {"n_channels", "channel_spacing_ghz", "channel_bandwidth_ghz", "subcarriers",
               "delays", "subcarrier_weights"},
    "simulation": {"channel", "n_sym", "n_train", "n_test", "seed", "ssfm_step_km",
                   "powers_dbm"},
    "receiver": {"models", "n_particles", "resample_threshold", "memory", "whitening"},
    "statistics": {"lag_max"},
    "output": {"directory", "cache_dir"},
}


@dataclass
class ExperimentConfig:
    link: object
    layout: WdmLayout
    settings: RunSettings
    powers_dbm: tuple = (-4.0, -2.0, 0.0, 2.0, 4.0)
    models: tuple = MODELS
    lag_max: int = 8
    output_dir: str = "results"
    cache_dir: str = ".nli-cache"
    extra: dict = field(default_factory=dict)


def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def desk_config(**overrides):
    """Desk-scale defaults: 3 channels, 250 km, M=1024, N=20."""
    cfg = ExperimentConfig(reference_link(250.0), WdmLayout(3, delays=_trim_delays("auto", 1, 3)),
                           RunSettings())
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def load_config(path=None, text=None):
    """Parse an INI file (or string) into an :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser()
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            with open(path) as fh:
                cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        bad = set(cp[sec]) - SCHEMA[sec]
        if bad:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(sorted(bad))}")
    try:
        return _build(cp)
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _build(cp):
    g = lambda s, k, fb, conv=str: conv(cp.get(s, k)) if cp.has_option(s, k) else fb  # noqa: E731
    lk = {}
    for key in ("alpha_db_per_km", "beta2", "gamma_nl", "eta_phonon", "wavelength_nm"):
        if cp.has_option("link", key):
            lk[key] = cp.getfloat("link", key)
    link = reference_link(g("link", "length_km", 250.0, float), **lk)

    subc = g("layout", "subcarriers", 1, int)
    n_ch = g("layout", "n_channels", 3, int)
    delays = g("layout", "delays", "auto")
    weights = g("layout", "subcarrier_weights", None, _floats)
    layout = WdmLayout(n_ch, g("layout", "channel_spacing_ghz", 50.0, float) * 1e9,
                       g("layout", "channel_bandwidth_ghz", 50.0, float) * 1e9, subc,
                       _trim_delays(delays, subc, n_ch), weights)

    whitening = cp.getboolean("receiver", "whitening") if cp.has_option("receiver", "whitening") \
        else True
    settings = RunSettings(
        n_sym=g("simulation", "n_sym", 1024, int), n_train=g("simulation", "n_train", 6, int),
        n_test=g("simulation", "n_test", 20, int), seed=g("simulation", "seed", 0, int),
        channel=g("simulation", "channel", "rp-surrogate"),
        ssfm_step_km=g("simulation", "ssfm_step_km", 0.2, float),
        n_particles=g("receiver", "n_particles", 256, int),
        resample_threshold=g("receiver", "resample_threshold", 0.5, float),
        memory=g("receiver", "memory", 4, int), whitening=whitening)
    models = tuple(m.strip() for m in g("receiver", "models", ",".join(MODELS)).split(",")
                   if m.strip())
    for m in models:
        if m not in MODELS:
            raise ConfigError(f"unknown model {m!r}; choose from {', '.join(MODELS)}")
    powers = g("simulation", "powers_dbm", (-4.0, -2.0, 0.0, 2.0, 4.0), _floats)
    if not powers:
        raise ConfigError("powers_dbm is empty")
    return ExperimentConfig(link, layout, settings, powers, models,
                            g("statistics", "lag_max", 8, int),
                            g("output", "directory", "results"),
                            g("output", "cache_dir", ".nli-cache"))
