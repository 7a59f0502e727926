"""Link and WDM-plan parameter types, unit helpers and shipped presets.

Units follow the usual fiber-optics conventions at the API boundary
(ps^2/km, 1/(W km), dB/km, km) and SI seconds/joules everywhere inside.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import constants

PS2 = 1e-24  # ps^2 -> s^2


def dbm_to_watt(p_dbm):
    """Convert dBm to watts."""
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def watt_to_dbm(p_w):
    """Convert watts to dBm."""
    return 10.0 * np.log10(np.asarray(p_w, dtype=float) / 1e-3)


def ase_psd(alpha_db_per_km, length_km, eta_phonon=1.0, wavelength_nm=1550.0):
    """Accumulated ASE power spectral density per polarization for ideal
    distributed amplification.

    Parameters
    ----------
    alpha_db_per_km : float
        Fiber attenuation.
    length_km : float
        Link length.
    eta_phonon : float
        Phonon occupancy factor.
    wavelength_nm : float
        Carrier wavelength, only used for the photon energy.

    Returns
    -------
    float
        N_ASE in W/Hz (equivalently J).
    """
    alpha_lin = alpha_db_per_km * math.log(10.0) / 10.0
    nu = constants.c / (wavelength_nm * 1e-9)
    return alpha_lin * length_km * constants.h * nu * eta_phonon


@dataclass(frozen=True)
class LinkConfig:
    """Fiber link under ideal distributed amplification.

    ``n_ase_psd`` defaults to the value implied by attenuation, length,
    phonon occupancy and carrier wavelength. ``b_ase`` (receiver noise
    bandwidth) is informational; simulations use their own band.
    """

    alpha_db_per_km: float = 0.2
    beta2: float = -21.7
    gamma_nl: float = 1.27
    length_km: float = 1000.0
    eta_phonon: float = 1.0
    wavelength_nm: float = 1550.0
    n_ase_psd: float | None = None
    b_ase: float | None = None

    def __post_init__(self):
        if not self.length_km > 0:
            raise ValueError("length_km must be positive")
        if self.gamma_nl < 0:
            raise ValueError("gamma_nl must be non-negative")
        if self.n_ase_psd is None:
            object.__setattr__(self, "n_ase_psd", ase_psd(
                self.alpha_db_per_km, self.length_km, self.eta_phonon,
                self.wavelength_nm))
        if self.n_ase_psd < 0:
            raise ValueError("n_ase_psd must be non-negative")

    @property
    def beta2_si(self):
        """Dispersion coefficient in s^2/km."""
        return self.beta2 * PS2

    def with_(self, **changes):
        """Copy with changes; a changed length recomputes the default noise."""
        if "length_km" in changes and "n_ase_psd" not in changes:
            changes["n_ase_psd"] = None
        return replace(self, **changes)

    def key(self):
        return _digest(asdict(self))


@dataclass(frozen=True)
class Channel:
    """One WDM channel (or subcarrier) as seen from the channel of interest.

    ``index`` 0 is the channel of interest. ``center_freq`` is the angular
    frequency offset in rad/s. Delays are relative to the first
    polarization of the channel of interest.
    """

    index: int
    center_freq: float
    energy: float
    energy_bar: float
    fourth_moment: float
    fourth_moment_bar: float
    delay: float = 0.0
    delay_bar: float = 0.0

    @classmethod
    def gaussian(cls, index, center_freq, energy, delay=0.0, delay_bar=None):
        """Channel with circular Gaussian symbols (Q = 2 E^2) on both pols."""
        if delay_bar is None:
            delay_bar = delay
        return cls(index, center_freq, energy, energy, 2 * energy ** 2,
                   2 * energy ** 2, delay, delay_bar)


@dataclass(frozen=True)
class WdmPlan:
    """Channel grid seen by the channel of interest (index 0)."""

    channels: tuple
    symbol_period: float
    channel_bandwidth: float
    subcarriers_per_channel: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        idx = [ch.index for ch in self.channels]
        if 0 not in idx:
            raise ValueError("plan needs channel 0 (channel of interest)")
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate channel indices")
        if self.coi.delay != 0.0:
            raise ValueError("delays must be measured from the first "
                             "polarization of channel 0 (delay 0)")
        if self.subcarriers_per_channel < 1:
            raise ValueError("subcarriers_per_channel must be >= 1")
        for ch in self.channels:
            if min(ch.energy, ch.energy_bar) < 0:
                raise ValueError("energies must be non-negative")
        freqs = sorted(ch.center_freq for ch in self.channels)
        if len(freqs) > 1:
            spacing = min(np.diff(freqs))
            if 2 * math.pi * self.channel_bandwidth > spacing * (1 + 1e-9):
                raise ValueError("channel bandwidth exceeds channel spacing")

    @property
    def coi(self):
        return self.channel(0)

    @property
    def interferers(self):
        return tuple(ch for ch in self.channels if ch.index != 0)

    def channel(self, index):
        for ch in self.channels:
            if ch.index == index:
                return ch
        raise KeyError(f"no channel {index}")

    def with_energies(self, energy):
        """Copy with all channels set to Gaussian symbols of energy ``energy``."""
        chans = [replace(ch, energy=energy, energy_bar=energy,
                         fourth_moment=2 * energy ** 2,
                         fourth_moment_bar=2 * energy ** 2)
                 for ch in self.channels]
        return replace(self, channels=tuple(chans))

    def scaled(self, factor):
        """Copy with every energy scaled by ``factor`` (fourth moments by its square)."""
        chans = [replace(ch, energy=ch.energy * factor,
                         energy_bar=ch.energy_bar * factor,
                         fourth_moment=ch.fourth_moment * factor ** 2,
                         fourth_moment_bar=ch.fourth_moment_bar * factor ** 2)
                 for ch in self.channels]
        return replace(self, channels=tuple(chans))

    def key(self):
        return _digest(asdict(self))


def _digest(obj):
    blob = json.dumps(obj, sort_keys=True, default=repr).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Presets

#: Single-carrier delays for channels -2..2 in units of T.
DELAYS_SC = tuple(np.array([5, 6, -6, 6, 2]) / 15.0)

#: Four-subcarrier delays, per channel -2..2, per subcarrier, in units of T_sc.
DELAYS_4SC = tuple(tuple(np.array(row) / 60.0) for row in (
    (-25, -14, 2, 27), (27, -21, 28, 27), (-1, 18, -22, -5),
    (24, 17, 27, 9), (-28, 20, 26, 10)))

#: Six-subcarrier delays, per channel -2..2, per subcarrier, in units of T_sc.
DELAYS_6SC = tuple(tuple(np.array(row) / 90.0) for row in (
    (-37, -20, 4, 41, 41, -31), (42, 41, -2, 27, -33, -8),
    (37, 26, 41, 14, -42, 31), (39, 16, 23, 21, -10, 13),
    (-30, 18, -43, -21, -41, -37)))

DELAY_PRESETS = {"zero": None, "sc": DELAYS_SC, "4sc": DELAYS_4SC,
                 "6sc": DELAYS_6SC}


def reference_link(length_km=1000.0, **changes):
    """Reference link: 0.2 dB/km, -21.7 ps^2/km, 1.27 /W/km, eta = 1."""
    return LinkConfig(length_km=length_km, **changes)


@dataclass(frozen=True)
class WdmLayout:
    """Physical WDM layout: channels -h..h, each split into S subcarriers.

    ``delays`` holds absolute delays in units of the subcarrier symbol
    period, indexed ``[channel][subcarrier]``; ``None`` means synchronized.
    ``subcarrier_weights`` redistribute a channel's power over its
    subcarriers (uniform by default) and sum to S.
    """

    n_channels: int = 5
    channel_spacing: float = 50e9
    channel_bandwidth: float = 50e9
    subcarriers: int = 1
    delays: tuple | None = None
    subcarrier_weights: tuple | None = None

    def __post_init__(self):
        if self.n_channels < 1 or self.n_channels % 2 == 0:
            raise ValueError("n_channels must be odd and positive")
        if self.subcarrier_weights is not None:
            w = np.asarray(self.subcarrier_weights, float)
            if w.shape != (self.subcarriers,) or np.any(w < 0):
                raise ValueError("bad subcarrier weights")

    @property
    def symbol_period(self):
        """Subcarrier symbol period (sinc pulses: T = S / B)."""
        return self.subcarriers / self.channel_bandwidth

    @property
    def subcarrier_bandwidth(self):
        return self.channel_bandwidth / self.subcarriers

    def channel_range(self):
        h = self.n_channels // 2
        return range(-h, h + 1)

    def weights(self):
        if self.subcarrier_weights is None:
            return np.ones(self.subcarriers)
        w = np.asarray(self.subcarrier_weights, float)
        return w * self.subcarriers / w.sum()

    def abs_delay(self, c, s):
        """Absolute delay of channel ``c``, subcarrier ``s`` in seconds."""
        if self.delays is None:
            return 0.0
        rows = self.delays
        h5 = len(rows) // 2
        row = rows[c + h5]
        val = row if np.isscalar(row) else row[s]
        return float(val) * self.symbol_period

    def frequency(self, c, s):
        """Center frequency offset (Hz) of channel c, subcarrier s from the grid center."""
        sub = (s - (self.subcarriers - 1) / 2.0) * self.subcarrier_bandwidth
        return c * self.channel_spacing + sub

    def plan(self, power_w, coi_subcarrier=0, include_coi_channel=False):
        """WDM plan seen by subcarrier ``coi_subcarrier`` of channel 0.

        Subcarriers of channel 0 other than the COI are jointly
        back-propagated and therefore not listed as interferers unless
        ``include_coi_channel`` is set (the transmitted field needs them).
        ``power_w`` is the launch power per channel (both pols).
        """
        T = self.symbol_period
        w = self.weights()
        f0 = self.frequency(0, coi_subcarrier)
        ref = self.abs_delay(0, coi_subcarrier)
        chans = []
        for c in self.channel_range():
            for s in range(self.subcarriers):
                if c == 0 and s != coi_subcarrier and not include_coi_channel:
                    continue
                e = power_w * w[s] / self.subcarriers * T
                idx = int(round((self.frequency(c, s) - f0) / self.subcarrier_bandwidth))
                d = self.abs_delay(c, s) - ref
                chans.append(Channel.gaussian(
                    idx, 2 * math.pi * (self.frequency(c, s) - f0),
                    e, d, d))
        return WdmPlan(tuple(chans), T, self.subcarrier_bandwidth,
                       self.subcarriers)


def symbol_energy(power_dbm, symbol_period, subcarriers=1):
    """Per-polarization symbol energy for a launch power per channel.

    The launch power is the power of one polarization's symbol stream in the
    sense of E = P T used for the AWGN reference curve.
    """
    return float(dbm_to_watt(power_dbm)) * symbol_period / subcarriers


def desk_layout(subcarriers=1, delays="auto"):
    """Three-channel desk-scale layout (channels -1, 0, 1)."""
    return WdmLayout(n_channels=3, subcarriers=subcarriers,
                     delays=_trim_delays(delays, subcarriers, 3))


def full_layout(subcarriers=1, delays="auto"):
    """Five-channel full-scale layout."""
    return WdmLayout(n_channels=5, subcarriers=subcarriers,
                     delays=_trim_delays(delays, subcarriers, 5))


def _trim_delays(delays, subcarriers, n_channels):
    """Resolve a delay preset and keep the central ``n_channels`` rows."""
    if delays is None or delays == "zero":
        return None
    if delays == "auto":
        by_count = {1: "sc", 4: "4sc", 6: "6sc"}
        if subcarriers not in by_count:
            raise ValueError(f"no delay preset for {subcarriers} subcarriers")
        delays = by_count[subcarriers]
    rows = DELAY_PRESETS[delays] if isinstance(delays, str) else delays
    h = (len(rows) - n_channels) // 2
    if h < 0:
        raise ValueError("delay preset has fewer channels than the layout")
    rows = tuple(rows[h:len(rows) - h])
    for row in rows:
        n = 1 if np.isscalar(row) else len(row)
        if n != subcarriers and not (n == 1 and subcarriers == 1):
            raise ValueError("delay preset does not match the subcarrier count")
    return rows


@dataclass(frozen=True)
class QuadratureSettings:
    """Settings for the coefficient engine and the z-quadrature."""

    period_symbols: int = 255
    nodes_per_radian: float = 0.5
    panel_order: int = 16
    tol: float = 1e-6
