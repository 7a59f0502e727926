import math

import numpy as np
import pytest

from manakov_rp.params import LinkConfig, WdmLayout, dbm_to_watt
from manakov_rp.signal import SampledSignal, SymbolBlock, dispersion_apply, synthesize_wdm
from manakov_rp.ssfm import PropagationError, SsfmConfig, receiver_dbp, ssfm_propagate

from .conftest import T


def wdm_signal(power_dbm, m=64, seed=0, n_channels=3):
    plan = WdmLayout(n_channels).plan(float(dbm_to_watt(power_dbm)), include_coi_channel=True)
    r = np.random.default_rng(seed)
    sym = {c.index: SymbolBlock.gaussian(m, c.energy, r) for c in plan.channels}
    return synthesize_wdm(plan, sym, 8 / T)


def rel(a, b):
    num = np.linalg.norm(np.concatenate([a.pol1 - b.pol1, a.pol2 - b.pol2]))
    return num / np.linalg.norm(np.concatenate([b.pol1, b.pol2]))


def test_config_validation():
    with pytest.raises(ValueError):
        SsfmConfig(0.0)
    with pytest.raises(ValueError):
        SsfmConfig(0.1, "sometimes")
    with pytest.raises(ValueError):
        SsfmConfig(0.3).n_steps(1.0)
    assert SsfmConfig(0.1).n_steps(250.0) == 2500


def test_linear_limit():
    s = wdm_signal(0.0)
    link = LinkConfig(length_km=100.0, gamma_nl=0.0)
    out = ssfm_propagate(s, link, SsfmConfig(10.0))
    assert rel(out, dispersion_apply(s, link.beta2, link.length_km)) < 1e-9
    back = receiver_dbp(s, link, SsfmConfig(10.0))
    assert rel(back, dispersion_apply(s, link.beta2, -link.length_km)) < 1e-9


def test_pure_kerr_rotation():
    s = wdm_signal(3.0)
    link = LinkConfig(length_km=100.0, beta2=0.0)
    out = ssfm_propagate(s, link, SsfmConfig(5.0))
    p = np.abs(s.pol1) ** 2 + np.abs(s.pol2) ** 2
    rot = np.exp(1j * link.gamma_nl * link.length_km * p)
    ref = SampledSignal(s.pol1 * rot, s.pol2 * rot, s.sample_rate)
    assert rel(out, ref) < 1e-6


def test_energy_conserved():
    s = wdm_signal(0.0)
    out = ssfm_propagate(s, LinkConfig(length_km=250.0), SsfmConfig(1.0))
    assert abs(sum(out.energy()) / sum(s.energy()) - 1) < 1e-9


def test_zero_signal_stays_zero():
    z = SampledSignal(np.zeros(128), np.zeros(128), 8 / T)
    out = receiver_dbp(z, LinkConfig(length_km=10.0), SsfmConfig(1.0))
    assert np.all(out.pol1 == 0) and np.all(out.pol2 == 0)


def test_dbp_round_trip():
    s = wdm_signal(-6.0)
    link = LinkConfig(length_km=1000.0)
    cfg = SsfmConfig(0.1)
    assert rel(receiver_dbp(ssfm_propagate(s, link, cfg), link, cfg), s) <= 1e-4


def test_step_halving_second_order():
    # steps small enough that the walk-off phase per step is resolved
    s = wdm_signal(3.0)
    link = LinkConfig(length_km=100.0)
    ref = ssfm_propagate(s, link, SsfmConfig(0.01))
    e = [rel(ssfm_propagate(s, link, SsfmConfig(h)), ref) for h in (0.2, 0.1)]
    assert e[0] / e[1] == pytest.approx(4.0, rel=0.3)


def test_noise_is_polarization_independent():
    n = 1 << 14
    z = SampledSignal(np.zeros(n), np.zeros(n), 8 / T)
    link = LinkConfig(length_km=100.0, gamma_nl=0.0, beta2=0.0)
    out = ssfm_propagate(z, link, SsfmConfig(10.0, "per-step", seed=3))
    prod = out.pol1 * np.conj(out.pol2)
    se = math.sqrt(np.mean(np.abs(prod) ** 2) / n)
    assert abs(prod.mean()) < 3 * se
    # total injected variance per sample: N_ASE times the sample rate
    var = np.mean(np.abs(out.pol1) ** 2)
    assert var == pytest.approx(link.n_ase_psd * z.sample_rate, rel=0.05)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_detected():
    n = 256
    x = np.full(n, 1e160, complex)
    with pytest.raises(PropagationError):
        ssfm_propagate(SampledSignal(x, x, 8 / T), LinkConfig(length_km=10.0), SsfmConfig(1.0))
