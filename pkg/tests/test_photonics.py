import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import jv

from rofsim.errors import ConfigError, ContractError, Diagnostic
from rofsim.metrics import evm_rms
from rofsim.modem import ModemConfig, pulse_shape, qam_map, recover_symbols
from rofsim.photonics import (
    C_LIGHT,
    K_B,
    Q_E,
    FiberParams,
    OpticalSignal,
    PdParams,
    RfAmpParams,
    bandpass,
    bandpass_response,
    circulator_pass,
    detection_noise_densities,
    dispersion_fading,
    edfa_amplify,
    edfa_stage_osnr,
    fiber_propagate,
    mzm_modulate,
    pin_detect,
    pin_detect_with_info,
    quantum_limit_responsivity,
    rf_amp_added_noise_density,
    rf_amplify,
)
from rofsim.signals import RngHandle, SampledWaveform, power, psd_estimate

from conftest import random_bits

FS = 933.33e6
N = 8192


def tone(f_hz, n=N, fs=FS, ref=5e9, amp=1.0):
    t = np.arange(n) / fs
    return SampledWaveform(amp * np.exp(2j * np.pi * f_hz * t), fs, ref)


def bin_freq(k, n=N, fs=FS):
    return k * fs / n


def optical(p_dbm=0.0, m=0.1, env=None, wl=1559.79):
    return OpticalSignal(p_dbm, wl, m, env if env is not None else tone(bin_freq(10)))


# ---------------------------------------------------------------- modulator


def test_mzm_average_power_db_arithmetic():
    s = mzm_modulate(tone(bin_freq(10)), 10.0, 0.04, 5.0)
    assert s.avg_power_dbm == pytest.approx(2.0, abs=0.011)


def test_mzm_small_signal_index():
    r = 1e-4
    s = mzm_modulate(tone(bin_freq(10)), 10.0, r)
    assert s.mod_index == pytest.approx(0.5 * math.pi * r, rel=1e-6)


def two_tone(k1=64, k2=80):
    d = (np.exp(2j * np.pi * k1 * np.arange(N) / N) + np.exp(2j * np.pi * k2 * np.arange(N) / N)) / math.sqrt(2)
    return SampledWaveform(d, FS, 5e9), k1, k2


def tone_levels(sig, k1, k2):
    spec = np.abs(np.fft.fft(sig.mod_index * sig.envelope.samples)) / N
    return spec[k1], spec[2 * k1 - k2]


def test_mzm_two_tone_im3_matches_sine_expansion():
    d, k1, k2 = two_tone()
    r = 0.5
    sig = mzm_modulate(d, 10.0, r)
    fund, im3 = tone_levels(sig, k1, k2)
    # sin(kA cos a + kA cos b): fundamental 2 J1 J0, IM3 at 2a-b 2 J2 J1
    x = 0.5 * math.pi * r / math.sqrt(2)
    predicted = 20 * math.log10(jv(2, x) / jv(0, x))
    measured = 20 * math.log10(im3 / fund)
    assert measured == pytest.approx(predicted, abs=1.0)


def test_mzm_small_signal_distortion_below_60dbc():
    d, k1, k2 = two_tone()
    fund, im3 = tone_levels(mzm_modulate(d, 10.0, 0.01), k1, k2)
    assert 20 * math.log10(im3 / fund) < -60


def test_mzm_overdrive_and_drive_power_rejected():
    with pytest.raises(ContractError):
        mzm_modulate(tone(0.0), 10.0, 1.2)
    with pytest.raises(ContractError):
        mzm_modulate(tone(0.0, amp=2.0), 10.0, 0.1)


def test_mzm_envelope_unit_power():
    d, _, _ = two_tone()
    assert power(mzm_modulate(d, 0.0, 0.7).envelope) == pytest.approx(1.0)


def test_optical_signal_invariants():
    with pytest.raises(ContractError):
        optical(m=1.5)
    with pytest.raises(ContractError):
        optical(wl=-1.0)


# ---------------------------------------------------------------- fiber


def test_fiber_attenuation_and_electrical_doubling():
    pd = PdParams()
    s = optical(0.0)
    out = fiber_propagate(s, FiberParams(5.0, 0.2, 0.0))
    assert out.avg_power_dbm == pytest.approx(-1.0)
    e0 = power(pin_detect(s, pd))
    e1 = power(pin_detect(out, pd))
    assert 10 * math.log10(e0 / e1) == pytest.approx(2.0, abs=1e-9)


def closed_form(f, L_km, D=17.0, wl_nm=1560.0):
    return math.cos(math.pi * (wl_nm * 1e-9) ** 2 * (D * 1e-6) * (L_km * 1e3) * f**2 / C_LIGHT)


@pytest.mark.parametrize("L", [1.0, 5.0, 100.0, 1e5])
def test_dispersion_closed_form(L):
    got = float(dispersion_fading(5e9, L, 17.0, 1560.0))
    want = closed_form(5e9, L)
    assert abs(got - want) <= 1e-9 * abs(want)


def test_dispersion_argument_at_5km():
    arg = math.acos(float(dispersion_fading(5e9, 5.0, 17.0, 1560.0)))
    assert arg == pytest.approx(0.05421, rel=1e-3)
    pen_db = -20 * math.log10(math.cos(arg))
    assert pen_db == pytest.approx(0.01276, rel=1e-2)


def test_first_fading_null_length():
    per_m = math.acos(float(dispersion_fading(5e9, 1.0, 17.0, 1560.0))) / 1e3
    L_null = (math.pi / 2) / per_m
    assert L_null == pytest.approx(1.449e5, rel=1e-3)
    assert abs(float(dispersion_fading(5e9, L_null / 1e3, 17.0, 1560.0))) < 1e-9


def test_fiber_fading_applied_per_bin():
    ks = (-300, -40, 25, 350)
    d = sum(np.exp(2j * np.pi * k * np.arange(N) / N) for k in ks) / 2.0
    env = SampledWaveform(d, FS, 5e9)
    s = OpticalSignal(0.0, 1559.79, 0.2, env)
    fib = FiberParams(40.0, 0.2, 17.0)
    out = fiber_propagate(s, fib)
    x_in = np.fft.fft(s.mod_index * s.envelope.samples)
    x_out = np.fft.fft(out.mod_index * out.envelope.samples)
    for k in ks:
        f = 5e9 + k * FS / N
        want = float(dispersion_fading(f, 40.0, 17.0, 1559.79))
        assert x_out[k % N] / x_in[k % N] == pytest.approx(want, rel=1e-9)
    assert power(out.envelope) == pytest.approx(1.0)


def test_fiber_zero_length_identity():
    s = optical(3.0)
    out = fiber_propagate(s, FiberParams(0.0))
    assert out.avg_power_dbm == s.avg_power_dbm and out.envelope is s.envelope


def test_fiber_params_validation():
    with pytest.raises(ConfigError):
        FiberParams(-1.0)


# ---------------------------------------------------------------- EDFA / circulator


def test_edfa_zero_gain_finite_osnr():
    s = optical(-10.0)
    out = edfa_amplify(s, 0.0, 3.0)
    assert math.isfinite(out.osnr_linear)
    assert out.osnr_linear == pytest.approx(edfa_stage_osnr(s.avg_power_w, 3.0, s.wavelength_nm))


def test_edfa_single_stage_value():
    # P_in / (NF h nu B_ref), B_ref = 0.1 nm at 1559.79 nm
    h, c = 6.62607015e-34, 299792458.0
    lam = 1559.79e-9
    nu = c / lam
    b = c * 0.1e-9 / lam**2
    want = 1e-3 / (10 ** 0.5 * h * nu * b)
    assert edfa_stage_osnr(1e-3, 5.0, 1559.79) == pytest.approx(want, rel=1e-9)


def test_edfa_cascade_rule():
    s = optical(-20.0)
    a = edfa_amplify(s, 10.0, 5.0)
    b = edfa_amplify(a, 10.0, 5.0)
    o1 = edfa_stage_osnr(s.avg_power_w, 5.0, s.wavelength_nm)
    o2 = edfa_stage_osnr(a.avg_power_w, 5.0, s.wavelength_nm)
    want = 1 / (1 / o1 + 1 / o2)
    assert 10 * math.log10(b.osnr_linear / want) == pytest.approx(0.0, abs=0.01)


def test_edfa_gain_arithmetic_and_negative_gain():
    assert edfa_amplify(optical(-10.0), 20.0, 5.0).avg_power_dbm == pytest.approx(10.0)
    with pytest.raises(ContractError):
        edfa_amplify(optical(), -1.0, 5.0)


def test_circulator():
    s = optical(0.0)
    assert circulator_pass(s, 0.0).avg_power_dbm == 0.0
    assert circulator_pass(s, 0.0).envelope is s.envelope
    assert circulator_pass(s, 1.0).avg_power_dbm == pytest.approx(-1.0)
    two = circulator_pass(circulator_pass(s, 0.8), 0.7)
    assert two.avg_power_dbm == pytest.approx(-1.5)
    with pytest.raises(ContractError):
        circulator_pass(s, -0.1)


# ---------------------------------------------------------------- detection


def test_pin_dc_current():
    _, info = pin_detect_with_info(optical(0.0), PdParams(0.6))
    assert info["i_dc_a"] == pytest.approx(0.6e-3)


def test_shot_noise_plug_in():
    d = detection_noise_densities(6e-4, 50.0, 300.0)
    assert d["shot"] * 1.26e8 == pytest.approx(2 * 1.602176634e-19 * 6e-4 * 1.26e8 * 50, rel=1e-9)
    assert d["shot"] * 1.26e8 == pytest.approx(1.211e-12, rel=1e-3)
    assert d["thermal"] == pytest.approx(4 * K_B * 300.0)
    assert d["signal_ase_beat"] == 0.0 and d["rin"] == 0.0


def test_pin_responsivity_limit():
    assert quantum_limit_responsivity(1560.0) == pytest.approx(1.258, abs=0.002)
    with pytest.raises(ConfigError):
        PdParams(1.5).check_responsivity(1560.0)


def test_pin_noiseless_evm():
    cfg = ModemConfig()
    syms = qam_map(random_bits(6 * 20000, 1), 64)
    opt = mzm_modulate(pulse_shape(syms, cfg), 10.0, 0.04)
    wf = pin_detect(opt, PdParams())
    assert evm_rms(recover_symbols(wf, cfg, syms), syms) < 0.1


def test_pin_amplitude_and_square_law():
    pd = PdParams()
    s = optical(0.0, m=0.1)
    p1 = power(pin_detect(s, pd))
    assert p1 == pytest.approx((0.6e-3 * 0.1) ** 2 * 50 / 2)
    p2 = power(pin_detect(optical(10 * math.log10(2), m=0.1), pd))
    assert 10 * math.log10(p2 / p1) == pytest.approx(20 * math.log10(2), abs=0.01)


@settings(max_examples=30, deadline=None)
@given(st.floats(-30, 10), st.floats(0.01, 1.0))
def test_square_law_property(p_dbm, m):
    pd = PdParams()
    a = power(pin_detect(optical(p_dbm, m), pd))
    b = power(pin_detect(optical(p_dbm + 3.0, m), pd))
    assert 10 * math.log10(b / a) == pytest.approx(6.0, abs=1e-9)


def test_pin_noise_level_matches_densities():
    pd = PdParams()
    s = optical(0.0, m=1e-9)
    wf, info = pin_detect_with_info(s, pd, RngHandle(1, 1))
    assert power(wf) == pytest.approx(info["noise_density_w_hz"] * FS, rel=0.05)


def test_pin_band_limit_warning():
    env = SampledWaveform(np.ones(16, complex), 100e9, 5e9)
    with pytest.warns(Diagnostic):
        pin_detect(OpticalSignal(0.0, 1559.79, 0.1, env), PdParams())


def test_rin_and_beat_noise_terms():
    d = detection_noise_densities(1e-3, 50.0, 300.0, osnr_linear=1e4, rin_db_hz=-150.0)
    assert d["rin"] == pytest.approx(1e-15 * 1e-6 * 50)
    b_ref = C_LIGHT * 0.1e-9 / (1559.79e-9) ** 2
    assert d["signal_ase_beat"] == pytest.approx(2 * 1e-6 * 50 / (1e4 * b_ref))


# ---------------------------------------------------------------- RF


def test_rf_gain_24db():
    amp = RfAmpParams()
    x = tone(bin_freq(10))
    assert power(rf_amplify(x, amp)) / power(x) == pytest.approx(10**2.4, rel=1e-9)
    assert 10**2.4 == pytest.approx(251.2, rel=1e-3)


def test_rf_nf_zero_adds_nothing():
    x = tone(bin_freq(10))
    amp = RfAmpParams(gain_db=0.0, nf_db=0.0)
    assert rf_amp_added_noise_density(0.0) == 0.0
    out = rf_amplify(x, amp, RngHandle(1, 2))
    assert np.array_equal(out.samples, rf_amplify(x, amp, None).samples)


def test_rf_added_noise_plug_in():
    assert rf_amp_added_noise_density(1.9) * 1.26e8 == pytest.approx(
        (10**0.19 - 1) * 1.380649e-23 * 290 * 1.26e8, rel=1e-9)
    assert rf_amp_added_noise_density(1.9) * 1.26e8 == pytest.approx(2.77e-13, rel=2e-3)


def test_rf_added_noise_measured_in_band():
    amp = RfAmpParams(gain_db=0.0)
    z = SampledWaveform(np.zeros(1 << 18, complex), FS, 5e9)
    out = rf_amplify(z, amp, RngHandle(3, 3))
    inband = psd_estimate(out).band_power(-100e6, 100e6) / 200e6
    assert inband == pytest.approx(rf_amp_added_noise_density(1.9), rel=0.05)


def test_rf_out_of_band_rolloff():
    amp = RfAmpParams(gain_db=0.0)
    f = 450e6  # 5.45 GHz, 50 MHz beyond the upper edge, corner at 100 MHz
    out = rf_amplify(tone(bin_freq(round(f / FS * N))), amp)
    f_act = bin_freq(round(f / FS * N))
    assert power(out) == pytest.approx(1 / (1 + ((f_act - 400e6) / 100e6) ** 2), rel=1e-6)


def test_rf_params_validation():
    with pytest.raises(ConfigError):
        RfAmpParams(band_lo_hz=5.4e9, band_hi_hz=4.4e9)


def test_bandpass_all_pass():
    cfg = ModemConfig()
    x = pulse_shape(qam_map(random_bits(6 * 4000, 2), 64), cfg)
    y = bandpass(x, 4.0e9, 6.0e9)
    assert np.max(np.abs(y.samples - x.samples)) / np.max(np.abs(x.samples)) < 1e-4


def test_bandpass_flat_passband():
    f = np.linspace(4.81e9, 5.19e9, 1001)
    h = bandpass_response(f, 4.8e9, 5.2e9)
    assert np.max(np.abs(20 * np.log10(h))) < 0.01


def test_bandpass_stopband_60db():
    x = tone(bin_freq(round(300e6 / FS * N)))
    y = bandpass(x, 4.8e9, 5.2e9)
    assert 10 * math.log10(power(y) / power(x)) <= -60


def test_bandpass_white_noise_fraction():
    z = SampledWaveform(RngHandle(4, 4).complex_normal(1 << 18, 1.0), FS, 5e9)
    y = bandpass(z, 4.8e9, 5.2e9)
    assert power(y) / power(z) == pytest.approx(400e6 / FS, rel=0.02)


def test_bandpass_no_overlap():
    with pytest.raises(ContractError):
        bandpass(tone(0.0), 7e9, 8e9)
    with pytest.raises(ContractError):
        bandpass(tone(0.0), 5.2e9, 4.8e9)


def test_noiseless_cascade_monotone_in_length():
    cfg = ModemConfig()
    syms = qam_map(random_bits(6 * 4000, 3), 64)
    opt = mzm_modulate(pulse_shape(syms, cfg), 10.0, 0.04)
    levels = []
    for L in np.linspace(0, 10, 6):
        levels.append(power(pin_detect(fiber_propagate(opt, FiberParams(L)), PdParams())))
    assert all(b < a for a, b in zip(levels, levels[1:]))
