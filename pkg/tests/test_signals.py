import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rofsim.errors import ContractError
from rofsim.modem import ModemConfig, pulse_shape, qam_map
from rofsim.signals import (
    RngHandle,
    SampledWaveform,
    add_awgn,
    db10,
    dbm_to_w,
    power,
    psd_estimate,
    read_iq,
    undb10,
    w_to_dbm,
    write_iq,
)

FS = 1e9


def wf(x, fs=FS, ref=0.0):
    return SampledWaveform(np.asarray(x, dtype=complex), fs, ref)


def test_power_constant_and_zero():
    assert power(wf(np.ones(100))) == 1.0
    assert power(wf(np.zeros(100))) == 0.0


def test_waveform_contract():
    with pytest.raises(ContractError):
        SampledWaveform(np.zeros(0, complex), FS)
    with pytest.raises(ContractError):
        SampledWaveform(np.zeros(4, complex), 0.0)
    w = wf(np.ones(4))
    with pytest.raises(ValueError):
        w.samples[0] = 2.0


def test_power_of_noise_concentrates(rng):
    x = rng.complex_normal(1_000_000, 0.01)
    assert abs(power(wf(x)) - 0.01) < 3 * 0.01 / np.sqrt(1e6)


def test_add_awgn_zero_is_identity(rng):
    w = wf(np.arange(10) + 1j)
    assert add_awgn(w, 0.0, rng) is w


def test_add_awgn_negative_rejected(rng):
    with pytest.raises(ContractError):
        add_awgn(wf(np.zeros(4)), -1.0, rng)


def test_add_awgn_unit_power(rng):
    out = add_awgn(wf(np.zeros(1_000_000)), 1.0, rng)
    assert abs(power(out) - 1.0) < 0.003


def test_add_awgn_leaves_input_untouched(rng):
    x = np.ones(16, complex)
    w = wf(x)
    add_awgn(w, 1.0, rng)
    assert np.array_equal(w.samples, x)


def test_same_stream_is_bit_identical():
    a = add_awgn(wf(np.zeros(1000)), 1.0, RngHandle(9, 3)).samples
    b = add_awgn(wf(np.zeros(1000)), 1.0, RngHandle(9, 3)).samples
    c = add_awgn(wf(np.zeros(1000)), 1.0, RngHandle(9, 4)).samples
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_awgn_moments(rng):
    x = rng.complex_normal(1_000_000, 2.0)
    for part in (x.real, x.imag):
        z = part / np.std(part)
        assert abs(stats.skew(z)) < 0.01
        assert abs(stats.kurtosis(z)) < 0.02
    assert abs(np.var(x.real) - np.var(x.imag)) < 0.01


def test_rng_rejects_out_of_range():
    with pytest.raises(ContractError):
        RngHandle(-1, 0)
    with pytest.raises(ContractError):
        RngHandle(0, 2**64)


def test_psd_tone_single_bin():
    n, seg = 65536, 1024
    f0 = 10e6
    fs = f0 * seg / 64  # tone sits on a bin centre
    t = np.arange(n) / fs
    s = psd_estimate(wf(np.exp(2j * np.pi * f0 * t), fs), seg, 0.5, window="rect")
    k = int(np.argmax(s.psd_w_hz))
    assert s.freqs_hz[k] == pytest.approx(f0)
    assert s.psd_w_hz[k] * s.bin_width_hz >= 0.99 * s.integrated_power()


def test_psd_white_noise_parseval(rng):
    x = rng.complex_normal(400_000, 0.5)
    s = psd_estimate(wf(x))
    assert s.integrated_power() == pytest.approx(power(wf(x)), rel=0.01)
    flat = s.psd_w_hz / np.mean(s.psd_w_hz)
    assert np.std(flat) < 0.2


def test_psd_segment_too_long():
    with pytest.raises(ContractError):
        psd_estimate(wf(np.ones(100)), 4096)
    with pytest.raises(ContractError):
        psd_estimate(wf(np.ones(100)), 50, 1.0)


def test_psd_qam_occupied_bandwidth():
    cfg = ModemConfig()
    bits = np.random.default_rng(1).integers(0, 2, 6 * 50_000)
    x = pulse_shape(qam_map(bits, 64), cfg)
    s = psd_estimate(x)
    assert s.envelope_ref_hz == 5e9
    assert s.occupied_bandwidth(40.0) == pytest.approx(cfg.symbol_rate_hz * 1.35, rel=0.10)
    assert s.integrated_power() == pytest.approx(power(x), rel=0.01)


def test_iq_roundtrip(tmp_path, rng):
    x = wf(rng.complex_normal(1000, 1.0), 2.5e9, 5e9)
    p = tmp_path / "x.rfiq"
    write_iq(p, x)
    raw = p.read_bytes()
    assert raw[:4] == b"RFIQ"
    assert len(raw) == 4 + 4 + 8 + 8 + 8 + 8 * 1000
    y = read_iq(p)
    assert y.sample_rate_hz == 2.5e9 and y.envelope_ref_hz == 5e9
    assert np.allclose(y.samples, x.samples, rtol=1e-6, atol=1e-6)


def test_iq_bad_magic(tmp_path):
    p = tmp_path / "bad.rfiq"
    p.write_bytes(b"XXXX" + bytes(28))
    with pytest.raises(ContractError):
        read_iq(p)


@given(st.floats(-200, 60))
def test_db_roundtrips(v):
    assert float(db10(undb10(v))) == pytest.approx(v, abs=1e-9)
    assert float(w_to_dbm(dbm_to_w(v))) == pytest.approx(v, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2**63), st.integers(0, 1000))
def test_parseval_property(seed, stream):
    x = RngHandle(seed, stream).complex_normal(32768, 1.0)
    s = psd_estimate(wf(x), 1024)
    assert s.integrated_power() == pytest.approx(power(wf(x)), rel=0.01)
