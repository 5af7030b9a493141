"""Behavioral IM-DD link components: modulator, fiber, EDFA, circulator, PIN, RF gain.

Optical stages carry a ledger (average power, wavelength, modulation index,
OSNR) plus a unit-power RF envelope. Every noise mechanism is converted to
additive white electrical noise at photodetection.

Electrical waveforms are scaled so that ``mean(|x|^2)`` is the RF power in
watts delivered to the detector load: a photocurrent tone of peak amplitude
``R*P*m`` gives ``(R*P*m)**2 * load / 2``. Noise sources are one-sided
densities in W/Hz on the same load, added white across the sampled band; a
unit-energy matched filter then sees them in a symbol-rate bandwidth.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import constants
from scipy.special import j1

from .errors import ConfigError, ContractError, Diagnostic
from .signals import RngHandle, SampledWaveform, add_white_noise_density, power

Q_E = constants.e
K_B = constants.k
H_PLANCK = constants.h
C_LIGHT = constants.c
T0_K = 290.0
OSNR_REF_BW_NM = 0.1
DEFAULT_WAVELENGTH_NM = C_LIGHT / 192.2e12 * 1e9  # 1559.79 nm


def quantum_limit_responsivity(wavelength_nm: float) -> float:
    """Responsivity of a unity-efficiency detector, ``q*lambda/(h*c)`` in A/W."""
    return Q_E * wavelength_nm * 1e-9 / (H_PLANCK * C_LIGHT)


def osnr_reference_bandwidth_hz(wavelength_nm: float) -> float:
    lam = wavelength_nm * 1e-9
    return C_LIGHT * OSNR_REF_BW_NM * 1e-9 / lam**2


def _dbm_to_w(p_dbm: float) -> float:
    return 1e-3 * 10.0 ** (p_dbm / 10.0)


@dataclass(frozen=True, eq=False)
class OpticalSignal:
    """Intensity-modulated optical carrier.

    The optical intensity is ``P_avg * (1 + mod_index * Re{envelope * e^{j w t}})``
    with ``envelope`` normalized to unit power. ``rin_db_hz`` is the relative
    intensity noise of the emitting laser, folded into detection noise.
    """

    avg_power_dbm: float
    wavelength_nm: float
    mod_index: float
    envelope: SampledWaveform
    osnr_linear: float = math.inf
    rin_db_hz: float = -math.inf

    def __post_init__(self):
        if not self.wavelength_nm > 0:
            raise ContractError("wavelength must be positive")
        if not 0 <= self.mod_index <= 1:
            raise ContractError(f"mod_index {self.mod_index} outside [0, 1]")
        if not self.osnr_linear > 0:
            raise ContractError("OSNR must be positive")

    @property
    def avg_power_w(self) -> float:
        return _dbm_to_w(self.avg_power_dbm)

    def attenuated(self, loss_db: float) -> "OpticalSignal":
        return replace(self, avg_power_dbm=self.avg_power_dbm - loss_db)


@dataclass(frozen=True)
class FiberParams:
    length_km: float = 0.0
    atten_db_per_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    group_index: float = 1.4682

    def __post_init__(self):
        if self.length_km < 0:
            raise ConfigError("must be >= 0", "length_km")
        if self.atten_db_per_km < 0:
            raise ConfigError("must be >= 0", "atten_db_per_km")


@dataclass(frozen=True)
class PdParams:
    responsivity_a_w: float = 0.6
    bandwidth_hz: float = 43e9
    load_ohm: float = 50.0
    temperature_k: float = 300.0

    def __post_init__(self):
        for name in ("responsivity_a_w", "bandwidth_hz", "load_ohm", "temperature_k"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", name)

    def check_responsivity(self, wavelength_nm: float) -> None:
        limit = quantum_limit_responsivity(wavelength_nm)
        if self.responsivity_a_w > limit:
            raise ConfigError(
                f"{self.responsivity_a_w} A/W exceeds the quantum limit {limit:.4f} A/W at {wavelength_nm:.1f} nm",
                "responsivity_a_w",
            )


@dataclass(frozen=True)
class RfAmpParams:
    gain_db: float = 24.0
    nf_db: float = 1.9
    band_lo_hz: float = 4.4e9
    band_hi_hz: float = 5.4e9

    def __post_init__(self):
        if self.nf_db < 0:
            raise ConfigError("must be >= 0", "nf_db")
        if not self.band_lo_hz < self.band_hi_hz:
            raise ConfigError("band_lo_hz must be below band_hi_hz", "band_lo_hz")


def _absolute_freqs(wf: SampledWaveform) -> np.ndarray:
    return wf.envelope_ref_hz + np.fft.fftfreq(len(wf), d=1.0 / wf.sample_rate_hz)


def _apply_response(wf: SampledWaveform, response: np.ndarray) -> SampledWaveform:
    return wf.with_samples(np.fft.ifft(np.fft.fft(wf.samples) * response))


# --------------------------------------------------------------------------
# modulator


def mzm_modulate(
    drive: SampledWaveform,
    laser_power_dbm: float,
    half_wave_drive_ratio: float,
    insertion_loss_db: float = 5.0,
    wavelength_nm: float = DEFAULT_WAVELENGTH_NM,
    rin_db_hz: float = -math.inf,
) -> OpticalSignal:
    """Quadrature-biased Mach-Zehnder intensity modulation.

    The intensity transfer is ``1 + sin(k * v(t))`` with
    ``k = (pi/2) * half_wave_drive_ratio`` and ``v`` the real passband drive.
    Its first-zone (subcarrier) response to an envelope of magnitude ``a`` is
    ``2*J1(k*a)``, which reduces to ``k*a`` in the small-signal limit and
    supplies the sinusoidal compression at larger drive.
    """
    if not 0 < half_wave_drive_ratio <= 1:
        raise ContractError(f"half_wave_drive_ratio {half_wave_drive_ratio} outside (0, 1]: over-drive")
    p = power(drive)
    if abs(p - 1.0) > 0.05:
        raise ContractError(f"drive must have unit power, got {p:.4f} W")
    k = 0.5 * np.pi * half_wave_drive_ratio
    d = drive.samples
    a = np.abs(d)
    with np.errstate(invalid="ignore", divide="ignore"):
        gain = np.where(a > 0, 2.0 * j1(k * a) / np.where(a > 0, a, 1.0), k)
    out = gain * d
    m = float(np.sqrt(np.mean(np.abs(out) ** 2)))
    if m > 1:
        warnings.warn(Diagnostic("overmodulation", f"modulation index {m:.3f} clamped to 1"), stacklevel=2)
    env = drive.with_samples(out / m) if m > 0 else drive
    return OpticalSignal(
        avg_power_dbm=laser_power_dbm - 10 * np.log10(2.0) - insertion_loss_db,
        wavelength_nm=wavelength_nm,
        mod_index=min(m, 1.0),
        envelope=env,
        rin_db_hz=rin_db_hz,
    )


# --------------------------------------------------------------------------
# fiber


def dispersion_fading(freq_hz, length_km: float, dispersion_ps_nm_km: float, wavelength_nm: float):
    """IM-DD chromatic-dispersion fading factor ``cos(pi*lambda^2*D*L*f^2/c)``."""
    lam = wavelength_nm * 1e-9
    d_si = dispersion_ps_nm_km * 1e-6  # ps/(nm km) -> s/m^2
    arg = np.pi * lam**2 * d_si * (length_km * 1e3) * np.asarray(freq_hz, dtype=float) ** 2 / C_LIGHT
    return np.cos(arg)


def fiber_group_delay_s(fiber: FiberParams) -> float:
    return fiber.length_km * 1e3 * fiber.group_index / C_LIGHT


def fiber_propagate(sig: OpticalSignal, fiber: FiberParams) -> OpticalSignal:
    """Attenuate the ledger and apply dispersion fading to every envelope bin.

    The propagation delay is not applied to the samples; the simulator works
    in a retarded time frame and books the delay separately
    (:func:`fiber_group_delay_s`).
    """
    loss = fiber.atten_db_per_km * fiber.length_km
    if fiber.length_km == 0 or fiber.dispersion_ps_nm_km == 0:
        return sig.attenuated(loss)
    h = dispersion_fading(_absolute_freqs(sig.envelope), fiber.length_km,
                          fiber.dispersion_ps_nm_km, sig.wavelength_nm)
    env = _apply_response(sig.envelope, h)
    # fading is booked on the modulation index so the envelope stays unit power
    scale = math.sqrt(power(env))
    return replace(sig, avg_power_dbm=sig.avg_power_dbm - loss,
                   mod_index=sig.mod_index * scale,
                   envelope=env.with_samples(env.samples / scale) if scale > 0 else env)


# --------------------------------------------------------------------------
# optical amplification and passive parts


def edfa_stage_osnr(input_power_w: float, nf_db: float, wavelength_nm: float) -> float:
    """Single-stage OSNR ``P_in / (NF * h * nu * B_ref)`` in the 0.1-nm reference band."""
    nu = C_LIGHT / (wavelength_nm * 1e-9)
    nf = 10 ** (nf_db / 10)
    return input_power_w / (nf * H_PLANCK * nu * osnr_reference_bandwidth_hz(wavelength_nm))


def edfa_amplify(sig: OpticalSignal, gain_db: float, nf_db: float) -> OpticalSignal:
    """Optical gain with the ASE contribution accumulated on the OSNR ledger."""
    if gain_db < 0:
        raise ContractError("EDFA gain must be >= 0 dB")
    stage = edfa_stage_osnr(sig.avg_power_w, nf_db, sig.wavelength_nm)
    osnr = 1.0 / (1.0 / sig.osnr_linear + 1.0 / stage)
    return replace(sig, avg_power_dbm=sig.avg_power_dbm + gain_db, osnr_linear=osnr)


def circulator_pass(sig: OpticalSignal, insertion_loss_db: float) -> OpticalSignal:
    if insertion_loss_db < 0:
        raise ContractError("insertion loss must be >= 0 dB")
    return sig.attenuated(insertion_loss_db)


# --------------------------------------------------------------------------
# detection


def detection_noise_densities(
    i_dc_a: float,
    load_ohm: float,
    temperature_k: float,
    osnr_linear: float = math.inf,
    wavelength_nm: float = DEFAULT_WAVELENGTH_NM,
    rin_db_hz: float = -math.inf,
) -> dict:
    """One-sided noise densities (W/Hz on the load) of a square-law detector.

    shot ``2*q*I*R_L``; thermal ``4*k*T`` (current variance ``4kT/R_L`` on
    ``R_L``); signal-ASE beat ``2*I^2*R_L/(OSNR*B_ref)``; laser RIN
    ``RIN*I^2*R_L``.
    """
    out = {
        "shot": 2 * Q_E * i_dc_a * load_ohm,
        "thermal": 4 * K_B * temperature_k,
        "signal_ase_beat": 0.0,
        "rin": 0.0,
    }
    if math.isfinite(osnr_linear):
        out["signal_ase_beat"] = 2 * i_dc_a**2 * load_ohm / (osnr_linear * osnr_reference_bandwidth_hz(wavelength_nm))
    if math.isfinite(rin_db_hz):
        out["rin"] = 10 ** (rin_db_hz / 10) * i_dc_a**2 * load_ohm
    return out


def square_law_detect(
    sig: OpticalSignal,
    responsivity_a_w: float,
    load_ohm: float,
    temperature_k: float,
    rng: RngHandle | None,
    noise_scale: float = 1.0,
    excess_noise_w_hz: float = 0.0,
) -> tuple[SampledWaveform, dict]:
    """Shared detection core for the PIN and the VCSEL-as-detector.

    ``noise_scale`` multiplies the total noise density (used for the
    injection penalty). Returns the waveform and the density breakdown.
    """
    i_dc = responsivity_a_w * sig.avg_power_w
    amp = i_dc * sig.mod_index * math.sqrt(load_ohm / 2.0)
    dens = detection_noise_densities(i_dc, load_ohm, temperature_k, sig.osnr_linear,
                                     sig.wavelength_nm, sig.rin_db_hz)
    dens["excess"] = float(excess_noise_w_hz)
    total = sum(dens.values()) * noise_scale
    wf = sig.envelope.with_samples(sig.envelope.samples * amp)
    wf = add_white_noise_density(wf, total, rng)
    info = {"i_dc_a": i_dc, "signal_power_w": amp**2, "noise_density_w_hz": total, **{f"{k}_w_hz": v for k, v in dens.items()}}
    return wf, info


def pin_detect(
    sig: OpticalSignal,
    pd: PdParams,
    rng: RngHandle | None = None,
    excess_noise_w_hz: float = 0.0,
) -> SampledWaveform:
    """PIN photodiode: photocurrent ``R*P``, RF amplitude ``R*P*m`` plus detection noise.

    ``rng=None`` disables every noise source. ``excess_noise_w_hz`` adds a
    receiver noise floor referenced to the detector load.
    """
    return pin_detect_with_info(sig, pd, rng, excess_noise_w_hz)[0]


def pin_detect_with_info(sig, pd: PdParams, rng=None, excess_noise_w_hz: float = 0.0):
    pd.check_responsivity(sig.wavelength_nm)
    env = sig.envelope
    top = env.envelope_ref_hz + env.sample_rate_hz / 2
    if top > pd.bandwidth_hz:
        warnings.warn(Diagnostic("pd_band_limit",
                                 f"envelope extends to {top / 1e9:.3f} GHz, beyond the {pd.bandwidth_hz / 1e9:.1f} GHz detector"),
                      stacklevel=2)
    return square_law_detect(sig, pd.responsivity_a_w, pd.load_ohm, pd.temperature_k, rng,
                             excess_noise_w_hz=excess_noise_w_hz)


# --------------------------------------------------------------------------
# electrical


def rf_amp_added_noise_density(nf_db: float) -> float:
    """Input-referred added noise density ``(F-1)*k*T0`` in W/Hz."""
    return (10 ** (nf_db / 10) - 1.0) * K_B * T0_K


def rf_amp_band_response(freqs_hz, amp: RfAmpParams) -> np.ndarray:
    """Flat in band; first-order (20 dB/decade) roll-off beyond each edge.

    The corner distance is 10% of the passband width.
    """
    f = np.asarray(freqs_hz, dtype=float)
    corner = 0.1 * (amp.band_hi_hz - amp.band_lo_hz)
    excess = np.maximum(amp.band_lo_hz - f, 0) + np.maximum(f - amp.band_hi_hz, 0)
    return 1.0 / np.sqrt(1.0 + (excess / corner) ** 2)


def rf_amplify(wf: SampledWaveform, amp: RfAmpParams, rng: RngHandle | None = None) -> SampledWaveform:
    """Low-noise amplifier: input-referred ``(F-1)kT0`` noise, gain, band edges."""
    wf = add_white_noise_density(wf, rf_amp_added_noise_density(amp.nf_db), rng)
    wf = wf.with_samples(wf.samples * 10 ** (amp.gain_db / 20))
    f = _absolute_freqs(wf)
    if np.any((f < amp.band_lo_hz) | (f > amp.band_hi_hz)):
        wf = _apply_response(wf, rf_amp_band_response(f, amp))
    return wf


def bandpass_response(freqs_hz, f_lo_hz: float, f_hi_hz: float) -> np.ndarray:
    """Brick wall with raised-cosine edges centred on the band edges.

    Each transition is 5% of the band wide; the response is exactly 1 inside
    ``[f_lo + t/2, f_hi - t/2]`` and exactly 0 outside ``[f_lo - t/2, f_hi + t/2]``.
    """
    f = np.asarray(freqs_hz, dtype=float)
    t = 0.05 * (f_hi_hz - f_lo_hz)
    h = np.zeros_like(f)
    flat = (f >= f_lo_hz + t / 2) & (f <= f_hi_hz - t / 2)
    h[flat] = 1.0
    for edge, sign in ((f_lo_hz, 1.0), (f_hi_hz, -1.0)):
        x = sign * (f - edge) / t + 0.5  # 0 at stopband side, 1 at passband side
        m = (x > 0) & (x < 1)
        h[m] = 0.5 * (1 - np.cos(np.pi * x[m]))
    return h


def bandpass(wf: SampledWaveform, f_lo_hz: float, f_hi_hz: float) -> SampledWaveform:
    """Zero-phase frequency-domain bandpass between absolute frequencies."""
    if not f_lo_hz < f_hi_hz:
        raise ContractError("bandpass requires f_lo < f_hi")
    lo_sup = wf.envelope_ref_hz - wf.sample_rate_hz / 2
    hi_sup = wf.envelope_ref_hz + wf.sample_rate_hz / 2
    if f_hi_hz <= lo_sup or f_lo_hz >= hi_sup:
        raise ContractError(
            f"band [{f_lo_hz:.4g}, {f_hi_hz:.4g}] Hz does not overlap the envelope support "
            f"[{lo_sup:.4g}, {hi_sup:.4g}] Hz")
    return _apply_response(wf, bandpass_response(_absolute_freqs(wf), f_lo_hz, f_hi_hz))
