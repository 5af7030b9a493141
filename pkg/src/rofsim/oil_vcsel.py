"""Behavioral model of a forward-biased, optically injection-locked VCSEL.

The device sits behind an optical circulator in the DU and does two jobs with
one incident signal: it re-emits the injected downlink light toward the RU,
and it photodetects the same light as a resonant-cavity-enhanced detector
whose output feeds the uplink.

Locking law: the locking half-range scales with the square root of the
injection ratio, ``locking_coeff_ghz * sqrt(P_inj / P_out)``.

Injection penalty: below ``injection_ref_dbm`` the detected-path SNR is
degraded by ``injection_penalty_db_per_db`` dB for every dB of shortfall,
realized as a proportional increase of the detection noise density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ConfigError, ForwardBiasError, LockError
from .photonics import OpticalSignal, quantum_limit_responsivity, square_law_detect
from .signals import RngHandle, SampledWaveform


@dataclass(frozen=True)
class VcselParams:
    bias_ma: float = 6.0
    free_running_offset_ghz: float = 2.0
    locking_coeff_ghz: float = 10.0
    free_running_power_dbm: float = 0.0
    detector_responsivity_a_w: float = 0.1904
    reflection_gain_db: float = -3.0
    detector_bandwidth_hz: float = 10e9
    injection_ref_dbm: float = 6.2
    injection_penalty_db_per_db: float = 4.044
    load_ohm: float = 50.0
    temperature_k: float = 300.0
    wavelength_nm: float = 1559.79

    def __post_init__(self):
        if not self.bias_ma > 0:
            raise ForwardBiasError(
                f"bias {self.bias_ma} mA: the VCSEL operates only in forward DC bias; "
                "reverse-bias detection mode is not supported", "bias_ma")
        if not self.locking_coeff_ghz > 0:
            raise ConfigError("must be positive", "locking_coeff_ghz")
        if not self.detector_responsivity_a_w > 0:
            raise ConfigError("must be positive", "detector_responsivity_a_w")
        limit = quantum_limit_responsivity(self.wavelength_nm)
        if self.detector_responsivity_a_w > limit:
            raise ConfigError(f"exceeds the quantum limit {limit:.4f} A/W", "detector_responsivity_a_w")
        if not self.detector_bandwidth_hz > 0:
            raise ConfigError("must be positive", "detector_bandwidth_hz")
        if self.injection_penalty_db_per_db < 0:
            raise ConfigError("must be >= 0", "injection_penalty_db_per_db")
        if not self.load_ohm > 0:
            raise ConfigError("must be positive", "load_ohm")


@dataclass(frozen=True)
class LockState:
    locked: bool
    margin_ghz: float
    injection_ratio_db: float
    half_range_ghz: float = math.nan

    def to_dict(self) -> dict:
        return {"locked": bool(self.locked), "margin_ghz": float(self.margin_ghz),
                "injection_ratio_db": float(self.injection_ratio_db),
                "half_range_ghz": float(self.half_range_ghz)}


def lock_state(injected_power_dbm: float, vcsel_output_power_dbm: float, params: VcselParams) -> LockState:
    ratio_db = injected_power_dbm - vcsel_output_power_dbm
    half = params.locking_coeff_ghz * 10 ** (ratio_db / 20)
    margin = half - abs(params.free_running_offset_ghz)
    return LockState(margin >= 0, margin, ratio_db, half)


def injection_penalty_db(incident_dbm: float, params: VcselParams) -> float:
    return params.injection_penalty_db_per_db * max(0.0, params.injection_ref_dbm - incident_dbm)


def transact(
    incident: OpticalSignal,
    params: VcselParams,
    rng: RngHandle | None = None,
    excess_noise_w_hz: float = 0.0,
) -> tuple[OpticalSignal, SampledWaveform]:
    """Re-emit and photodetect one incident signal.

    Returns ``(reflected, detected)``. The reflected signal is the incident
    one with its power shifted by ``reflection_gain_db``; the detected
    waveform carries amplitude ``R_vcsel * P_inc * m`` plus shot, thermal,
    beat, RIN and ``excess_noise_w_hz`` noise, all scaled up by the injection
    penalty. Raises :class:`LockError` when the device is not locked.
    """
    state = lock_state(incident.avg_power_dbm, params.free_running_power_dbm, params)
    if not state.locked:
        raise LockError(state)
    reflected = replace(incident, avg_power_dbm=incident.avg_power_dbm + params.reflection_gain_db)
    penalty = injection_penalty_db(incident.avg_power_dbm, params)
    detected, _ = square_law_detect(
        incident, params.detector_responsivity_a_w, params.load_ohm, params.temperature_k, rng,
        noise_scale=10 ** (penalty / 10), excess_noise_w_hz=excess_noise_w_hz)
    return reflected, detected
