"""Scenario assembly and end-to-end execution of the duplex fronthaul channel.

Topology (fixed; only parameters vary)::

    CU: QAM TX -> MZM (source laser) -> EDFA -> OF1 -> circulator 1->2
    DU: OIL-VCSEL -> reflected -> circulator 2->3 -> OF2 -> RU: PIN -> LNA -> BPF
                  -> detected  -> + QoS subcarrier -> uplink TX -> OF1 (return)
    CU: PIN -> LNA -> QAM RX + QoS extraction

Tap points copy the waveform at named places; they never alter the chain.

QoS frame (bit-exact): preamble ``0xA5C3`` (16 bits), payload length as
big-endian u16, payload bytes, then CRC-16/CCITT-FALSE (poly 0x1021, init
0xFFFF) of length+payload, big-endian. Bits go out MSB first as BPSK
(bit 0 -> +1, bit 1 -> -1) with half-sine chips on a subcarrier offset
from the QAM subcarrier; frames repeat back to back from sample 0.
"""

from __future__ import annotations

import binascii
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, Diagnostic, ExtractionError
from .metrics import EvmReport, evm_report
from .modem import ModemConfig, SymbolStream, pulse_shape, qam_map, recover_symbols, rrc_taps
from .oil_vcsel import LockState, VcselParams, lock_state, transact
from .photonics import (
    DEFAULT_WAVELENGTH_NM,
    FiberParams,
    OpticalSignal,
    PdParams,
    RfAmpParams,
    bandpass,
    circulator_pass,
    dispersion_fading,
    edfa_amplify,
    fiber_group_delay_s,
    fiber_propagate,
    mzm_modulate,
    pin_detect,
    rf_amplify,
)
from .signals import RngHandle, SampledWaveform, power

QOS_PREAMBLE = 0xA5C3
QOS_OVERHEAD_BITS = 48
PREAMBLE_DETECT_THRESHOLD = 0.9

TAP_POINTS = ("cu_tx", "du_detected", "du_uplink", "ru_rx", "cu_rx")

# one independent noise/data stream per source
STREAM_PAYLOAD = 1
STREAM_QOS_PAYLOAD = 2
STREAM_RU_PIN = 10
STREAM_RU_LNA = 11
STREAM_VCSEL = 20
STREAM_CU_PIN = 21
STREAM_CU_LNA = 22


@dataclass(frozen=True)
class LaserParams:
    power_dbm: float = 10.0
    wavelength_nm: float = DEFAULT_WAVELENGTH_NM
    rin_db_hz: float = -150.0


@dataclass(frozen=True)
class MzmParams:
    half_wave_drive_ratio: float = 0.04
    insertion_loss_db: float = 5.0

    def __post_init__(self):
        if not 0 < self.half_wave_drive_ratio <= 1:
            raise ConfigError("must be in (0, 1]", "half_wave_drive_ratio")
        if self.insertion_loss_db < 0:
            raise ConfigError("must be >= 0", "insertion_loss_db")


@dataclass(frozen=True)
class EdfaParams:
    gain_db: float = 5.0
    nf_db: float = 5.0

    def __post_init__(self):
        if self.gain_db < 0:
            raise ConfigError("must be >= 0", "gain_db")


@dataclass(frozen=True)
class CirculatorParams:
    insertion_loss_db: float = 0.8

    def __post_init__(self):
        if self.insertion_loss_db < 0:
            raise ConfigError("must be >= 0", "insertion_loss_db")


@dataclass(frozen=True)
class BpfParams:
    enabled: bool = True
    f_lo_hz: float = 4.8e9
    f_hi_hz: float = 5.2e9

    def __post_init__(self):
        if not self.f_lo_hz < self.f_hi_hz:
            raise ConfigError("f_lo_hz must be below f_hi_hz", "f_lo_hz")


@dataclass(frozen=True)
class UplinkTxParams:
    """Low-cost uplink optical transmitter, same ledger form as the CU modulator path."""

    power_dbm: float = 10.0
    wavelength_nm: float = 1550.0
    half_wave_drive_ratio: float = 0.04
    insertion_loss_db: float = 0.0
    rin_db_hz: float = -150.0

    def __post_init__(self):
        if not 0 < self.half_wave_drive_ratio <= 1:
            raise ConfigError("must be in (0, 1]", "half_wave_drive_ratio")


@dataclass(frozen=True)
class ReceiverParams:
    """Electrical noise floor referenced to every photodetector load.

    Stands for the measurement front end (probe, amplifier chain, scope)
    that dominates the link noise; set by calibration.
    """

    noise_floor_dbm_hz: float = -150.19

    @property
    def density_w_hz(self) -> float:
        return 1e-3 * 10 ** (self.noise_floor_dbm_hz / 10)


@dataclass(frozen=True)
class NoiseSwitches:
    enabled: bool = True
    downlink: bool = True
    uplink: bool = True


@dataclass(frozen=True)
class QosSubcarrierConfig:
    enabled: bool = True
    subcarrier_offset_hz: float = -400e6
    bit_rate_bps: float = 1e6
    relative_power_db: float = -10.0

    def __post_init__(self):
        if not self.bit_rate_bps > 0:
            raise ConfigError("must be positive", "bit_rate_bps")

    def band(self) -> tuple[float, float]:
        """Main-lobe band of the BPSK subcarrier, as offsets from the QAM subcarrier."""
        return self.subcarrier_offset_hz - self.bit_rate_bps, self.subcarrier_offset_hz + self.bit_rate_bps


@dataclass(frozen=True)
class Scenario:
    modem: ModemConfig = field(default_factory=ModemConfig)
    source: LaserParams = field(default_factory=LaserParams)
    mzm: MzmParams = field(default_factory=MzmParams)
    edfa: EdfaParams = field(default_factory=EdfaParams)
    of1_fiber: FiberParams = field(default_factory=FiberParams)
    circulator: CirculatorParams = field(default_factory=CirculatorParams)
    vcsel: VcselParams = field(default_factory=VcselParams)
    of2_fiber: FiberParams = field(default_factory=lambda: FiberParams(length_km=1.0))
    pin: PdParams = field(default_factory=PdParams)
    lna_ru: RfAmpParams = field(default_factory=RfAmpParams)
    bpf: BpfParams = field(default_factory=BpfParams)
    uplink_tx: UplinkTxParams = field(default_factory=UplinkTxParams)
    lna_cu: RfAmpParams = field(default_factory=RfAmpParams)
    receiver: ReceiverParams = field(default_factory=ReceiverParams)
    qos: QosSubcarrierConfig = field(default_factory=QosSubcarrierConfig)
    noise: NoiseSwitches = field(default_factory=NoiseSwitches)
    seed: int = 1
    taps: tuple[str, ...] = ("ru_rx", "cu_rx")

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("must be a 64-bit unsigned integer", "seed")
        object.__setattr__(self, "taps", tuple(self.taps))
        for t in self.taps:
            if t not in TAP_POINTS:
                raise ConfigError(f"unknown tap {t!r}; valid taps: {', '.join(TAP_POINTS)}", "taps")
        if len(set(self.taps)) != len(self.taps):
            raise ConfigError("duplicate tap names", "taps")
        if self.qos.enabled:
            check_qos_band(self.qos, self.modem)
        for name in ("pin",):
            pd = getattr(self, name)
            try:
                pd.check_responsivity(self.source.wavelength_nm)
                pd.check_responsivity(self.uplink_tx.wavelength_nm)
            except ConfigError as exc:
                raise ConfigError(str(exc), name) from None

    def rng(self, stream_id: int, direction: str | None = None) -> RngHandle | None:
        """Noise stream for one source, or ``None`` when that noise is switched off."""
        if not self.noise.enabled:
            return None
        if direction is not None and not getattr(self.noise, direction):
            return None
        return RngHandle(self.seed, stream_id)


def check_qos_band(qos: QosSubcarrierConfig, modem: ModemConfig) -> None:
    lo, hi = qos.band()
    half = modem.occupied_bandwidth_hz / 2
    if hi > -half and lo < half:
        raise ConfigError(
            f"QoS band [{lo / 1e6:.1f}, {hi / 1e6:.1f}] MHz overlaps the QAM band +/-{half / 1e6:.1f} MHz",
            "qos.subcarrier_offset_hz")
    nyq = modem.sample_rate_hz / 2
    if lo <= -nyq or hi >= nyq:
        raise ConfigError(f"QoS band falls outside the simulated +/-{nyq / 1e6:.1f} MHz", "qos.subcarrier_offset_hz")


# --------------------------------------------------------------------------
# QoS service data


def qos_frame_bytes(payload: bytes) -> bytes:
    payload = bytes(payload)
    if len(payload) > 0xFFFF:
        raise ContractError("QoS payload longer than 65535 bytes")
    body = len(payload).to_bytes(2, "big") + payload
    crc = binascii.crc_hqx(body, 0xFFFF)
    return QOS_PREAMBLE.to_bytes(2, "big") + body + crc.to_bytes(2, "big")


def _bits_msb(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def _qos_bit_index(n: int, cfg: QosSubcarrierConfig, fs: float) -> tuple[np.ndarray, int]:
    idx = np.floor(np.arange(n) * (cfg.bit_rate_bps / fs)).astype(np.int64)
    return idx, int(math.floor(n * cfg.bit_rate_bps / fs))


def _qos_pulse(n: int, cfg: QosSubcarrierConfig, fs: float) -> np.ndarray:
    # half-sine chip shape, unit mean power; its sidelobes fall as 1/f^4 so
    # essentially nothing lands in the QAM band
    t = np.arange(n) * (cfg.bit_rate_bps / fs)
    return math.sqrt(2.0) * np.sin(np.pi * (t - np.floor(t)))


def qos_capacity_bytes(n_samples: int, fs: float, cfg: QosSubcarrierConfig) -> int:
    """Largest payload whose frame fits in ``n_samples``."""
    nb = int(math.floor(n_samples * cfg.bit_rate_bps / fs))
    return max(0, (nb - QOS_OVERHEAD_BITS) // 8)


def add_service_data(detected: SampledWaveform, qos_payload: bytes, cfg: QosSubcarrierConfig) -> SampledWaveform:
    """Superimpose the BPSK QoS subcarrier at ``relative_power_db`` below the input power."""
    if not cfg.enabled:
        return detected
    half_band = detected.sample_rate_hz / 2
    lo, hi = cfg.band()
    if lo <= -half_band or hi >= half_band:
        raise ConfigError("QoS subcarrier outside the simulated band", "qos.subcarrier_offset_hz")
    n = len(detected)
    idx, nb = _qos_bit_index(n, cfg, detected.sample_rate_hz)
    frame = _bits_msb(qos_frame_bytes(qos_payload))
    if frame.size > nb:
        raise ContractError(f"QoS frame of {frame.size} bits does not fit in {nb} bit periods")
    stream = np.resize(frame, nb + 1)
    chips = (1.0 - 2.0 * stream[idx]) * _qos_pulse(n, cfg, detected.sample_rate_hz)
    amp = math.sqrt(power(detected) * 10 ** (cfg.relative_power_db / 10))
    carrier = np.exp(2j * np.pi * cfg.subcarrier_offset_hz * np.arange(n) / detected.sample_rate_hz)
    return detected.with_samples(detected.samples + amp * chips * carrier)


def qos_soft_bits(wf: SampledWaveform, cfg: QosSubcarrierConfig) -> np.ndarray:
    """Matched-filter BPSK decisions, phase-aligned by squaring (sign ambiguous)."""
    n = len(wf)
    idx, nb = _qos_bit_index(n, cfg, wf.sample_rate_hz)
    g = _qos_pulse(n, cfg, wf.sample_rate_hz)
    y = g * wf.samples * np.exp(-2j * np.pi * cfg.subcarrier_offset_hz * np.arange(n) / wf.sample_rate_hz)
    m = idx < nb
    norm = np.bincount(idx[m], weights=g[m] ** 2, minlength=nb)
    soft = (np.bincount(idx[m], weights=y.real[m], minlength=nb)
            + 1j * np.bincount(idx[m], weights=y.imag[m], minlength=nb)) / np.maximum(norm, 1e-300)
    theta = 0.5 * np.angle(np.sum(soft**2))
    return (soft * np.exp(-1j * theta)).real


def extract_service_data(uplink: SampledWaveform, cfg: QosSubcarrierConfig) -> tuple[bytes, bool]:
    """Recover the first QoS frame: returns ``(payload, crc_ok)``.

    The preamble is located by normalized correlation (either polarity, to
    resolve the BPSK phase ambiguity); raises :class:`ExtractionError` when
    no preamble is found or the frame is truncated.
    """
    r = qos_soft_bits(uplink, cfg)
    pre = 1.0 - 2.0 * _bits_msb(QOS_PREAMBLE.to_bytes(2, "big"))
    if r.size < QOS_OVERHEAD_BITS:
        raise ExtractionError("uplink too short to hold a QoS frame")
    corr = np.correlate(r, pre, mode="valid")
    energy = np.sqrt(pre.size * np.convolve(r**2, np.ones(pre.size), mode="valid"))
    with np.errstate(invalid="ignore", divide="ignore"):
        ncorr = np.where(energy > 0, corr / energy, 0.0)
    hits = np.flatnonzero(np.abs(ncorr) >= PREAMBLE_DETECT_THRESHOLD)
    if hits.size == 0:
        raise ExtractionError("QoS preamble not found")
    start = int(hits[0])
    bits = (np.sign(ncorr[start]) * r < 0).astype(np.uint8)
    pos = start + 16
    if pos + 16 > bits.size:
        raise ExtractionError("QoS frame truncated before the length field")
    length = int.from_bytes(np.packbits(bits[pos: pos + 16]).tobytes(), "big")
    end = pos + 16 + 8 * length + 16
    if end > bits.size:
        raise ExtractionError(f"QoS frame of {length} bytes truncated")
    body = np.packbits(bits[pos: end - 16]).tobytes()
    crc = int.from_bytes(np.packbits(bits[end - 16: end]).tobytes(), "big")
    return body[2:], binascii.crc_hqx(body, 0xFFFF) == crc


# --------------------------------------------------------------------------
# scenario construction


def build_testbed_scenario(overrides: dict | None = None) -> Scenario:
    """Default testbed scenario with dotted-path ``overrides`` applied last."""
    from .config import apply_overrides

    return apply_overrides(Scenario(), overrides or {})


# --------------------------------------------------------------------------
# execution


@dataclass(eq=False)
class LinkRun:
    tap_waveforms: dict
    reference_symbols: SymbolStream
    downlink_symbols_at_ru: SymbolStream
    uplink_symbols_at_cu: SymbolStream
    downlink_report: EvmReport
    uplink_report: EvmReport
    qos_payload_sent: bytes
    qos_payload_recovered: bytes
    qos_crc_ok: bool
    lock_state: LockState
    delays: dict
    optical_powers_dbm: dict
    diagnostics: list = field(default_factory=list)


def _finite(stage: str, wf: SampledWaveform) -> SampledWaveform:
    if not wf.is_finite():
        raise FloatingPointError(f"non-finite samples after stage {stage}")
    return wf


def transmit(scenario: Scenario, payload_bits) -> tuple[SymbolStream, SampledWaveform]:
    syms = qam_map(payload_bits, scenario.modem.order_m)
    return syms, pulse_shape(syms, scenario.modem)


def run(scenario: Scenario, payload_bits, qos_payload: bytes = b"") -> LinkRun:
    """Execute one downlink + uplink pass and measure both directions.

    Raises :class:`~rofsim.errors.LockError` if the DU VCSEL is not locked.
    Non-fatal :class:`~rofsim.errors.Diagnostic` warnings are collected into
    ``LinkRun.diagnostics``.
    """
    payload_bits = np.asarray(payload_bits)
    if payload_bits.size == 0:
        raise ContractError("payload must be non-empty")
    sc = scenario
    cfg = sc.modem
    fs = cfg.sample_rate_hz
    floor = sc.receiver.density_w_hz if sc.noise.enabled else 0.0
    taps: dict[str, SampledWaveform] = {}
    optical: dict[str, float] = {}

    def tap(name, wf):
        _finite(name, wf)
        if name in sc.taps:
            taps[name] = wf
        return wf

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", Diagnostic)

        ref, tx = transmit(sc, payload_bits)
        tap("cu_tx", tx)
        mf_delay = (rrc_taps(cfg.rolloff, cfg.samples_per_symbol, cfg.rrc_span_symbols).size - 1) // 2
        delays = {
            "tx_pulse_shaping_s": tx.timing / fs,
            "of1_downlink_s": fiber_group_delay_s(sc.of1_fiber),
            "of2_s": fiber_group_delay_s(sc.of2_fiber),
            "of1_uplink_s": fiber_group_delay_s(sc.of1_fiber),
            "rx_matched_filter_s": mf_delay / fs,
            "symbol_timing_samples": int(tx.timing + mf_delay),
        }

        opt = mzm_modulate(tx, sc.source.power_dbm, sc.mzm.half_wave_drive_ratio,
                           sc.mzm.insertion_loss_db, sc.source.wavelength_nm, sc.source.rin_db_hz)
        optical["cu_modulator_out"] = opt.avg_power_dbm
        opt = edfa_amplify(opt, sc.edfa.gain_db, sc.edfa.nf_db)
        optical["edfa_out"] = opt.avg_power_dbm
        opt = fiber_propagate(opt, sc.of1_fiber)
        opt = circulator_pass(opt, sc.circulator.insertion_loss_db)
        optical["vcsel_incident"] = opt.avg_power_dbm
        state = lock_state(opt.avg_power_dbm, sc.vcsel.free_running_power_dbm, sc.vcsel)
        reflected, detected = transact(opt, sc.vcsel, sc.rng(STREAM_VCSEL, "uplink"), floor)
        _finite("du_vcsel", detected)

        # downlink: DU -> RU
        dl = circulator_pass(reflected, sc.circulator.insertion_loss_db)
        dl = fiber_propagate(dl, sc.of2_fiber)
        optical["ru_pin_incident"] = dl.avg_power_dbm
        ru = _finite("ru_pin", pin_detect(dl, sc.pin, sc.rng(STREAM_RU_PIN, "downlink"), floor))
        ru = _finite("ru_lna", rf_amplify(ru, sc.lna_ru, sc.rng(STREAM_RU_LNA, "downlink")))
        if sc.bpf.enabled:
            ru = bandpass(ru, sc.bpf.f_lo_hz, sc.bpf.f_hi_hz)
        tap("ru_rx", ru)
        dl_syms = recover_symbols(ru, cfg, ref)

        # uplink: DU -> CU
        tap("du_detected", detected)
        up = add_service_data(detected, qos_payload, sc.qos)
        tap("du_uplink", up)
        drive = up.with_samples(up.samples / math.sqrt(power(up)))
        ut = sc.uplink_tx
        uopt = mzm_modulate(drive, ut.power_dbm, ut.half_wave_drive_ratio, ut.insertion_loss_db,
                            ut.wavelength_nm, ut.rin_db_hz)
        optical["uplink_tx_out"] = uopt.avg_power_dbm
        uopt = fiber_propagate(uopt, sc.of1_fiber)
        optical["cu_pin_incident"] = uopt.avg_power_dbm
        cu = _finite("cu_pin", pin_detect(uopt, sc.pin, sc.rng(STREAM_CU_PIN, "uplink"), floor))
        cu = rf_amplify(cu, sc.lna_cu, sc.rng(STREAM_CU_LNA, "uplink"))
        tap("cu_rx", cu)
        ul_syms = recover_symbols(cu, cfg, ref)

        recovered, crc_ok = b"", False
        if sc.qos.enabled:
            try:
                recovered, crc_ok = extract_service_data(cu, sc.qos)
            except ExtractionError as exc:
                warnings.warn(Diagnostic("qos_extraction", str(exc)))

    diags = [w.message.to_dict() for w in caught if isinstance(w.message, Diagnostic)]
    return LinkRun(
        tap_waveforms=taps,
        reference_symbols=ref,
        downlink_symbols_at_ru=dl_syms,
        uplink_symbols_at_cu=ul_syms,
        downlink_report=evm_report(dl_syms, ref, cfg.order_m),
        uplink_report=evm_report(ul_syms, ref, cfg.order_m),
        qos_payload_sent=bytes(qos_payload),
        qos_payload_recovered=recovered,
        qos_crc_ok=bool(crc_ok),
        lock_state=state,
        delays=delays,
        optical_powers_dbm=optical,
        diagnostics=diags,
    )


# --------------------------------------------------------------------------
# algebraic link budget (noise-free expectation, independent of the sample path)


def _electrical_dbm(resp: float, p_opt_dbm: float, m: float, load: float) -> float:
    i_amp = resp * 1e-3 * 10 ** (p_opt_dbm / 10) * m
    return 10 * math.log10(i_amp**2 * load / 2 / 1e-3)


def link_budget(scenario: Scenario) -> dict:
    """Expected optical (dBm) and RF (dBm) levels from dB arithmetic alone.

    Uses the small-signal modulation index ``(pi/2)*ratio`` and the
    dispersion fading evaluated at the RF subcarrier.
    """
    sc = scenario
    f_rf = sc.modem.rf_subcarrier_hz

    def fade(fib, lam):
        return 20 * math.log10(abs(float(dispersion_fading(f_rf, fib.length_km, fib.dispersion_ps_nm_km, lam))))

    m_cu = 0.5 * math.pi * sc.mzm.half_wave_drive_ratio
    p_inc = (sc.source.power_dbm - 10 * math.log10(2) - sc.mzm.insertion_loss_db + sc.edfa.gain_db
             - sc.of1_fiber.atten_db_per_km * sc.of1_fiber.length_km - sc.circulator.insertion_loss_db)
    fade1 = fade(sc.of1_fiber, sc.source.wavelength_nm)
    p_ru = (p_inc + sc.vcsel.reflection_gain_db - sc.circulator.insertion_loss_db
            - sc.of2_fiber.atten_db_per_km * sc.of2_fiber.length_km)
    fade2 = fade(sc.of2_fiber, sc.source.wavelength_nm)
    ut = sc.uplink_tx
    p_cu = (ut.power_dbm - 10 * math.log10(2) - ut.insertion_loss_db
            - sc.of1_fiber.atten_db_per_km * sc.of1_fiber.length_km)
    fade_up = fade(sc.of1_fiber, ut.wavelength_nm)
    m_up = 0.5 * math.pi * ut.half_wave_drive_ratio
    return {
        "vcsel_incident_dbm": p_inc,
        "ru_pin_incident_dbm": p_ru,
        "cu_pin_incident_dbm": p_cu,
        "du_detected_rf_dbm": _electrical_dbm(sc.vcsel.detector_responsivity_a_w, p_inc, m_cu, sc.vcsel.load_ohm) + fade1,
        "ru_rx_rf_dbm": _electrical_dbm(sc.pin.responsivity_a_w, p_ru, m_cu, sc.pin.load_ohm) + fade1 + fade2 + sc.lna_ru.gain_db,
        "cu_rx_rf_dbm": _electrical_dbm(sc.pin.responsivity_a_w, p_cu, m_up, sc.pin.load_ohm) + fade_up + sc.lna_cu.gain_db,
    }
