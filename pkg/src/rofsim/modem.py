"""Square QAM mapping, root-raised-cosine pulse shaping and symbol recovery.

Mapping tables (the interchange convention)
-------------------------------------------
A group of ``log2(M)`` bits is split in half: the first half drives the I
axis, the second half the Q axis, MSB first. Each half is a Gray code word
``g``; the axis level index ``i`` is the one with ``i ^ (i >> 1) == g`` and the
level is ``2*i - (sqrt(M) - 1)``, i.e. index 0 is the most negative level.
Symbols are scaled by ``1/sqrt(2*(M-1)/3)`` so the constellation has unit
mean energy. For 64-QAM the bit group ``100 100`` maps to ``(7+7j)/sqrt(42)``.

A received value exactly on a decision boundary is sliced to whichever of
the two neighbouring levels has the lower Gray code word.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError, ContractError, Diagnostic
from .signals import SampledWaveform

SUPPORTED_ORDERS = (4, 16, 64)


@dataclass(frozen=True)
class ModemConfig:
    order_m: int = 64
    symbol_rate_hz: float = 560e6 / 6
    rolloff: float = 0.35
    samples_per_symbol: int = 10
    rrc_span_symbols: int = 40
    rf_subcarrier_hz: float = 5e9

    def __post_init__(self):
        if self.order_m not in SUPPORTED_ORDERS:
            raise ConfigError(f"order_m must be one of {SUPPORTED_ORDERS}", "order_m")
        if not self.symbol_rate_hz > 0:
            raise ConfigError("must be positive", "symbol_rate_hz")
        if not 0 < self.rolloff <= 1:
            raise ConfigError("must be in (0, 1]", "rolloff")
        if int(self.samples_per_symbol) != self.samples_per_symbol or self.samples_per_symbol < 2:
            raise ConfigError("must be an integer >= 2", "samples_per_symbol")
        if int(self.rrc_span_symbols) != self.rrc_span_symbols or self.rrc_span_symbols < 4:
            raise ConfigError("must be an integer >= 4", "rrc_span_symbols")
        if self.rf_subcarrier_hz < 0:
            raise ConfigError("must be >= 0", "rf_subcarrier_hz")
        if self.symbol_rate_hz * (1 + self.rolloff) > self.sample_rate_hz:
            raise ConfigError("occupied band exceeds the sample rate", "samples_per_symbol")

    @property
    def sample_rate_hz(self) -> float:
        return self.symbol_rate_hz * self.samples_per_symbol

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order_m))

    @property
    def occupied_bandwidth_hz(self) -> float:
        return self.symbol_rate_hz * (1 + self.rolloff)


@dataclass(frozen=True, eq=False)
class SymbolStream:
    symbols: np.ndarray
    order_m: int

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=np.complex128).reshape(-1)
        s.setflags(write=False)
        object.__setattr__(self, "symbols", s)

    def __len__(self):
        return self.symbols.size


def _axis_params(order_m: int):
    if order_m not in SUPPORTED_ORDERS:
        raise ContractError(f"unsupported QAM order {order_m}")
    side = int(round(np.sqrt(order_m)))
    k = int(np.log2(side))
    return side, k


def qam_scale(order_m: int) -> float:
    return 1.0 / np.sqrt(2.0 * (order_m - 1) / 3.0)


def _gray(i):
    return i ^ (i >> 1)


def _gray_to_index_table(side: int) -> np.ndarray:
    """``table[g]`` is the level index whose Gray code word is ``g``."""
    table = np.empty(side, dtype=np.int64)
    for i in range(side):
        table[_gray(i)] = i
    return table


def constellation(order_m: int) -> np.ndarray:
    """All ``M`` points; entry ``n`` is the symbol of the bit group whose MSB-first value is ``n``."""
    bits = ((np.arange(order_m)[:, None] >> np.arange(int(np.log2(order_m)) - 1, -1, -1)) & 1)
    return qam_map(bits.reshape(-1), order_m).symbols


def _bits_to_int(bits: np.ndarray) -> np.ndarray:
    k = bits.shape[1]
    weights = 1 << np.arange(k - 1, -1, -1)
    return bits @ weights


def qam_map(bits, order_m: int) -> SymbolStream:
    """Map a 0/1 bit sequence to unit-energy QAM symbols (see module docstring)."""
    side, k = _axis_params(order_m)
    b = np.asarray(bits, dtype=np.int64).reshape(-1)
    if b.size % (2 * k):
        raise ContractError(f"bit count {b.size} not divisible by {2 * k}")
    if b.size and (b.min() < 0 or b.max() > 1):
        raise ContractError("bits must be 0 or 1")
    groups = b.reshape(-1, 2 * k)
    table = _gray_to_index_table(side)
    i_idx = table[_bits_to_int(groups[:, :k])]
    q_idx = table[_bits_to_int(groups[:, k:])]
    levels = 2 * np.arange(side) - (side - 1)
    sym = (levels[i_idx] + 1j * levels[q_idx]) * qam_scale(order_m)
    return SymbolStream(sym, order_m)


def _slice_axis(y: np.ndarray, side: int) -> np.ndarray:
    """Nearest level index on one axis, ties to the lower Gray code word."""
    t = (y + (side - 1)) / 2.0
    lo = np.floor(t)
    frac = t - lo
    idx = lo + (frac > 0.5)
    tie = frac == 0.5
    if np.any(tie):
        lo_i = lo[tie].astype(np.int64)
        prefer_hi = _gray(np.clip(lo_i + 1, 0, side - 1)) < _gray(np.clip(lo_i, 0, side - 1))
        idx[tie] = lo_i + prefer_hi
    return np.clip(idx, 0, side - 1).astype(np.int64)


def slice_symbols(symbols, order_m: int) -> np.ndarray:
    """Hard decisions: the constellation point nearest to each symbol."""
    side, _ = _axis_params(order_m)
    scale = qam_scale(order_m)
    s = np.asarray(symbols, dtype=np.complex128) / scale
    levels = 2 * np.arange(side) - (side - 1)
    return (levels[_slice_axis(s.real, side)] + 1j * levels[_slice_axis(s.imag, side)]) * scale


def qam_demap(symbols: SymbolStream, order_m: int) -> np.ndarray:
    """Minimum-distance per-axis slicing followed by inverse Gray mapping."""
    side, k = _axis_params(order_m)
    s = np.asarray(getattr(symbols, "symbols", symbols), dtype=np.complex128) / qam_scale(order_m)
    gi = _gray(_slice_axis(s.real, side))
    gq = _gray(_slice_axis(s.imag, side))
    shifts = np.arange(k - 1, -1, -1)
    bits = np.concatenate([(gi[:, None] >> shifts) & 1, (gq[:, None] >> shifts) & 1], axis=1)
    return bits.reshape(-1).astype(np.uint8)


def rrc_taps(rolloff: float, samples_per_symbol: int, span_symbols: int) -> np.ndarray:
    """Unit-energy root-raised-cosine impulse response with an odd tap count."""
    n = span_symbols * samples_per_symbol
    n += 1 - n % 2
    t = (np.arange(n) - (n - 1) / 2) / samples_per_symbol
    b = rolloff
    h = np.empty(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.sin(np.pi * t * (1 - b)) + 4 * b * t * np.cos(np.pi * t * (1 + b))
        den = np.pi * t * (1 - (4 * b * t) ** 2)
        h[:] = num / den
    h[t == 0] = 1 - b + 4 * b / np.pi
    sing = np.isclose(np.abs(t), 1 / (4 * b))
    h[sing] = (b / np.sqrt(2)) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                  + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
    return h / np.sqrt(np.sum(h**2))


def rrc_energy_fraction(rolloff: float, samples_per_symbol: int, span_symbols: int) -> float:
    """Fraction of the untruncated RRC energy kept within ``span_symbols``."""
    ref_span = max(128, 4 * span_symbols)
    ref = rrc_taps(rolloff, samples_per_symbol, ref_span)
    n = span_symbols * samples_per_symbol
    n += 1 - n % 2
    c = (ref.size - 1) // 2
    kept = ref[c - (n - 1) // 2: c + (n - 1) // 2 + 1]
    return float(np.sum(kept**2) / np.sum(ref**2))


def shaping_taps(cfg: ModemConfig) -> np.ndarray:
    """Transmit filter: unit-energy RRC scaled by ``sqrt(sps)`` for unit output power."""
    return rrc_taps(cfg.rolloff, cfg.samples_per_symbol, cfg.rrc_span_symbols) * np.sqrt(cfg.samples_per_symbol)


def pulse_shape(symbols: SymbolStream, cfg: ModemConfig) -> SampledWaveform:
    """Upsample and RRC-filter symbols onto the RF subcarrier's complex envelope.

    The output has unit power for unit-energy symbols (away from the edge
    transients) and ``timing`` points at the first symbol's pulse peak.
    """
    frac = rrc_energy_fraction(cfg.rolloff, cfg.samples_per_symbol, cfg.rrc_span_symbols)
    if frac < 0.999:
        warnings.warn(Diagnostic(
            "rrc_span_short",
            f"RRC span of {cfg.rrc_span_symbols} symbols keeps only {100 * frac:.3f}% of the filter energy",
        ), stacklevel=2)
    s = np.asarray(getattr(symbols, "symbols", symbols), dtype=np.complex128)
    if s.size == 0:
        raise ContractError("no symbols to shape")
    g = shaping_taps(cfg)
    up = np.zeros(s.size * cfg.samples_per_symbol, dtype=np.complex128)
    up[:: cfg.samples_per_symbol] = s
    x = fftconvolve(up, g)
    return SampledWaveform(x, cfg.sample_rate_hz, cfg.rf_subcarrier_hz, timing=(g.size - 1) // 2)


def alpha_fit(z: np.ndarray, ref: np.ndarray) -> complex:
    """Complex least-squares gain ``<ref, z> / <ref, ref>``."""
    den = np.vdot(ref, ref)
    if den == 0:
        raise ContractError("reference has zero energy")
    return complex(np.vdot(ref, z) / den)


def matched_filter_samples(wf: SampledWaveform, cfg: ModemConfig, n_symbols: int | None = None) -> np.ndarray:
    """Matched-filter output at the tracked symbol instants (not normalized)."""
    if wf.timing is None:
        raise ContractError("waveform carries no tracked symbol timing")
    h = rrc_taps(cfg.rolloff, cfg.samples_per_symbol, cfg.rrc_span_symbols)
    delay = (h.size - 1) // 2
    first = wf.timing + delay
    available = (len(wf) + h.size - 1 - 1 - first) // cfg.samples_per_symbol + 1
    if n_symbols is None:
        # symbols whose pulse peak lies inside the waveform with a full tail
        n_symbols = max(0, (len(wf) - 1 - delay - wf.timing) // cfg.samples_per_symbol + 1)
    if n_symbols > available:
        raise ContractError(f"waveform holds {available} symbol instants, {n_symbols} requested")
    y = fftconvolve(wf.samples, h)
    return y[first: first + n_symbols * cfg.samples_per_symbol: cfg.samples_per_symbol]


def recover_symbols(
    wf: SampledWaveform,
    cfg: ModemConfig,
    reference: SymbolStream | None = None,
    mode: str = "data-aided",
) -> SymbolStream:
    """Matched filter, known-timing decimation and complex-gain normalization.

    With a reference the gain is fitted against it (data-aided); otherwise it
    is fitted against hard decisions, iterating from RMS normalization.
    """
    if reference is not None and mode == "data-aided":
        ref = np.asarray(getattr(reference, "symbols", reference), dtype=np.complex128)
        z = matched_filter_samples(wf, cfg, ref.size)
        return SymbolStream(z / alpha_fit(z, ref), cfg.order_m)
    n = None if reference is None else len(reference)
    z = matched_filter_samples(wf, cfg, n)
    if z.size == 0:
        raise ContractError("no complete symbols in waveform")
    zn = z / np.sqrt(np.mean(np.abs(z) ** 2))
    for _ in range(4):
        d = slice_symbols(zn, cfg.order_m)
        zn = z / alpha_fit(z, d)
    return SymbolStream(zn, cfg.order_m)


def write_symbols_csv(path, symbols: SymbolStream) -> None:
    s = np.asarray(getattr(symbols, "symbols", symbols))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "I", "Q"])
        for k, v in enumerate(s):
            w.writerow([k, repr(float(v.real)), repr(float(v.imag))])
