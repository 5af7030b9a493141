"""Sampled complex-envelope waveforms, seeded noise and spectrum estimation.

Convention: the physical real passband signal is
``Re{x(t) * exp(j*2*pi*envelope_ref_hz*t)}`` and power bookkeeping uses the
envelope directly, i.e. ``mean(|x|**2)`` is the power in watts delivered to
the stage load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import ContractError

IQ_MAGIC = b"RFIQ"
IQ_VERSION = 1
_IQ_HEADER = struct.Struct("<4sIddQ")


@dataclass(frozen=True, eq=False)
class SampledWaveform:
    """Complex envelope samples plus the metadata needed to interpret them.

    ``timing`` is the sample index of the first symbol's pulse peak, tracked
    through every stage so receivers can decimate with known timing. It is
    ``None`` for waveforms that carry no symbol stream.
    """

    samples: np.ndarray
    sample_rate_hz: float
    envelope_ref_hz: float = 0.0
    timing: int | None = None

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.complex128)
        if x.ndim != 1:
            raise ContractError("samples must be one-dimensional")
        if x.size < 1:
            raise ContractError("waveform must contain at least one sample")
        if not self.sample_rate_hz > 0:
            raise ContractError("sample_rate_hz must be positive")
        if self.envelope_ref_hz < 0:
            raise ContractError("envelope_ref_hz must be non-negative")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def time_axis(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate_hz

    def with_samples(self, samples) -> "SampledWaveform":
        """Same metadata, new samples."""
        return replace(self, samples=samples)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.samples)))


@dataclass(frozen=True)
class RngHandle:
    """Key of one independent noise stream.

    Backed by the counter-based Philox generator keyed on ``(seed, stream_id)``,
    so streams never overlap and adding a stream leaves the others untouched.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ContractError(f"{name} must be a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        key = (int(self.stream_id) << 64) | int(self.seed)
        return np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream_id: int) -> "RngHandle":
        return RngHandle(self.seed, stream_id)

    def complex_normal(self, n: int, variance: float) -> np.ndarray:
        """``n`` circularly-symmetric Gaussian samples of total variance ``variance``."""
        g = self.generator().standard_normal(2 * n)
        return np.sqrt(variance / 2.0) * (g[0::2] + 1j * g[1::2])


def power(wf: SampledWaveform) -> float:
    """Mean power ``mean(|x|^2)`` in watts."""
    x = wf.samples
    if x.size == 0:
        raise ContractError("power of an empty waveform")
    return float(np.mean(x.real**2 + x.imag**2))


def add_awgn(wf: SampledWaveform, noise_power_w: float, rng: RngHandle) -> SampledWaveform:
    """Add complex white Gaussian noise of total per-sample variance ``noise_power_w``."""
    if noise_power_w < 0 or not np.isfinite(noise_power_w):
        raise ContractError(f"noise power must be finite and >= 0, got {noise_power_w}")
    if noise_power_w == 0:
        return wf
    return wf.with_samples(wf.samples + rng.complex_normal(len(wf), noise_power_w))


def add_white_noise_density(wf: SampledWaveform, density_w_hz: float, rng: RngHandle | None):
    """Add white noise of one-sided density ``density_w_hz`` over the sampled band.

    The per-sample variance is ``density * sample_rate``; after a unit-energy
    matched filter the noise in a symbol-rate bandwidth is ``density * Rs``.
    """
    if rng is None or density_w_hz <= 0:
        return wf
    return add_awgn(wf, density_w_hz * wf.sample_rate_hz, rng)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Two-sided power spectral density around ``envelope_ref_hz``."""

    freqs_hz: np.ndarray  # offset from envelope_ref_hz
    psd_w_hz: np.ndarray
    envelope_ref_hz: float = 0.0
    resolution_hz: float = field(default=0.0)

    @property
    def absolute_freqs_hz(self) -> np.ndarray:
        return self.freqs_hz + self.envelope_ref_hz

    @property
    def bin_width_hz(self) -> float:
        return float(self.freqs_hz[1] - self.freqs_hz[0]) if self.freqs_hz.size > 1 else 0.0

    def integrated_power(self) -> float:
        return float(np.sum(self.psd_w_hz) * self.bin_width_hz)

    def band_power(self, lo_hz: float, hi_hz: float) -> float:
        """Power in offset band ``[lo_hz, hi_hz]`` (bins whose centres fall inside)."""
        m = (self.freqs_hz >= lo_hz) & (self.freqs_hz <= hi_hz)
        return float(np.sum(self.psd_w_hz[m]) * self.bin_width_hz)

    def occupied_band(self, db_down: float = 40.0, around_hz: float | None = None):
        """Outermost offsets where the PSD is within ``db_down`` of its peak.

        With ``around_hz`` the search is restricted to the contiguous region
        above the level that contains that offset, which ignores separate
        spectral lines (e.g. a telemetry subcarrier).
        """
        p = self.psd_w_hz
        above = p >= p.max() * 10 ** (-db_down / 10)
        if around_hz is None:
            idx = np.flatnonzero(above)
            return float(self.freqs_hz[idx[0]]), float(self.freqs_hz[idx[-1]])
        k = int(np.argmin(np.abs(self.freqs_hz - around_hz)))
        if not above[k]:
            raise ContractError("reference offset is below the occupied-band level")
        lo = k
        while lo > 0 and above[lo - 1]:
            lo -= 1
        hi = k
        while hi < p.size - 1 and above[hi + 1]:
            hi += 1
        return float(self.freqs_hz[lo]), float(self.freqs_hz[hi])

    def occupied_bandwidth(self, db_down: float = 40.0, around_hz: float | None = None) -> float:
        lo, hi = self.occupied_band(db_down, around_hz)
        return hi - lo + self.bin_width_hz


def psd_estimate(
    wf: SampledWaveform,
    segment_len: int = 4096,
    overlap_fraction: float = 0.5,
    window: str = "hann",
) -> Spectrum:
    """Averaged-periodogram (Welch) PSD estimate of a complex envelope.

    The window is normalized so that the integral of the density equals the
    time-domain power for stationary inputs.
    """
    n = len(wf)
    if segment_len < 1 or segment_len > n:
        raise ContractError(f"segment_len {segment_len} must be in [1, {n}]")
    if not 0 <= overlap_fraction < 1:
        raise ContractError("overlap_fraction must be in [0, 1)")
    noverlap = int(round(segment_len * overlap_fraction))
    f, p = sps.welch(
        wf.samples,
        fs=wf.sample_rate_hz,
        window="boxcar" if window in ("rect", "rectangular") else window,
        nperseg=segment_len,
        noverlap=noverlap,
        detrend=False,
        return_onesided=False,
        scaling="density",
    )
    f = np.fft.fftshift(f)
    p = np.fft.fftshift(p)
    return Spectrum(f, p, wf.envelope_ref_hz, wf.sample_rate_hz / segment_len)


def write_iq(path, wf: SampledWaveform) -> None:
    """Write the little-endian ``RFIQ`` dump: header then interleaved float32 I/Q."""
    body = np.empty(2 * len(wf), dtype="<f4")
    body[0::2] = wf.samples.real
    body[1::2] = wf.samples.imag
    with open(path, "wb") as fh:
        fh.write(_IQ_HEADER.pack(IQ_MAGIC, IQ_VERSION, float(wf.sample_rate_hz),
                                 float(wf.envelope_ref_hz), len(wf)))
        fh.write(body.tobytes())


def read_iq(path) -> SampledWaveform:
    raw = Path(path).read_bytes()
    if len(raw) < _IQ_HEADER.size:
        raise ContractError("IQ dump shorter than its header")
    magic, version, fs, fref, count = _IQ_HEADER.unpack_from(raw)
    if magic != IQ_MAGIC:
        raise ContractError(f"bad IQ magic {magic!r}")
    if version != IQ_VERSION:
        raise ContractError(f"unsupported IQ dump version {version}")
    body = np.frombuffer(raw, dtype="<f4", offset=_IQ_HEADER.size)
    if body.size != 2 * count:
        raise ContractError(f"IQ body holds {body.size // 2} samples, header says {count}")
    x = body[0::2].astype(np.float64) + 1j * body[1::2].astype(np.float64)
    return SampledWaveform(x, fs, fref)


def db10(x):
    return 10.0 * np.log10(x)


def undb10(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def dbm_to_w(p_dbm):
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def w_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float) / 1e-3)
