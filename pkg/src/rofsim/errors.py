"""Exception and diagnostic types shared by every stage of the simulator."""

from __future__ import annotations


class ContractError(ValueError):
    """An operation was called with arguments outside its contract."""


class ConfigError(ValueError):
    """A configuration record is invalid.

    ``path`` is the dotted location of the offending field, when known.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        self.msg = message
        super().__init__(f"{path}: {message}" if path else message)


class ForwardBiasError(ConfigError):
    """The OIL-VCSEL was configured without forward DC bias."""


class LockError(RuntimeError):
    """The slave VCSEL is not injection locked.

    Carries the :class:`~rofsim.oil_vcsel.LockState` that failed and the
    name of the stage where loss of lock was detected.
    """

    def __init__(self, state, stage: str = "du_vcsel"):
        self.state = state
        self.stage = stage
        super().__init__(
            f"injection lock lost at {stage}: margin {state.margin_ghz:.3f} GHz, "
            f"injection ratio {state.injection_ratio_db:.2f} dB"
        )

    def to_dict(self) -> dict:
        return {
            "type": "LockError",
            "stage": self.stage,
            "locked": bool(self.state.locked),
            "margin_ghz": float(self.state.margin_ghz),
            "injection_ratio_db": float(self.state.injection_ratio_db),
        }


class ExtractionError(RuntimeError):
    """Service data could not be delimited in the uplink waveform."""


class Diagnostic(UserWarning):
    """Non-fatal structured warning (band limits, filter truncation, clamping).

    Emitted through :mod:`warnings` so callers may escalate or record them.
    """

    def __init__(self, code: str, message: str):
        self.code = code
        self.message = message
        super().__init__(f"[{code}] {message}")

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message}
