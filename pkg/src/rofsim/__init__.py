"""Link-level simulator for an analog radio-over-fiber fronthaul with an OIL-VCSEL DU."""

__version__ = "0.1.0"

from .errors import ConfigError, ContractError, Diagnostic, ExtractionError, ForwardBiasError, LockError
from .link import LinkRun, Scenario, build_testbed_scenario, link_budget, run

__all__ = [
    "ConfigError", "ContractError", "Diagnostic", "ExtractionError", "ForwardBiasError", "LockError",
    "LinkRun", "Scenario", "build_testbed_scenario", "link_budget", "run", "__version__",
]
