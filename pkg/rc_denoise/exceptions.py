"""
Error hierarchy for rc-denoise

Every error carries a stable string code (used in the CLI error envelope)
and the process exit code the CLI returns for it.
"""

from typing import Optional


class RCDenoiseError(Exception):
    """Base class for all rc-denoise errors"""

    code = "INTERNAL_ERROR"
    exit_code = 1

    def to_envelope(self) -> dict:
        return {
            "success": False,
            "error": {"code": self.code, "message": str(self)},
        }


class InvalidArgumentError(RCDenoiseError, ValueError):
    code = "INVALID_ARGUMENT"


class ConfigError(RCDenoiseError):
    code = "CONFIG_ERROR"
    exit_code = 2


class OrchestrationError(RCDenoiseError):
    code = "ORCHESTRATION_ERROR"


class UntrainedModelError(RCDenoiseError):
    code = "UNTRAINED_MODEL"


class SchemaVersionError(RCDenoiseError):
    code = "SCHEMA_VERSION"


class ModelParseError(RCDenoiseError):
    code = "MODEL_PARSE"

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} (at byte offset {offset})")
        self.offset = offset


# MARK: - Numeric failures (exit code 3)

class NumericalError(RCDenoiseError):
    code = "NUMERIC_FAILURE"
    exit_code = 3


class IntegrationBlowupError(NumericalError):
    code = "INTEGRATION_BLOWUP"


class DegenerateSignalError(NumericalError):
    code = "DEGENERATE_SIGNAL"


class DegenerateTopologyError(NumericalError):
    code = "DEGENERATE_TOPOLOGY"


class InstabilityError(NumericalError):
    code = "RESERVOIR_INSTABILITY"

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class RankDeficiencyError(NumericalError):
    code = "RANK_DEFICIENT"


class SingularityError(NumericalError):
    code = "SINGULAR_INNOVATION"


class NoFeasiblePointError(NumericalError):
    code = "NO_FEASIBLE_POINT"


class PruneFloorError(NumericalError):
    code = "PRUNE_FLOOR"
