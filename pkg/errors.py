"""
Errors - Exception hierarchy with CLI exit codes
"""

from typing import Any, Dict, Optional


class PipelineError(Exception):
    """
    Base error for every pipeline stage

    Carries a machine-readable code and the process exit code used by main.py.
    """

    exit_code = 1
    default_code = "pipeline_error"

    def __init__(self, message: str, code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.code = code or self.default_code
        self.details = details or {}

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class ConfigError(PipelineError):
    """Usage or configuration problem (exit 1)"""
    exit_code = 1
    default_code = "invalid_config"


class DataValidationError(PipelineError):
    """Input data violates its schema or invariants (exit 2)"""
    exit_code = 2
    default_code = "invalid_data"


class NumericalError(PipelineError):
    """Numerical failure: degenerate labels, calibration, degenerate surfaces (exit 3)"""
    exit_code = 3
    default_code = "numerical_failure"
