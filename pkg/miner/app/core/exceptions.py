"""
Custom exception hierarchy for the rule subset miner.

This module defines specific exceptions for the different stages of the
pipeline (data loading, rule handling, selection on the front, experiments),
so callers and the CLI can report machine-readable error records.
"""
from datetime import datetime, timezone
from typing import Any, Dict, Optional


class RuleMinerError(Exception):
    """Base exception for all rule miner errors."""

    def __init__(
        self,
        message: str,
        error_code: str = "GENERAL_ERROR",
        details: Optional[Dict[str, Any]] = None,
        exit_code: int = 1
    ):
        self.message = message
        self.error_code = error_code
        self.details = details or {}
        self.exit_code = exit_code
        self.timestamp = datetime.now(timezone.utc)
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to a dictionary for error records."""
        return {
            "error": self.error_code,
            "message": self.message,
            "details": self.details,
            "timestamp": self.timestamp.isoformat(),
            "exit_code": self.exit_code
        }


# Dataset Errors

class DatasetError(RuleMinerError):
    """Base class for dataset-related errors."""

    def __init__(self, message: str, **kwargs):
        code = kwargs.pop("error_code", "DATASET_ERROR")
        super().__init__(message, error_code=code, **kwargs)


class DatasetLoadError(DatasetError):
    """Raised when a dataset file cannot be read or parsed."""

    def __init__(self, message: str = "Dataset could not be loaded", path: Optional[str] = None, **kwargs):
        details = kwargs.pop("details", {}) or {}
        if path:
            details["path"] = path
        super().__init__(message, error_code="DATASET_LOAD_FAILED", details=details, **kwargs)


class LabelError(DatasetError):
    """Raised when the label column is absent or not binary."""

    def __init__(
        self,
        message: str = "non-binary label",
        label_column: Optional[str] = None,
        distinct_values: Optional[int] = None,
        **kwargs
    ):
        details = kwargs.pop("details", None) or {}
        if label_column:
            details["label_column"] = label_column
        if distinct_values is not None:
            details["distinct_values"] = distinct_values
        super().__init__(message, error_code="INVALID_LABEL", details=details, **kwargs)


class EmptyDatasetError(DatasetError):
    """Raised when a dataset has no rows."""

    def __init__(self, message: str = "Dataset has zero rows", **kwargs):
        super().__init__(message, error_code="EMPTY_DATASET", **kwargs)


class InvalidSplitError(DatasetError):
    """Raised when a dataset is too small or split fractions are invalid."""

    def __init__(self, message: str = "Invalid split", **kwargs):
        super().__init__(message, error_code="INVALID_SPLIT", **kwargs)


class EmptyPositiveSetError(DatasetError):
    """Raised when an evaluation split holds no positive rows."""

    def __init__(self, message: str = "Evaluation split has no positive rows", split: Optional[str] = None, **kwargs):
        details = kwargs.pop("details", None) or {}
        if split:
            details["split"] = split
        super().__init__(message, error_code="NO_POSITIVES", details=details, **kwargs)


# Rule Errors

class RuleError(RuleMinerError):
    """Base class for rule-related errors."""

    def __init__(self, message: str, **kwargs):
        code = kwargs.pop("error_code", "RULE_ERROR")
        super().__init__(message, error_code=code, **kwargs)


class UnknownRuleError(RuleError):
    """Raised when a rule id is not part of the pool."""

    def __init__(self, message: str = "Unknown rule id", rule_id: Optional[int] = None, **kwargs):
        details = kwargs.pop("details", None) or {}
        if rule_id is not None:
            details["rule_id"] = rule_id
        super().__init__(message, error_code="UNKNOWN_RULE", details=details, **kwargs)


class EmptyConditionPoolError(RuleError):
    """Raised when rule induction is given no conditions."""

    def __init__(self, message: str = "Condition pool is empty", **kwargs):
        super().__init__(message, error_code="EMPTY_CONDITION_POOL", **kwargs)


class RuleFormatError(RuleError):
    """Raised when a rule record cannot be interpreted against a dataset."""

    def __init__(self, message: str = "Malformed rule record", reason: Optional[str] = None, **kwargs):
        details = kwargs.pop("details", None) or {}
        if reason:
            details["reason"] = reason
        super().__init__(message, error_code="RULE_FORMAT_ERROR", details=details, **kwargs)


# Selection Errors

class SelectionError(RuleMinerError):
    """Base class for solution selection errors."""

    def __init__(self, message: str, **kwargs):
        code = kwargs.pop("error_code", "SELECTION_ERROR")
        super().__init__(message, error_code=code, **kwargs)


class UnknownSsfMethodError(SelectionError):
    """Raised when an SSF method name is not recognised."""

    def __init__(self, message: str = "Unknown SSF method", method: Optional[str] = None, **kwargs):
        details = kwargs.pop("details", None) or {}
        if method:
            details["method"] = method
        super().__init__(message, error_code="UNKNOWN_SSF_METHOD", details=details, **kwargs)


class EmptyFrontError(SelectionError):
    """Raised when an operation requires a non-empty front or point set."""

    def __init__(self, message: str = "Front is empty", **kwargs):
        super().__init__(message, error_code="EMPTY_FRONT", **kwargs)


# Configuration Errors

class ConfigurationError(RuleMinerError):
    """Base class for configuration-related errors."""

    def __init__(self, message: str = "Configuration error", **kwargs):
        code = kwargs.pop("error_code", "CONFIGURATION_ERROR")
        super().__init__(message, error_code=code, **kwargs)


class InvalidConfigurationError(ConfigurationError):
    """Raised when configuration is invalid."""

    def __init__(
        self,
        message: str = "Invalid configuration",
        config_key: Optional[str] = None,
        **kwargs
    ):
        details = kwargs.pop("details", None) or {}
        if config_key:
            details["config_key"] = config_key

        super().__init__(
            message,
            error_code="INVALID_CONFIGURATION",
            details=details,
            **kwargs
        )


# Experiment and Output Errors

class ExperimentError(RuleMinerError):
    """Raised when a trial fails; carries the trial context."""

    def __init__(
        self,
        message: str = "Experiment trial failed",
        trial: Optional[int] = None,
        method: Optional[str] = None,
        cause: Optional[RuleMinerError] = None,
        **kwargs
    ):
        details = kwargs.pop("details", None) or {}
        if trial is not None:
            details["trial"] = trial
        if method:
            details["method"] = method
        if cause is not None:
            details["cause"] = cause.error_code
            for key, value in cause.details.items():
                details.setdefault(key, value)
        super().__init__(message, error_code="EXPERIMENT_FAILED", details=details, **kwargs)


class ExportError(RuleMinerError):
    """Raised when an output file cannot be written."""

    def __init__(self, message: str = "Export failed", path: Optional[str] = None, **kwargs):
        details = kwargs.pop("details", None) or {}
        if path:
            details["path"] = path
        super().__init__(message, error_code="EXPORT_FAILED", details=details, **kwargs)
