"""
Error types for lesion-sense.

Every error carries a machine-readable ``code`` and a human ``hint`` so that
command-line output can be rendered as ``{"error": ..., "hint": ...}``.
"""
from typing import Any, Dict, Optional


class LesionSenseError(Exception):
    """Base error with an error code and a hint."""

    code = "lesion_sense_error"

    def __init__(self, hint: str, code: Optional[str] = None):
        super().__init__(hint)
        self.hint = hint
        if code:
            self.code = code

    def payload(self) -> Dict[str, Any]:
        return {"error": self.code, "hint": self.hint}


class OntologyError(LesionSenseError, ValueError):
    """Invalid lexicon: cycles, duplicate synonyms, dangling parents, empty files."""

    code = "invalid_ontology"

    def __init__(self, hint: str, code: Optional[str] = None, label: str = ""):
        super().__init__(hint, code)
        self.label = label


class DataError(LesionSenseError, ValueError):
    """Malformed corpora, volumes, patches or evaluation inputs."""

    code = "invalid_data"

    def __init__(
        self, hint: str, code: Optional[str] = None, line_number: Optional[int] = None
    ):
        super().__init__(hint, code)
        self.line_number = line_number

    def payload(self) -> Dict[str, Any]:
        payload = super().payload()
        if self.line_number is not None:
            payload["line"] = self.line_number
        return payload


class ConfigError(LesionSenseError, ValueError):
    """Unknown config keys, invalid values or unresolvable paths."""

    code = "invalid_config"


class ModelError(LesionSenseError, RuntimeError):
    """Shape mismatches between inputs, parameters and network config."""

    code = "model_error"


class TrainingDivergedError(LesionSenseError, RuntimeError):
    """Training produced a non-finite loss."""

    code = "training_diverged"

    def __init__(self, hint: str, epoch: int, step: int):
        super().__init__(hint)
        self.epoch = epoch
        self.step = step


def error_payload(exc: Exception) -> Dict[str, Any]:
    """Render any exception as an error/hint payload."""
    if isinstance(exc, LesionSenseError):
        return exc.payload()
    if isinstance(exc, OSError):
        return {"error": "io_error", "hint": str(exc)}
    return {"error": "internal_error", "hint": str(exc) or exc.__class__.__name__}
