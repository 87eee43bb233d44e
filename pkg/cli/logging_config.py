"""
Logging configuration for structured JSON logging.

Records go to stderr; stdout carries command output (mined JSONL, top-k lists).
"""
import json
import logging
import os
import sys
from typing import Optional, Union

STRUCTURED_FIELDS = ("run_id", "task", "duration_ms", "status", "epoch", "step", "loss", "lr")


class StructuredJSONFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        log_entry = {
            "timestamp": self.formatTime(record, self.datefmt),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        for name in STRUCTURED_FIELDS:
            if hasattr(record, name):
                log_entry[name] = getattr(record, name)

        if record.exc_info:
            log_entry["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_entry, ensure_ascii=False, default=str)


def setup_logging(log_level: Optional[str] = None) -> None:
    """Install the JSON handler on the root logger (level from arg or LOG_LEVEL)."""
    level_name = (log_level or os.environ.get("LOG_LEVEL") or "INFO").upper()
    formatter = StructuredJSONFormatter(datefmt="%Y-%m-%dT%H:%M:%S")

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level_name, logging.INFO))

    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)


def get_logger_with_context(
    name: str, run_id: Optional[str] = None, task: Optional[str] = None
) -> Union[logging.Logger, logging.LoggerAdapter]:
    """Get logger with contextual information."""
    logger = logging.getLogger(name)

    if run_id or task:
        extra_context = {}
        if run_id:
            extra_context["run_id"] = run_id
        if task:
            extra_context["task"] = task
        return logging.LoggerAdapter(logger, extra_context)

    return logger


def log_task(
    logger: logging.Logger,
    run_id: str,
    task: str,
    duration_ms: int,
    status: str,
    message: str = "",
) -> None:
    """Log one pipeline task completion with structured fields."""
    logger.info(
        message,
        extra={
            "run_id": run_id,
            "task": task,
            "duration_ms": duration_ms,
            "status": status,
        },
    )
