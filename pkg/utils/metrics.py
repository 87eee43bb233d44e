"""
Prometheus metrics for lesion-sense runs.

Batch runs have no scrape endpoint, so the registry is flushed to a
``metrics.prom`` text file in the run output directory.
"""
from pathlib import Path
from typing import Union

from prometheus_client import (
    REGISTRY,
    Counter,
    Gauge,
    Histogram,
    Info,
    generate_latest,
    write_to_textfile,
)

# Application info metric
app_info = Info(
    "lesionsense_app_info",
    "Application information for lesion-sense",
)

# Mining metrics
sentences_mined_counter = Counter(
    "lesionsense_sentences_mined_total",
    "Total number of report sentences mined",
    ["outcome"],
)

labels_mined_counter = Counter(
    "lesionsense_labels_mined_total",
    "Total number of positive labels produced by mining (after expansion)",
)

# Training metrics
training_steps_counter = Counter(
    "lesionsense_training_steps_total",
    "Total number of SGD steps",
    ["loss_mode"],
)

training_loss_gauge = Gauge(
    "lesionsense_training_epoch_loss",
    "Mean training loss of the last completed epoch",
    ["loss_mode"],
)

epoch_duration = Histogram(
    "lesionsense_epoch_duration_seconds",
    "Training epoch duration in seconds",
    ["loss_mode"],
    buckets=[0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0, 60.0, 300.0],
)

# Flow task metrics
task_counter = Counter(
    "lesionsense_tasks_total",
    "Total number of pipeline tasks executed",
    ["task", "status"],
)

task_duration = Histogram(
    "lesionsense_task_duration_seconds",
    "Pipeline task duration in seconds",
    ["task"],
    buckets=[0.01, 0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 300.0, 900.0],
)

# Error metrics
error_counter = Counter(
    "lesionsense_errors_total",
    "Total number of errors",
    ["error_type", "component"],
)


def set_app_info(version: str, command: str = "unknown"):
    """Set application information."""
    app_info.info(
        {"version": version, "command": command, "application": "lesion-sense"}
    )


def get_metrics() -> bytes:
    """Get all metrics in Prometheus text format."""
    return generate_latest(REGISTRY)


def write_metrics(path: Union[str, Path]) -> None:
    """Flush the registry to a node-exporter style text file."""
    write_to_textfile(str(path), REGISTRY)
