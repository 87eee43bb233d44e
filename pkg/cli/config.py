"""
Run configuration: key-value file + ``--set key=value`` overrides.

    threads = 1
    synth.missing_rate = 0.3
    network.channels = 4,8,8,16,16
    schedule.epochs = 15
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator

from annotator.loss import LossConfig
from annotator.model import NetworkConfig
from annotator.train import Schedule
from mining.synth import SynthConfig
from utils.errors import ConfigError
from utils.kvconfig import build_model, model_to_kv_lines, parse_kv_text, read_kv_file

logger = logging.getLogger(__name__)


class PathsConfig(BaseModel):
    lexicon: Optional[Path] = None
    corpus: Optional[Path] = None
    test_corpus: Optional[Path] = None
    patches: Optional[Path] = None
    volumes: Optional[Path] = None
    checkpoint: Optional[Path] = None
    output_dir: Path = Path("runs/default")


class SplitOptions(BaseModel):
    # None: derived from synth.n_test for synthetic runs, 0.2 otherwise
    test_fraction: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    seed: int = 0


class EvalOptions(BaseModel):
    k: int = Field(default=5, ge=1)
    min_count: int = Field(default=5, ge=0)
    min_count_train: int = Field(default=0, ge=0)
    # None: use truth labels when every test record carries them
    use_truth_labels: Optional[bool] = None
    write_roc: bool = False
    batch_size: int = Field(default=64, ge=1)


class RunConfig(BaseModel):
    threads: int = Field(default=1, ge=1)
    log_level: str = "INFO"
    paths: PathsConfig = PathsConfig()
    split: SplitOptions = SplitOptions()
    synth: SynthConfig = SynthConfig()
    network: NetworkConfig = NetworkConfig()
    loss: LossConfig = LossConfig()
    schedule: Schedule = Schedule()
    eval: EvalOptions = EvalOptions()

    @field_validator("log_level")
    @classmethod
    def known_level(cls, v: str) -> str:
        v = v.upper()
        if v not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {v!r}")
        return v

    def seeds(self) -> Dict[str, int]:
        return {
            "split": self.split.seed,
            "synth": self.synth.rng_seed,
            "schedule": self.schedule.seed,
            "init": self.network.init_seed,
        }

    def to_kv_text(self) -> str:
        lines = [f"threads = {self.threads}", f"log_level = {self.log_level}"]
        for section in SECTIONS:
            lines.extend(model_to_kv_lines(getattr(self, section), section))
        return "\n".join(lines) + "\n"


SECTIONS: Dict[str, type] = {
    "paths": PathsConfig,
    "split": SplitOptions,
    "synth": SynthConfig,
    "network": NetworkConfig,
    "loss": LossConfig,
    "schedule": Schedule,
    "eval": EvalOptions,
}
TOP_LEVEL_KEYS = ("threads", "log_level")


def parse_overrides(overrides: Iterable[str]) -> List[Tuple[str, str]]:
    pairs = []
    for item in overrides:
        entries = parse_kv_text(item, source="--set")
        if len(entries) != 1:
            raise ConfigError(f"--set expects key=value, got {item!r}", code="malformed_config")
        _, key, value = entries[0]
        pairs.append((key, value))
    return pairs


def build_run_config(pairs: Iterable[Tuple[str, str]]) -> RunConfig:
    """Validate (key, value) pairs into a RunConfig; later pairs win."""
    top: Dict[str, str] = {}
    sections: Dict[str, Dict[str, str]] = {name: {} for name in SECTIONS}
    for key, value in pairs:
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"Unknown config section '{section}'", code="unknown_key")
            sections[section][name] = value
        elif key in TOP_LEVEL_KEYS:
            top[key] = value
        else:
            raise ConfigError(f"Unknown config key '{key}'", code="unknown_key")

    values = {name: build_model(SECTIONS[name], raw, name) for name, raw in sections.items()}
    return build_model_top(top, values)


def build_model_top(top: Dict[str, str], sections: Dict[str, BaseModel]) -> RunConfig:
    try:
        return RunConfig(**top, **sections)
    except ValueError as e:
        raise ConfigError(f"Invalid top-level config value: {e}", code="invalid_value")


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    threads: Optional[int] = None,
    seed: Optional[int] = None,
) -> RunConfig:
    """
    Load a config file (or defaults), then apply overrides in order:
    --set pairs, --threads, --seed (split, synth, schedule and init seeds).
    """
    pairs: List[Tuple[str, str]] = []
    if path is not None:
        pairs.extend((key, value) for _, key, value in read_kv_file(path))
    pairs.extend(parse_overrides(overrides))
    if threads is not None:
        pairs.append(("threads", str(threads)))
    if seed is not None:
        for key in ("split.seed", "synth.rng_seed", "schedule.seed", "network.init_seed"):
            pairs.append((key, str(seed)))
    cfg = build_run_config(pairs)
    logger.debug(f"Loaded run config from {path or 'defaults'}")
    return cfg
