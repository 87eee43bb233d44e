"""
Fusion/loss ablation on synthetic corpora.

Every seed generates one corpus; every variant trains on it from the same
initialization seed and is evaluated on the same test split. Rows report the
mean AUC overall and per label category.
"""
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from annotator.loss import LossConfig, LossMode
from annotator.model import Fusion, average_downsample
from annotator.train import Schedule, TrainingSet, train
from cli.config import RunConfig
from cli.flow import bbox_array, evaluate_model, evaluation_targets, network_for, select_label_subset
from mining.dataset import build_corpus, label_matrix, patient_split
from mining.synth import SynthConfig, synth_generate
from utils.errors import ConfigError
from utils.storage import write_csv

logger = logging.getLogger(__name__)

COLUMNS = ("overall", "body_part", "finding_type", "attribute")


@dataclass(frozen=True)
class AblationVariant:
    fusion: Fusion
    loss_mode: LossMode

    @property
    def name(self) -> str:
        return f"{self.fusion.value}+{self.loss_mode.value}"

    @classmethod
    def parse(cls, text: str) -> "AblationVariant":
        try:
            fusion, mode = text.strip().split("+", 1)
            return cls(Fusion(fusion), LossMode(mode))
        except ValueError:
            raise ConfigError(
                f"Unknown ablation variant {text!r}; expected '<fusion>+<loss mode>' "
                f"with fusion in {[f.value for f in Fusion]} and loss mode in "
                f"{[m.value for m in LossMode]}",
                code="invalid_value",
            )


DEFAULT_VARIANTS: Tuple[AblationVariant, ...] = (
    AblationVariant(Fusion.GLOBAL_POOL, LossMode.PLAIN),
    AblationVariant(Fusion.GLOBAL_POOL, LossMode.WEIGHTED),
    AblationVariant(Fusion.MULTISCALE, LossMode.WEIGHTED),
    AblationVariant(Fusion.MULTISCALE, LossMode.WEIGHTED_BOOTSTRAP),
)


@dataclass
class AblationRow:
    seed: int
    variant: str
    n_labels: int
    aucs: Dict[str, Optional[float]]


class AblationRunner:
    """Runs variants x seeds and writes ablation.csv / ablation_summary.csv."""

    def __init__(
        self,
        cfg: RunConfig,
        variants: Sequence[AblationVariant] = DEFAULT_VARIANTS,
        seeds: Sequence[int] = (0, 1, 2, 3, 4),
    ):
        if not variants:
            raise ConfigError("No ablation variants selected", code="invalid_value")
        if not seeds:
            raise ConfigError("No ablation seeds selected", code="invalid_value")
        self.cfg = cfg
        self.variants = list(variants)
        self.seeds = list(seeds)
        self.rows: List[AblationRow] = []

    def run(self) -> List[Dict[str, object]]:
        start = time.time()
        self.rows = []
        for seed in self.seeds:
            self.rows.extend(self.run_seed(seed))
        logger.info(
            f"Ablation finished: {len(self.variants)} variants x {len(self.seeds)} seeds "
            f"in {time.time() - start:.1f}s"
        )
        return self.summary()

    def run_seed(self, seed: int) -> List[AblationRow]:
        cfg = self.cfg
        synth_cfg = SynthConfig(**{**cfg.synth.model_dump(), "rng_seed": seed, "render_patches": True})
        synth = synth_generate(synth_cfg)
        o = synth.ontology
        corpus = build_corpus(synth.records, o, threads=cfg.threads)
        fraction = cfg.split.test_fraction or synth_cfg.test_fraction
        train_part, test_part = patient_split(corpus, fraction, seed)
        index = {record.lesion_id: i for i, (record, _) in enumerate(corpus)}
        train_idx = np.array([index[r.lesion_id] for r, _ in train_part])
        test_idx = np.array([index[r.lesion_id] for r, _ in test_part])

        targets = evaluation_targets(test_part, o, cfg.eval.use_truth_labels)
        subset = select_label_subset(label_matrix(train_part, o.size), targets, o, cfg.eval)
        train_labels = subset.project(label_matrix(train_part, o.size))

        # downsample once per seed instead of once per batch
        factor = cfg.network.input_downsample
        train_patches = average_downsample(synth.patches[train_idx], factor)
        test_patches = average_downsample(synth.patches[test_idx], factor)
        synth.patches = None
        train_boxes = bbox_array([r for r, _ in train_part]) / factor
        test_boxes = bbox_array([r for r, _ in test_part]) / factor
        base_net = cfg.network.model_copy(
            update={"patch_size": cfg.network.patch_size // factor, "input_downsample": 1}
        )

        rows = []
        for variant in self.variants:
            net_cfg = network_for(
                base_net.model_copy(update={"fusion": variant.fusion, "init_seed": seed}),
                len(subset),
            )
            loss_cfg = LossConfig(**{**cfg.loss.model_dump(), "mode": variant.loss_mode})
            schedule = Schedule(**{**cfg.schedule.model_dump(), "seed": seed})
            result = train(
                TrainingSet(train_patches, train_boxes, train_labels), net_cfg, loss_cfg, schedule
            )
            report, _ = evaluate_model(
                result.params, test_patches, test_boxes, targets, subset, o, cfg.eval, cfg.threads
            )
            aucs: Dict[str, Optional[float]] = {"overall": report.overall.mean_auc}
            for column in COLUMNS[1:]:
                summary = report.per_category.get(column)
                aucs[column] = summary.mean_auc if summary is not None else None
            rows.append(AblationRow(seed=seed, variant=variant.name, n_labels=len(subset), aucs=aucs))
            logger.info(f"Seed {seed} {variant.name}: overall AUC {aucs['overall']:.4f}")
        return rows

    def summary(self) -> List[Dict[str, object]]:
        """Mean AUC per variant over seeds, in variant order."""
        out = []
        for variant in self.variants:
            rows = [r for r in self.rows if r.variant == variant.name]
            entry: Dict[str, object] = {"variant": variant.name, "n_seeds": len(rows)}
            for column in COLUMNS:
                values = [r.aucs[column] for r in rows if r.aucs[column] is not None]
                entry[column] = float(np.mean(values)) if values else None
            out.append(entry)
        return out

    def write(self, out_dir: Path) -> List[str]:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(
            out_dir / "ablation.csv",
            ("seed", "variant", "n_labels") + COLUMNS,
            (
                (r.seed, r.variant, r.n_labels) + tuple(_cell(r.aucs[c]) for c in COLUMNS)
                for r in self.rows
            ),
        )
        write_csv(
            out_dir / "ablation_summary.csv",
            ("variant", "n_seeds") + COLUMNS,
            (
                (entry["variant"], entry["n_seeds"]) + tuple(_cell(entry[c]) for c in COLUMNS)
                for entry in self.summary()
            ),
        )
        return ["ablation.csv", "ablation_summary.csv"]


def _cell(value: Optional[float]):
    return "" if value is None else float(value)


def parse_variants(text: Optional[str]) -> List[AblationVariant]:
    if not text:
        return list(DEFAULT_VARIANTS)
    return [AblationVariant.parse(part) for part in text.split(",") if part.strip()]


def parse_seeds(text: Optional[str]) -> List[int]:
    if not text:
        return [0, 1, 2, 3, 4]
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"Seeds must be comma-separated integers, got {text!r}", code="invalid_value")
