"""
Annotation pipeline: synth -> mine -> split -> select labels -> train -> eval.

The helpers below are shared by the individual subcommands; AnnotationFlow
runs them as timed tasks in one output directory.
"""
import hashlib
import logging
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from annotator.checkpoint import save_checkpoint
from annotator.evaluation import (
    CategoryReport,
    category_report,
    evaluate_scores,
    write_metrics_csv,
    write_roc_csv,
    write_summary_csv,
)
from annotator.model import NetworkConfig, Parameters, predict_scores
from annotator.preprocess import load_volume, make_patch
from annotator.train import TrainingSet, TrainResult, train, write_epoch_csv, write_loss_csv
from cli.config import EvalOptions, RunConfig
from cli.logging_config import get_logger_with_context, log_task
from mining.dataset import (
    LabeledExample,
    LabelSubset,
    LesionRecord,
    build_corpus,
    filter_labels,
    label_matrix,
    load_patch,
    patch_path,
    patient_split,
    truth_matrix,
    write_corpus,
    write_mined,
)
from mining.ontology import Ontology
from mining.synth import SynthCorpus, synth_generate, write_synth_corpus
from utils.errors import ConfigError, DataError, LesionSenseError, error_payload
from utils.metrics import error_counter, task_counter, task_duration, write_metrics
from utils.storage import git_blob_hash, write_json

logger = logging.getLogger(__name__)

VERSION = "1.0.0"
PathLike = Union[str, Path]


# ----------------------------------------------------------------------------
# Shared pipeline steps


def load_patches(
    records: Sequence[LesionRecord],
    patch_dir: Optional[PathLike] = None,
    volume_dir: Optional[PathLike] = None,
) -> np.ndarray:
    """(N, 3, 120, 120) float32 patches from the patch store or from volumes."""
    patches = np.empty((len(records), 3, 120, 120), dtype=np.float32)
    for i, record in enumerate(records):
        if patch_dir is not None:
            patches[i] = load_patch(patch_path(patch_dir, record.lesion_id))
        elif record.volume_ref is not None:
            ref = Path(record.volume_ref)
            if volume_dir is not None and not ref.is_absolute():
                ref = Path(volume_dir) / ref
            patch = make_patch(load_volume(ref), record.center_mm, record.slice_mm, record.bbox_mm)
            patches[i] = patch.pixels
        else:
            raise DataError(
                f"Record '{record.lesion_id}' has no patch store and no volume_ref",
                code="missing_patch",
            )
    return patches


def bbox_array(records: Sequence[LesionRecord]) -> np.ndarray:
    return np.array([record.bbox_mm for record in records], dtype=np.float64).reshape(-1, 4)


def evaluation_targets(
    corpus: Sequence[LabeledExample], o: Ontology, use_truth: Optional[bool]
) -> np.ndarray:
    """Truth labels when requested (or available, by default), mined labels otherwise."""
    records = [record for record, _ in corpus]
    has_truth = bool(records) and all(r.truth_labels is not None for r in records)
    if use_truth is None:
        use_truth = has_truth
    if use_truth:
        return truth_matrix(records, o.size)
    return label_matrix(corpus, o.size)


def select_label_subset(
    train_labels: np.ndarray, test_targets: Optional[np.ndarray], o: Ontology, opts: EvalOptions
) -> LabelSubset:
    """Labels frequent enough in training, and in the test set when one is given."""
    subset = filter_labels(train_labels, o, opts.min_count_train)
    if test_targets is not None:
        subset = subset.intersect(filter_labels(test_targets, o, opts.min_count), o)
    logger.info(f"Selected {len(subset)} of {o.size} labels")
    return subset


def network_for(cfg: NetworkConfig, n_labels: int) -> NetworkConfig:
    return NetworkConfig(**{**cfg.model_dump(), "n_labels": n_labels})


def evaluate_model(
    params: Parameters,
    patches: np.ndarray,
    bboxes: np.ndarray,
    targets: np.ndarray,
    subset: LabelSubset,
    o: Ontology,
    opts: EvalOptions,
    threads: int = 1,
) -> Tuple[CategoryReport, np.ndarray]:
    """targets are full (N, K) matrices; scores come back as (N, len(subset))."""
    scores = predict_scores(params, patches, bboxes, batch_size=opts.batch_size)
    per_label, skipped = evaluate_scores(scores, subset.project(targets), subset, threads=threads)
    report = category_report(per_label, o)
    report.skipped = skipped
    return report, scores


def write_eval_outputs(
    out_dir: Path,
    report: CategoryReport,
    scores: np.ndarray,
    targets: np.ndarray,
    subset: LabelSubset,
    opts: EvalOptions,
) -> List[str]:
    write_metrics_csv(out_dir / "metrics.csv", report.per_label)
    write_summary_csv(out_dir / "summary.csv", report)
    outputs = ["metrics.csv", "summary.csv"]
    if opts.write_roc:
        write_roc_csv(out_dir / "roc.csv", scores, subset.project(targets), subset)
        outputs.append("roc.csv")
    if report.skipped:
        write_json(out_dir / "skipped_labels.json", {"label_ids": report.skipped})
        outputs.append("skipped_labels.json")
    return outputs


def tree_hash(directory: PathLike) -> str:
    """Hash of a directory as the sorted list of its files' blob hashes."""
    digest = hashlib.sha1()
    root = Path(directory)
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(f"{git_blob_hash(path)} {path.relative_to(root).as_posix()}\n".encode())
    return digest.hexdigest()


def write_manifest(
    out_dir: Path,
    command: str,
    cfg: Optional[RunConfig],
    inputs: Dict[str, Optional[PathLike]],
    outputs: Sequence[str],
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """manifest.json: config text, seeds, input hashes and output names; no timestamps."""
    hashed = {}
    for name, path in sorted(inputs.items()):
        if path is None:
            continue
        path = Path(path)
        hashed[name] = {
            "path": str(path),
            "git_blob": tree_hash(path) if path.is_dir() else git_blob_hash(path),
        }
    manifest = {
        "command": command,
        "version": VERSION,
        "config": cfg.to_kv_text() if cfg is not None else None,
        "seeds": cfg.seeds() if cfg is not None else {},
        "inputs": hashed,
        "outputs": sorted(set(outputs)),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    write_json(path, manifest)
    return path


# ----------------------------------------------------------------------------
# Flow


@dataclass
class PipelineState:
    synth: Optional[SynthCorpus] = None
    corpus: Optional[List[LabeledExample]] = None
    train: Optional[List[LabeledExample]] = None
    test: Optional[List[LabeledExample]] = None
    train_indices: Optional[np.ndarray] = None
    test_indices: Optional[np.ndarray] = None
    subset: Optional[LabelSubset] = None
    result: Optional[TrainResult] = None
    report: Optional[CategoryReport] = None


class AnnotationFlow:
    """Runs the full synthetic pipeline in one output directory."""

    def __init__(self, cfg: RunConfig, write_patches: bool = False):
        self.cfg = cfg
        self.write_patches = write_patches
        self.run_id: Optional[str] = None
        self.timing: Dict[str, int] = {}
        self.outputs: List[str] = []
        self.state = PipelineState()

    @property
    def out_dir(self) -> Path:
        return Path(self.cfg.paths.output_dir)

    def run(self) -> Dict[str, Any]:
        self.run_id = str(uuid.uuid4())
        self.timing = {}
        self.outputs = []
        self.state = PipelineState()
        start = time.time()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Starting annotation flow {self.run_id} in {self.out_dir}")

        tasks: List[Tuple[str, Callable[[], None]]] = [
            ("synth", self._synthesize),
            ("mine", self._mine),
            ("split", self._split),
            ("select_labels", self._select_labels),
            ("train", self._train),
            ("eval", self._evaluate),
        ]
        for name, task in tasks:
            error = self._execute_task(name, task)
            if error is not None:
                return self._format_error_response(error, start)

        write_metrics(self.out_dir / "metrics.prom")
        write_manifest(self.out_dir, "run", self.cfg, {}, self.outputs)
        return self._format_success_response(start)

    def _execute_task(self, name: str, task: Callable[[], None]) -> Optional[Dict[str, Any]]:
        task_logger = get_logger_with_context(__name__, run_id=self.run_id, task=name)
        start_time = time.time()
        try:
            task()
            status = "success"
            error = None
        except LesionSenseError as e:
            status = "error"
            error = {**error_payload(e), "task": name}
            error_counter.labels(error_type=e.code, component=name).inc()
        except Exception as e:
            task_logger.exception(f"Task {name} crashed")
            status = "error"
            error = {**error_payload(e), "error": f"{name}_failed", "task": name}
            error_counter.labels(error_type="internal", component=name).inc()

        elapsed = time.time() - start_time
        duration_ms = int(elapsed * 1000)
        self.timing[f"{name}_ms"] = duration_ms
        task_counter.labels(task=name, status=status).inc()
        task_duration.labels(task=name).observe(elapsed)
        log_task(logger, self.run_id, name, duration_ms, status, f"Task {name} {status}")
        return error

    def _synthesize(self) -> None:
        synth = synth_generate(self.cfg.synth)
        self.state.synth = synth
        if self.write_patches:
            write_synth_corpus(self.out_dir / "synth", synth)
            self.outputs.extend(["synth/lexicon.tsv", "synth/corpus.jsonl", "synth/synth_stats.json"])
        else:
            (self.out_dir / "lexicon.tsv").write_text(
                synth.ontology.to_lexicon_text(), encoding="utf-8"
            )
            write_corpus(self.out_dir / "corpus.jsonl", synth.records)
            write_json(self.out_dir / "synth_stats.json", synth.stats.to_json())
            self.outputs.extend(["lexicon.tsv", "corpus.jsonl", "synth_stats.json"])

    def _mine(self) -> None:
        synth = self.state.synth
        corpus = build_corpus(synth.records, synth.ontology, threads=self.cfg.threads)
        write_mined(self.out_dir / "mined.jsonl", corpus, synth.ontology)
        self.outputs.append("mined.jsonl")
        self.state.corpus = corpus

    def _split(self) -> None:
        fraction = self.cfg.split.test_fraction or self.cfg.synth.test_fraction
        train_set, test_set = patient_split(self.state.corpus, fraction, self.cfg.split.seed)
        index = {record.lesion_id: i for i, (record, _) in enumerate(self.state.corpus)}
        self.state.train, self.state.test = train_set, test_set
        self.state.train_indices = np.array([index[r.lesion_id] for r, _ in train_set])
        self.state.test_indices = np.array([index[r.lesion_id] for r, _ in test_set])
        write_json(
            self.out_dir / "split.json",
            {
                "train": [r.lesion_id for r, _ in train_set],
                "test": [r.lesion_id for r, _ in test_set],
            },
        )
        self.outputs.append("split.json")

    def _select_labels(self) -> None:
        o = self.state.synth.ontology
        targets = evaluation_targets(self.state.test, o, self.cfg.eval.use_truth_labels)
        subset = select_label_subset(label_matrix(self.state.train, o.size), targets, o, self.cfg.eval)
        write_json(
            self.out_dir / "labels.json",
            {"label_ids": list(subset.ids), "label_names": list(subset.names)},
        )
        self.outputs.append("labels.json")
        self.state.subset = subset

    def _train(self) -> None:
        synth, subset = self.state.synth, self.state.subset
        if synth.patches is None:
            raise ConfigError(
                "synth.render_patches must be true to train on a synthetic corpus",
                code="invalid_value",
            )
        train_records = [record for record, _ in self.state.train]
        training_set = TrainingSet(
            patches=synth.patches[self.state.train_indices],
            bboxes=bbox_array(train_records),
            labels=subset.project(label_matrix(self.state.train, synth.ontology.size)),
        )
        net_cfg = network_for(self.cfg.network, len(subset))
        result = train(training_set, net_cfg, self.cfg.loss, self.cfg.schedule)
        save_checkpoint(self.out_dir / "model.ckpt", result.params, subset.ids)
        write_loss_csv(self.out_dir / "loss.csv", result)
        write_epoch_csv(self.out_dir / "epochs.csv", result)
        self.outputs.extend(["model.ckpt", "model.ckpt.json", "model.ckpt.cfg", "loss.csv", "epochs.csv"])
        self.state.result = result

    def _evaluate(self) -> None:
        synth, subset = self.state.synth, self.state.subset
        test_records = [record for record, _ in self.state.test]
        targets = evaluation_targets(self.state.test, synth.ontology, self.cfg.eval.use_truth_labels)
        report, scores = evaluate_model(
            self.state.result.params,
            synth.patches[self.state.test_indices],
            bbox_array(test_records),
            targets,
            subset,
            synth.ontology,
            self.cfg.eval,
            threads=self.cfg.threads,
        )
        self.outputs.extend(
            write_eval_outputs(self.out_dir, report, scores, targets, subset, self.cfg.eval)
        )
        self.state.report = report

    def _format_success_response(self, start: float) -> Dict[str, Any]:
        report = self.state.report
        return {
            "run_id": self.run_id,
            "output_dir": str(self.out_dir),
            "summary": {name: mean for name, mean, _, _ in report.rows()},
            "n_labels": len(self.state.subset),
            "skipped_labels": report.skipped,
            "timing": dict(self.timing),
            "latency_ms": int((time.time() - start) * 1000),
        }

    def _format_error_response(self, error: Dict[str, Any], start: float) -> Dict[str, Any]:
        logger.error(f"Flow {self.run_id} failed in task {error.get('task')}: {error.get('hint')}")
        return {
            **error,
            "run_id": self.run_id,
            "latency_ms": int((time.time() - start) * 1000),
        }


def run_flow(cfg: RunConfig, write_patches: bool = False) -> Dict[str, Any]:
    return AnnotationFlow(cfg, write_patches=write_patches).run()

