"""
Labeled corpora: records, mining, patient-level splits, label statistics,
rare-label filtering and the patch store.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from mining.ontology import Category, Ontology
from mining.textmine import Sentence, SentenceMiner
from utils.errors import DataError
from utils.storage import (
    dump_jsonl,
    iter_jsonl,
    read_json,
    read_raw_array,
    sidecar_path,
    write_json,
    write_jsonl,
    write_raw_array,
)

logger = logging.getLogger(__name__)

BBox = Tuple[float, float, float, float]


class LesionRecord(BaseModel):
    """One lesion-sentence pair."""

    model_config = ConfigDict(frozen=True)

    lesion_id: str
    patient_id: str
    sentence: Sentence
    bbox_mm: BBox
    slice_mm: float = 0.0
    center_mm: Optional[Tuple[float, float]] = None
    volume_ref: Optional[str] = None
    truth_labels: Optional[Tuple[int, ...]] = None

    @field_validator("sentence", mode="before")
    @classmethod
    def sentence_from_text(cls, v):
        if isinstance(v, str):
            return Sentence.from_text(v)
        return v

    @field_validator("lesion_id", "patient_id")
    @classmethod
    def non_empty_id(cls, v: str) -> str:
        if not v or not v.strip():
            raise ValueError("identifier must be non-empty")
        return v

    @field_validator("bbox_mm")
    @classmethod
    def ordered_bbox(cls, v: BBox) -> BBox:
        x0, y0, x1, y1 = v
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"bbox must satisfy x0<x1 and y0<y1, got {list(v)}")
        return v

    def to_json(self) -> Dict:
        obj = {
            "lesion_id": self.lesion_id,
            "patient_id": self.patient_id,
            "sentence": self.sentence.text,
            "bbox_mm": list(self.bbox_mm),
            "slice_mm": self.slice_mm,
        }
        if self.center_mm is not None:
            obj["center_mm"] = list(self.center_mm)
        if self.volume_ref is not None:
            obj["volume_ref"] = self.volume_ref
        if self.truth_labels is not None:
            obj["truth_labels"] = list(self.truth_labels)
        return obj


LabeledExample = Tuple[LesionRecord, np.ndarray]


def read_corpus(path: Union[str, Path]) -> List[LesionRecord]:
    """Read a corpus JSONL file; errors name the offending line."""
    records = []
    seen = set()
    for line_number, obj in iter_jsonl(path):
        if "bbox" in obj and "bbox_mm" not in obj:
            obj["bbox_mm"] = obj.pop("bbox")
        try:
            record = LesionRecord(**obj)
        except (ValidationError, TypeError) as e:
            raise DataError(
                f"{path}:{line_number}: invalid lesion record ({_first_error(e)})",
                code="malformed_jsonl",
                line_number=line_number,
            )
        if record.lesion_id in seen:
            raise DataError(
                f"{path}:{line_number}: duplicate lesion_id '{record.lesion_id}'",
                code="duplicate_lesion",
                line_number=line_number,
            )
        seen.add(record.lesion_id)
        records.append(record)
    logger.info(f"Read {len(records)} records from {path}")
    return records


def write_corpus(path: Union[str, Path], records: Iterable[LesionRecord]) -> int:
    return write_jsonl(path, (record.to_json() for record in records))


def _first_error(e: Exception) -> str:
    if isinstance(e, ValidationError) and e.errors():
        err = e.errors()[0]
        where = ".".join(str(part) for part in err.get("loc", ()))
        return f"{where}: {err.get('msg')}" if where else str(err.get("msg"))
    return str(e)


def build_corpus(
    records: Sequence[LesionRecord], o: Ontology, threads: int = 1
) -> List[LabeledExample]:
    """Pair each record with its mined label vector (zero vectors are kept)."""
    miner = SentenceMiner(o)
    vectors = miner.mine_many([record.sentence for record in records], threads=threads)
    return list(zip(records, vectors))


def mined_rows(corpus: Sequence[LabeledExample], o: Ontology) -> Iterable[Dict]:
    for record, vector in corpus:
        ids = [int(i) for i in np.flatnonzero(vector)]
        yield {
            "lesion_id": record.lesion_id,
            "label_ids": ids,
            "label_names": [o.labels[i].name for i in ids],
        }


def write_mined(
    target: Union[str, Path, TextIO], corpus: Sequence[LabeledExample], o: Ontology
) -> int:
    """Mined JSONL: {lesion_id, label_ids, label_names} per record."""
    if isinstance(target, (str, Path)):
        return write_jsonl(target, mined_rows(corpus, o))
    return dump_jsonl(mined_rows(corpus, o), target)


def label_matrix(corpus: Sequence[LabeledExample], n_labels: Optional[int] = None) -> np.ndarray:
    """Stack label vectors into an (N, K) uint8 matrix."""
    if not corpus:
        return np.zeros((0, n_labels or 0), dtype=np.uint8)
    return np.stack([vector for _, vector in corpus]).astype(np.uint8)


def truth_matrix(records: Sequence[LesionRecord], n_labels: int) -> np.ndarray:
    """Ground-truth (N, K) matrix for records that carry truth_labels."""
    matrix = np.zeros((len(records), n_labels), dtype=np.uint8)
    for row, record in enumerate(records):
        if record.truth_labels is None:
            raise DataError(
                f"Record '{record.lesion_id}' has no truth_labels",
                code="missing_truth",
            )
        if record.truth_labels:
            matrix[row, list(record.truth_labels)] = 1
    return matrix


def patient_split(
    corpus: Sequence[LabeledExample], test_fraction: float, seed: int
) -> Tuple[List[LabeledExample], List[LabeledExample]]:
    """
    Patient-disjoint split. Patients are visited in a seeded shuffled order and
    greedily assigned to the test set while it stays within the target lesion count.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError(
            f"test_fraction must be in (0, 1), got {test_fraction}",
            code="invalid_split",
        )

    lesions_per_patient: Dict[str, int] = {}
    for record, _ in corpus:
        lesions_per_patient[record.patient_id] = (
            lesions_per_patient.get(record.patient_id, 0) + 1
        )
    patients = sorted(lesions_per_patient)
    if len(patients) < 2:
        raise DataError(
            f"Need at least 2 distinct patients to split, found {len(patients)}",
            code="too_few_patients",
        )

    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]
    target = int(round(test_fraction * len(corpus)))

    test_patients = set()
    test_count = 0
    for patient in order:
        if len(test_patients) == len(patients) - 1:
            break
        n = lesions_per_patient[patient]
        if not test_patients or test_count + n <= target:
            test_patients.add(patient)
            test_count += n

    train = [ex for ex in corpus if ex[0].patient_id not in test_patients]
    test = [ex for ex in corpus if ex[0].patient_id in test_patients]
    logger.info(
        f"Patient split (seed={seed}): {len(train)} train / {len(test)} test lesions, "
        f"{len(patients) - len(test_patients)} / {len(test_patients)} patients"
    )
    return train, test


@dataclass(frozen=True)
class LabelStats:
    """Positive/negative training counts per label."""

    n_pos: np.ndarray
    n_neg: np.ndarray

    @property
    def n_examples(self) -> int:
        return int(self.n_pos[0] + self.n_neg[0]) if self.n_pos.size else 0


def label_stats(train: Union[Sequence[LabeledExample], np.ndarray]) -> LabelStats:
    matrix = train if isinstance(train, np.ndarray) else label_matrix(train)
    if matrix.shape[0] == 0:
        raise DataError("Cannot compute label statistics of an empty set", code="empty_set")
    n_pos = matrix.astype(np.int64).sum(axis=0)
    n_neg = matrix.shape[0] - n_pos
    return LabelStats(n_pos=n_pos, n_neg=n_neg)


@dataclass(frozen=True)
class LabelSubset:
    """Retained labels with their positions in the reduced label vector."""

    ids: Tuple[int, ...]
    names: Tuple[str, ...]
    categories: Tuple[Category, ...]

    @classmethod
    def from_ids(cls, ids: Iterable[int], o: Ontology) -> "LabelSubset":
        ids = tuple(sorted(set(int(i) for i in ids)))
        if not ids:
            raise DataError("No labels retained", code="empty_label_set")
        return cls(
            ids=ids,
            names=tuple(o.labels[i].name for i in ids),
            categories=tuple(o.labels[i].category for i in ids),
        )

    def __len__(self) -> int:
        return len(self.ids)

    def project(self, matrix: np.ndarray) -> np.ndarray:
        """Reduce (..., K) label or score arrays to (..., len(subset))."""
        return np.asarray(matrix)[..., list(self.ids)]

    def position(self, label_id: int) -> int:
        return self.ids.index(label_id)

    def intersect(self, other: "LabelSubset", o: Ontology) -> "LabelSubset":
        return LabelSubset.from_ids(set(self.ids) & set(other.ids), o)


def filter_labels(
    corpus_test: Union[Sequence[LabeledExample], np.ndarray],
    o: Ontology,
    min_count: int,
) -> LabelSubset:
    """Keep labels with strictly more than min_count positives."""
    if min_count < 0:
        raise DataError(f"min_count must be >= 0, got {min_count}", code="invalid_filter")
    matrix = (
        corpus_test if isinstance(corpus_test, np.ndarray) else label_matrix(corpus_test, o.size)
    )
    if matrix.shape[0] == 0:
        raise DataError("No labels retained: empty corpus", code="empty_label_set")
    counts = matrix.astype(np.int64).sum(axis=0)
    retained = [int(i) for i in np.flatnonzero(counts > min_count)]
    if not retained:
        raise DataError(
            f"No label has more than {min_count} positives", code="empty_label_set"
        )
    logger.info(f"Label filter (> {min_count}): kept {len(retained)} of {o.size} labels")
    return LabelSubset.from_ids(retained, o)


# Patch store: raw float32 little-endian + {height, width, channels, spacing_mm}


def patch_path(directory: Union[str, Path], lesion_id: str) -> Path:
    return Path(directory) / f"{lesion_id}.f32"


def save_patch(path: Union[str, Path], pixels: np.ndarray, spacing_mm: float = 1.0) -> None:
    channels, height, width = pixels.shape
    write_raw_array(path, pixels, "<f4")
    write_json(
        sidecar_path(path),
        {"height": height, "width": width, "channels": channels, "spacing_mm": spacing_mm},
    )


def load_patch(path: Union[str, Path]) -> np.ndarray:
    meta = read_json(sidecar_path(path))
    try:
        shape = (int(meta["channels"]), int(meta["height"]), int(meta["width"]))
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{sidecar_path(path)}: malformed patch sidecar", code="sidecar_mismatch")
    return read_raw_array(path, "<f4", shape)
