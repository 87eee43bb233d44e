"""
Synthetic lesion corpora with controlled label noise.

Each lesion gets a complete ground-truth label set drawn from a built-in
radiology vocabulary. Its report sentence mentions the true leaf labels
subject to missing-label noise (dropped or replaced by a parent) and
spurious mentions. Its image patch is rendered from the truth labels in a
small CT volume and run through the regular preprocessing pipeline.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from annotator.preprocess import PATCH_CENTER, Volume, make_patch
from mining.dataset import LesionRecord, patch_path, save_patch, write_corpus
from mining.ontology import Category, Ontology
from utils.storage import write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VocabEntry:
    name: str
    category: Category
    synonyms: Tuple[str, ...] = ()
    parents: Tuple[str, ...] = ()
    tier: str = "leaf"
    # sampling weight (locations, types) or prevalence (attributes)
    weight: float = 1.0
    group: Optional[str] = None


BP = Category.BODY_PART
FT = Category.FINDING_TYPE
AT = Category.ATTRIBUTE

# Ordered so that every entry follows its parents.
VOCABULARY: Tuple[VocabEntry, ...] = (
    VocabEntry("chest", BP, ("thoracic", "thorax"), tier="region"),
    VocabEntry("abdomen", BP, ("abdominal",), tier="region"),
    VocabEntry("pelvis", BP, ("pelvic",), tier="region"),
    VocabEntry("neck", BP, ("cervical",), tier="region"),
    VocabEntry("lung", BP, ("pulmonary",), ("chest",), tier="organ", weight=0.30),
    VocabEntry("liver", BP, ("hepatic",), ("abdomen",), tier="organ", weight=0.18),
    VocabEntry("kidney", BP, ("renal",), ("abdomen",), tier="organ", weight=0.08),
    VocabEntry("mediastinum", BP, ("mediastinal",), ("chest",), tier="organ", weight=0.06),
    VocabEntry("lymph node", BP, ("node", "nodal"), tier="organ", weight=0.14),
    VocabEntry("adrenal gland", BP, ("adrenal",), ("abdomen",), tier="organ", weight=0.05),
    VocabEntry("spleen", BP, ("splenic",), ("abdomen",), tier="organ", weight=0.03),
    VocabEntry("pancreas", BP, ("pancreatic",), ("abdomen",), tier="organ", weight=0.03),
    VocabEntry("bone", BP, ("osseous",), tier="organ", weight=0.04),
    VocabEntry("pleura", BP, ("pleural",), ("chest",), tier="organ", weight=0.03),
    VocabEntry("bladder", BP, (), ("pelvis",), tier="organ", weight=0.02),
    VocabEntry("thyroid", BP, (), ("neck",), tier="organ", weight=0.02),
    VocabEntry("right upper lobe", BP, ("rul",), ("lung",), tier="sub"),
    VocabEntry("left upper lobe", BP, ("lul",), ("lung",), tier="sub"),
    VocabEntry("right lower lobe", BP, ("rll",), ("lung",), tier="sub"),
    VocabEntry("left lower lobe", BP, ("lll",), ("lung",), tier="sub"),
    VocabEntry("right hepatic lobe", BP, (), ("liver",), tier="sub"),
    VocabEntry("left hepatic lobe", BP, (), ("liver",), tier="sub"),
    VocabEntry("mediastinal lymph node", BP, (), ("lymph node", "mediastinum"), tier="sub"),
    VocabEntry("retroperitoneal lymph node", BP, (), ("lymph node", "abdomen"), tier="sub"),
    VocabEntry("right kidney", BP, (), ("kidney",), tier="sub"),
    VocabEntry("left kidney", BP, (), ("kidney",), tier="sub"),
    VocabEntry("left adrenal gland", BP, (), ("adrenal gland",), tier="sub"),
    VocabEntry("right adrenal gland", BP, (), ("adrenal gland",), tier="sub"),
    VocabEntry("axillary lymph node", BP, (), ("lymph node", "chest"), tier="sub"),
    VocabEntry("porta hepatis", BP, (), ("liver",), tier="sub"),
    VocabEntry("pancreatic tail", BP, (), ("pancreas",), tier="sub"),
    VocabEntry("iliac bone", BP, ("ilium",), ("bone", "pelvis"), tier="sub"),
    VocabEntry("rib", BP, (), ("bone", "chest"), tier="sub"),
    VocabEntry("nodule", FT, (), tier="coarse", weight=0.40),
    VocabEntry("mass", FT, (), tier="coarse", weight=0.30),
    VocabEntry("cyst", FT, (), tier="coarse", weight=0.18),
    VocabEntry("opacity", FT, (), tier="coarse", weight=0.12),
    VocabEntry("lung nodule", FT, ("pulmonary nodule",), ("lung", "nodule"), tier="specific"),
    VocabEntry("liver mass", FT, ("hepatic mass",), ("liver", "mass"), tier="specific"),
    VocabEntry("renal cyst", FT, ("kidney cyst",), ("kidney", "cyst"), tier="specific"),
    VocabEntry("ground-glass opacity", FT, ("ggo",), ("lung", "opacity"), tier="specific"),
    VocabEntry("adrenal nodule", FT, (), ("adrenal gland", "nodule"), tier="specific"),
    VocabEntry("liver cyst", FT, ("hepatic cyst",), ("liver", "cyst"), tier="specific"),
    VocabEntry("lung mass", FT, ("pulmonary mass",), ("lung", "mass"), tier="specific"),
    VocabEntry("spiculated", AT, (), weight=0.15, group="margin"),
    VocabEntry("calcified", AT, (), weight=0.12),
    VocabEntry("hypoattenuating", AT, ("hypodense",), weight=0.25, group="density"),
    VocabEntry("hyperattenuating", AT, ("hyperdense",), weight=0.10, group="density"),
    VocabEntry("large", AT, (), weight=0.20, group="size"),
    VocabEntry("small", AT, (), weight=0.25, group="size"),
    VocabEntry("lobulated", AT, (), weight=0.10),
    VocabEntry("well-defined", AT, ("circumscribed",), weight=0.20, group="margin"),
    VocabEntry("heterogeneous", AT, (), weight=0.12),
    VocabEntry("enhancing", AT, (), weight=0.15),
    VocabEntry("necrotic", AT, (), weight=0.06),
    VocabEntry("irregular", AT, (), weight=0.08, group="margin"),
)

CATEGORY_QUOTA = {BP: 0.6, FT: 0.2, AT: 0.2}
MIN_LABELS = 8

REGION_HU = {"chest": -700.0, "abdomen": 40.0, "pelvis": 30.0, "neck": 15.0}
# (HU, radius scale, edge width mm) of the coarse finding types
TYPE_LOOK = {
    "nodule": (70.0, 1.0, 0.6),
    "mass": (45.0, 1.5, 1.0),
    "cyst": (5.0, 1.0, 0.3),
    "opacity": (-420.0, 1.3, 3.0),
}
TEMPLATES = (
    "{desc} in the {loc}, measuring {size} cm",
    "There is a {desc} in the {loc} measuring {size} cm",
    "{desc} is seen in the {loc}, {size} cm",
)
SPURIOUS_FILLERS = ("incidental", "possible", "adjacent")
BLANK_TYPE = "lesion"


class SynthConfig(BaseModel):
    """Generator settings for a synthetic corpus."""

    n_labels: int = Field(default=40, ge=MIN_LABELS)
    n_train: int = Field(default=5000, ge=1)
    n_test: int = Field(default=1000, ge=1)
    missing_rate: float = Field(default=0.3, ge=0.0, le=1.0)
    spurious_rate: float = Field(default=0.05, ge=0.0, le=1.0)
    rng_seed: int = 0
    max_lesions_per_patient: int = Field(default=3, ge=1)
    inplane_spacing_mm: float = Field(default=0.8, gt=0.0)
    slice_spacing_mm: float = Field(default=2.0, gt=0.0)
    n_slices: int = Field(default=5, ge=3)
    field_of_view_mm: float = Field(default=128.0, ge=120.0)
    noise_hu: float = Field(default=20.0, ge=0.0)
    render_patches: bool = True

    @model_validator(mode="after")
    def labels_within_vocabulary(self) -> "SynthConfig":
        if self.n_labels > len(VOCABULARY):
            raise ValueError(
                f"n_labels={self.n_labels} exceeds the built-in vocabulary size "
                f"{len(VOCABULARY)}"
            )
        half_depth = (self.n_slices - 1) * self.slice_spacing_mm / 2.0
        if half_depth < 2.0:
            raise ValueError("volume must extend at least 2 mm either side of the lesion")
        return self

    @property
    def n_lesions(self) -> int:
        return self.n_train + self.n_test

    @property
    def test_fraction(self) -> float:
        return self.n_test / self.n_lesions


@dataclass
class SynthStats:
    lesions: int = 0
    patients: int = 0
    leaf_mentions: int = 0
    dropped_mentions: int = 0
    replaced_by_parent: int = 0
    spurious_mentions: int = 0

    @property
    def missing_fraction(self) -> float:
        """Share of true leaf mentions that did not reach the sentence verbatim."""
        if not self.leaf_mentions:
            return 0.0
        return (self.dropped_mentions + self.replaced_by_parent) / self.leaf_mentions

    def to_json(self) -> Dict:
        return {
            "lesions": self.lesions,
            "patients": self.patients,
            "leaf_mentions": self.leaf_mentions,
            "dropped_mentions": self.dropped_mentions,
            "replaced_by_parent": self.replaced_by_parent,
            "spurious_mentions": self.spurious_mentions,
            "missing_fraction": round(self.missing_fraction, 6),
        }


@dataclass
class SynthCorpus:
    ontology: Ontology
    records: List[LesionRecord]
    patches: Optional[np.ndarray]
    stats: SynthStats = field(default_factory=SynthStats)


def select_vocabulary(n_labels: int) -> List[VocabEntry]:
    """Parent-closed vocabulary subset filled by category quota, then in order."""
    quota = {cat: int(round(share * n_labels)) for cat, share in CATEGORY_QUOTA.items()}
    quota[AT] = n_labels - quota[BP] - quota[FT]
    chosen: List[VocabEntry] = []
    names: Set[str] = set()

    def admit(entry: VocabEntry) -> None:
        chosen.append(entry)
        names.add(entry.name)

    for entry in VOCABULARY:
        if quota[entry.category] > 0 and set(entry.parents) <= names:
            admit(entry)
            quota[entry.category] -= 1
    for entry in VOCABULARY:
        if len(chosen) >= n_labels:
            break
        if entry.name not in names and set(entry.parents) <= names:
            admit(entry)
    # keep vocabulary order so ids stay stable for a given n_labels
    order = {entry.name: i for i, entry in enumerate(VOCABULARY)}
    return sorted(chosen[:n_labels], key=lambda e: order[e.name])


def build_synthetic_ontology(n_labels: int) -> Ontology:
    entries = select_vocabulary(n_labels)
    return Ontology.from_entries(
        (e.name, e.category, e.synonyms, e.parents) for e in entries
    )


class LesionSampler:
    """Draws truth label sets and renders noisy sentences for one ontology."""

    def __init__(self, ontology: Ontology, cfg: SynthConfig):
        self.ontology = ontology
        self.cfg = cfg
        self.entries: Dict[str, VocabEntry] = {e.name: e for e in VOCABULARY}
        names = set(ontology.names)

        self.organs = [e for e in VOCABULARY if e.tier == "organ" and e.name in names]
        self.subparts = [e for e in VOCABULARY if e.tier == "sub" and e.name in names]
        self.coarse_types = [e for e in VOCABULARY if e.tier == "coarse" and e.name in names]
        self.specific_types = [
            e for e in VOCABULARY if e.tier == "specific" and e.name in names
        ]
        self.attributes = [e for e in VOCABULARY if e.category == AT and e.name in names]
        if not self.organs:
            self.organs = [
                e for e in VOCABULARY if e.category == BP and e.name in names
            ]

    def sample_truth(self, rng: np.random.Generator) -> Tuple[Set[int], Set[int]]:
        """Returns (leaf ids, ancestor-closed truth ids)."""
        o = self.ontology
        organ = self._weighted_choice(rng, self.organs)
        location = organ
        children = [e for e in self.subparts if organ.name in e.parents]
        if children and rng.random() < 0.6:
            location = children[int(rng.integers(len(children)))]
        body = o.expand([o.id_of(location.name)])
        body_names = {o.labels[i].name for i in body}

        leaves = {o.id_of(location.name)}
        coarse_pool = [
            e for e in self.coarse_types if e.name != "opacity" or "lung" in body_names
        ]
        if coarse_pool:
            coarse = self._weighted_choice(rng, coarse_pool)
            finding = coarse
            specific = [
                e
                for e in self.specific_types
                if coarse.name in e.parents
                and all(p == coarse.name or p in body_names for p in e.parents)
            ]
            if specific and rng.random() < 0.75:
                finding = specific[int(rng.integers(len(specific)))]
            leaves.add(o.id_of(finding.name))

        used_groups: Set[str] = set()
        for index in rng.permutation(len(self.attributes)):
            attr = self.attributes[int(index)]
            if attr.group is not None and attr.group in used_groups:
                continue
            if rng.random() < attr.weight:
                leaves.add(o.id_of(attr.name))
                if attr.group is not None:
                    used_groups.add(attr.group)

        return o.leaves_of(leaves), o.expand(leaves)

    def render_sentence(
        self,
        rng: np.random.Generator,
        leaves: Set[int],
        truth: Set[int],
        radius_mm: float,
        stats: SynthStats,
    ) -> str:
        o = self.ontology
        mentioned: Dict[Category, List[str]] = {BP: [], FT: [], AT: []}
        for label_id in sorted(leaves):
            label = o.labels[label_id]
            stats.leaf_mentions += 1
            u = rng.random()
            if u < self.cfg.missing_rate / 2.0:
                parent = self._same_category_parent(label_id)
                if parent is not None:
                    stats.replaced_by_parent += 1
                    mentioned[label.category].append(self._surface(rng, parent))
                else:
                    stats.dropped_mentions += 1
                continue
            if u < self.cfg.missing_rate:
                stats.dropped_mentions += 1
                continue
            mentioned[label.category].append(self._surface(rng, label_id))

        attrs = mentioned[AT]
        rng.shuffle(attrs)
        finding = mentioned[FT][0] if mentioned[FT] else BLANK_TYPE
        desc = " ".join(attrs + [finding])
        size = self._size_phrase(rng, radius_mm)
        if mentioned[BP]:
            template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
            text = template.format(desc=desc, loc=mentioned[BP][0], size=size)
        else:
            text = f"{desc}, measuring {size} cm"

        if rng.random() < self.cfg.spurious_rate:
            candidates = [i for i in range(o.size) if i not in truth]
            if candidates:
                spurious = candidates[int(rng.integers(len(candidates)))]
                filler = SPURIOUS_FILLERS[int(rng.integers(len(SPURIOUS_FILLERS)))]
                text += f"; {filler} {self._surface(rng, spurious)}"
                stats.spurious_mentions += 1
        return text[0].upper() + text[1:] + " (BOOKMARK)."

    def _same_category_parent(self, label_id: int) -> Optional[int]:
        label = self.ontology.labels[label_id]
        for parent in label.parents:
            if self.ontology.labels[parent].category == label.category:
                return parent
        return None

    def _surface(self, rng: np.random.Generator, label_id: int) -> str:
        label = self.ontology.labels[label_id]
        # body-part adjectives would read as modifiers, so locations use their name
        if label.category == BP or not label.synonyms or rng.random() < 0.7:
            return label.name
        return label.synonyms[int(rng.integers(len(label.synonyms)))]

    @staticmethod
    def _size_phrase(rng: np.random.Generator, radius_mm: float) -> str:
        major = 2.0 * radius_mm / 10.0 * rng.uniform(0.9, 1.1)
        minor = major * rng.uniform(0.7, 1.0)
        return f"{major:.1f} x {minor:.1f}"

    @staticmethod
    def _weighted_choice(rng: np.random.Generator, entries: Sequence[VocabEntry]) -> VocabEntry:
        weights = np.array([e.weight for e in entries], dtype=np.float64)
        return entries[int(rng.choice(len(entries), p=weights / weights.sum()))]


class LesionRenderer:
    """Renders a lesion volume whose appearance encodes its truth labels."""

    def __init__(self, ontology: Ontology, cfg: SynthConfig):
        self.ontology = ontology
        self.cfg = cfg
        body_ids = ontology.ids_in_category(BP)
        # one context bump per body-part label, spread over a ring around the lesion
        self.bump_angle = {
            label_id: 2.0 * np.pi * j / max(len(body_ids), 1)
            for j, label_id in enumerate(body_ids)
        }
        self.ring_radius_mm = 46.0
        self.bump_radius_mm = 4.0

        n_xy = int(round(cfg.field_of_view_mm / cfg.inplane_spacing_mm))
        self.shape = (cfg.n_slices, n_xy, n_xy)
        xs = np.arange(n_xy, dtype=np.float64) * cfg.inplane_spacing_mm
        zs = np.arange(cfg.n_slices, dtype=np.float64) * cfg.slice_spacing_mm
        self.center_z_mm = float(zs[-1] / 2.0)
        self.gy, self.gx = np.meshgrid(xs, xs, indexing="ij")
        self.dz = (zs - self.center_z_mm)[:, None, None]

    def lesion_radius(self, rng: np.random.Generator, truth_names: Set[str]) -> float:
        if "large" in truth_names:
            return float(rng.uniform(17.0, 23.0))
        if "small" in truth_names:
            return float(rng.uniform(4.0, 7.0))
        return float(rng.uniform(8.0, 14.0))

    def render(
        self,
        rng: np.random.Generator,
        truth: Set[int],
        radius_mm: float,
        center_xy_mm: Tuple[float, float],
    ) -> Volume:
        o = self.ontology
        names = {o.labels[i].name for i in truth}
        cx, cy = center_xy_mm
        dx, dy = self.gx - cx, self.gy - cy
        dist = np.sqrt(dx**2 + dy**2 + self.dz**2)
        angle = np.broadcast_to(np.arctan2(dy, dx), self.shape)

        background = 0.0
        for region, hu in REGION_HU.items():
            if region in names:
                background = hu
                break
        vol = np.full(self.shape, background, dtype=np.float64)

        for label_id in truth:
            theta = self.bump_angle.get(label_id)
            if theta is None:
                continue
            bx = cx + self.ring_radius_mm * np.cos(theta)
            by = cy + self.ring_radius_mm * np.sin(theta)
            # context is constant through the slab
            d = np.sqrt((self.gx - bx) ** 2 + (self.gy - by) ** 2)
            vol += 350.0 * _soft_disk(d, self.bump_radius_mm, 1.0)

        coarse = next(
            (t for t in ("opacity", "cyst", "mass", "nodule") if t in names), "nodule"
        )
        hu, scale, edge = TYPE_LOOK[coarse]
        radius = radius_mm * scale
        if "hypoattenuating" in names:
            hu -= 70.0
        if "hyperattenuating" in names:
            hu += 90.0
        if "well-defined" in names:
            edge = 0.3
        boundary = np.full(self.shape, radius)
        if "lobulated" in names:
            boundary = boundary * (1.0 + 0.2 * np.cos(3.0 * angle))
        if "irregular" in names:
            phase = rng.uniform(0.0, 2.0 * np.pi)
            boundary = boundary * (1.0 + 0.15 * np.cos(5.0 * angle + phase))
        if "spiculated" in names:
            spikes = np.clip(np.cos(8.0 * angle), 0.0, 1.0) ** 8
            boundary = boundary * (1.0 + 0.45 * spikes)

        mask = _soft_disk(dist, boundary, edge)
        lesion = np.full(self.shape, hu)
        if "heterogeneous" in names:
            lesion = lesion + rng.normal(0.0, 60.0, size=self.shape)
        if "necrotic" in names:
            lesion = lesion - 80.0 * _soft_disk(dist, 0.45 * radius, 1.0)
        if "enhancing" in names:
            rim = np.exp(-((dist - 0.85 * radius) ** 2) / (2.0 * (0.12 * radius + 0.5) ** 2))
            lesion = lesion + 150.0 * rim
        vol = vol * (1.0 - mask) + lesion * mask
        if "calcified" in names:
            vol += 700.0 * _soft_disk(dist, max(1.5, 0.2 * radius), 0.5)

        if self.cfg.noise_hu > 0:
            vol += rng.normal(0.0, self.cfg.noise_hu, size=self.shape)
        spacing = (self.cfg.inplane_spacing_mm, self.cfg.inplane_spacing_mm, self.cfg.slice_spacing_mm)
        return Volume(vol, spacing)

    def lesion_bbox(self, radius_mm: float, truth_names: Set[str]) -> Tuple[float, float, float, float]:
        """Box around the lesion in the patch frame (lesion centred at the patch centre)."""
        coarse = next(
            (t for t in ("opacity", "cyst", "mass", "nodule") if t in truth_names), "nodule"
        )
        extent = radius_mm * TYPE_LOOK[coarse][1]
        if "spiculated" in truth_names:
            extent *= 1.45
        elif "lobulated" in truth_names or "irregular" in truth_names:
            extent *= 1.2
        extent = max(extent, 2.0)
        c = float(PATCH_CENTER)
        return (
            max(c - extent, 0.0),
            max(c - extent, 0.0),
            min(c + extent, 2.0 * c),
            min(c + extent, 2.0 * c),
        )


def _soft_disk(dist: np.ndarray, radius, edge: float) -> np.ndarray:
    """1 inside, 0 outside, logistic transition of width ~edge."""
    return 0.5 * (1.0 + np.tanh((radius - dist) / (2.0 * max(edge, 1e-3))))


def synth_generate(cfg: SynthConfig) -> SynthCorpus:
    """Generate a reproducible synthetic corpus (ontology, records, patches)."""
    start = time.time()
    ontology = build_synthetic_ontology(cfg.n_labels)
    label_seq, image_seq = np.random.SeedSequence(cfg.rng_seed).spawn(2)
    label_rng = np.random.default_rng(label_seq)
    image_rng = np.random.default_rng(image_seq)

    sampler = LesionSampler(ontology, cfg)
    renderer = LesionRenderer(ontology, cfg)
    stats = SynthStats()
    records: List[LesionRecord] = []
    patches = (
        np.empty((cfg.n_lesions, 3, 120, 120), dtype=np.float32) if cfg.render_patches else None
    )

    patient_index = 0
    remaining_for_patient = 0
    for index in range(cfg.n_lesions):
        if remaining_for_patient == 0:
            patient_index += 1
            remaining_for_patient = int(label_rng.integers(1, cfg.max_lesions_per_patient + 1))
        remaining_for_patient -= 1

        leaves, truth = sampler.sample_truth(label_rng)
        truth_names = {ontology.labels[i].name for i in truth}
        radius = renderer.lesion_radius(label_rng, truth_names)
        text = sampler.render_sentence(label_rng, leaves, truth, radius, stats)

        half_fov = cfg.field_of_view_mm / 2.0
        center_xy = (
            round(half_fov + float(image_rng.uniform(-3.0, 3.0)), 3),
            round(half_fov + float(image_rng.uniform(-3.0, 3.0)), 3),
        )
        bbox = renderer.lesion_bbox(radius, truth_names)
        records.append(
            LesionRecord(
                lesion_id=f"L{index:06d}",
                patient_id=f"P{patient_index:05d}",
                sentence=text,
                bbox_mm=bbox,
                slice_mm=renderer.center_z_mm,
                center_mm=center_xy,
                truth_labels=tuple(sorted(truth)),
            )
        )
        if patches is not None:
            volume = renderer.render(image_rng, truth, radius, center_xy)
            patch = make_patch(volume, center_xy, renderer.center_z_mm, bbox)
            patches[index] = patch.pixels.astype(np.float32)

    stats.lesions = cfg.n_lesions
    stats.patients = patient_index
    logger.info(
        f"Generated synthetic corpus: {stats.lesions} lesions, {stats.patients} patients, "
        f"K={ontology.size}, missing fraction {stats.missing_fraction:.3f} "
        f"in {time.time() - start:.1f}s"
    )
    return SynthCorpus(ontology=ontology, records=records, patches=patches, stats=stats)


def write_synth_corpus(out_dir: Union[str, Path], corpus: SynthCorpus) -> Dict[str, Path]:
    """Write lexicon.tsv, corpus.jsonl, patches/ and synth_stats.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "lexicon": out_dir / "lexicon.tsv",
        "corpus": out_dir / "corpus.jsonl",
        "stats": out_dir / "synth_stats.json",
    }
    paths["lexicon"].write_text(corpus.ontology.to_lexicon_text(), encoding="utf-8")
    write_corpus(paths["corpus"], corpus.records)
    write_json(paths["stats"], corpus.stats.to_json())
    if corpus.patches is not None:
        paths["patches"] = out_dir / "patches"
        for record, pixels in zip(corpus.records, corpus.patches):
            save_patch(patch_path(paths["patches"], record.lesion_id), pixels)
    logger.info(f"Wrote synthetic corpus to {out_dir}")
    return paths
