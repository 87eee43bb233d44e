"""
Hierarchical label lexicon: loading, validation and ancestor closure.

Lexicon file format (UTF-8 TSV, one label per line, '#' comments):

    name<TAB>category<TAB>synonym1|synonym2<TAB>parent1|parent2

Label ids are assigned by file order.
"""
import logging
import re
import string
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple, Union

import networkx as nx
from pydantic import BaseModel, ConfigDict, field_validator

from utils.errors import OntologyError

logger = logging.getLogger(__name__)

_BOUNDARY_PUNCT = string.punctuation


class Category(str, Enum):
    BODY_PART = "body_part"
    FINDING_TYPE = "finding_type"
    ATTRIBUTE = "attribute"


def normalize_term(text: str) -> str:
    """Lowercase, collapse whitespace, strip punctuation at token boundaries."""
    tokens = []
    for raw in text.lower().split():
        token = raw.strip(_BOUNDARY_PUNCT)
        if token:
            tokens.append(token)
    return " ".join(tokens)


class LabelDef(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    name: str
    category: Category
    synonyms: Tuple[str, ...] = ()
    parents: Tuple[int, ...] = ()

    @field_validator("name")
    @classmethod
    def name_is_normalized(cls, v: str) -> str:
        if not v or v != normalize_term(v):
            raise ValueError(f"label name must be normalized: {v!r}")
        return v

    @field_validator("synonyms")
    @classmethod
    def synonyms_are_normalized(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        for synonym in v:
            if not synonym or synonym != normalize_term(synonym):
                raise ValueError(f"synonym must be normalized: {synonym!r}")
        return v

    @property
    def terms(self) -> Tuple[str, ...]:
        """Name followed by synonyms."""
        return (self.name,) + tuple(s for s in self.synonyms if s != self.name)


# (name, category, synonyms, parent names)
Entry = Tuple[str, Union[str, Category], Sequence[str], Sequence[str]]


class Ontology:
    """Immutable label DAG with a synonym index."""

    def __init__(self, labels: List[LabelDef]):
        if not labels:
            raise OntologyError("Lexicon contains no labels", code="empty_lexicon")

        self.labels: Tuple[LabelDef, ...] = tuple(labels)
        self.synonym_index: Dict[str, int] = {}
        self.graph = nx.DiGraph()

        for label in self.labels:
            self.graph.add_node(label.id)
            for term in label.terms:
                owner = self.synonym_index.get(term)
                if owner is not None and owner != label.id:
                    raise OntologyError(
                        f"Synonym '{term}' of label '{label.name}' already belongs "
                        f"to label '{self.labels[owner].name}'",
                        code="duplicate_synonym",
                        label=label.name,
                    )
                self.synonym_index[term] = label.id

        for label in self.labels:
            for parent in label.parents:
                if not 0 <= parent < len(self.labels):
                    raise OntologyError(
                        f"Label '{label.name}' has a parent id {parent} outside the "
                        "lexicon",
                        code="dangling_parent",
                        label=label.name,
                    )
                # edges point from parent to child
                self.graph.add_edge(parent, label.id)

        try:
            cycle = nx.find_cycle(self.graph)
        except nx.NetworkXNoCycle:
            cycle = None
        if cycle:
            names = [self.labels[u].name for u, _ in cycle]
            raise OntologyError(
                f"Parent cycle through labels: {' -> '.join(names + names[:1])}",
                code="cycle_detected",
                label=names[0],
            )

        self._ancestors: Tuple[FrozenSet[int], ...] = tuple(
            frozenset(nx.ancestors(self.graph, label.id)) for label in self.labels
        )
        self._children: Tuple[Tuple[int, ...], ...] = tuple(
            tuple(sorted(self.graph.successors(label.id))) for label in self.labels
        )

    @classmethod
    def from_entries(cls, entries: Iterable[Entry]) -> "Ontology":
        """Build from (name, category, synonyms, parent names) tuples."""
        rows = []
        for name, category, synonyms, parents in entries:
            rows.append(
                (
                    normalize_term(name),
                    category,
                    [normalize_term(s) for s in synonyms if normalize_term(s)],
                    [normalize_term(p) for p in parents if normalize_term(p)],
                    None,
                )
            )
        return cls._from_rows(rows)

    @classmethod
    def _from_rows(cls, rows) -> "Ontology":
        name_to_id: Dict[str, int] = {}
        for name, _, _, _, line_number in rows:
            where = f" (line {line_number})" if line_number else ""
            if not name:
                raise OntologyError(
                    f"Empty label name{where}", code="empty_label_name", label=name
                )
            if name in name_to_id:
                raise OntologyError(
                    f"Label '{name}' is defined twice{where}",
                    code="duplicate_synonym",
                    label=name,
                )
            name_to_id[name] = len(name_to_id)

        labels = []
        for name, category, synonyms, parents, line_number in rows:
            try:
                category = Category(category)
            except ValueError:
                raise OntologyError(
                    f"Label '{name}' has unknown category '{category}'",
                    code="unknown_category",
                    label=name,
                )
            parent_ids = []
            for parent in parents:
                if parent not in name_to_id:
                    raise OntologyError(
                        f"Label '{name}' refers to undefined parent '{parent}'",
                        code="dangling_parent",
                        label=parent,
                    )
                parent_ids.append(name_to_id[parent])
            labels.append(
                LabelDef(
                    id=name_to_id[name],
                    name=name,
                    category=category,
                    synonyms=tuple(dict.fromkeys(s for s in synonyms if s != name)),
                    parents=tuple(dict.fromkeys(parent_ids)),
                )
            )
        return cls(labels)

    @property
    def size(self) -> int:
        """K, the length of every label vector."""
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def names(self) -> List[str]:
        return [label.name for label in self.labels]

    @property
    def categories(self) -> List[Category]:
        return [label.category for label in self.labels]

    def id_of(self, term: str) -> int:
        """Label id for a name or synonym."""
        key = normalize_term(term)
        if key not in self.synonym_index:
            raise KeyError(f"Unknown label or synonym: {term!r}")
        return self.synonym_index[key]

    def ancestors(self, label_id: int) -> FrozenSet[int]:
        """Transitive parents of a label, excluding the label itself."""
        self._check_id(label_id)
        return self._ancestors[label_id]

    def parents(self, label_id: int) -> Tuple[int, ...]:
        self._check_id(label_id)
        return self.labels[label_id].parents

    def children(self, label_id: int) -> Tuple[int, ...]:
        self._check_id(label_id)
        return self._children[label_id]

    def roots(self) -> List[int]:
        return [label.id for label in self.labels if not label.parents]

    def expand(self, ids: Iterable[int]) -> Set[int]:
        """Ancestor closure of a label set."""
        expanded: Set[int] = set()
        for label_id in ids:
            expanded.add(label_id)
            expanded.update(self.ancestors(label_id))
        return expanded

    def leaves_of(self, ids: Iterable[int]) -> Set[int]:
        """Members of a set that are not an ancestor of another member."""
        ids = set(ids)
        covered: Set[int] = set()
        for label_id in ids:
            covered.update(self.ancestors(label_id))
        return ids - covered

    def depth(self) -> int:
        """Number of labels on the longest parent chain (a lone root has depth 1)."""
        return nx.dag_longest_path_length(self.graph) + 1

    def category_counts(self) -> Dict[str, int]:
        counts = {category.value: 0 for category in Category}
        for label in self.labels:
            counts[label.category.value] += 1
        return counts

    def ids_in_category(self, category: Union[str, Category]) -> List[int]:
        category = Category(category)
        return [label.id for label in self.labels if label.category == category]

    def to_lexicon_text(self) -> str:
        lines = ["# name\tcategory\tsynonyms\tparents"]
        for label in self.labels:
            lines.append(
                "\t".join(
                    [
                        label.name,
                        label.category.value,
                        "|".join(label.synonyms),
                        "|".join(self.labels[p].name for p in label.parents),
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    def _check_id(self, label_id: int) -> None:
        if not 0 <= label_id < len(self.labels):
            raise IndexError(f"Label id {label_id} outside [0, {len(self.labels)})")


def ancestors(o: Ontology, label_id: int) -> FrozenSet[int]:
    return o.ancestors(label_id)


def expand(o: Ontology, ids: Iterable[int]) -> Set[int]:
    return o.expand(ids)


def _split_cell(cell: str) -> List[str]:
    return [normalize_term(part) for part in cell.split("|") if normalize_term(part)]


def parse_lexicon(text: str, source: str = "<lexicon>") -> Ontology:
    """Parse lexicon TSV text into a validated ontology."""
    rows = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        cells = raw.rstrip("\r\n").split("\t")
        if len(cells) > 4 or len(cells) < 2:
            raise OntologyError(
                f"{source}:{line_number}: expected 2-4 tab-separated columns, "
                f"found {len(cells)}",
                code="malformed_lexicon",
            )
        cells += [""] * (4 - len(cells))
        name, category, synonyms, parents = cells
        rows.append(
            (
                normalize_term(name),
                category.strip().lower(),
                _split_cell(synonyms),
                _split_cell(parents),
                line_number,
            )
        )
    ontology = Ontology._from_rows(rows)
    logger.info(f"Loaded ontology from {source}: K={ontology.size}")
    return ontology


def load_ontology(path: Union[str, Path]) -> Ontology:
    """Load and validate a lexicon file."""
    path = Path(path)
    if not path.exists():
        raise OntologyError(f"Lexicon file not found: {path}", code="missing_lexicon")
    return parse_lexicon(path.read_text(encoding="utf-8"), source=str(path))
