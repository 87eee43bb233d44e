"""
Label mining from bookmarked report sentences.

tokenize -> lemmatize -> longest whole-word lexicon match -> ancestor expansion.
"""
import logging
import re
import weakref
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from mining.ontology import Ontology, normalize_term
from utils.errors import OntologyError
from utils.metrics import labels_mined_counter, sentences_mined_counter

logger = logging.getLogger(__name__)

TOKEN_RE = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)*|\d+(?:\.\d+)?")
BOOKMARK_RE = re.compile(r"\bBOOKMARK\b", re.IGNORECASE)
BOOKMARK = "bookmark"

Span = Tuple[int, int]


class Sentence(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    bookmark_spans: Tuple[Span, ...] = ()

    @model_validator(mode="after")
    def spans_within_text(self) -> "Sentence":
        for start, end in self.bookmark_spans:
            if not 0 <= start < end <= len(self.text):
                raise ValueError(
                    f"bookmark span ({start}, {end}) outside text of length "
                    f"{len(self.text)}"
                )
        return self

    @classmethod
    def from_text(cls, text: str) -> "Sentence":
        return cls(text=text, bookmark_spans=find_bookmark_spans(text))


class Token(BaseModel):
    model_config = ConfigDict(frozen=True)

    surface: str
    char_span: Span
    lemma: Optional[str] = None
    is_bookmark: bool = False

    def with_lemma(self, lemma: str) -> "Token":
        return self.model_copy(update={"lemma": lemma})


class MatchResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    label_ids: FrozenSet[int] = frozenset()
    # (label id, (start token, end token exclusive))
    matches: Tuple[Tuple[int, Span], ...] = ()


def find_bookmark_spans(text: str) -> Tuple[Span, ...]:
    return tuple(m.span() for m in BOOKMARK_RE.finditer(text))


def tokenize(text: str) -> List[Token]:
    """Split on whitespace and punctuation; numbers like '2.1' stay whole."""
    bookmarks = set(find_bookmark_spans(text))
    return [
        Token(surface=m.group(0), char_span=m.span(), is_bookmark=m.span() in bookmarks)
        for m in TOKEN_RE.finditer(text)
    ]


class Lemmatizer:
    """Exception table first, then ordered suffix rules."""

    def __init__(self):
        self.exceptions: Dict[str, str] = {
            "masses": "mass",
            "metastases": "metastasis",
            "metastasis": "metastasis",
            "calcifications": "calcification",
            "lymphadenopathies": "lymphadenopathy",
            "bronchi": "bronchus",
            "vertebrae": "vertebra",
            "hila": "hilum",
            "pancreas": "pancreas",
            "pelvis": "pelvis",
            "thorax": "thorax",
            "ascites": "ascites",
            "abscesses": "abscess",
            "analyses": "analysis",
            "diagnoses": "diagnosis",
            "lesions": "lesion",
            "nodes": "node",
            "cysts": "cyst",
            "ribs": "rib",
            "adnexa": "adnexa",
        }
        # stems after which "-es" is a plural ending rather than part of the word
        self.sibilant_endings = ("ss", "x", "z", "ch", "sh")
        # words with these endings are singular and never lose a final "s"
        self.protected_endings = ("ss", "us", "is")
        self.min_length = 4

    def lemmatize(self, word: str) -> str:
        word = word.lower()
        if word in self.exceptions:
            return self.exceptions[word]
        if len(word) < self.min_length or not word.isalpha():
            return word

        if word.endswith("ies") and len(word) > 4:
            return word[:-3] + "y"
        if word.endswith("es") and word[:-2].endswith(self.sibilant_endings):
            return word[:-2]
        if word.endswith("s") and not word.endswith(self.protected_endings):
            return word[:-1]
        return word


_lemmatizer = Lemmatizer()


def lemmatize(token: str) -> str:
    """Deterministic, idempotent base form."""
    return _lemmatizer.lemmatize(token)


def lemmatize_tokens(tokens: Iterable[Token]) -> List[Token]:
    return [token.with_lemma(lemmatize(token.surface)) for token in tokens]


def term_key(term: str) -> Tuple[str, ...]:
    """Lemma sequence of a lexicon term, matching how sentences are tokenized."""
    return tuple(lemmatize(t.surface) for t in tokenize(normalize_term(term)))


class LexiconMatcher:
    """Compiled lemma-sequence index over every name and synonym."""

    def __init__(self, ontology: Ontology):
        self.ontology = ontology
        self.index: Dict[Tuple[str, ...], int] = {}
        for label in ontology.labels:
            for term in label.terms:
                key = term_key(term)
                if not key:
                    continue
                owner = self.index.get(key)
                if owner is not None and owner != label.id:
                    raise OntologyError(
                        f"Synonym '{term}' of label '{label.name}' has the same base "
                        f"form as a term of label '{ontology.labels[owner].name}'",
                        code="duplicate_synonym",
                        label=label.name,
                    )
                self.index[key] = label.id
        self.max_length = max((len(key) for key in self.index), default=0)

    def match(self, tokens: Sequence[Token]) -> MatchResult:
        """Left-to-right scan; the longest term starting at a position wins."""
        lemmas = [
            None if token.is_bookmark else (token.lemma or lemmatize(token.surface))
            for token in tokens
        ]
        matches = []
        i = 0
        n = len(lemmas)
        while i < n:
            matched = False
            if lemmas[i] is not None:
                for length in range(min(self.max_length, n - i), 0, -1):
                    window = lemmas[i : i + length]
                    if None in window:
                        continue
                    label_id = self.index.get(tuple(window))
                    if label_id is not None:
                        matches.append((label_id, (i, i + length)))
                        i += length
                        matched = True
                        break
            if not matched:
                i += 1
        return MatchResult(
            label_ids=frozenset(label_id for label_id, _ in matches),
            matches=tuple(matches),
        )


_matchers: "weakref.WeakKeyDictionary[Ontology, LexiconMatcher]" = (
    weakref.WeakKeyDictionary()
)


def get_matcher(ontology: Ontology) -> LexiconMatcher:
    """Matcher for an ontology, compiled once per ontology object."""
    matcher = _matchers.get(ontology)
    if matcher is None:
        matcher = LexiconMatcher(ontology)
        _matchers[ontology] = matcher
    return matcher


def match_labels(tokens: Sequence[Token], o: Ontology) -> MatchResult:
    return get_matcher(o).match(tokens)


class SentenceMiner:
    """Mines expanded label vectors from sentences for one ontology."""

    def __init__(self, ontology: Ontology):
        self.ontology = ontology
        self.matcher = get_matcher(ontology)

    def mined_ids(self, sentence: Sentence) -> Set[int]:
        tokens = lemmatize_tokens(tokenize(sentence.text))
        return self.ontology.expand(self.matcher.match(tokens).label_ids)

    def mine(self, sentence: Sentence) -> np.ndarray:
        vector = np.zeros(self.ontology.size, dtype=np.uint8)
        ids = self.mined_ids(sentence)
        if ids:
            vector[sorted(ids)] = 1
        sentences_mined_counter.labels(outcome="labeled" if ids else "empty").inc()
        labels_mined_counter.inc(len(ids))
        return vector

    def mine_many(self, sentences: Sequence[Sentence], threads: int = 1) -> List[np.ndarray]:
        """Mine in input order; the result does not depend on the thread count."""
        if threads <= 1 or len(sentences) < 2:
            vectors = [self.mine(s) for s in sentences]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                vectors = list(pool.map(self.mine, sentences))
        logger.info(
            f"Mined {len(vectors)} sentences, "
            f"{sum(int(v.any()) for v in vectors)} with at least one label"
        )
        return vectors


def mine_sentence(s: Sentence, o: Ontology) -> np.ndarray:
    """Binary vector y with y_i = 1 iff label i is in the expanded mined set."""
    return SentenceMiner(o).mine(s)
