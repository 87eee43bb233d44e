"""
Unit tests for tokenization, lemmatization and lexicon label mining.
"""
import json
from pathlib import Path

import numpy as np
import pytest

from mining.ontology import load_ontology, parse_lexicon
from mining.textmine import (
    LexiconMatcher,
    Sentence,
    SentenceMiner,
    find_bookmark_spans,
    lemmatize,
    lemmatize_tokens,
    match_labels,
    mine_sentence,
    tokenize,
)
from utils.errors import OntologyError

FIXTURES = Path(__file__).parent / "fixtures"
DATA_DIR = Path(__file__).parent.parent / "data"


def _golden_cases():
    with open(FIXTURES / "golden_sentences.jsonl", encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


class TestTokenize:
    def test_words_and_numbers(self):
        """Test punctuation splits tokens but decimals stay whole."""
        tokens = tokenize("Nodule, measuring 2.1 x 1.8 cm.")
        assert [t.surface for t in tokens] == ["Nodule", "measuring", "2.1", "x", "1.8", "cm"]

    def test_spans_reconstruct_surface(self):
        """Test character spans point back into the text."""
        text = "Hepatic  mass (BOOKMARK)."
        for token in tokenize(text):
            start, end = token.char_span
            assert text[start:end] == token.surface

    def test_bookmark_flagged(self):
        """Test the literal bookmark token is flagged."""
        tokens = tokenize("Lung nodule (BOOKMARK).")
        assert [t.is_bookmark for t in tokens] == [False, False, True]

    def test_bookmark_spans(self):
        """Test bookmark spans are found case-insensitively."""
        assert find_bookmark_spans("a (BOOKMARK) b bookmark") == ((3, 11), (15, 23))

    def test_sentence_from_text(self):
        """Test Sentence carries its bookmark spans."""
        sentence = Sentence.from_text("Liver cyst (BOOKMARK).")
        assert sentence.bookmark_spans == ((12, 20),)

    def test_sentence_span_validation(self):
        """Test spans outside the text are rejected."""
        with pytest.raises(ValueError):
            Sentence(text="short", bookmark_spans=((3, 40),))

    def test_empty_text(self):
        """Test empty input."""
        assert tokenize("") == []


class TestLemmatize:
    def test_plurals(self):
        """Test regular plural endings."""
        cases = [
            ("nodules", "nodule"),
            ("cysts", "cyst"),
            ("opacities", "opacity"),
            ("kidneys", "kidney"),
            ("lobes", "lobe"),
            ("boxes", "box"),
        ]
        for word, expected in cases:
            assert lemmatize(word) == expected

    def test_exceptions(self):
        """Test irregular forms from the exception table."""
        assert lemmatize("masses") == "mass"
        assert lemmatize("metastases") == "metastasis"
        assert lemmatize("calcifications") == "calcification"

    def test_protected_endings(self):
        """Test singular words ending in s are kept."""
        for word in ("mass", "pancreas", "pelvis", "thorax", "bronchus", "ascites", "sinus"):
            assert lemmatize(word) == word

    def test_short_words_kept(self):
        """Test words of three letters or fewer are not stripped."""
        assert lemmatize("gas") == "gas"
        assert lemmatize("RLL") == "rll"

    def test_idempotent(self):
        """Test lemmatizing twice changes nothing."""
        words = ["nodules", "masses", "opacities", "lymph", "kidneys", "metastases", "lesions"]
        for word in words:
            assert lemmatize(lemmatize(word)) == lemmatize(word)

    def test_lowercases(self):
        """Test lemma is lowercase."""
        assert lemmatize("Nodule") == "nodule"


class TestMatching:
    def setup_method(self):
        """Setup test fixtures."""
        self.o = load_ontology(FIXTURES / "golden_lexicon.tsv")

    def _names(self, text: str):
        ids = match_labels(lemmatize_tokens(tokenize(text)), self.o).label_ids
        return {self.o.labels[i].name for i in ids}

    def test_longest_match_wins(self):
        """Test a multi-word synonym beats its single-word prefix."""
        assert self._names("hepatic mass") == {"liver mass"}

    def test_whole_word_only(self):
        """Test substrings inside words do not match."""
        assert self._names("cystic masslike") == set()

    def test_bookmark_breaks_match(self):
        """Test a bookmark token separates adjacent terms."""
        assert self._names("lung BOOKMARK nodule") == {"lung", "nodule"}

    def test_match_spans(self):
        """Test match spans cover the matched tokens."""
        tokens = lemmatize_tokens(tokenize("small pulmonary nodule"))
        result = match_labels(tokens, self.o)
        spans = {self.o.labels[i].name: span for i, span in result.matches}
        assert spans == {"small": (0, 1), "lung nodule": (1, 3)}

    def test_lemma_collision_rejected(self):
        """Test synonyms of different labels that share a base form."""
        o = parse_lexicon("nodule\tfinding_type\t\t\nnodules\tfinding_type\t\t\n")
        with pytest.raises(OntologyError) as info:
            LexiconMatcher(o)
        assert info.value.code == "duplicate_synonym"


class TestGoldenCorpus:
    def setup_method(self):
        """Setup test fixtures."""
        self.o = load_ontology(FIXTURES / "golden_lexicon.tsv")
        self.cases = _golden_cases()

    def test_fixture_size(self):
        """Test the golden corpus has at least twenty sentences."""
        assert len(self.cases) >= 20

    def test_expected_label_sets(self):
        """Test every golden sentence mines exactly its expected labels."""
        for case in self.cases:
            vector = mine_sentence(Sentence.from_text(case["sentence"]), self.o)
            names = sorted(self.o.labels[i].name for i in np.flatnonzero(vector))
            assert names == sorted(case["expected"]), case["sentence"]

    def test_mined_sets_are_ancestor_closed(self):
        """Test mined label sets contain all ancestors of their members."""
        miner = SentenceMiner(self.o)
        for case in self.cases:
            ids = miner.mined_ids(Sentence.from_text(case["sentence"]))
            assert self.o.expand(ids) == ids

    def test_threads_do_not_change_results(self):
        """Test mine_many is order-preserving and thread-count independent."""
        miner = SentenceMiner(self.o)
        sentences = [Sentence.from_text(case["sentence"]) for case in self.cases]
        single = miner.mine_many(sentences, threads=1)
        pooled = miner.mine_many(sentences, threads=4)
        assert all(np.array_equal(a, b) for a, b in zip(single, pooled))

    def test_vector_dtype_and_length(self):
        """Test mined vectors are K-length binary."""
        vector = mine_sentence(Sentence.from_text(self.cases[0]["sentence"]), self.o)
        assert vector.shape == (self.o.size,)
        assert set(np.unique(vector)) <= {0, 1}


class TestDemoMining:
    def test_lung_nodule_example(self):
        """Test the lung nodule sentence expands through both parents."""
        o = load_ontology(DATA_DIR / "demo_lexicon.tsv")
        vector = mine_sentence(Sentence.from_text("Lung nodule (BOOKMARK)."), o)
        assert {o.labels[i].name for i in np.flatnonzero(vector)} == {
            "lung nodule",
            "lung",
            "nodule",
            "chest",
        }

    def test_no_terms(self):
        """Test a sentence without lexicon terms gives a zero vector."""
        o = load_ontology(DATA_DIR / "demo_lexicon.tsv")
        vector = mine_sentence(Sentence.from_text("Stable appearance (BOOKMARK)."), o)
        assert not vector.any()


class TestMiningProperties:
    def setup_method(self):
        """Setup test fixtures."""
        self.o = load_ontology(FIXTURES / "golden_lexicon.tsv")
        self.miner = SentenceMiner(self.o)
        self.texts = [case["sentence"] for case in _golden_cases()]

    def test_case_insensitive(self):
        """Test upper-, lower- and title-cased sentences mine the same labels."""
        for text in self.texts:
            expected = mine_sentence(Sentence.from_text(text), self.o)
            for variant in (text.upper(), text.lower(), text.title()):
                mined = mine_sentence(Sentence.from_text(variant), self.o)
                assert np.array_equal(mined, expected), variant

    def test_inserted_word_never_removes_labels(self):
        """Test an irrelevant word inserted outside multi-word matches keeps every label."""
        for text in self.texts:
            before = self.miner.mined_ids(Sentence.from_text(text))
            tokens = tokenize(text)
            matches = match_labels(lemmatize_tokens(tokens), self.o).matches
            inside = {b for _, (start, end) in matches for b in range(start + 1, end)}
            for boundary in range(len(tokens) + 1):
                if boundary in inside:
                    continue
                at = tokens[boundary].char_span[0] if boundary < len(tokens) else len(text)
                grown = f"{text[:at]} today {text[at:]}"
                after = self.miner.mined_ids(Sentence.from_text(grown))
                assert before <= after, grown
