import pytest

from one2set.corpus import find_stemmed, preprocess
from one2set.stemming import stem_tokens
from one2set.synthetic import (
    SyntheticSpec,
    absent_answer,
    generate_synthetic,
    synthetic_word,
    write_jsonl,
)


class TestSyntheticWords:
    def test_bijective_and_letter_only(self):
        words = [synthetic_word(i) for i in range(500)]
        assert len(set(words)) == 500
        assert all(w.isalpha() and w.islower() for w in words)


class TestGenerator:
    def test_same_seed_identical_bytes(self, tmp_path):
        spec = SyntheticSpec(num_documents=20, seed=11)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_jsonl(generate_synthetic(spec), a)
        write_jsonl(generate_synthetic(spec), b)
        assert a.read_bytes() == b.read_bytes()

    def test_absent_ratio_zero_all_present(self):
        spec = SyntheticSpec(num_documents=15, absent_ratio=0.0, seed=2)
        for sample in generate_synthetic(spec):
            pre = preprocess(sample)
            stems = stem_tokens(list(pre.source_tokens))
            for phrase in pre.keyphrase_tokens:
                assert find_stemmed(stems, stem_tokens(list(phrase))) is not None

    def test_absent_phrases_verifiably_absent(self):
        spec = SyntheticSpec(num_documents=25, absent_ratio=0.5, seed=3)
        saw_absent = 0
        for sample in generate_synthetic(spec):
            pre = preprocess(sample)
            stems = stem_tokens(list(pre.source_tokens))
            for phrase in pre.keyphrase_tokens:
                if find_stemmed(stems, stem_tokens(list(phrase))) is None:
                    saw_absent += 1
        assert saw_absent >= 25  # every document carries at least one

    def test_absent_rule_is_deterministic_in_topic(self):
        spec = SyntheticSpec(seed=4)
        assert absent_answer(spec, 3, 0) == absent_answer(spec, 3, 0)
        assert absent_answer(spec, 3, 0) != absent_answer(spec, 3, 1)
        assert absent_answer(spec, 3, 0) != absent_answer(spec, 4, 0)

    def test_phrase_counts_in_range(self):
        spec = SyntheticSpec(num_documents=30, phrases_range=(2, 5), seed=5)
        for sample in generate_synthetic(spec):
            assert 2 <= len(sample.keyphrases) <= 5

    def test_bad_spec_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(vocab_size=30)
        with pytest.raises(ValueError):
            SyntheticSpec(absent_ratio=1.5)
        with pytest.raises(ValueError):
            SyntheticSpec(doc_len_range=(10, 5))
