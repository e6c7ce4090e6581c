import random
from collections import Counter

import pytest

from one2set import corpus
from one2set.corpus import (
    DIGIT_TOKEN,
    EOS_ID,
    NULL_ID,
    NULL_TARGET,
    RESERVED_TOKENS,
    SEP_ID,
    Document,
    KeyphraseTarget,
    PreprocessError,
    RawSample,
    TargetSet,
    Vocabulary,
    build_one2seq_target,
    build_vocabulary,
    decode_extended,
    encode_document,
    encode_phrase,
    pad_target_set,
    preprocess,
    prepare_corpus,
    split_present_absent,
    tokenize,
)


def make_vocab(words):
    return Vocabulary(list(RESERVED_TOKENS) + list(words))


class TestTokenize:
    def test_digit_replacement(self):
        assert tokenize("Top 5 models") == ["top", DIGIT_TOKEN, "models"]

    def test_lowercase(self):
        assert tokenize("ABC abc") == ["abc", "abc"]

    def test_punctuation_detached(self):
        assert tokenize("graphs, nets.") == ["graphs", ",", "nets", "."]

    def test_mixed_alnum_not_digit(self):
        assert tokenize("w7 42") == ["w7", DIGIT_TOKEN]

    def test_idempotent(self):
        texts = ["Top 5 models!", "a-b c_d 3.14", "  spaced   out "]
        for text in texts:
            once = tokenize(text)
            again = tokenize(" ".join(once))
            assert once == again


class TestPreprocess:
    def test_empty_source_rejected(self):
        with pytest.raises(PreprocessError):
            preprocess(RawSample(title="", abstract="", keyphrases=("x",)))

    def test_title_first_no_separator(self):
        sample = RawSample(title="A Title", abstract="the body", keyphrases=())
        pre = preprocess(sample)
        assert pre.source_tokens == ("a", "title", "the", "body")

    def test_configurable_separator(self):
        sample = RawSample(title="t", abstract="b", keyphrases=())
        pre = preprocess(sample, insert_sep=True)
        assert pre.source_tokens == ("t", corpus.SEP_TOKEN, "b")

    def test_keyphrases_tokenized(self):
        sample = RawSample(title="t", abstract="b", keyphrases=("Neural Nets", ""))
        pre = preprocess(sample)
        assert pre.keyphrase_tokens == (("neural", "nets"),)


class TestVocabulary:
    def test_cap_keeps_all_when_room(self):
        # corpus {a:3, b:1}, cap = reserved+2 -> both kept
        vocab = build_vocabulary([["a", "a", "a", "b"]], cap=len(RESERVED_TOKENS) + 2)
        assert "a" in vocab.word_to_id and "b" in vocab.word_to_id

    def test_tie_broken_lexicographically(self):
        # corpus {a:3, b:1, c:1}, cap = reserved+2 -> keeps a and b
        vocab = build_vocabulary([["a"] * 3 + ["b", "c"]], cap=len(RESERVED_TOKENS) + 2)
        assert "b" in vocab.word_to_id
        assert "c" not in vocab.word_to_id

    def test_empty_corpus_reserved_only(self):
        vocab = build_vocabulary([], cap=len(RESERVED_TOKENS) + 5)
        assert len(vocab) == len(RESERVED_TOKENS)

    def test_cap_must_exceed_reserved(self):
        with pytest.raises(ValueError):
            build_vocabulary([], cap=len(RESERVED_TOKENS))

    def test_save_load_roundtrip(self, tmp_path):
        vocab = make_vocab(["x", "y"])
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        again = Vocabulary.load(path)
        assert again.id_to_word == vocab.id_to_word
        assert again.content_hash() == vocab.content_hash()


class TestDocumentEncoding:
    def test_oov_words_get_extended_ids(self):
        vocab = make_vocab(["known"])
        doc = encode_document(["known", "novel", "known", "rare", "novel"], vocab)
        assert doc.source_oov_words == ("novel", "rare")
        assert doc.extended_ids[1] == len(vocab)
        assert doc.extended_ids[3] == len(vocab) + 1
        assert doc.extended_ids[4] == len(vocab)
        assert doc.source_ids[1] == corpus.UNK_ID

    def test_lengths_match(self):
        vocab = make_vocab(["a"])
        doc = encode_document(["a", "b", "c"], vocab)
        assert len(doc.source_ids) == len(doc.extended_ids) == 3

    def test_roundtrip_reproduces_tokens(self):
        rng = random.Random(3)
        words = ["alpha", "beta", "gamma", "delta", "unseen", "rare"]
        vocab = make_vocab(["alpha", "beta", "gamma"])
        for _ in range(50):
            tokens = [rng.choice(words) for _ in range(rng.randint(1, 12))]
            doc = encode_document(tokens, vocab)
            assert decode_extended(doc.extended_ids, doc, vocab) == tokens


class TestSplitPresentAbsent:
    def test_stem_match_is_present(self):
        vocab = make_vocab(["neural", "keyphrase", "models", "model"])
        doc = encode_document(tokenize("neural keyphrase models"), vocab)
        ts = split_present_absent(doc, [("keyphrase", "model")], vocab)
        assert len(ts.present) == 1 and not ts.absent

    def test_non_contiguous_is_absent(self):
        vocab = make_vocab(["graph", "network", "of", "things"])
        doc = encode_document(tokenize("graph of network things"), vocab)
        ts = split_present_absent(doc, [("graph", "network")], vocab)
        assert not ts.present and len(ts.absent) == 1

    def test_stem_dedup_keeps_first(self):
        vocab = make_vocab(["model", "models"])
        doc = encode_document(["model"], vocab)
        ts = split_present_absent(doc, [("model",), ("models",)], vocab)
        assert len(ts.present) == 1
        assert ts.present[0].tokens == ("model",)

    def test_partition_property(self):
        rng = random.Random(11)
        words = ["cat", "cats", "dog", "runs", "running", "fast", "blue"]
        vocab = make_vocab(words)
        for _ in range(50):
            tokens = [rng.choice(words) for _ in range(rng.randint(2, 10))]
            doc = encode_document(tokens, vocab)
            phrases = [
                tuple(rng.choice(words) for _ in range(rng.randint(1, 2)))
                for _ in range(rng.randint(1, 5))
            ]
            ts = split_present_absent(doc, phrases, vocab)
            from one2set.stemming import stem_tokens

            uniq = []
            seen = set()
            for p in phrases:
                s = stem_tokens(list(p))
                if s not in seen:
                    seen.add(s)
                    uniq.append(s)
            got = [stem_tokens(list(t.tokens)) for t in ts.present + ts.absent]
            assert sorted(got) == sorted(uniq)
            present_stems = {stem_tokens(list(t.tokens)) for t in ts.present}
            absent_stems = {stem_tokens(list(t.tokens)) for t in ts.absent}
            assert not (present_stems & absent_stems)

    def test_targets_end_with_eos(self):
        vocab = make_vocab(["a"])
        doc = encode_document(["a"], vocab)
        ts = split_present_absent(doc, [("a",)], vocab)
        assert ts.present[0].ids[-1] == EOS_ID


class TestPadTargetSet:
    def _target(self, vocab, word):
        doc = encode_document([word], vocab)
        return encode_phrase([word], doc, vocab)

    def test_pads_with_null(self):
        vocab = make_vocab(["a", "b"])
        t1, t2 = self._target(vocab, "a"), self._target(vocab, "b")
        padded = pad_target_set([t1, t2], 4)
        assert padded == [t1, t2, NULL_TARGET, NULL_TARGET]

    def test_empty_all_null(self):
        assert pad_target_set([], 3) == [NULL_TARGET] * 3

    def test_truncation_counted(self):
        vocab = make_vocab(["a"])
        t = self._target(vocab, "a")
        counters = Counter()
        padded = pad_target_set([t] * 5, 4, counters)
        assert len(padded) == 4
        assert counters["truncated_target_sets"] == 1

    def test_length_always_slots(self):
        vocab = make_vocab(["a"])
        t = self._target(vocab, "a")
        for n in range(7):
            assert len(pad_target_set([t] * n, 4)) == 4


class TestOne2SeqTarget:
    def test_present_sorted_by_first_occurrence(self):
        vocab = make_vocab(["x", "y", "z", "w"])
        doc = encode_document(["w", "w", "y", "w", "w", "w", "w", "x"], vocab)
        ts = split_present_absent(doc, [("x",), ("y",)], vocab)
        # x occurs at position 7, y at position 2 -> y first
        ids = build_one2seq_target(ts)
        x_id, y_id = vocab.get("x"), vocab.get("y")
        assert ids == [y_id, SEP_ID, x_id, EOS_ID]

    def test_no_absent(self):
        vocab = make_vocab(["a"])
        doc = encode_document(["a"], vocab)
        ts = split_present_absent(doc, [("a",)], vocab)
        assert build_one2seq_target(ts) == [vocab.get("a"), EOS_ID]

    def test_only_absent_original_order(self):
        vocab = make_vocab(["a", "b", "c"])
        doc = encode_document(["c"], vocab)
        ts = split_present_absent(doc, [("b",), ("a",)], vocab)
        ids = build_one2seq_target(ts)
        assert ids == [vocab.get("b"), SEP_ID, vocab.get("a"), EOS_ID]


class TestKeyphraseTarget:
    def test_null_shape_enforced(self):
        with pytest.raises(ValueError):
            KeyphraseTarget(ids=(NULL_ID, EOS_ID), is_null=True)

    def test_non_null_needs_eos(self):
        with pytest.raises(ValueError):
            KeyphraseTarget(ids=(8,))


class TestPrepareCorpus:
    def test_dedup_and_reject(self):
        vocab = make_vocab(["a", "b"])
        samples = [
            RawSample("a", "b", ("a",)),
            RawSample("a", "b", ("a",)),  # exact duplicate
            RawSample("", "", ("a",)),    # rejected: empty source
        ]
        counters = Counter()
        prepared = prepare_corpus(samples, vocab, counters=counters)
        assert len(prepared) == 1
        assert counters["duplicate_samples"] == 1
        assert counters["rejected_samples"] == 1

    def test_stemmed_keyphrase_dedup_key(self):
        vocab = make_vocab(["a", "b", "model", "models"])
        samples = [
            RawSample("a", "b", ("model",)),
            RawSample("a", "b", ("models",)),  # same after stemming
        ]
        prepared = prepare_corpus(samples, vocab)
        assert len(prepared) == 1

    def test_max_source_len(self):
        vocab = make_vocab(["a"])
        counters = Counter()
        prepared = prepare_corpus(
            [RawSample("a a a a a", "a a a a", ())], vocab,
            max_source_len=4, counters=counters,
        )
        assert len(prepared[0].doc.tokens) == 4
        assert counters["truncated_sources"] == 1
