import numpy as np
import pytest

from qrnnkit import (PAD, BOS, EOS, UNK, Rng, Vocabulary, batch_lm, build_vocab,
                     load_embeddings, load_labeled_docs, load_parallel_corpus)
from qrnnkit.data import read_text
from qrnnkit.errors import ArgumentError, DataError, VocabularyError


class TestVocabulary:
    def test_char_counting(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("abcab", encoding="utf-8")
        vocab = build_vocab(p, "char")
        assert len(vocab) == 7            # 3 symbols + 4 reserved

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("", encoding="utf-8")
        vocab = build_vocab(p, "char")
        assert len(vocab) == 4

    def test_reserved_ids(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("xy", encoding="utf-8")
        vocab = build_vocab(p, "char")
        assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)
        assert vocab.id_to_symbol[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]

    def test_frequency_then_lexicographic(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("bbba ccc", encoding="utf-8")
        vocab = build_vocab(p, "char")
        # b and c appear 3x (tie -> lexicographic), then space and a (1x).
        assert vocab.id_to_symbol[4:] == ["b", "c", " ", "a"]

    def test_unified_vocab_over_two_files(self, tmp_path):
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        a.write_text("abc", encoding="utf-8")
        b.write_text("cde", encoding="utf-8")
        vocab = build_vocab([a, b], "char")
        assert len(vocab) == 4 + 5

    def test_round_trip(self, tmp_path):
        p = tmp_path / "c.txt"
        text = "hello world\n"
        p.write_text(text, encoding="utf-8")
        vocab = build_vocab(p, "char")
        assert vocab.decode(vocab.encode(text)) == text

    def test_word_level(self, tmp_path):
        p = tmp_path / "w.txt"
        p.write_text("the cat the dog", encoding="utf-8")
        vocab = build_vocab(p, "word")
        assert len(vocab) == 4 + 3
        assert vocab.decode(vocab.encode("the dog")) == "the dog"

    def test_oov_maps_to_unk(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("ab", encoding="utf-8")
        vocab = build_vocab(p, "char")
        assert vocab.encode("az")[1] == UNK

    def test_max_size(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("aaabbc", encoding="utf-8")
        vocab = build_vocab(p, "char", max_size=6)
        assert len(vocab) == 6
        assert "c" not in vocab

    def test_decode_bad_id(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("ab", encoding="utf-8")
        vocab = build_vocab(p, "char")
        with pytest.raises(VocabularyError):
            vocab.decode([99])

    def test_json_round_trip(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("abc\ndef é", encoding="utf-8")
        vocab = build_vocab(p, "char")
        again = Vocabulary.from_json(vocab.to_json())
        assert again.id_to_symbol == vocab.id_to_symbol
        assert again.level == vocab.level

    def test_invalid_utf8_reports_offset(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_bytes(b"ok\xffrest")
        with pytest.raises(DataError, match="byte 2"):
            read_text(p)


class TestBatchLM:
    def test_exact_fit_example(self):
        ids = np.arange(2121)
        batches = batch_lm(ids, 20, 105)
        assert len(batches) == 1
        assert batches[0].inputs.shape == (20, 105)
        assert batches[0].targets.shape == (20, 105)
        assert not batches[0].continued

    def test_single_stream_whole_corpus(self):
        ids = np.arange(50)
        batches = batch_lm(ids, 1, 49)
        assert len(batches) == 1
        assert np.array_equal(batches[0].inputs[0], ids[:-1])
        assert np.array_equal(batches[0].targets[0], ids[1:])

    def test_targets_are_shifted_inputs(self):
        ids = np.arange(200)
        for b in batch_lm(ids, 4, 10):
            assert np.array_equal(b.inputs[:, 1:], b.targets[:, :-1])

    def test_every_token_is_a_target_once(self):
        ids = np.arange(203)
        batches = batch_lm(ids, 4, 10)
        stream_len = 203 // 4
        data = ids[:stream_len * 4].reshape(4, stream_len)
        seen = np.concatenate([b.targets.ravel() for b in batches])
        want = data[:, 1:].ravel()
        assert sorted(seen.tolist()) == sorted(want.tolist())

    def test_continuity_flags(self):
        batches = batch_lm(np.arange(100), 2, 10)
        assert [b.continued for b in batches] == [False] + [True] * (len(batches) - 1)

    def test_too_small_corpus(self):
        with pytest.raises(ArgumentError):
            batch_lm(np.arange(10), 8, 4)

    def test_deterministic(self):
        a = batch_lm(np.arange(100), 4, 7)
        b = batch_lm(np.arange(100), 4, 7)
        for x, y in zip(a, b):
            assert np.array_equal(x.inputs, y.inputs)


def write_pair(tmp_path, src_lines, tgt_lines):
    s = tmp_path / "src.txt"
    t = tmp_path / "tgt.txt"
    s.write_text("\n".join(src_lines) + "\n", encoding="utf-8")
    t.write_text("\n".join(tgt_lines) + "\n", encoding="utf-8")
    return s, t


class TestParallelCorpus:
    def test_filter_boundaries(self, tmp_path):
        s, t = write_pair(tmp_path,
                          ["x" * 301, "y" * 300, "ok"],
                          ["a", "b" * 300, "fine"])
        vocab = build_vocab([s, t], "char")
        pairs = load_parallel_corpus(s, t, vocab, vocab)
        assert len(pairs) == 2            # the 301-char source is dropped

    def test_line_count_mismatch(self, tmp_path):
        s, t = write_pair(tmp_path, ["a", "b"], ["c"])
        vocab = build_vocab([s, t], "char")
        with pytest.raises(DataError, match="2.*1"):
            load_parallel_corpus(s, t, vocab, vocab)

    def test_ids_encode_both_sides(self, tmp_path):
        s, t = write_pair(tmp_path, ["ab"], ["ba"])
        vocab = build_vocab([s, t], "char")
        pairs = load_parallel_corpus(s, t, vocab, vocab)
        assert pairs[0][0] == vocab.encode("ab")
        assert pairs[0][1] == vocab.encode("ba")


class TestLabeledDocs:
    def test_toy_file(self, tmp_path):
        p = tmp_path / "docs.tsv"
        p.write_text("1\tgood film\n0\tbad film\n1\tfine\n0\tawful\n",
                     encoding="utf-8")
        vocab = Vocabulary(["good", "bad", "film", "fine", "awful"], "word")
        docs = load_labeled_docs(p, vocab)
        assert len(docs) == 4
        assert docs[0][1] == 1 and docs[1][1] == 0

    def test_oov_becomes_unk(self, tmp_path):
        p = tmp_path / "docs.tsv"
        p.write_text("1\tunseen word\n", encoding="utf-8")
        vocab = Vocabulary(["word"], "word")
        docs = load_labeled_docs(p, vocab)
        assert docs[0][0][0] == UNK

    def test_bad_label_reports_line(self, tmp_path):
        p = tmp_path / "docs.tsv"
        p.write_text("1\tok\n2\tbad label\n", encoding="utf-8")
        vocab = Vocabulary(["ok"], "word")
        with pytest.raises(DataError, match=":2:"):
            load_labeled_docs(p, vocab)

    def test_missing_tab_reports_line(self, tmp_path):
        p = tmp_path / "docs.tsv"
        p.write_text("1 no tab here\n", encoding="utf-8")
        vocab = Vocabulary(["ok"], "word")
        with pytest.raises(DataError, match=":1:"):
            load_labeled_docs(p, vocab)


class TestEmbeddings:
    def test_all_present(self, tmp_path):
        p = tmp_path / "emb.txt"
        p.write_text("cat 1 2 3\ndog 4 5 6\n", encoding="utf-8")
        vocab = Vocabulary(["cat", "dog"], "word")
        M = load_embeddings(p, vocab, 3, Rng(0))
        assert np.allclose(M[vocab.symbol_to_id["cat"]], [1, 2, 3])
        assert np.allclose(M[vocab.symbol_to_id["dog"]], [4, 5, 6])

    def test_empty_file_seeded_random(self, tmp_path):
        p = tmp_path / "emb.txt"
        p.write_text("", encoding="utf-8")
        vocab = Vocabulary(["cat"], "word")
        a = load_embeddings(p, vocab, 4, Rng(3))
        b = load_embeddings(p, vocab, 4, Rng(3))
        assert np.array_equal(a, b)
        assert np.all(np.abs(a) <= 0.1)

    def test_one_missing_row(self, tmp_path):
        p = tmp_path / "emb.txt"
        p.write_text("cat 1 2 3\n", encoding="utf-8")
        vocab = Vocabulary(["cat", "dog"], "word")
        M = load_embeddings(p, vocab, 3, Rng(5))
        baseline = Rng(5).uniform((len(vocab), 3), -0.1, 0.1, dtype=np.float32)
        dog = vocab.symbol_to_id["dog"]
        assert np.array_equal(M[dog], baseline[dog])
        assert np.allclose(M[vocab.symbol_to_id["cat"]], [1, 2, 3])

    def test_dim_mismatch_reports_line(self, tmp_path):
        p = tmp_path / "emb.txt"
        p.write_text("cat 1 2 3\ndog 4 5\n", encoding="utf-8")
        vocab = Vocabulary(["cat", "dog"], "word")
        with pytest.raises(DataError, match=":2:"):
            load_embeddings(p, vocab, 3, Rng(0))
