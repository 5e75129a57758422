"""Corpus ingestion: vocabularies, LM batching, parallel and labeled corpora."""

import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DataError, VocabularyError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
LEVELS = ("char", "word")


def _split(text, level):
    if level == "char":
        return list(text)
    if level == "word":
        return text.split()
    raise ArgumentError(f"level must be one of {LEVELS}, got {level!r}")


class Vocabulary:
    """Symbol <-> id bijection with reserved PAD/BOS/EOS/UNK at ids 0..3.

    Non-reserved symbols are ordered by descending frequency, ties broken
    lexicographically, so construction is deterministic.
    """

    def __init__(self, symbols, level):
        if level not in LEVELS:
            raise ArgumentError(f"level must be one of {LEVELS}")
        self.level = level
        self.id_to_symbol = list(RESERVED) + list(symbols)
        self.symbol_to_id = {s: i for i, s in enumerate(self.id_to_symbol)}
        if len(self.symbol_to_id) != len(self.id_to_symbol):
            raise DataError("duplicate symbols in vocabulary")

    @classmethod
    def from_counts(cls, counts, level, max_size=None):
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        symbols = [s for s, _ in ordered if s not in RESERVED]
        if max_size is not None:
            symbols = symbols[:max(max_size - len(RESERVED), 0)]
        return cls(symbols, level)

    def __len__(self):
        return len(self.id_to_symbol)

    def __contains__(self, symbol):
        return symbol in self.symbol_to_id

    def encode(self, text):
        """Token ids for a string; out-of-vocabulary symbols map to UNK."""
        return [self.symbol_to_id.get(s, UNK) for s in _split(text, self.level)]

    def decode(self, ids, keep_reserved=False):
        out = []
        for i in ids:
            if i < 0 or i >= len(self.id_to_symbol):
                raise VocabularyError(f"id {i} outside vocabulary of size {len(self)}")
            if not keep_reserved and i < len(RESERVED):
                continue
            out.append(self.id_to_symbol[i])
        sep = "" if self.level == "char" else " "
        return sep.join(out)

    def to_json(self):
        return json.dumps({"level": self.level,
                           "symbols": self.id_to_symbol[len(RESERVED):]},
                          ensure_ascii=False)

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(obj["symbols"], obj["level"])


def read_text(path):
    """Read a UTF-8 file; invalid bytes raise a DataError with the offset."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: invalid UTF-8 at byte {exc.start}") from exc


def build_vocab(paths, level, max_size=None):
    """Vocabulary over one file or several (pass a list for a unified vocab)."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    counts = Counter()
    for path in paths:
        counts.update(_split(read_text(path), level))
    return Vocabulary.from_counts(counts, level, max_size=max_size)


@dataclass
class LMBatch:
    inputs: np.ndarray    # [batch, <=bptt] token ids
    targets: np.ndarray   # same shape, shifted one step within the stream
    continued: bool       # recurrent state carries over from the previous batch


def batch_lm(ids, batch_size, bptt):
    """Split a token stream into batch_size parallel streams and cut windows.

    Streams are contiguous chunks (tail truncated), so state carried across
    consecutive windows is meaningful.  Every token of the truncated corpus
    appears exactly once as a target except each stream's first.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) < batch_size * 2:
        raise ArgumentError(
            f"corpus of {len(ids)} tokens too small for batch size {batch_size}")
    stream_len = len(ids) // batch_size
    data = ids[:stream_len * batch_size].reshape(batch_size, stream_len)
    batches = []
    for start in range(0, stream_len - 1, bptt):
        end = min(start + bptt, stream_len - 1)
        batches.append(LMBatch(inputs=data[:, start:end],
                               targets=data[:, start + 1:end + 1],
                               continued=start > 0))
    return batches


def load_parallel_corpus(src_path, tgt_path, src_vocab, tgt_vocab, max_chars=300):
    """Aligned sentence pairs as id lists; pairs with either side longer than
    max_chars characters (counted pre-tokenization in code points) are dropped."""
    src_lines = read_text(src_path).splitlines()
    tgt_lines = read_text(tgt_path).splitlines()
    if len(src_lines) != len(tgt_lines):
        raise DataError(
            f"line counts differ: {src_path} has {len(src_lines)}, "
            f"{tgt_path} has {len(tgt_lines)}")
    pairs = []
    for s, t in zip(src_lines, tgt_lines):
        if len(s) > max_chars or len(t) > max_chars:
            continue
        pairs.append((src_vocab.encode(s), tgt_vocab.encode(t)))
    return pairs


def load_labeled_docs(path, vocab):
    """`label<TAB>text` lines -> list of (ids, label) with label in {0, 1}."""
    docs = []
    for lineno, line in enumerate(read_text(path).splitlines(), start=1):
        if not line:
            continue
        head, sep, text = line.partition("\t")
        if not sep:
            raise DataError(f"{path}:{lineno}: expected label<TAB>text")
        if head not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {head!r}")
        docs.append((vocab.encode(text), int(head)))
    return docs


def load_embeddings(path, vocab, dim, rng):
    """Plain-text `word v1 ... vdim` rows -> [|V|, dim] matrix.

    Words missing from the file (and the reserved symbols) get seeded
    uniform(-0.1, 0.1) rows, so the result is reproducible per rng.
    """
    matrix = rng.uniform((len(vocab), dim), -0.1, 0.1, dtype=np.float32)
    for lineno, line in enumerate(read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split(" ")
        word, values = parts[0], parts[1:]
        if len(values) != dim:
            raise DataError(
                f"{path}:{lineno}: expected {dim} values, got {len(values)}")
        if word in vocab:
            matrix[vocab.symbol_to_id[word]] = np.asarray(values, dtype=np.float32)
    return matrix
