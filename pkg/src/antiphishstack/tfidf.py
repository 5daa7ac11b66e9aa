"""Character n-gram TF-IDF over URL strings, plus fixed-length index sequences for the LSTM."""
from __future__ import annotations

import json
import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyCorpus, SchemaMismatch

DEFAULT_NGRAM_RANGE = (1, 3)
DEFAULT_MAX_FEATURES = 5000
DEFAULT_MAX_LEN = 200

PAD_INDEX = 0
UNKNOWN_INDEX = 1
# the 95 printable ASCII characters, space through tilde
PRINTABLE_ALPHABET = "".join(chr(c) for c in range(32, 127))


def char_ngrams(text: str, ngram_range: tuple[int, int]) -> list[str]:
    lo, hi = ngram_range
    return [text[i:i + n] for n in range(lo, hi + 1) for i in range(len(text) - n + 1)]


@dataclass(frozen=True)
class TfidfVocabulary:
    ngram_range: tuple[int, int]
    term_index: Mapping[str, int]
    idf: np.ndarray
    max_features: int
    corpus_size: int

    def __len__(self) -> int:
        return len(self.term_index)

    def terms(self) -> list[str]:
        out = [""] * len(self.term_index)
        for term, col in self.term_index.items():
            out[col] = term
        return out


def _check_range(ngram_range: tuple[int, int]) -> tuple[int, int]:
    lo, hi = (int(v) for v in ngram_range)
    if not 1 <= lo <= hi <= 6:
        raise ConfigError(f"ngram_range must satisfy 1 <= min_n <= max_n <= 6, got {ngram_range}")
    return lo, hi


def fit_vocabulary(corpus: Sequence[str], ngram_range: tuple[int, int] = DEFAULT_NGRAM_RANGE,
                   max_features: int = DEFAULT_MAX_FEATURES) -> TfidfVocabulary:
    """Keep the ``max_features`` most frequent n-grams (ties lexicographic), unsmoothed ln idf."""
    if not corpus:
        raise EmptyCorpus("TF-IDF vocabulary needs at least one document")
    if max_features < 1:
        raise ConfigError("max_features must be positive")
    ngram_range = _check_range(ngram_range)
    total: Counter[str] = Counter()
    df: Counter[str] = Counter()
    for doc in corpus:
        grams = Counter(char_ngrams(doc, ngram_range))
        total.update(grams)
        df.update(grams.keys())
    ranked = sorted(total, key=lambda t: (-total[t], t))[:max_features]
    kept = sorted(ranked)
    d = len(corpus)
    idf = np.array([math.log(d / df[t]) for t in kept], dtype=np.float64)
    return TfidfVocabulary(ngram_range, {t: i for i, t in enumerate(kept)}, idf, max_features, d)


def transform(url: str, vocab: TfidfVocabulary) -> dict[int, float]:
    """Sparse TF-IDF vector; TF divides by every in-range n-gram of the document."""
    grams = char_ngrams(url, vocab.ngram_range)
    if not grams:
        return {}
    n_terms = len(grams)
    out = {}
    for term, count in Counter(grams).items():
        col = vocab.term_index.get(term)
        if col is not None:
            out[col] = (count / n_terms) * vocab.idf[col]
    return dict(sorted(out.items()))


def transform_matrix(urls: Sequence[str], vocab: TfidfVocabulary,
                     dtype=np.float64) -> np.ndarray:
    X = np.zeros((len(urls), len(vocab)), dtype=dtype)
    for row, url in enumerate(urls):
        vec = transform(url, vocab)
        if vec:
            cols = np.fromiter(vec.keys(), dtype=np.int64, count=len(vec))
            X[row, cols] = np.fromiter(vec.values(), dtype=np.float64, count=len(vec))
    return X


def default_charmap(alphabet: str = PRINTABLE_ALPHABET) -> dict[str, int]:
    return {ch: i + 2 for i, ch in enumerate(alphabet)}


def to_sequence(url: str, charmap: Mapping[str, int], max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    seq = np.full(max_len, PAD_INDEX, dtype=np.int64)
    for i, ch in enumerate(url[:max_len]):
        seq[i] = charmap.get(ch, UNKNOWN_INDEX)
    return seq


def sequences(urls: Sequence[str], charmap: Mapping[str, int], max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    if not urls:
        return np.zeros((0, max_len), dtype=np.int64)
    return np.vstack([to_sequence(u, charmap, max_len) for u in urls])


VOCAB_VERSION = "tfidf-vocab/1"


def save_vocabulary(vocab: TfidfVocabulary, path, stamp: str = "") -> None:
    """``term<TAB>column<TAB>idf`` per line; the term is JSON-quoted so tabs survive."""
    lo, hi = vocab.ngram_range
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {VOCAB_VERSION}\n")
        fh.write(f"# ngram_range={lo},{hi}\tmax_features={vocab.max_features}"
                 f"\tD={vocab.corpus_size}\tstamp={stamp}\n")
        for term in vocab.terms():
            col = vocab.term_index[term]
            fh.write(f"{json.dumps(term)}\t{col}\t{float(vocab.idf[col])!r}\n")


def load_vocabulary(path) -> tuple[TfidfVocabulary, str]:
    with open(path, encoding="utf-8") as fh:
        version = fh.readline().strip()
        if version != f"# {VOCAB_VERSION}":
            raise SchemaMismatch(f"{path}: unsupported vocabulary header {version!r}")
        meta = dict(kv.split("=", 1) for kv in fh.readline().lstrip("# ").rstrip("\n").split("\t"))
        index, idf = {}, []
        for line in fh:
            term, col, value = line.rstrip("\n").split("\t")
            index[json.loads(term)] = int(col)
            idf.append(float(value))
    lo, hi = (int(v) for v in meta["ngram_range"].split(","))
    vocab = TfidfVocabulary((lo, hi), index, np.array(idf), int(meta["max_features"]), int(meta["D"]))
    return vocab, meta.get("stamp", "")
