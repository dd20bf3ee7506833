"""Additive word representations built from labelled morphological factors.

A word maps to a multiset of factors: its surface form plus any
morphemes supplied by a segmentation file. Factors are labelled strings
("perfect|stem", "ion|suffix", "imperfection|surface") so homographs
with different roles get distinct vectors. Word vectors are the
multiplicity-weighted sums of their factor vectors; full word tables are
compiled from factor tables through the sparse word-by-factor count
matrix.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import _kernels
from .corpus import Vocabulary, normalize_token
from .errors import DataError

SURFACE_LABEL = "surface"


class FactorVocabulary:
    """Dense id space over labelled factor strings."""

    def __init__(self) -> None:
        self.factors: list[str] = []
        self.id_of: dict[str, int] = {}

    def add(self, factor: str) -> int:
        fid = self.id_of.get(factor)
        if fid is None:
            fid = len(self.factors)
            self.factors.append(factor)
            self.id_of[factor] = fid
        return fid

    def __len__(self) -> int:
        return len(self.factors)

    def __contains__(self, factor: str) -> bool:
        return factor in self.id_of

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, f in enumerate(self.factors):
                fh.write(f"{i}\t{f}\n")

    @classmethod
    def load(cls, path: str | Path) -> "FactorVocabulary":
        fv = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected id<TAB>factor")
                if int(parts[0]) != len(fv.factors):
                    raise DataError(f"{path}:{lineno}: ids must be dense and ordered")
                fv.add(parts[1])
        return fv


class WordFactorization:
    """Sparse word-by-factor multiplicity matrix in CSR form.

    Row v lists the factor ids of word v with their multiplicities;
    every row is non-empty (at minimum the surface factor).
    """

    def __init__(self, indptr: np.ndarray, indices: np.ndarray, data: np.ndarray,
                 num_factors: int):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        self.num_factors = int(num_factors)

    @classmethod
    def from_rows(cls, rows: list[dict[int, int]], num_factors: int) -> "WordFactorization":
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indices = []
        data = []
        for v, row in enumerate(rows):
            if not row:
                raise DataError(f"word id {v} has an empty factorization")
            for fid in sorted(row):
                indices.append(fid)
                data.append(float(row[fid]))
            indptr[v + 1] = indptr[v] + len(row)
        return cls(indptr, np.asarray(indices, dtype=np.int64),
                   np.asarray(data, dtype=np.float64), num_factors)

    @property
    def num_words(self) -> int:
        return self.indptr.shape[0] - 1

    def mu(self, word_id: int) -> list[tuple[int, int]]:
        """Factor multiset of one word as (factor_id, multiplicity) pairs."""
        lo, hi = self.indptr[word_id], self.indptr[word_id + 1]
        return [(int(f), int(m)) for f, m in zip(self.indices[lo:hi], self.data[lo:hi])]

    def row_dict(self, word_id: int) -> dict[int, int]:
        return dict(self.mu(word_id))


def identity_csr(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CSR triplet of the n-by-n identity (word == its own single factor)."""
    return (np.arange(n + 1, dtype=np.int64), np.arange(n, dtype=np.int64),
            np.ones(n, dtype=np.float64))


def parse_segmentations(path: str | Path) -> dict[str, list[str]]:
    """Read ``word<TAB>factor|label( factor|label)*`` lines into a map.

    Words and factor texts are normalized like corpus tokens. The
    "surface" label is reserved for the automatically added surface
    factor and is rejected on input.
    """
    segs: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected word<TAB>morpheme list")
            word = normalize_token(parts[0])
            if word in segs:
                raise DataError(f"{path}:{lineno}: duplicate entry for {word!r}")
            morphs = []
            for item in parts[1].split(" "):
                if not item:
                    continue
                if "|" not in item:
                    raise DataError(f"{path}:{lineno}: morpheme {item!r} lacks a |label")
                text, label = item.rsplit("|", 1)
                if not text or not label:
                    raise DataError(f"{path}:{lineno}: empty morpheme or label in {item!r}")
                if label == SURFACE_LABEL:
                    raise DataError(
                        f"{path}:{lineno}: label {SURFACE_LABEL!r} is reserved")
                morphs.append(f"{normalize_token(text)}|{label}")
            if not morphs:
                raise DataError(f"{path}:{lineno}: no morphemes listed")
            segs[word] = morphs
    return segs


def build_factorization(vocab: Vocabulary,
                        segs: Mapping[str, list[str]] | None = None
                        ) -> tuple[FactorVocabulary, WordFactorization]:
    """Assign factor ids in first-encounter order and build the count matrix.

    Every word receives its surface factor; words present in ``segs``
    additionally receive their labelled morphemes (with multiplicity).
    With no segmentations this degenerates to the identity map, one
    surface factor per word.
    """
    segs = segs or {}
    fv = FactorVocabulary()
    rows: list[dict[int, int]] = []
    for word in vocab.types:
        row: dict[int, int] = {}
        sid = fv.add(f"{word}|{SURFACE_LABEL}")
        row[sid] = row.get(sid, 0) + 1
        for morph in segs.get(word, ()):
            fid = fv.add(morph)
            row[fid] = row.get(fid, 0) + 1
        rows.append(row)
    return fv, WordFactorization.from_rows(rows, len(fv))


def identity_factorization(vocab: Vocabulary) -> tuple[FactorVocabulary, WordFactorization]:
    """Surface-only factorization: every word is its own single factor."""
    return build_factorization(vocab, None)


def compose_vector(factor_table: np.ndarray, mu_items: Iterable[tuple[int, int]]) -> np.ndarray:
    """Multiplicity-weighted sum of factor vectors.

    Uses the same accumulation kernel as compile_word_table so a
    compiled row and a freshly composed vector are identical.
    """
    items = sorted(mu_items)
    if not items:
        raise ValueError("cannot compose a vector from an empty factor multiset")
    indices = np.asarray([f for f, _ in items], dtype=np.int64)
    data = np.asarray([float(m) for _, m in items], dtype=np.float64)
    if indices.max() >= factor_table.shape[0]:
        raise ValueError("factor id out of range for the factor table")
    indptr = np.asarray([0, len(items)], dtype=np.int64)
    out = np.zeros((1, factor_table.shape[1]), dtype=np.float64)
    _kernels.compose_rows(indptr, indices, data, factor_table, out)
    return out[0]


def compile_word_table(factorization: WordFactorization | tuple,
                       factor_table: np.ndarray) -> np.ndarray:
    """Compile the full word table: row v = composed vector of word v."""
    if isinstance(factorization, WordFactorization):
        indptr, indices, data = factorization.indptr, factorization.indices, factorization.data
        nf = factorization.num_factors
    else:
        indptr, indices, data = factorization
        nf = factor_table.shape[0]
    if nf != factor_table.shape[0]:
        raise ValueError(
            f"factor table has {factor_table.shape[0]} rows, factorization expects {nf}")
    out = np.zeros((indptr.shape[0] - 1, factor_table.shape[1]), dtype=np.float64)
    _kernels.compose_rows(indptr, indices, data, np.ascontiguousarray(factor_table, dtype=np.float64), out)
    return out


class PostHocMap:
    """Maps arbitrary word strings to known factor ids for vector composition.

    The map is the word's surface factor plus its morphemes from a
    segmentation table, restricted to factors present in the given
    factor vocabulary. Unknown morphemes are silently dropped.
    """

    def __init__(self, factor_vocab: FactorVocabulary,
                 segs: Mapping[str, list[str]] | None = None):
        self.factor_vocab = factor_vocab
        self.segs = dict(segs) if segs else {}

    def mu_prime(self, word: str) -> list[tuple[int, int]]:
        word = normalize_token(word)
        row: dict[int, int] = {}
        sid = self.factor_vocab.id_of.get(f"{word}|{SURFACE_LABEL}")
        if sid is not None:
            row[sid] = row.get(sid, 0) + 1
        for morph in self.segs.get(word, ()):
            fid = self.factor_vocab.id_of.get(morph)
            if fid is not None:
                row[fid] = row.get(fid, 0) + 1
        return sorted(row.items())


def oov_vector(word: str, q_map: PostHocMap, r_map: PostHocMap,
               q_factor_table: np.ndarray, r_factor_table: np.ndarray,
               q_unk: np.ndarray, r_unk: np.ndarray) -> np.ndarray:
    """Concatenated [context; target] vector composed from known factors.

    Each side sums the word's known factor vectors; a side with no known
    factors at all falls back to the UNK vector for that side.
    """
    q_items = q_map.mu_prime(word)
    r_items = r_map.mu_prime(word)
    q = compose_vector(q_factor_table, q_items) if q_items else np.array(q_unk, dtype=np.float64)
    r = compose_vector(r_factor_table, r_items) if r_items else np.array(r_unk, dtype=np.float64)
    return np.concatenate([q, r])


def export_vectors(path: str | Path, words: Iterable[str], matrix: np.ndarray) -> None:
    """Write word vectors as text, one ``word<TAB>v1 v2 ... vd`` line each.

    Values use repr so they round-trip exactly through parsing.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for word, row in zip(words, matrix):
            fh.write(word + "\t" + " ".join(repr(float(x)) for x in row) + "\n")


def load_vectors(path: str | Path) -> tuple[list[str], np.ndarray]:
    words = []
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected word<TAB>values")
            words.append(parts[0])
            rows.append([float(x) for x in parts[1].split(" ")])
    return words, np.asarray(rows, dtype=np.float64)
