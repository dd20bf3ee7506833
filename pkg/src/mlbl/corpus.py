"""Corpus ingestion: token normalization, vocabularies, n-gram extraction.

Input text is pre-tokenized, UTF-8, one sentence per line, tokens
separated by whitespace. Two symbols are reserved: ``<unk>`` (id 0) for
unknown/pruned words and ``<s>`` (id 1) for sentence-boundary padding.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError

UNK_ID = 0
PAD_ID = 1
UNK_TOKEN = "<unk>"
PAD_TOKEN = "<s>"

_ASCII_DIGITS = str.maketrans("123456789", "000000000")


def normalize_token(token: str) -> str:
    """Lowercase and map every decimal digit to '0'."""
    token = token.lower()
    if token.isascii():
        return token.translate(_ASCII_DIGITS)
    return "".join("0" if ch.isdecimal() else ch for ch in token)


def cyrillic_ratio(token: str) -> float:
    if not token:
        return 0.0
    n = sum(1 for ch in token if "Ѐ" <= ch <= "ԯ")
    return n / len(token)


def apply_cyrillic_filter(tokens: Iterable[str], threshold: float = 0.8) -> list[str]:
    """Replace tokens with less than ``threshold`` Cyrillic characters by the UNK symbol.

    Optional language-specific cleanup, off by default in the pipeline.
    """
    return [tok if cyrillic_ratio(tok) >= threshold else UNK_TOKEN for tok in tokens]


class Vocabulary:
    """Immutable word-type inventory with dense ids, counts and singleton pruning metadata."""

    def __init__(self, types: list[str], counts: np.ndarray, kappa: float = 0.0):
        if types[UNK_ID] != UNK_TOKEN or types[PAD_ID] != PAD_TOKEN:
            raise DataError("vocabulary must reserve id 0 for <unk> and id 1 for <s>")
        self.types = types
        self.id_of = {t: i for i, t in enumerate(types)}
        if len(self.id_of) != len(types):
            raise DataError("duplicate type in vocabulary")
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape[0] != len(types):
            raise DataError("count vector length does not match type list")
        self.kappa = float(kappa)
        self.unk_id = UNK_ID
        self.pad_id = PAD_ID

    def __len__(self) -> int:
        return len(self.types)

    def lookup(self, token: str) -> int:
        """Id of a normalized token; unknown tokens map to UNK."""
        return self.id_of.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        """Normalize raw tokens and map them to ids (OOV -> UNK)."""
        get = self.id_of.get
        return [get(normalize_token(t), UNK_ID) for t in tokens]

    def total_tokens(self) -> int:
        return int(self.counts.sum())

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# kappa={self.kappa!r}\n")
            for i, t in enumerate(self.types):
                fh.write(f"{i}\t{t}\t{int(self.counts[i])}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        types: list[str] = []
        counts: list[int] = []
        kappa = 0.0
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    if line.startswith("# kappa="):
                        kappa = float(line.split("=", 1)[1])
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: expected id<TAB>type<TAB>count")
                idx, typ, cnt = parts
                if int(idx) != len(types):
                    raise DataError(f"{path}:{lineno}: ids must be dense and ordered")
                types.append(typ)
                counts.append(int(cnt))
        if not types:
            raise DataError(f"{path}: empty vocabulary file")
        return cls(types, np.asarray(counts, dtype=np.int64), kappa)


def build_vocabulary(sentences: Iterable[Sequence[str]], kappa: float = 0.0,
                     seed: int = 0) -> Vocabulary:
    """Count normalized types and prune a seeded random fraction of singletons.

    Exactly round(kappa * S) of the S singleton types are removed; their
    occurrences map to UNK, whose count becomes the number of pruned
    types. The selection shuffles the lexicographically sorted singleton
    list with a seeded RNG, so rebuilds are reproducible.
    """
    if not 0.0 <= kappa <= 1.0:
        raise ValueError(f"kappa must lie in [0, 1], got {kappa}")
    counts: dict[str, int] = {}
    reserved_hits = 0
    for sent in sentences:
        for tok in sent:
            tok = normalize_token(tok)
            if tok == UNK_TOKEN or tok == PAD_TOKEN:
                # literal reserved symbols in the input fold into UNK
                reserved_hits += 1
                continue
            counts[tok] = counts.get(tok, 0) + 1
    if not counts and reserved_hits == 0:
        raise DataError("empty corpus: no tokens found")

    singletons = sorted(t for t, c in counts.items() if c == 1)
    n_prune = int(kappa * len(singletons) + 0.5)
    rng = random.Random(seed)
    shuffled = list(singletons)
    rng.shuffle(shuffled)
    pruned = set(shuffled[:n_prune])

    types = [UNK_TOKEN, PAD_TOKEN]
    kept_counts = [len(pruned) + reserved_hits, 0]
    for tok, cnt in counts.items():
        if tok in pruned:
            continue
        types.append(tok)
        kept_counts.append(cnt)
    return Vocabulary(types, np.asarray(kept_counts, dtype=np.int64), kappa)


@dataclass(frozen=True)
class NGramInstance:
    """A prediction site: n-1 context ids (oldest first) and the target id."""

    context: tuple[int, ...]
    target: int


def extract_ngrams(sentence: Sequence[int], n: int) -> list[NGramInstance]:
    """One instance per token; sentence-initial contexts are left-padded with PAD."""
    if n < 2:
        raise ValueError(f"n-gram order must be >= 2, got {n}")
    out = []
    for i, target in enumerate(sentence):
        ctx = [PAD_ID] * max(0, n - 1 - i)
        ctx.extend(sentence[max(0, i - n + 1):i])
        out.append(NGramInstance(tuple(ctx), target))
    return out


def ngram_arrays(sentences_ids: Iterable[Sequence[int]], n: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack every sentence's n-gram instances into (contexts, targets) arrays."""
    if n < 2:
        raise ValueError(f"n-gram order must be >= 2, got {n}")
    ctx_parts = []
    tgt_parts = []
    for sent in sentences_ids:
        if not len(sent):
            continue
        ids = np.asarray(sent, dtype=np.int64)
        padded = np.concatenate([np.full(n - 1, PAD_ID, dtype=np.int64), ids])
        windows = np.lib.stride_tricks.sliding_window_view(padded, n - 1)[:len(ids)]
        ctx_parts.append(windows)
        tgt_parts.append(ids)
    if not ctx_parts:
        return (np.empty((0, n - 1), dtype=np.int64), np.empty(0, dtype=np.int64))
    return (np.ascontiguousarray(np.concatenate(ctx_parts)), np.concatenate(tgt_parts))


def read_sentences(path: str | Path) -> Iterator[list[str]]:
    """Yield whitespace-tokenized sentences, skipping blank lines."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            toks = line.split()
            if toks:
                yield toks


def encode_corpus(path: str | Path, vocab: Vocabulary) -> list[list[int]]:
    return [vocab.encode(sent) for sent in read_sentences(path)]
