"""Perplexity with diagnostic breakdowns, and word-similarity scoring.

Perplexity is exp(-(1/N) sum ln P(w_i)) over all predicted tokens,
including UNK targets (the model reserves UNK mass; comparisons are
only meaningful at a fixed vocabulary). Breakdowns group tokens by
training-corpus frequency decade or by externally supplied labels.
Similarity evaluation scores cosine of concatenated [context; target]
vectors against human ratings with Spearman's rank correlation, with
out-of-vocabulary vectors composed from known morphological factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import PAD_ID, Vocabulary, normalize_token, read_sentences
from .errors import DataError
from .model import LanguageModel
from .morphology import PostHocMap, oov_vector
from .training import laplace_unigram

UNSEEN_BIN = "unseen"
REST_LABEL = "Rest"
UNLABELED = "-"


@dataclass
class GroupStat:
    ppl: float
    share: float
    count: int
    nll: float


@dataclass
class EvalReport:
    total_ppl: float
    token_count: int
    groups: dict[str, GroupStat] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"tokens {self.token_count}  ppl {self.total_ppl:.4f}"]
        for label, g in self.groups.items():
            out.append(f"  {label:>12}  ppl {g.ppl:>12.4f}  share {g.share:7.4f}  n {g.count}")
        return out


@dataclass
class EvalCorpus:
    """Test text prepared for scoring: instance arrays plus aligned surfaces."""

    contexts: np.ndarray
    targets: np.ndarray
    surfaces: list[str]


def prepare_eval_corpus(vocab: Vocabulary, sentences: Sequence[Sequence[str]],
                        n: int) -> EvalCorpus:
    """Normalize, map through the vocabulary (OOV -> UNK) and extract instances."""
    ctx_parts = []
    tgt_parts = []
    surfaces: list[str] = []
    for sent in sentences:
        norm = [normalize_token(t) for t in sent]
        if not norm:
            continue
        surfaces.extend(norm)
        ids = np.asarray([vocab.lookup(t) for t in norm], dtype=np.int64)
        padded = np.concatenate([np.full(n - 1, PAD_ID, dtype=np.int64), ids])
        ctx_parts.append(np.lib.stride_tricks.sliding_window_view(padded, n - 1)[:len(ids)])
        tgt_parts.append(ids)
    if not tgt_parts:
        raise DataError("empty test set")
    return EvalCorpus(np.ascontiguousarray(np.concatenate(ctx_parts)),
                      np.concatenate(tgt_parts), surfaces)


def load_eval_corpus(path: str | Path, vocab: Vocabulary, n: int) -> EvalCorpus:
    return prepare_eval_corpus(vocab, list(read_sentences(path)), n)


def report_from_logps(logps: np.ndarray,
                      group_labels: Optional[Sequence[str]] = None) -> EvalReport:
    """Assemble perplexities from per-token log probabilities.

    Group perplexities decompose the total: the token-share weighted
    mean of group log-perplexities equals the total log-perplexity.
    """
    n = logps.shape[0]
    if n == 0:
        raise DataError("no scored tokens")
    total_nll = -float(logps.sum())
    report = EvalReport(total_ppl=math.exp(total_nll / n), token_count=n)
    if group_labels is not None:
        if len(group_labels) != n:
            raise DataError(f"{len(group_labels)} labels for {n} tokens")
        sums: dict[str, float] = {}
        counts: dict[str, int] = {}
        for lp, lab in zip(logps, group_labels):
            sums[lab] = sums.get(lab, 0.0) - float(lp)
            counts[lab] = counts.get(lab, 0) + 1
        for lab in sorted(sums):
            c = counts[lab]
            report.groups[lab] = GroupStat(
                ppl=math.exp(sums[lab] / c), share=c / n, count=c, nll=sums[lab])
    return report


def perplexity(model: LanguageModel, contexts: np.ndarray,
               targets: np.ndarray) -> EvalReport:
    """Corpus perplexity over all predicted (non-PAD) tokens."""
    if targets.shape[0] == 0:
        raise DataError("empty test set")
    return report_from_logps(model.logprobs_batch(contexts, targets))


def frequency_bin_label(count: int) -> str:
    """Decade bin of a training count: "unseen" for 0, otherwise floor(log10)."""
    if count <= 0:
        return UNSEEN_BIN
    return str(int(math.floor(math.log10(count))))


def ppl_by_frequency(model: LanguageModel, corpus: EvalCorpus,
                     train_counts: Optional[Mapping[str, int]] = None) -> EvalReport:
    """Perplexity grouped by how often each test token's type was seen in training.

    A bin labelled x holds tokens whose type occurred in [10^x, 10^(x+1))
    training tokens; types never seen in training fall in "unseen". By
    default counts come from the model vocabulary, so pruned singletons
    count as unseen; pass raw pre-pruning counts to bin by true corpus
    frequency.
    """
    if train_counts is None:
        vocab = model.vocab
        train_counts = {t: int(c) for t, c in zip(vocab.types, vocab.counts)
                        if t != vocab.types[PAD_ID]}
        train_counts.pop(vocab.types[vocab.unk_id], None)
    labels = [frequency_bin_label(train_counts.get(s, 0)) for s in corpus.surfaces]
    logps = model.logprobs_batch(corpus.contexts, corpus.targets)
    return report_from_logps(logps, labels)


def read_label_file(path: str | Path) -> list[list[str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            labs = line.split()
            if labs:
                out.append(labs)
    return out


def ppl_by_label(model: LanguageModel, corpus: EvalCorpus,
                 labels: Sequence[str]) -> EvalReport:
    """Perplexity grouped by a per-token label; "-" collects under "Rest"."""
    if len(labels) != corpus.targets.shape[0]:
        raise DataError(
            f"label stream has {len(labels)} entries for {corpus.targets.shape[0]} tokens")
    labels = [REST_LABEL if lab == UNLABELED else lab for lab in labels]
    logps = model.logprobs_batch(corpus.contexts, corpus.targets)
    return report_from_logps(logps, labels)


def unigram_perplexity(vocab: Vocabulary, targets: np.ndarray) -> float:
    """Perplexity of the add-one smoothed unigram baseline on a target stream."""
    probs = laplace_unigram(vocab)
    logps = np.log(probs[targets])
    return float(np.exp(-logps.mean()))


# ----------------------------------------------------------------------
# word similarity
# ----------------------------------------------------------------------

@dataclass
class SimilarityDataset:
    pairs: list[tuple[str, str, float]]

    @classmethod
    def load(cls, path: str | Path) -> "SimilarityDataset":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: expected word1<TAB>word2<TAB>rating")
                try:
                    rating = float(parts[2])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad rating {parts[2]!r}") from exc
                if not math.isfinite(rating):
                    raise DataError(f"{path}:{lineno}: rating must be finite")
                pairs.append((parts[0], parts[1], rating))
        if not pairs:
            raise DataError(f"{path}: empty similarity dataset")
        return cls(pairs)


@dataclass
class SimilarityResult:
    model_scores: list[float]
    human_scores: list[float]
    rho: float
    rho_defined: bool
    oov_count: int
    zero_vector_pairs: int


def cosine(u: np.ndarray, v: np.ndarray) -> tuple[float, bool]:
    """Cosine similarity; a zero vector yields (0.0, flagged=True)."""
    duu = float(np.dot(u, u))
    dvv = float(np.dot(v, v))
    if duu == 0.0 or dvv == 0.0:
        return 0.0, True
    return float(np.dot(u, v) / math.sqrt(duu * dvv)), False


class SimilarityScorer:
    """Builds [context; target] vectors for arbitrary words, composing OOVs.

    In compose mode an out-of-vocabulary word is summed from its known
    factors per side (surface form plus segmentation morphemes); with
    composition disabled every OOV word takes the UNK vector, which is
    also all a purely word-level model can do.
    """

    def __init__(self, model: LanguageModel, segs: Optional[Mapping[str, list[str]]] = None,
                 compose: bool = True):
        self.model = model
        self.compose = compose
        fv = model.factor_vocab
        surface_fv = None
        if not (model.config.context_additive and model.config.output_additive):
            # non-additive sides have one surface factor per word, ids == word ids
            from .morphology import FactorVocabulary, SURFACE_LABEL

            surface_fv = FactorVocabulary()
            for word in model.vocab.types:
                surface_fv.add(f"{word}|{SURFACE_LABEL}")
        self.q_map = (PostHocMap(fv, segs) if model.config.context_additive
                      else PostHocMap(surface_fv, segs=None))
        self.r_map = (PostHocMap(fv, segs) if model.config.output_additive
                      else PostHocMap(surface_fv, segs=None))

    def vector(self, word: str) -> tuple[np.ndarray, bool]:
        """The 2d-vector for a word and whether the word was OOV."""
        model = self.model
        wid = model.vocab.id_of.get(normalize_token(word))
        if wid is not None:
            return np.concatenate([model.params.Q[wid], model.params.R[wid]]), False
        unk = model.vocab.unk_id
        if not self.compose:
            return np.concatenate([model.params.Q[unk], model.params.R[unk]]), True
        vec = oov_vector(word, self.q_map, self.r_map, model.params.Qf, model.params.Rf,
                         model.params.Q[unk], model.params.R[unk])
        return vec, True

    def pair(self, w1: str, w2: str) -> tuple[float, int, bool]:
        """Cosine of the pair's vectors, OOV count and zero-vector flag."""
        u, oov1 = self.vector(w1)
        v, oov2 = self.vector(w2)
        sim, flagged = cosine(u, v)
        return sim, int(oov1) + int(oov2), flagged


def pair_similarity(model: LanguageModel, w1: str, w2: str,
                    segs: Optional[Mapping[str, list[str]]] = None,
                    compose: bool = True) -> float:
    return SimilarityScorer(model, segs, compose).pair(w1, w2)[0]


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """Ranks from 1..n with ties receiving the average of their positions."""
    a = np.asarray(values, dtype=np.float64)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.shape[0], dtype=np.float64)
    i = 0
    while i < a.shape[0]:
        j = i
        while j + 1 < a.shape[0] and a[order[j + 1]] == a[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(model_scores: Sequence[float], human: Sequence[float]) -> float:
    """Spearman's rho: Pearson correlation of average-ranked data.

    Returns NaN when either input is constant (the correlation is
    undefined, not zero).
    """
    if len(model_scores) != len(human):
        raise ValueError("score lists must have equal length")
    if len(model_scores) < 2:
        raise ValueError("need at least two pairs")
    rx = average_ranks(model_scores)
    ry = average_ranks(human)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    vx = float((dx * dx).sum())
    vy = float((dy * dy).sum())
    if vx == 0.0 or vy == 0.0:
        return float("nan")
    return float((dx * dy).sum() / math.sqrt(vx * vy))


def evaluate_similarity(model: LanguageModel, dataset: SimilarityDataset,
                        segs: Optional[Mapping[str, list[str]]] = None,
                        compose: bool = True) -> SimilarityResult:
    scorer = SimilarityScorer(model, segs, compose)
    scores = []
    oov = 0
    flagged = 0
    for w1, w2, _ in dataset.pairs:
        sim, n_oov, zero = scorer.pair(w1, w2)
        scores.append(sim)
        oov += n_oov
        flagged += int(zero)
    human = [r for _, _, r in dataset.pairs]
    rho = spearman(scores, human) if len(scores) >= 2 else float("nan")
    return SimilarityResult(model_scores=scores, human_scores=human, rho=rho,
                            rho_defined=not math.isnan(rho), oov_count=oov,
                            zero_vector_pairs=flagged)


def nearest_neighbors(query: str | np.ndarray, words: Sequence[str],
                      matrix: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Top-k rows by cosine; a word query is excluded from its own results.

    Ties are broken by row order (lowest id first).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    exclude = -1
    if isinstance(query, str):
        try:
            exclude = list(words).index(query)
        except ValueError as exc:
            raise DataError(f"query word {query!r} not in the table") from exc
        qvec = matrix[exclude]
    else:
        qvec = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(qvec)
    norms = np.linalg.norm(matrix, axis=1)
    sims = np.zeros(matrix.shape[0], dtype=np.float64)
    ok = (norms > 0)
    if qn > 0:
        sims[ok] = (matrix[ok] @ qvec) / (norms[ok] * qn)
    if exclude >= 0:
        sims[exclude] = -np.inf
    order = np.lexsort((np.arange(len(sims)), -sims))
    top = order[:k]
    return [(words[i], float(sims[i])) for i in top]
