"""The log-bilinear scorer family.

A prediction vector is formed from the compiled context vectors of the
n-1 preceding words through position-specific transforms; the target
word's score is the dot product with its compiled target vector plus a
bias. Probabilities come either from one softmax over the scorable
vocabulary or, in class-factored models, from a class softmax times a
within-class softmax. The padding symbol is never a prediction target
and is excluded from every normalization scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .clustering import ClassPartition
from .corpus import PAD_ID, Vocabulary
from .errors import ModelFormatError
from .morphology import FactorVocabulary, WordFactorization, identity_csr

VARIANTS = {
    "lbl": (False, False, False),
    "lbl+c": (True, False, False),
    "lbl+o": (False, True, False),
    "lbl++": (True, True, False),
    "clbl": (False, False, True),
    "clbl+c": (True, False, True),
    "clbl+o": (False, True, True),
    "clbl++": (True, True, True),
}


@dataclass(frozen=True)
class ModelConfig:
    """Model order, dimensionality and variant flags."""

    n: int
    d: int
    context_additive: bool = False
    output_additive: bool = False
    class_based: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n-gram order must be >= 2")
        if self.d < 1:
            raise ValueError("embedding dimension must be >= 1")

    @property
    def variant(self) -> str:
        for name, flags in VARIANTS.items():
            if flags == (self.context_additive, self.output_additive, self.class_based):
                return name
        raise AssertionError

    @classmethod
    def from_variant(cls, variant: str, n: int, d: int) -> "ModelConfig":
        key = variant.lower()
        if key not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
        c, o, cb = VARIANTS[key]
        return cls(n=n, d=d, context_additive=c, output_additive=o, class_based=cb)


class ModelParameters:
    """All trainable blocks plus the compiled word-table caches.

    ``C`` holds the n-1 position transforms (each d-by-d), ``Qf``/``Rf``
    the context/target factor tables, ``b`` the word biases, and
    ``S``/``t`` the class vectors and biases when the model is
    class-factored. ``Q``/``R`` are the compiled word tables; they are
    caches, rebuilt from the factor tables, never trained directly.
    """

    def __init__(self, C: np.ndarray, Qf: np.ndarray, Rf: np.ndarray, b: np.ndarray,
                 S: Optional[np.ndarray] = None, t: Optional[np.ndarray] = None):
        self.C = np.ascontiguousarray(C, dtype=np.float64)
        self.Qf = np.ascontiguousarray(Qf, dtype=np.float64)
        self.Rf = np.ascontiguousarray(Rf, dtype=np.float64)
        self.b = np.ascontiguousarray(b, dtype=np.float64)
        self.S = None if S is None else np.ascontiguousarray(S, dtype=np.float64)
        self.t = None if t is None else np.ascontiguousarray(t, dtype=np.float64)
        self.Q: Optional[np.ndarray] = None
        self.R: Optional[np.ndarray] = None

    def blocks(self) -> dict[str, np.ndarray]:
        """Trainable blocks in canonical order (excludes compiled caches)."""
        out = {"C": self.C, "Qf": self.Qf, "Rf": self.Rf, "b": self.b}
        if self.S is not None:
            out["S"] = self.S
            out["t"] = self.t
        return out

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            self.C.copy(), self.Qf.copy(), self.Rf.copy(), self.b.copy(),
            None if self.S is None else self.S.copy(),
            None if self.t is None else self.t.copy())

    def set_from(self, other: "ModelParameters") -> None:
        for name, block in self.blocks().items():
            block[...] = other.blocks()[name]


@dataclass
class PredictionState:
    """A prediction vector tagged with its context key for normalizer caching."""

    p: np.ndarray
    context_key: tuple


class NormalizerCache:
    """Memo of context-specific log-normalizers.

    Keys are (context_key, scope) where scope is "class" for the class
    softmax, a class id for a within-class softmax, or "full" for the
    flat softmax. Values are exactly the log-normalizers the fresh
    computation would produce, so cached and uncached queries agree
    bitwise.
    """

    def __init__(self) -> None:
        self.store: dict[tuple, float] = {}
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self.store)

    def clear(self) -> None:
        self.store.clear()
        self.hits = 0
        self.misses = 0


@dataclass
class QueryStats:
    """Operation counters for the query path (one unit = one scored vector)."""

    score_ops: int = 0

    def reset(self) -> None:
        self.score_ops = 0


class LanguageModel:
    """Bundles configuration, vocabulary, factorization, classes and parameters."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary,
                 factor_vocab: FactorVocabulary, factorization: WordFactorization,
                 params: ModelParameters, partition: Optional[ClassPartition] = None):
        if factorization.num_words != len(vocab):
            raise ModelFormatError("factorization rows do not match vocabulary size")
        if config.class_based:
            if partition is None:
                raise ModelFormatError("class-factored model requires a partition")
            if len(partition) != len(vocab):
                raise ModelFormatError("partition does not cover the vocabulary")
        self.config = config
        self.vocab = vocab
        self.factor_vocab = factor_vocab
        self.factorization = factorization
        self.partition = partition if config.class_based else None
        self.params = params

        V = len(vocab)
        morph_csr = (factorization.indptr, factorization.indices, factorization.data)
        self.mq_csr = morph_csr if config.context_additive else identity_csr(V)
        self.mr_csr = morph_csr if config.output_additive else identity_csr(V)
        nfq = len(factor_vocab) if config.context_additive else V
        nfr = len(factor_vocab) if config.output_additive else V
        if params.Qf.shape != (nfq, config.d):
            raise ModelFormatError(
                f"context factor table is {params.Qf.shape}, expected {(nfq, config.d)}")
        if params.Rf.shape != (nfr, config.d):
            raise ModelFormatError(
                f"target factor table is {params.Rf.shape}, expected {(nfr, config.d)}")
        if params.b.shape != (V,):
            raise ModelFormatError("bias vector does not match vocabulary size")

        scorable = np.arange(V, dtype=np.int64)
        self.scorable_ids = scorable[scorable != PAD_ID]
        if config.class_based:
            self.class_of = self.partition.class_of
            mem_lists = []
            indptr = [0]
            scorable_classes = []
            for c, members in enumerate(self.partition.members):
                keep = members[members != PAD_ID]
                mem_lists.append(keep)
                indptr.append(indptr[-1] + len(keep))
                if len(keep):
                    scorable_classes.append(c)
            self.members_flat = (np.concatenate(mem_lists) if mem_lists
                                 else np.empty(0, dtype=np.int64))
            self.members_indptr = np.asarray(indptr, dtype=np.int64)
            self.scorable_classes = np.asarray(scorable_classes, dtype=np.int64)
        self.recompile()

    # ------------------------------------------------------------------
    # compiled tables
    # ------------------------------------------------------------------

    def recompile(self) -> None:
        """Rebuild the compiled word tables Q and R from the factor tables."""
        d = self.config.d
        V = len(self.vocab)
        Q = np.zeros((V, d), dtype=np.float64)
        _kernels.compose_rows(*self.mq_csr, self.params.Qf, Q)
        R = np.zeros((V, d), dtype=np.float64)
        _kernels.compose_rows(*self.mr_csr, self.params.Rf, R)
        self.params.Q = Q
        self.params.R = R

    # ------------------------------------------------------------------
    # scoring
    # ------------------------------------------------------------------

    def predict(self, context) -> np.ndarray:
        """Prediction vector: sum of transformed compiled context vectors."""
        context = np.asarray(context, dtype=np.int64)
        if context.shape != (self.config.n - 1,):
            raise ValueError(f"context must have {self.config.n - 1} ids")
        p = np.zeros(self.config.d, dtype=np.float64)
        for j, w in enumerate(context):
            p += self.params.Q[w] @ self.params.C[j]
        return p

    def predict_state(self, context) -> PredictionState:
        return PredictionState(self.predict(context), tuple(int(w) for w in context))

    def score_word(self, p: np.ndarray, w: int,
                   stats: Optional[QueryStats] = None) -> float:
        """How well word w fits the prediction: p . r_w + b_w."""
        if w == PAD_ID:
            raise ValueError("the padding symbol is never scored as a target")
        if stats is not None:
            stats.score_ops += 1
        return float(np.dot(p, self.params.R[w]) + self.params.b[w])

    def score_class(self, p: np.ndarray, c: int,
                    stats: Optional[QueryStats] = None) -> float:
        """Class fit: p . s_c + t_c."""
        if stats is not None:
            stats.score_ops += 1
        return float(np.dot(p, self.params.S[c]) + self.params.t[c])

    def _log_norm_words(self, p: np.ndarray, ids: np.ndarray,
                        stats: Optional[QueryStats]) -> float:
        if stats is not None:
            stats.score_ops += len(ids)
        scores = self.params.R[ids] @ p + self.params.b[ids]
        m = scores.max()
        return float(m + np.log(np.exp(scores - m).sum()))

    def _log_norm_classes(self, p: np.ndarray, stats: Optional[QueryStats]) -> float:
        ids = self.scorable_classes
        if stats is not None:
            stats.score_ops += len(ids)
        scores = self.params.S[ids] @ p + self.params.t[ids]
        m = scores.max()
        return float(m + np.log(np.exp(scores - m).sum()))

    def _cached(self, cache: Optional[NormalizerCache], key: tuple, compute) -> float:
        if cache is None:
            return compute()
        if key in cache.store:
            cache.hits += 1
            return cache.store[key]
        cache.misses += 1
        value = compute()
        cache.store[key] = value
        return value

    def log_prob_from_state(self, state: PredictionState, w: int,
                            cache: Optional[NormalizerCache] = None,
                            stats: Optional[QueryStats] = None) -> float:
        """Log probability of w given a prepared prediction state.

        The context-specific normalizers are the cacheable terms; the
        single scores for the target's class and the target itself are
        always computed fresh, so a warm cache answers a class-factored
        query with two score operations.
        """
        if not self.config.class_based:
            nu = self.score_word(state.p, w, stats)
            norm = self._cached(cache, (state.context_key, "full"),
                                lambda: self._log_norm_words(state.p, self.scorable_ids, stats))
            return nu - norm
        c = int(self.class_of[w])
        tau = self.score_class(state.p, c, stats)
        nu = self.score_word(state.p, w, stats)
        norm_c = self._cached(cache, (state.context_key, "class"),
                              lambda: self._log_norm_classes(state.p, stats))
        lo, hi = self.members_indptr[c], self.members_indptr[c + 1]
        members = self.members_flat[lo:hi]
        norm_w = self._cached(cache, (state.context_key, c),
                              lambda: self._log_norm_words(state.p, members, stats))
        return (tau - norm_c) + (nu - norm_w)

    def log_prob_full(self, context, w: int, cache: Optional[NormalizerCache] = None,
                      stats: Optional[QueryStats] = None) -> float:
        """Log probability under the flat softmax over the scorable vocabulary."""
        if self.config.class_based:
            raise ModelFormatError("model is class-factored; use log_prob_classed")
        return self.log_prob_from_state(self.predict_state(context), w, cache, stats)

    def log_prob_classed(self, context, w: int, cache: Optional[NormalizerCache] = None,
                         stats: Optional[QueryStats] = None) -> float:
        """Log probability under the class-factored softmax."""
        if not self.config.class_based:
            raise ModelFormatError("model has no class decomposition")
        return self.log_prob_from_state(self.predict_state(context), w, cache, stats)

    def log_prob(self, context, w: int, cache: Optional[NormalizerCache] = None,
                 stats: Optional[QueryStats] = None) -> float:
        return self.log_prob_from_state(self.predict_state(context), w, cache, stats)

    def full_distribution(self, context) -> np.ndarray:
        """Probabilities of every word id given a context (PAD gets zero)."""
        p = self.predict(context)
        probs = np.zeros(len(self.vocab), dtype=np.float64)
        if not self.config.class_based:
            ids = self.scorable_ids
            scores = self.params.R[ids] @ p + self.params.b[ids]
            m = scores.max()
            e = np.exp(scores - m)
            probs[ids] = e / e.sum()
            return probs
        cls = self.scorable_classes
        tau = self.params.S[cls] @ p + self.params.t[cls]
        m = tau.max()
        e = np.exp(tau - m)
        pc = e / e.sum()
        for pci, c in zip(pc, cls):
            lo, hi = self.members_indptr[c], self.members_indptr[c + 1]
            members = self.members_flat[lo:hi]
            scores = self.params.R[members] @ p + self.params.b[members]
            mw = scores.max()
            ew = np.exp(scores - mw)
            probs[members] = pci * (ew / ew.sum())
        return probs

    # ------------------------------------------------------------------
    # batched evaluation
    # ------------------------------------------------------------------

    def predictions_batch(self, contexts: np.ndarray) -> np.ndarray:
        Qc = self.params.Q[contexts]
        p = np.zeros((contexts.shape[0], self.config.d), dtype=np.float64)
        for j in range(self.config.n - 1):
            p += Qc[:, j, :] @ self.params.C[j]
        return p

    def logprobs_batch(self, contexts: np.ndarray, targets: np.ndarray,
                       chunk: int = 8192) -> np.ndarray:
        """Per-instance log probabilities for evaluation (recompiles first)."""
        self.recompile()
        targets = np.asarray(targets, dtype=np.int64)
        contexts = np.asarray(contexts, dtype=np.int64)
        out = np.empty(targets.shape[0], dtype=np.float64)
        for lo in range(0, targets.shape[0], chunk):
            hi = min(lo + chunk, targets.shape[0])
            p = self.predictions_batch(contexts[lo:hi])
            if self.config.class_based:
                _kernels.classed_logprobs(
                    p, targets[lo:hi], self.class_of, self.members_flat,
                    self.members_indptr, self.scorable_classes,
                    self.params.S, self.params.t, self.params.R, self.params.b,
                    out[lo:hi])
            else:
                ids = self.scorable_ids
                scores = p @ self.params.R[ids].T + self.params.b[ids]
                m = scores.max(axis=1)
                lse = m + np.log(np.exp(scores - m[:, None]).sum(axis=1))
                pos = np.searchsorted(ids, targets[lo:hi])
                out[lo:hi] = scores[np.arange(hi - lo), pos] - lse
        return out


class Querier:
    """Stateful query interface with normalizer caching and operation counters.

    This is the path a decoder feature function would call: repeated
    probability lookups for (context, word) pairs, with context-specific
    normalizers cached across queries. Enabling or disabling the cache
    never changes a returned value.

    Unknown context words normally take the UNK context vector. Passing
    a context post-hoc factor map opts in to composing vectors for
    unknown context words from their known factors instead.
    """

    def __init__(self, model: LanguageModel, use_cache: bool = True,
                 context_post_map=None):
        self.model = model
        self.cache = NormalizerCache() if use_cache else None
        self.stats = QueryStats()
        self.context_post_map = context_post_map

    def log_prob(self, context, w: int) -> float:
        return self.model.log_prob(context, w, self.cache, self.stats)

    def _context_vector(self, token: str):
        """Compiled row for known words, factor composition for unknown ones."""
        from .morphology import compose_vector

        wid = self.model.vocab.id_of.get(token)
        if wid is not None:
            return self.model.params.Q[wid], wid
        items = self.context_post_map.mu_prime(token)
        if not items:
            return self.model.params.Q[self.model.vocab.unk_id], self.model.vocab.unk_id
        return compose_vector(self.model.params.Qf, items), ("oov", token)

    def score_sentence(self, tokens: list[str]) -> list[tuple[str, float]]:
        """Per-token log probabilities of a raw token sequence."""
        from .corpus import normalize_token

        model = self.model
        n = model.config.n
        norm = [normalize_token(t) for t in tokens]
        ids = [model.vocab.lookup(t) for t in norm]
        out = []
        for i, w in enumerate(ids):
            pad = max(0, n - 1 - i)
            window = norm[max(0, i - n + 1):i]
            if self.context_post_map is None:
                ctx = [PAD_ID] * pad + ids[max(0, i - n + 1):i]
                state = model.predict_state(ctx)
            else:
                p = np.zeros(model.config.d, dtype=np.float64)
                key = [PAD_ID] * pad
                for j in range(pad):
                    p += model.params.Q[PAD_ID] @ model.params.C[j]
                for j, tok in enumerate(window, start=pad):
                    vec, marker = self._context_vector(tok)
                    p += vec @ model.params.C[j]
                    key.append(marker)
                state = PredictionState(p, tuple(key))
            out.append((tokens[i], model.log_prob_from_state(state, w, self.cache, self.stats)))
        return out
