"""Shared builders for synthetic vocabularies, factorizations, models and corpora."""

from __future__ import annotations

import numpy as np

from mlbl.clustering import ClassPartition
from mlbl.corpus import PAD_TOKEN, UNK_TOKEN, Vocabulary
from mlbl.model import LanguageModel, ModelConfig
from mlbl.morphology import FactorVocabulary, WordFactorization, build_factorization
from mlbl.training import init_params


def _letters(i: int, width: int = 3) -> str:
    out = []
    for _ in range(width):
        out.append(chr(ord("a") + i % 26))
        i //= 26
    return "".join(reversed(out))


def make_vocab(n_types: int, counts=None, seed: int = 0) -> Vocabulary:
    """Vocabulary with n_types entries including the two reserved symbols.

    Type names avoid digits so they survive token normalization.
    """
    assert n_types >= 3
    types = [UNK_TOKEN, PAD_TOKEN] + [f"w{_letters(i)}" for i in range(n_types - 2)]
    if counts is None:
        rng = np.random.default_rng(seed)
        counts = rng.integers(1, 60, size=n_types)
        counts[0] = int(rng.integers(0, 5))
        counts[1] = 0
    return Vocabulary(types, np.asarray(counts, dtype=np.int64), 0.0)


def random_factorization(n_words: int, n_factors: int, seed: int = 0,
                         max_factors: int = 3, max_mult: int = 2):
    """Arbitrary sparse factorization (no surface-factor structure)."""
    rng = np.random.default_rng(seed)
    fv = FactorVocabulary()
    for i in range(n_factors):
        fv.add(f"f{i}|m")
    rows = []
    for _ in range(n_words):
        k = int(rng.integers(1, max_factors + 1))
        fids = rng.choice(n_factors, size=k, replace=False)
        rows.append({int(f): int(rng.integers(1, max_mult + 1)) for f in fids})
    return fv, WordFactorization.from_rows(rows, n_factors)


def random_partition(n_words: int, num_classes: int, seed: int = 0) -> ClassPartition:
    rng = np.random.default_rng(seed)
    class_of = rng.integers(0, num_classes, size=n_words)
    firsts = rng.permutation(n_words)[:num_classes]
    class_of[firsts] = np.arange(num_classes)
    return ClassPartition(class_of.astype(np.int64))


def random_model(variant: str, n_types: int = 30, n_factors: int = 12,
                 num_classes: int = 5, d: int = 4, n: int = 3, seed: int = 0,
                 init_sigma: float = 0.5) -> LanguageModel:
    """A fully random model of any variant, usable for property tests."""
    cfg = ModelConfig.from_variant(variant, n=n, d=d)
    vocab = make_vocab(n_types, seed=seed)
    if cfg.context_additive or cfg.output_additive:
        fv, wf = random_factorization(n_types, n_factors, seed=seed + 1)
    else:
        fv, wf = build_factorization(vocab, None)
    partition = random_partition(n_types, num_classes, seed + 2) if cfg.class_based else None
    params = init_params(cfg, vocab, fv, wf, partition, init_sigma=init_sigma,
                         seed=seed + 3)
    return LanguageModel(cfg, vocab, fv, wf, params, partition)


def toy_morph_model(n_types=20, n_factors=12, num_classes=4, d=5, n=3, seed=0,
                    variant="clbl++", init_sigma=0.3):
    """Small model with a shared-factor map (|F| < |V|) for gradient checks."""
    cfg = ModelConfig.from_variant(variant, n=n, d=d)
    vocab = make_vocab(n_types, seed=seed)
    fv, wf = random_factorization(n_types, n_factors, seed=seed + 1)
    partition = random_partition(n_types, num_classes, seed + 2) if cfg.class_based else None
    params = init_params(cfg, vocab, fv, wf, partition, init_sigma, seed=seed + 3)
    return LanguageModel(cfg, vocab, fv, wf, params, partition)


def random_batch(model, size, seed=0):
    rng = np.random.default_rng(seed)
    V = len(model.vocab)
    ctx = rng.integers(0, V, size=(size, model.config.n - 1)).astype(np.int64)
    tgt = np.asarray(rng.choice(model.scorable_ids, size=size), dtype=np.int64)
    return ctx, tgt


def fd_check(model, loss_fn, rel_tol=1e-4, h=1e-5):
    """Central finite differences against analytic gradients, blockwise."""
    loss0, grads = loss_fn()
    worst = 0.0
    for name, block in model.params.blocks().items():
        g = grads.blocks()[name]
        flat = block.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_fn()
            flat[i] = orig - h
            lm, _ = loss_fn()
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            rel = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-8)
            worst = max(worst, rel)
            assert rel <= rel_tol, f"{name}[{i}]: analytic {gflat[i]} vs fd {fd}"
    return worst


def zeroed(model: LanguageModel) -> LanguageModel:
    """Zero every parameter block in place (biases included) and recompile."""
    for block in model.params.blocks().values():
        block[...] = 0.0
    model.recompile()
    return model


def morph_corpus(n_tokens: int, n_stems: int = 60, n_suffixes: int = 8,
                 seed: int = 0, zipf_a: float = 1.6, agree: float = 0.75,
                 persist: float = 0.0, sent_len: int = 18):
    """Synthetic morphology-rich corpus: stem+suffix tokens with suffix agreement.

    Stems are Zipf-distributed; each token's suffix repeats the previous
    token's suffix with probability ``agree`` (uniform otherwise), so
    suffixes are predictable from context while rare stems produce rare
    surface forms. With ``persist`` > 0 a token also repeats the previous
    stem with that probability, giving stems contextual signal. Returns
    (sentences, segmentations) where sentences is a list of token lists
    and segmentations maps each surface form to its labelled morphemes.
    """
    rng = np.random.default_rng(seed)
    stems = ["st" + _letters(i) for i in range(n_stems)]
    suffixes = ["k" + _letters(j, 2) for j in range(n_suffixes)]
    stem_p = 1.0 / np.arange(1, n_stems + 1) ** zipf_a
    stem_p /= stem_p.sum()

    stem_draws = rng.choice(n_stems, size=n_tokens, p=stem_p)
    stay = rng.random(n_tokens) < agree
    hold = rng.random(n_tokens) < persist
    jump = rng.integers(0, n_suffixes, size=n_tokens)

    sentences = []
    segs = {}
    sent: list[str] = []
    suffix = int(jump[0])
    stem = int(stem_draws[0])
    for i in range(n_tokens):
        if not sent or not stay[i]:
            suffix = int(jump[i])
        if not sent or not hold[i]:
            stem = int(stem_draws[i])
        word = stems[stem] + suffixes[suffix]
        if word not in segs:
            segs[word] = [f"{stems[stem]}|stem", f"{suffixes[suffix]}|suffix"]
        sent.append(word)
        if len(sent) == sent_len:
            sentences.append(sent)
            sent = []
    if sent:
        sentences.append(sent)
    return sentences, segs


def write_corpus(path, sentences) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            fh.write(" ".join(sent) + "\n")


def write_segs(path, segs: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(segs):
            fh.write(word + "\t" + " ".join(segs[word]) + "\n")
