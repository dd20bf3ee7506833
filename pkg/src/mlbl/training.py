"""Parameter estimation.

Class-factored models train against the exact L2-regularized log
likelihood (normalization is over a class set and a member set, both
small). Flat models train with noise-contrastive estimation to avoid
normalizing over the vocabulary; they are still normalized exactly at
evaluation time. Updates are AdaGrad over shuffled minibatches, with
early stopping on development perplexity.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .clustering import ClassPartition
from .corpus import PAD_ID, Vocabulary
from .errors import DataError
from .model import LanguageModel, ModelConfig, ModelParameters
from .morphology import FactorVocabulary, WordFactorization

log = logging.getLogger("mlbl.training")


@dataclass
class TrainingConfig:
    """Optimizer and initialization settings; every default is overridable."""

    d: int | None = None
    n: int = 4
    variant: str = "clbl++"
    minibatch_size: int = 10000
    step_size: float = 0.05
    l2_lambda: float = 1e-5
    nce_noise_k: int = 10
    init_sigma: float = 0.01
    adagrad_epsilon: float = 1e-8
    max_epochs: int = 20
    seed: int = 1
    regularize_biases: bool = True

    def __post_init__(self):
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")
        if self.nce_noise_k < 1:
            raise ValueError("nce_noise_k must be at least 1")
        if self.init_sigma <= 0:
            raise ValueError("init_sigma must be positive")
        if self.adagrad_epsilon <= 0:
            raise ValueError("adagrad_epsilon must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainingConfig":
        values = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError(f"{path}:{lineno}: expected key=value")
                key, val = (part.strip() for part in line.split("=", 1))
                values[key] = val
        return cls().with_overrides(values)

    def with_overrides(self, values: dict[str, str]) -> "TrainingConfig":
        kwargs = {}
        by_name = {f.name: f for f in fields(self)}
        for key, val in values.items():
            if key not in by_name:
                raise DataError(f"unknown configuration key {key!r}")
            kwargs[key] = _parse_value(key, val)
        return replace(self, **kwargs)

    def to_file(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for f in fields(self):
                val = getattr(self, f.name)
                if isinstance(val, bool):
                    val = "true" if val else "false"
                fh.write(f"{f.name}={val}\n")

    def model_config(self) -> ModelConfig:
        if self.d is None:
            raise DataError("embedding dimension d must be set explicitly")
        return ModelConfig.from_variant(self.variant, n=self.n, d=self.d)


def _parse_value(key: str, val: str):
    if key in ("d", "n", "minibatch_size", "nce_noise_k", "max_epochs", "seed"):
        return int(val)
    if key in ("step_size", "l2_lambda", "init_sigma", "adagrad_epsilon"):
        return float(val)
    if key == "regularize_biases":
        low = val.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise DataError(f"bad boolean {val!r} for {key}")
    return val.strip()


@dataclass
class Gradients:
    """Per-block gradients aligned with ModelParameters.blocks()."""

    C: np.ndarray
    Qf: np.ndarray
    Rf: np.ndarray
    b: np.ndarray
    S: Optional[np.ndarray] = None
    t: Optional[np.ndarray] = None

    def blocks(self) -> dict[str, np.ndarray]:
        out = {"C": self.C, "Qf": self.Qf, "Rf": self.Rf, "b": self.b}
        if self.S is not None:
            out["S"] = self.S
            out["t"] = self.t
        return out

    @classmethod
    def zeros_like(cls, params: ModelParameters) -> "Gradients":
        return cls(np.zeros_like(params.C), np.zeros_like(params.Qf),
                   np.zeros_like(params.Rf), np.zeros_like(params.b),
                   None if params.S is None else np.zeros_like(params.S),
                   None if params.t is None else np.zeros_like(params.t))


def laplace_unigram(vocab: Vocabulary) -> np.ndarray:
    """Add-one smoothed unigram over scorable words; PAD gets zero mass."""
    counts = vocab.counts.astype(np.float64)
    probs = np.zeros(len(vocab), dtype=np.float64)
    scorable = np.arange(len(vocab)) != PAD_ID
    total = counts[scorable].sum() + scorable.sum()
    probs[scorable] = (counts[scorable] + 1.0) / total
    return probs


def init_params(config: ModelConfig, vocab: Vocabulary, factor_vocab: FactorVocabulary,
                factorization: WordFactorization,
                partition: Optional[ClassPartition] = None,
                init_sigma: float = 0.01, seed: int = 1) -> ModelParameters:
    """Gaussian init for all tables, biases set to smoothed log unigrams.

    Word biases are the add-one smoothed log unigram probabilities over
    scorable words (pruned-singleton mass is part of the UNK count and
    therefore included); class biases likewise over class counts.
    """
    rng = np.random.default_rng(seed)
    V = len(vocab)
    nfq = len(factor_vocab) if config.context_additive else V
    nfr = len(factor_vocab) if config.output_additive else V
    C = rng.normal(0.0, init_sigma, size=(config.n - 1, config.d, config.d))
    Qf = rng.normal(0.0, init_sigma, size=(nfq, config.d))
    Rf = rng.normal(0.0, init_sigma, size=(nfr, config.d))
    b = np.zeros(V, dtype=np.float64)
    scorable = np.arange(V) != PAD_ID
    b[scorable] = np.log(laplace_unigram(vocab)[scorable])
    S = t = None
    if config.class_based:
        if partition is None:
            raise DataError("class-factored model needs a partition for initialization")
        S = rng.normal(0.0, init_sigma, size=(partition.num_classes, config.d))
        class_counts = np.zeros(partition.num_classes, dtype=np.float64)
        np.add.at(class_counts, partition.class_of[scorable],
                  vocab.counts[scorable].astype(np.float64))
        scorable_cls = np.asarray(
            [c for c, members in enumerate(partition.members)
             if np.any(members != PAD_ID)], dtype=np.int64)
        total = class_counts[scorable_cls].sum() + len(scorable_cls)
        t = np.zeros(partition.num_classes, dtype=np.float64)
        t[scorable_cls] = np.log((class_counts[scorable_cls] + 1.0) / total)
    return ModelParameters(C, Qf, Rf, b, S, t)


def _context_backward(model: LanguageModel, contexts: np.ndarray, Qc: np.ndarray,
                      dp: np.ndarray, grads: Gradients) -> None:
    """Chain dp back through the position transforms and the factor map."""
    params = model.params
    gQ = np.zeros_like(params.Q)
    for j in range(model.config.n - 1):
        grads.C[j] += Qc[:, j, :].T @ dp
        np.add.at(gQ, contexts[:, j], dp @ params.C[j].T)
    _kernels.scatter_rows(*model.mq_csr, gQ, grads.Qf)


def _add_l2(model: LanguageModel, grads: Gradients, l2_lambda: float,
            regularize_biases: bool) -> float:
    if l2_lambda == 0.0:
        return 0.0
    term = 0.0
    for name, block in model.params.blocks().items():
        if not regularize_biases and name in ("b", "t"):
            continue
        term += float((block * block).sum())
        grads.blocks()[name] += 2.0 * l2_lambda * block
    return l2_lambda * term


def minibatch_loss_and_grad(model: LanguageModel, contexts: np.ndarray,
                            targets: np.ndarray, l2_lambda: float = 0.0,
                            regularize_biases: bool = True
                            ) -> tuple[float, Gradients]:
    """Exact negative log likelihood of a batch plus L2, with gradients.

    Class-factored models only: both softmaxes are normalized exactly.
    The compiled word tables are refreshed on entry so the loss is a
    pure function of the current parameters; factor-table gradients
    accumulate over every batch word sharing a factor.
    """
    if not model.config.class_based:
        raise DataError("exact-likelihood training requires a class-factored model")
    model.recompile()
    contexts = np.asarray(contexts, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    params = model.params
    grads = Gradients.zeros_like(params)
    L = targets.shape[0]

    Qc = params.Q[contexts]
    p = np.zeros((L, model.config.d), dtype=np.float64)
    for j in range(model.config.n - 1):
        p += Qc[:, j, :] @ params.C[j]

    logps = np.empty(L, dtype=np.float64)
    dp = np.zeros_like(p)
    gR = np.zeros_like(params.R)
    gS = np.zeros_like(params.S)
    _kernels.classed_fwd_bwd(
        p, targets, model.class_of, model.members_flat, model.members_indptr,
        model.scorable_classes, params.S, params.t, params.R, params.b,
        logps, dp, gS, grads.t, gR, grads.b)
    grads.S += gS
    _kernels.scatter_rows(*model.mr_csr, gR, grads.Rf)
    _context_backward(model, contexts, Qc, dp, grads)

    loss = -float(logps.sum())
    loss += _add_l2(model, grads, l2_lambda, regularize_biases)
    return loss, grads


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def nce_loss_and_grad(model: LanguageModel, contexts: np.ndarray, targets: np.ndarray,
                      k: int, noise_probs: np.ndarray, seed,
                      l2_lambda: float = 0.0, regularize_biases: bool = True
                      ) -> tuple[float, Gradients]:
    """Noise-contrastive loss for flat models, with gradients.

    Each datum is contrasted against k seeded draws from the noise
    distribution; model scores stay unnormalized. With Delta(x) =
    score(x) - log(k * P_noise(x)), the loss per datum is
    -log sigma(Delta(target)) - sum_i log(1 - sigma(Delta(noise_i))).
    The same seed reproduces the same noise words, so the loss is a
    deterministic function of the parameters.
    """
    if k < 1:
        raise ValueError("need at least one noise sample per datum")
    model.recompile()
    contexts = np.asarray(contexts, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    params = model.params
    grads = Gradients.zeros_like(params)
    L = targets.shape[0]
    d = model.config.d

    rng = np.random.default_rng(seed)
    noise = rng.choice(len(model.vocab), size=(L, k), p=noise_probs)

    Qc = params.Q[contexts]
    p = np.zeros((L, d), dtype=np.float64)
    for j in range(model.config.n - 1):
        p += Qc[:, j, :] @ params.C[j]

    log_kpn = np.full_like(noise_probs, -np.inf)
    np.log(k * noise_probs, out=log_kpn, where=noise_probs > 0)
    nu_t = (p * params.R[targets]).sum(axis=1) + params.b[targets]
    delta_t = nu_t - log_kpn[targets]
    Rn = params.R[noise]
    nu_n = np.einsum("ld,lkd->lk", p, Rn) + params.b[noise]
    delta_n = nu_n - log_kpn[noise]

    loss = float(np.logaddexp(0.0, -delta_t).sum() + np.logaddexp(0.0, delta_n).sum())

    g_t = -_sigmoid(-delta_t)
    g_n = _sigmoid(delta_n)
    gR = np.zeros_like(params.R)
    np.add.at(grads.b, targets, g_t)
    np.add.at(grads.b, noise.reshape(-1), g_n.reshape(-1))
    np.add.at(gR, targets, g_t[:, None] * p)
    np.add.at(gR, noise.reshape(-1), (g_n[..., None] * p[:, None, :]).reshape(-1, d))
    dp = g_t[:, None] * params.R[targets] + np.einsum("lk,lkd->ld", g_n, Rn)
    _kernels.scatter_rows(*model.mr_csr, gR, grads.Rf)
    _context_backward(model, contexts, Qc, dp, grads)

    loss += _add_l2(model, grads, l2_lambda, regularize_biases)
    return loss, grads


class TrainState:
    """Parameters plus AdaGrad accumulators and progress bookkeeping."""

    def __init__(self, params: ModelParameters):
        self.params = params
        self.accum = {name: np.zeros_like(block) for name, block in params.blocks().items()}
        self.epoch = 0
        self.best_dev_ppl = float("inf")


def adagrad_step(state: TrainState, grads: Gradients, step_size: float,
                 epsilon: float) -> None:
    """accum += g*g; theta -= step_size * g / (sqrt(accum) + epsilon).

    Entries with zero gradient and empty accumulator stay untouched
    even when epsilon is zero.
    """
    blocks = state.params.blocks()
    for name, g in grads.blocks().items():
        acc = state.accum[name]
        acc += g * g
        denom = np.sqrt(acc) + epsilon
        update = np.zeros_like(g)
        np.divide(g, denom, out=update, where=denom > 0)
        blocks[name] -= step_size * update


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_ppl: float
    seconds: float


@dataclass
class TrainResult:
    params: ModelParameters
    history: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False
    best_dev_ppl: float = float("inf")


def train(model: LanguageModel, train_data: tuple[np.ndarray, np.ndarray],
          dev_data: tuple[np.ndarray, np.ndarray], config: TrainingConfig,
          dev_ppl_fn: Optional[Callable[[LanguageModel, int], float]] = None,
          log_fn: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Epochs of shuffled minibatches with per-epoch early stopping.

    After each epoch the word tables are recompiled and development
    perplexity measured (or taken from ``dev_ppl_fn`` when supplied,
    which tests use to inject schedules). Training halts at the first
    epoch whose dev perplexity exceeds the previous epoch's, returning
    the previous parameters, or after ``max_epochs``. The model's
    parameters are updated in place; the returned parameters are the
    selected snapshot.
    """
    contexts, targets = train_data
    if targets.shape[0] == 0:
        raise DataError("empty training stream")
    if dev_ppl_fn is None:
        from .evaluation import perplexity

        def dev_ppl_fn(m: LanguageModel, epoch: int) -> float:
            return perplexity(m, dev_data[0], dev_data[1]).total_ppl

    state = TrainState(model.params)
    rng = np.random.default_rng(config.seed)
    noise_probs = None if model.config.class_based else laplace_unigram(model.vocab)
    result = TrainResult(params=model.params)
    prev_ppl = None
    snapshot = None
    n_instances = targets.shape[0]
    L = config.minibatch_size

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n_instances)
        epoch_loss = 0.0
        for bi, lo in enumerate(range(0, n_instances, L)):
            idx = order[lo:lo + L]
            bc, bt = contexts[idx], targets[idx]
            if model.config.class_based:
                loss, grads = minibatch_loss_and_grad(
                    model, bc, bt, config.l2_lambda, config.regularize_biases)
            else:
                loss, grads = nce_loss_and_grad(
                    model, bc, bt, config.nce_noise_k, noise_probs,
                    seed=[config.seed, epoch, bi],
                    l2_lambda=config.l2_lambda,
                    regularize_biases=config.regularize_biases)
            adagrad_step(state, grads, config.step_size, config.adagrad_epsilon)
            epoch_loss += loss
        model.recompile()
        dev_ppl = float(dev_ppl_fn(model, epoch))
        record = EpochRecord(epoch, epoch_loss, dev_ppl, time.perf_counter() - started)
        result.history.append(record)
        if log_fn is not None:
            log_fn(record)
        else:
            log.info("epoch %d train_loss %.4f dev_ppl %.4f %.1fs",
                     record.epoch, record.train_loss, record.dev_ppl, record.seconds)
        state.epoch = epoch
        if prev_ppl is not None and dev_ppl > prev_ppl:
            model.params.set_from(snapshot)
            model.recompile()
            result.stopped_early = True
            result.best_dev_ppl = prev_ppl
            result.params = model.params
            return result
        prev_ppl = dev_ppl
        state.best_dev_ppl = min(state.best_dev_ppl, dev_ppl)
        snapshot = model.params.copy()
    result.best_dev_ppl = prev_ppl if prev_ppl is not None else float("inf")
    result.params = model.params
    return result
