"""Command-line surface: preprocess, cluster, train, ppl, sim, score, export.

Exit codes: 0 success, 2 usage errors, 3 data errors, 4 model container
or model/vocabulary mismatches.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import brown_cluster, default_num_classes, frequency_bin, load_partition
from .container import load_model, save_model
from .corpus import (PAD_ID, Vocabulary, apply_cyrillic_filter, build_vocabulary,
                     ngram_arrays, normalize_token, read_sentences)
from .errors import DataError, MlblError, ModelFormatError
from .evaluation import (EvalReport, SimilarityDataset, evaluate_similarity,
                         load_eval_corpus, perplexity, ppl_by_frequency, ppl_by_label,
                         read_label_file, report_from_logps)
from .manifest import build_manifest, write_sidecar
from .model import LanguageModel, Querier
from .morphology import (FactorVocabulary, WordFactorization, build_factorization,
                         export_vectors, parse_segmentations)
from .training import TrainingConfig, init_params, train

log = logging.getLogger("mlbl")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4


def _read_tokenized(path: str, cyrillic_filter: bool) -> list[list[str]]:
    sents = list(read_sentences(path))
    if cyrillic_filter:
        sents = [apply_cyrillic_filter(s) for s in sents]
    return sents


def _load_factorization(vocab: Vocabulary, factors_path: str | None,
                        mu_path: str | None) -> tuple[FactorVocabulary, WordFactorization]:
    if factors_path is None or mu_path is None:
        return build_factorization(vocab, None)
    fv = FactorVocabulary.load(factors_path)
    rows: list[dict[int, int]] = []
    with open(mu_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{mu_path}:{lineno}: expected word<TAB>factors")
            word, factors = parts
            wid = len(rows)
            if wid >= len(vocab) or vocab.types[wid] != word:
                raise DataError(f"{mu_path}:{lineno}: word {word!r} does not match "
                                f"vocabulary order")
            row: dict[int, int] = {}
            for item in factors.split(" "):
                fid = fv.id_of.get(item)
                if fid is None:
                    raise DataError(f"{mu_path}:{lineno}: unknown factor {item!r}")
                row[fid] = row.get(fid, 0) + 1
            rows.append(row)
    if len(rows) != len(vocab):
        raise DataError(f"{mu_path}: {len(rows)} rows for {len(vocab)} vocabulary words")
    return fv, WordFactorization.from_rows(rows, len(fv))


def _save_mu(path: Path, vocab: Vocabulary, fv: FactorVocabulary,
             wf: WordFactorization) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v, word in enumerate(vocab.types):
            parts = []
            for fid, mult in wf.mu(v):
                parts.extend([fv.factors[fid]] * mult)
            fh.write(f"{word}\t{' '.join(parts)}\n")


def _bigram_counts(sentences_ids) -> dict[tuple[int, int], int]:
    """Adjacent-pair counts with a boundary symbol before each sentence."""
    counts: dict[tuple[int, int], int] = {}
    for ids in sentences_ids:
        prev = PAD_ID
        for w in ids:
            key = (prev, w)
            counts[key] = counts.get(key, 0) + 1
            prev = w
    return counts


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    started = time.perf_counter()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sents = _read_tokenized(args.input, args.cyrillic_filter)
    vocab = build_vocabulary(sents, kappa=args.kappa, seed=args.seed)
    segs = parse_segmentations(args.segmentations) if args.segmentations else None
    fv, wf = build_factorization(vocab, segs)

    vocab_path = out_dir / "vocab.tsv"
    factors_path = out_dir / "factors.tsv"
    mu_path = out_dir / "mu.tsv"
    vocab.save(vocab_path)
    fv.save(factors_path)
    _save_mu(mu_path, vocab, fv, wf)

    inputs = [args.input] + ([args.segmentations] if args.segmentations else [])
    seconds = time.perf_counter() - started
    cfg = {"kappa": args.kappa, "cyrillic_filter": args.cyrillic_filter}
    for artifact in (vocab_path, factors_path, mu_path):
        write_sidecar(build_manifest("preprocess", cfg, inputs, args.seed,
                                     artifact, seconds), artifact)
    print(f"vocabulary: {len(vocab)} types ({int(vocab.counts.sum())} tokens), "
          f"{len(fv)} factors -> {out_dir}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    started = time.perf_counter()
    vocab = Vocabulary.load(args.vocab)
    num_classes = args.num_classes or default_num_classes(len(vocab))
    if args.method == "file":
        if not args.partition_file:
            raise UsageError("--partition-file is required with --method file")
        partition = load_partition(args.partition_file, vocab)
    elif args.method == "freq":
        partition = frequency_bin(vocab, num_classes)
    else:
        sents = [vocab.encode(s) for s in read_sentences(args.input)]
        bigrams = _bigram_counts(sents)
        partition = brown_cluster(bigrams, len(vocab), num_classes,
                                  max_iters=args.max_iters)
    partition.save(args.out, vocab)
    inputs = [args.vocab] + ([args.input] if args.method == "brown" else []) \
        + ([args.partition_file] if args.method == "file" else [])
    cfg = {"method": args.method, "num_classes": partition.num_classes,
           "max_iters": args.max_iters}
    write_sidecar(build_manifest("cluster", cfg, inputs, None, args.out,
                                 time.perf_counter() - started), args.out)
    print(f"partition: {partition.num_classes} classes -> {args.out}")
    return EXIT_OK


def _training_config(args) -> TrainingConfig:
    cfg = (TrainingConfig.from_file(args.config) if args.config else TrainingConfig())
    overrides: dict[str, str] = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    if args.variant:
        overrides["variant"] = args.variant
    if args.d is not None:
        overrides["d"] = str(args.d)
    if args.n is not None:
        overrides["n"] = str(args.n)
    if args.epochs is not None:
        overrides["max_epochs"] = str(args.epochs)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return cfg.with_overrides(overrides)


def cmd_train(args) -> int:
    started = time.perf_counter()
    tcfg = _training_config(args)
    mcfg = tcfg.model_config()
    vocab = Vocabulary.load(args.vocab)
    fv, wf = _load_factorization(vocab, args.factors, args.mu)
    partition = None
    if mcfg.class_based:
        if not args.classes:
            raise UsageError("class-factored variants require --classes")
        partition = load_partition(args.classes, vocab)

    train_ids = [vocab.encode(s) for s in read_sentences(args.train)]
    dev_ids = [vocab.encode(s) for s in read_sentences(args.dev)]
    train_arrays = ngram_arrays(train_ids, mcfg.n)
    dev_arrays = ngram_arrays(dev_ids, mcfg.n)

    params = init_params(mcfg, vocab, fv, wf, partition,
                         init_sigma=tcfg.init_sigma, seed=tcfg.seed)
    model = LanguageModel(mcfg, vocab, fv, wf, params, partition)
    result = train(model, train_arrays, dev_arrays, tcfg,
                   log_fn=lambda r: print(
                       f"epoch {r.epoch}  train_loss {r.train_loss:.4f}  "
                       f"dev_ppl {r.dev_ppl:.4f}  {r.seconds:.1f}s", file=sys.stderr))
    save_model(model, args.model_out)

    inputs = [args.train, args.dev, args.vocab]
    inputs += [p for p in (args.factors, args.mu, args.classes, args.config) if p]
    cfg_snapshot = {f: getattr(tcfg, f) for f in
                    ("d", "n", "variant", "minibatch_size", "step_size", "l2_lambda",
                     "nce_noise_k", "init_sigma", "adagrad_epsilon", "max_epochs",
                     "seed", "regularize_biases")}
    write_sidecar(build_manifest("train", cfg_snapshot, inputs, tcfg.seed,
                                 args.model_out, time.perf_counter() - started),
                  args.model_out)
    best = result.best_dev_ppl
    print(f"trained {mcfg.variant} (d={mcfg.d}, n={mcfg.n}); best dev ppl {best:.4f} "
          f"-> {args.model_out}")
    return EXIT_OK


def _report_jsonl(report: EvalReport) -> str:
    lines = [json.dumps({"group": "__total__", "ppl": report.total_ppl,
                         "share": 1.0, "count": report.token_count}, sort_keys=True)]
    for label, g in report.groups.items():
        lines.append(json.dumps({"group": label, "ppl": g.ppl, "share": g.share,
                                 "count": g.count}, sort_keys=True))
    return "\n".join(lines) + "\n"


def cmd_ppl(args) -> int:
    started = time.perf_counter()
    model = load_model(args.model)
    corpus = load_eval_corpus(args.test, model.vocab, model.config.n)
    if args.by_freq:
        counts = None
        if args.train_counts_from:
            counts = {}
            for sent in read_sentences(args.train_counts_from):
                for tok in sent:
                    tok = normalize_token(tok)
                    counts[tok] = counts.get(tok, 0) + 1
        report = ppl_by_frequency(model, corpus, counts)
    elif args.labels:
        labels = [lab for line in read_label_file(args.labels) for lab in line]
        report = ppl_by_label(model, corpus, labels)
    else:
        report = perplexity(model, corpus.contexts, corpus.targets)
    for line in report.lines():
        print(line)
    if args.json_out:
        Path(args.json_out).write_text(_report_jsonl(report), encoding="utf-8")
        inputs = [args.model, args.test] + ([args.labels] if args.labels else [])
        cfg = {"by_freq": args.by_freq, "labels": bool(args.labels)}
        write_sidecar(build_manifest("ppl", cfg, inputs, None, args.json_out,
                                     time.perf_counter() - started), args.json_out)
    return EXIT_OK


def cmd_sim(args) -> int:
    started = time.perf_counter()
    model = load_model(args.model)
    dataset = SimilarityDataset.load(args.pairs)
    segs = parse_segmentations(args.segmentations) if args.segmentations else None
    result = evaluate_similarity(model, dataset, segs, compose=not args.no_compose)
    rho_txt = f"{result.rho:.6f}" if result.rho_defined else "undefined"
    print(f"pairs {len(dataset.pairs)}  oov {result.oov_count}  "
          f"zero-vector {result.zero_vector_pairs}  spearman_rho {rho_txt}"
          + (f"  (x100: {100 * result.rho:.2f})" if result.rho_defined else ""))
    if args.json_out:
        payload = {
            "rho": result.rho if result.rho_defined else None,
            "oov_count": result.oov_count,
            "zero_vector_pairs": result.zero_vector_pairs,
            "pairs": [
                {"word1": w1, "word2": w2, "human": h, "model": s}
                for (w1, w2, h), s in zip(dataset.pairs, result.model_scores)
            ],
        }
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        inputs = [args.model, args.pairs] + ([args.segmentations] if args.segmentations else [])
        write_sidecar(build_manifest("sim", {"compose": not args.no_compose},
                                     inputs, None, args.json_out,
                                     time.perf_counter() - started), args.json_out)
    return EXIT_OK


def cmd_score(args) -> int:
    model = load_model(args.model)
    post_map = None
    if args.compose_oov_contexts:
        if not args.segmentations:
            raise UsageError("--compose-oov-contexts requires --segmentations")
        from .morphology import PostHocMap

        segs = parse_segmentations(args.segmentations)
        post_map = PostHocMap(model.factor_vocab, segs)
    querier = Querier(model, use_cache=True, context_post_map=post_map)
    stream = open(args.input, encoding="utf-8") if args.input else sys.stdin
    try:
        for line in stream:
            tokens = line.split()
            if not tokens:
                continue
            total = 0.0
            for tok, lp in querier.score_sentence(tokens):
                total += lp
                print(f"{tok}\t{lp!r}")
            print(f"#TOTAL\t{total!r}")
    finally:
        if args.input:
            stream.close()
    return EXIT_OK


def cmd_export(args) -> int:
    started = time.perf_counter()
    model = load_model(args.model)
    if args.table == "context":
        matrix = model.params.Q
    elif args.table == "target":
        matrix = model.params.R
    else:
        matrix = np.concatenate([model.params.Q, model.params.R], axis=1)
    export_vectors(args.out, model.vocab.types, matrix)
    write_sidecar(build_manifest("export", {"table": args.table}, [args.model], None,
                                 args.out, time.perf_counter() - started), args.out)
    print(f"exported {matrix.shape[0]} x {matrix.shape[1]} vectors -> {args.out}")
    return EXIT_OK


class UsageError(MlblError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlbl",
        description="Log-bilinear language models with additive morphological "
                    "word vectors and a class-factored softmax.")
    parser.add_argument("--version", action="version", version=f"mlbl {__version__}")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap internal thread counts (reductions stay ordered)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build vocabulary and factorization files")
    p.add_argument("--input", required=True, help="tokenized text, one sentence per line")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kappa", type=float, default=0.05,
                   help="singleton pruning rate (default 0.05; small corpora often use 0.2)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--segmentations", help="word<TAB>morph|label ... file")
    p.add_argument("--cyrillic-filter", action="store_true",
                   help="replace tokens with <80%% Cyrillic characters by <unk>")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("cluster", help="write a word-class partition")
    p.add_argument("--input", help="tokenized text (required for --method brown)")
    p.add_argument("--vocab", required=True)
    p.add_argument("--method", choices=["brown", "freq", "file"], default="brown")
    p.add_argument("--num-classes", type=int, default=None,
                   help="default: round(sqrt(|V|))")
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--partition-file", help="existing class_id<TAB>word file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--factors")
    p.add_argument("--mu")
    p.add_argument("--classes")
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a configuration key")
    p.add_argument("--variant", choices=sorted(
        ["lbl", "lbl+c", "lbl+o", "lbl++", "clbl", "clbl+c", "clbl+o", "clbl++"]))
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ppl", help="perplexity of a test set")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--by-freq", action="store_true",
                   help="group tokens by training-frequency decade")
    p.add_argument("--labels", help="per-token label file ('-' groups under Rest)")
    p.add_argument("--train-counts-from",
                   help="recount frequencies from this raw text for --by-freq")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_ppl)

    p = sub.add_parser("sim", help="word-pair similarity evaluation")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True, help="word1<TAB>word2<TAB>rating file")
    p.add_argument("--segmentations", help="compose OOV vectors using this table")
    p.add_argument("--no-compose", action="store_true",
                   help="use the UNK vector for every OOV word")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("score", help="per-token log probabilities of sentences")
    p.add_argument("--model", required=True)
    p.add_argument("--input", help="default: stdin")
    p.add_argument("--compose-oov-contexts", action="store_true",
                   help="compose vectors for unknown context words from known factors")
    p.add_argument("--segmentations")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("export", help="write word vectors as text")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--table", choices=["context", "target", "both"], default="both")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    if args.threads is not None:
        try:
            import numba

            numba.set_num_threads(max(1, args.threads))
        except ImportError:
            pass
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelFormatError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
