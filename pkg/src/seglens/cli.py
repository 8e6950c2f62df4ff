"""Command-line entry point.

Subcommands expose every analysis and the training harness; each run
writes its declared CSV/SVG/JSON artifacts atomically into the output
directory together with a ``manifest.json`` recording flags, seeds,
versions, and content hashes.

Exit codes: 0 on success, 1 on domain errors (bad data, mismatched
inputs), 2 on usage errors (unknown or conflicting flags, missing files).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, align, corpus as corpus_mod, figures, morph, runio, scorer, similarity, stats, tagger
from .errors import SeglensError
from .wordpiece import WordPieceTokenizer, ingest_external_tokenization, load_vocab, word_pieces

logger = logging.getLogger(__name__)


def _atomic(write_fn, path):
    """Run a path-taking writer against a temp file, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _int_list(text: str):
    try:
        return tuple(int(x) for x in text.split(",") if x != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _int_pair(text: str):
    parts = _int_list(text)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LEAD,TRAIL, got {text!r}")
    return parts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seglens",
        description="Tokenization-effect analyses and a joint entity/relation "
                    "tagger over frozen embeddings.",
    )
    parser.add_argument("--version", action="version", version=f"seglens {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--out", required=True, metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, default=42, help="seed recorded with the run")

    p = sub.add_parser("stats", help="sentence/entity/word tokenization length report")
    p.add_argument("--corpus", required=True, metavar="FILE")
    p.add_argument("--vocab", metavar="FILE", help="one-subword-per-line vocabulary")
    p.add_argument("--external-tok", metavar="FILE", help="externally produced tokenization")
    p.add_argument("--casing", choices=["cased", "uncased"], default="cased")
    p.add_argument("--tokenizer-name", default=None, help="label for the report rows")
    p.add_argument("--occurrences", action="store_true",
                   help="weight by occurrences instead of unique surfaces/words")
    common(p)
    p.set_defaults(func=_cmd_stats, paths=["corpus", "vocab", "external_tok"])

    p = sub.add_parser("morph", help="character n-gram frequency profile per entity type")
    p.add_argument("--corpus", required=True, metavar="FILE")
    p.add_argument("--n", type=int, default=4, help="substring length in characters")
    p.add_argument("--k", type=int, default=25, help="ranked n-grams kept per type")
    p.add_argument("--thresholds", type=_int_list, default=(40, 30, 20, 10))
    p.add_argument("--top-out", type=int, default=50,
                   help="size of the out-of-entity exclusion list")
    p.add_argument("--casing", choices=["cased", "uncased"], default="uncased",
                   help="casing used when collecting unique words")
    p.add_argument("--no-lowercase", action="store_true",
                   help="keep case when extracting substrings")
    p.add_argument("--once-per-word", action="store_true",
                   help="count a repeated substring once per word")
    common(p)
    p.set_defaults(func=_cmd_morph, paths=["corpus"])

    p = sub.add_parser("sim", help="entity boundary-word similarity analysis")
    p.add_argument("--corpus", required=True, metavar="FILE")
    p.add_argument("--embeddings", required=True, metavar="PATH",
                   help="word-level embedding file (JSON-lines) or binary directory")
    p.add_argument("--folds", required=True, metavar="FILE", help="fold plan (folds.json)")
    p.add_argument("--mode", choices=["pairwise", "centroid"], default="pairwise")
    common(p)
    p.set_defaults(func=_cmd_sim, paths=["corpus", "embeddings", "folds"])

    p = sub.add_parser("score", help="strict NER/RE evaluation of prediction files")
    p.add_argument("--gold", required=True, metavar="FILE")
    p.add_argument("--pred", required=True, action="append", metavar="FILE",
                   help="prediction file; repeat for one file per fold")
    p.add_argument("--folds", metavar="FILE",
                   help="fold plan; restricts the i-th prediction file to fold i's test set")
    p.add_argument("--fold", type=int, default=None,
                   help="with --folds and one prediction file: score that fold only")
    common(p)
    p.set_defaults(func=_cmd_score, paths=["gold", "folds"])

    p = sub.add_parser("ttest", help="Welch or paired t-test between two score files")
    p.add_argument("--a", required=True, metavar="FILE", help="JSON array of scores")
    p.add_argument("--b", required=True, metavar="FILE", help="JSON array of scores")
    p.add_argument("--paired", action="store_true")
    common(p)
    p.set_defaults(func=_cmd_ttest, paths=["a", "b"])

    p = sub.add_parser("folds", help="build a cross-validation fold plan")
    p.add_argument("--corpus", required=True, metavar="FILE")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--dev-fraction", type=float, default=0.15)
    p.add_argument("--external", nargs="+", metavar="FILE",
                   help="verbatim test partitions, one index-array file per fold")
    common(p)
    p.set_defaults(func=_cmd_folds, paths=["corpus"])

    def tagging_inputs(p, checkpoint=False):
        p.add_argument("--corpus", required=True, metavar="FILE")
        p.add_argument("--embeddings", required=True, metavar="PATH")
        p.add_argument("--vocab", metavar="FILE",
                       help="vocabulary used to align subword-level embeddings")
        p.add_argument("--external-tok", metavar="FILE")
        p.add_argument("--casing", choices=["cased", "uncased"], default="cased")
        p.add_argument("--specials", type=_int_pair, default=(0, 0), metavar="LEAD,TRAIL",
                       help="special-token rows around each sentence's subword block")
        p.add_argument("--folds", metavar="FILE")
        p.add_argument("--fold", type=int, default=0, help="fold index within --folds")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, metavar="FILE")

    p = sub.add_parser("train", help="train the joint tagger over frozen embeddings")
    tagging_inputs(p)
    p.add_argument("--config", required=True, metavar="FILE",
                   help="JSON object mirroring the tagger configuration")
    common(p)
    p.set_defaults(func=_cmd_train, paths=["corpus", "embeddings", "config", "vocab",
                                           "external_tok", "folds"])

    p = sub.add_parser("decode", help="predict entities/relations with a trained checkpoint")
    tagging_inputs(p, checkpoint=True)
    common(p)
    p.set_defaults(func=_cmd_decode, paths=["corpus", "embeddings", "checkpoint", "vocab",
                                            "external_tok", "folds"])

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    tagging_inputs(p)
    p.add_argument("--config", metavar="FILE", help="JSON tagger configuration")
    p.add_argument("--sample", type=int, default=2, help="sentences in the probe batch")
    p.add_argument("--n-coords", type=int, default=200)
    p.add_argument("--step", type=float, default=1e-4)
    common(p)
    p.set_defaults(func=_cmd_gradcheck, paths=["corpus", "embeddings", "config", "vocab",
                                               "external_tok", "folds"])
    return parser


def parse_args(argv) -> argparse.Namespace:
    """Parse and validate a command line into a run plan.

    Referenced input paths must exist and the output directory must be
    creatable; violations are usage errors.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    for attr in getattr(args, "paths", ()):
        value = getattr(args, attr, None)
        if value is None:
            continue
        values = value if isinstance(value, list) else [value]
        for v in values:
            if not Path(v).exists():
                parser.error(f"--{attr.replace('_', '-')}: path {v} does not exist")
    if getattr(args, "external", None):
        for v in args.external:
            if not Path(v).exists():
                parser.error(f"--external: path {v} does not exist")
    if getattr(args, "vocab", None) and getattr(args, "external_tok", None):
        parser.error("--vocab and --external-tok cannot be combined")
    if args.subcommand == "stats" and not (args.vocab or args.external_tok):
        parser.error("stats needs either --vocab or --external-tok")
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        parser.error(f"--out: cannot create directory {args.out}: {exc}")
    return args


def _tokenization_from_args(args, loaded_corpus):
    if args.vocab:
        return WordPieceTokenizer(load_vocab(args.vocab), args.casing)
    if args.external_tok:
        return ingest_external_tokenization(args.external_tok, loaded_corpus)
    return None


def _load_embeddings(path):
    path = Path(path)
    if path.is_dir():
        return align.load_embeddings_binary(path)
    return align.load_embeddings_jsonl(path)


def _alignments_from_args(args, loaded_corpus, table):
    """Per-sentence alignments when the embedding table is subword-level."""
    if table.level != align.SUBWORD:
        return None
    tokenization = _tokenization_from_args(args, loaded_corpus)
    if tokenization is None:
        raise SeglensError(
            "subword-level embeddings need --vocab or --external-tok to build alignments"
        )
    lead, trail = args.specials
    alignments = {}
    for sent in loaded_corpus.sentences:
        if sent.id in table.vectors:
            pieces = word_pieces(tokenization, sent)
            alignments[sent.id] = align.build_alignment(sent.words, pieces, (lead, trail))
    return alignments


def _fold_ids(args, loaded_corpus):
    """(train_ids, dev_ids, test_ids) from --folds/--fold, or whole-corpus defaults."""
    if args.folds:
        plan = corpus_mod.load_fold_plan(args.folds)
        if not 0 <= args.fold < len(plan.folds):
            raise SeglensError(f"fold {args.fold} outside the plan's 0..{len(plan.folds) - 1}")
        fold = plan.folds[args.fold]
        return list(fold.train_ids), list(fold.dev_ids), list(fold.test_ids)
    ids = [s.id for s in loaded_corpus.sentences]
    return ids, [], ids


# ---------------------------------------------------------------------------
# Subcommand implementations.  Each returns the list of output file names.


def _cmd_stats(args):
    loaded = corpus_mod.load_corpus(args.corpus)
    tokenization = _tokenization_from_args(args, loaded)
    name = args.tokenizer_name or (Path(args.vocab).stem if args.vocab else "external")
    unique = not args.occurrences

    rows = []
    sent_row = stats.sentence_stats(loaded, tokenization)
    rows.append({"tokenizer": name, "population": sent_row.population,
                 "mean_before": sent_row.mean_before, "mean_after": sent_row.mean_after,
                 "pct_increase": sent_row.pct_increase})
    for label in corpus_mod.ENTITY_LABELS:
        report, word_mean = stats.entity_stats(loaded, tokenization, label,
                                               args.casing, unique=unique)
        rows.append({"tokenizer": name, "population": report.population,
                     "mean_before": report.mean_before, "mean_after": report.mean_after,
                     "pct_increase": report.pct_increase, "word_mean": word_mean})
    rows.append({"tokenizer": name, "population": corpus_mod.OUT,
                 "word_mean": stats.out_word_stats(loaded, tokenization, args.casing)})

    _atomic(lambda p: stats.write_stats_csv(rows, p), Path(args.out) / "stats.csv")
    return ["stats.csv"]


def _slug(label: str) -> str:
    return "".join(ch.lower() if ch.isalnum() else "_" for ch in label).strip("_")


def _cmd_morph(args):
    loaded = corpus_mod.load_corpus(args.corpus)
    index = corpus_mod.entity_word_index(loaded, args.casing)
    lowercase = not args.no_lowercase
    table = morph.ngram_frequency_table(index, args.n, lowercase=lowercase,
                                        keep_repeats=not args.once_per_word)
    exclusion = morph.build_exclusion_list(index[corpus_mod.OUT], args.n,
                                           args.top_out, lowercase=lowercase)
    reports = morph.top_k_and_thresholds(table, exclusion, args.k, args.thresholds,
                                         labels=list(corpus_mod.ENTITY_LABELS))
    out = Path(args.out)
    outputs = ["ngrams.csv", "thresholds.csv"]
    _atomic(lambda p: morph.write_ngram_csv(reports, p), out / "ngrams.csv")
    _atomic(lambda p: morph.write_threshold_csv(reports, p), out / "thresholds.csv")
    for label, report in sorted(reports.items()):
        name = f"{_slug(label)}_ngrams.svg"
        svg = figures.render_ngram_bars(report.entries, f"{label}: top {args.k} {args.n}-grams")
        runio.atomic_write_bytes(out / name, svg)
        outputs.append(name)
    return outputs


def _cmd_sim(args):
    loaded = corpus_mod.load_corpus(args.corpus)
    plan = corpus_mod.load_fold_plan(args.folds)
    table = _load_embeddings(args.embeddings)
    report = similarity.compute_similarity_report(
        loaded, plan, table, mode=args.mode, workers=runio.worker_count()
    )
    _atomic(lambda p: similarity.write_similarity_csv(report, p),
            Path(args.out) / "similarity.csv")
    return ["similarity.csv"]


def _cmd_score(args):
    gold = corpus_mod.load_corpus(args.gold)
    plan = corpus_mod.load_fold_plan(args.folds) if args.folds else None
    single_fold = None
    if args.fold is not None:
        if plan is None:
            raise SeglensError("--fold needs --folds")
        if len(args.pred) != 1:
            raise SeglensError("--fold scores exactly one prediction file")
        if not 0 <= args.fold < len(plan.folds):
            raise SeglensError(f"fold {args.fold} outside the plan's 0..{len(plan.folds) - 1}")
        single_fold = args.fold
    elif plan is not None and len(args.pred) != len(plan.folds):
        raise SeglensError(
            f"{len(args.pred)} prediction file(s) for {len(plan.folds)} folds"
        )
    rows, ner_f1s, re_f1s = [], [], []
    for f, pred_path in enumerate(args.pred):
        pred = scorer.load_predictions(pred_path, gold)
        if plan is None:
            ids = None
        elif single_fold is not None:
            ids = list(plan.folds[single_fold].test_ids)
        else:
            ids = list(plan.folds[f].test_ids)
        ner = scorer.score_ner(gold, pred, ids)
        re_ = scorer.score_re(gold, pred, ids)
        ner_f1s.append(ner.f1)
        re_f1s.append(re_.f1)
        rows.append({"task": "NER", "fold": f, "precision": ner.precision,
                     "recall": ner.recall, "f1": ner.f1})
        rows.append({"task": "RE", "fold": f, "precision": re_.precision,
                     "recall": re_.recall, "f1": re_.f1})
    ner_sum = scorer.fold_summary(ner_f1s)
    re_sum = scorer.fold_summary(re_f1s)
    rows.append({"task": "NER", "fold": "mean", "f1": ner_sum.mean, "std": ner_sum.std})
    rows.append({"task": "RE", "fold": "mean", "f1": re_sum.mean, "std": re_sum.std})
    out = Path(args.out)
    _atomic(lambda p: scorer.write_score_csv(rows, p), out / "scores.csv")
    table_text = scorer.format_score_table(ner_sum, re_sum, len(args.pred))
    runio.atomic_write_text(out / "scores.txt", table_text)
    return ["scores.csv", "scores.txt"]


def _read_score_list(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list) or not all(isinstance(x, (int, float)) for x in data):
        raise SeglensError(f"{path}: expected a JSON array of numbers")
    return [float(x) for x in data]


def _cmd_ttest(args):
    result = scorer.welch_ttest(_read_score_list(args.a), _read_score_list(args.b),
                                paired=args.paired)
    payload = {
        "t": result.t,
        "df": result.df,
        "p": result.p,
        "significant_at_0.05": result.significant,
        "paired": result.paired,
    }
    runio.atomic_write_text(Path(args.out) / "ttest.json",
                            json.dumps(payload, indent=1) + "\n")
    return ["ttest.json"]


def _cmd_folds(args):
    loaded = corpus_mod.load_corpus(args.corpus)
    plan = corpus_mod.make_folds(loaded, k=args.k, dev_fraction=args.dev_fraction,
                                 seed=args.seed, external=args.external)
    _atomic(lambda p: corpus_mod.save_fold_plan(plan, p), Path(args.out) / "folds.json")
    return ["folds.json"]


def _cmd_train(args):
    loaded = corpus_mod.load_corpus(args.corpus)
    with open(args.config, encoding="utf-8") as fh:
        config = tagger.TaggerConfig.from_dict(json.load(fh))
    if "--seed" in (getattr(args, "raw_argv", None) or []):
        config = tagger.TaggerConfig.from_dict({**config.to_dict(), "seed": args.seed})
    table = _load_embeddings(args.embeddings)
    alignments = _alignments_from_args(args, loaded, table)
    train_ids, dev_ids, _ = _fold_ids(args, loaded)
    result = tagger.train(loaded, table, config, train_ids, dev_ids, alignments)
    out = Path(args.out)
    _atomic(lambda p: tagger.save_checkpoint(p, result.params, config), out / "checkpoint.bin")
    _atomic(lambda p: tagger.write_training_log(result.log, p), out / "train_log.jsonl")
    runio.atomic_write_bytes(out / "training_curve.svg",
                             figures.render_training_curve(result.log))
    extra = {
        "aggregation": config.aggregation,
        "relation_pairing": "entity start words",
        "effective_seed": config.seed,
        "best_epoch": result.best_epoch,
    }
    return ["checkpoint.bin", "train_log.jsonl", "training_curve.svg"], extra


def _cmd_decode(args):
    loaded = corpus_mod.load_corpus(args.corpus)
    params, config = tagger.load_checkpoint(args.checkpoint)
    table = _load_embeddings(args.embeddings)
    alignments = _alignments_from_args(args, loaded, table)
    _, _, test_ids = _fold_ids(args, loaded)
    pred = tagger.decode_corpus(params, table, loaded, config, test_ids, alignments)
    records = []
    for sid in test_ids:
        sent = loaded[sid]
        got = pred.by_id[sid]
        records.append({
            "tokens": list(sent.words),
            "entities": [{"type": e.label, "start": e.start, "end": e.end}
                         for e in got.entities],
            "relations": [{"type": r.label, "head": r.head, "tail": r.tail}
                          for r in got.relations],
            "orig_id": sid,
        })
    runio.atomic_write_text(Path(args.out) / "predictions.json",
                            json.dumps(records, indent=1) + "\n")
    return ["predictions.json"]


def _cmd_gradcheck(args):
    loaded = corpus_mod.load_corpus(args.corpus)
    table = _load_embeddings(args.embeddings)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            config = tagger.TaggerConfig.from_dict(json.load(fh))
    else:
        # default the aggregation to whatever the table supports
        mode = "none" if table.level == align.WORD else "sum"
        config = tagger.TaggerConfig(aggregation=mode)
    alignments = _alignments_from_args(args, loaded, table)
    train_ids, _, _ = _fold_ids(args, loaded)
    ids = train_ids[:max(1, args.sample)]
    params = tagger.init_params(config, table.dim, np.random.default_rng(args.seed))
    err = tagger.grad_check(params, loaded, table, config, ids, alignments,
                            n_coords=args.n_coords, step=args.step, seed=args.seed)
    payload = {
        "max_rel_error": err,
        "n_coords": args.n_coords,
        "step": args.step,
        "sentences": ids,
        "passed": bool(err < 1e-4),
    }
    runio.atomic_write_text(Path(args.out) / "gradcheck.json",
                            json.dumps(payload, indent=1) + "\n")
    return ["gradcheck.json"]


def _input_paths(args):
    paths = []
    for attr in getattr(args, "paths", ()):
        value = getattr(args, attr, None)
        if value is None:
            continue
        for v in value if isinstance(value, list) else [value]:
            if Path(v).is_dir():
                paths.extend(str(p) for p in sorted(Path(v).glob("*")) if p.is_file())
            else:
                paths.append(str(v))
    for v in getattr(args, "external", None) or []:
        paths.append(str(v))
    return paths


def execute(args, argv) -> int:
    """Run a validated plan: write artifacts, then the run manifest."""
    result = args.func(args)
    outputs, extra = result if isinstance(result, tuple) else (result, None)
    runio.write_manifest(args.out, args.subcommand, argv, _input_paths(args),
                         outputs, seed=args.seed, extra=extra)
    return 0


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    args.raw_argv = list(argv)
    try:
        return execute(args, argv)
    except SeglensError as exc:
        print(f"seglens {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
