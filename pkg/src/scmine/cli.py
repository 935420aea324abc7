"""Command-line pipeline: fetch, ingest, extract, train, predict, cluster,
topics, embed2d, compare-modes, replay.

Every command writes its outputs atomically and leaves a run manifest
(``<out>.manifest.json``) next to its primary output; ``replay`` re-runs a
manifest and must reproduce the outputs byte for byte.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .cluster import cluster_topics, elbow_sweep, kmeans
from .corpus import (Corpus, CorpusError, SplitSpec, consolidate_labels, dump_jsonl,
                     filter_short_comments, load_directory, load_jsonl, stratified_split)
from .embed import TsneConfig, truncated_svd, tsne
from .extract import FeatureMode, render_all
from .features import ANALYZERS, TfidfVectorizer, Vocabulary
from .fetch import EtherscanClient, FetchConfig, FetchError, records_to_jsonl
from .io import atomic_write_text, csv_text, emit_scatter_svg, read_csv
from .linmodel import DEFAULT_LAMBDA, MODEL_ALIASES, OneVsRestClassifier
from .metrics import (EVAL_HEADER, WILCOXON_HEADER, compare_modes, cross_validate,
                      evaluate_scores, hypothesis_table, select_lambda, vectorizer_for)

logger = logging.getLogger("scmine")

MODEL_FORMAT = "scmine-ovr/1"


class PipelineError(Exception):
    pass


# -- helpers -----------------------------------------------------------------

def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _sha256_dir(path) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(path).rglob("*.sol")):
        h.update(str(p.relative_to(path)).encode("utf-8") + b"\0")
        h.update(_sha256_file(p).encode("ascii"))
    return h.hexdigest()


class Run:
    """Collects outputs of one command and writes its manifest."""

    INPUT_ARGS = ("corpus", "jsonl", "dir", "model", "clusters", "addresses")
    OUTPUT_ARGS = ("out", "report", "elbow", "freq_report", "svg", "table", "errors")

    def __init__(self, args: argparse.Namespace, argv: Sequence[str]):
        self.args = args
        self.argv = list(argv)
        self.outputs: List[str] = []

    def write(self, path, text: str) -> None:
        atomic_write_text(path, text)
        self.outputs.append(str(path))

    def finish(self) -> None:
        inputs = {}
        for name in self.INPUT_ARGS:
            value = getattr(self.args, name, None)
            if not value:
                continue
            p = Path(value)
            if p.is_dir():
                inputs[str(value)] = _sha256_dir(p)
            elif p.is_file():
                inputs[str(value)] = _sha256_file(p)
        config = {k: v for k, v in sorted(vars(self.args).items()) if k != "func"}
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "cwd": os.getcwd(),
            "config": config,
            "inputs": inputs,
            "tool_version": __version__,
            "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "outputs": self.outputs,
        }
        atomic_write_text(manifest_path(self.args.out),
                          json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _load_labeled(path, top_k: int) -> Corpus:
    corpus = load_jsonl(path)
    if not len(corpus):
        raise CorpusError("no documents")
    if any(d.label is None for d in corpus):
        raise CorpusError("every document needs a label for this command")
    consolidated, _ = consolidate_labels(corpus, top_k)
    return consolidated


def _parse_lambda(value: str):
    if value == "grid":
        return value
    try:
        lam = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError("lambda must be a number or 'grid'") from None
    if lam < 0:
        raise argparse.ArgumentTypeError("lambda must be >= 0")
    return lam


def _mode(value: str) -> str:
    try:
        return FeatureMode.parse(value).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _modes(value: str) -> List[str]:
    return [_mode(v) for v in value.split(",") if v.strip()]


def _tokens_for(mode: str, texts: Sequence[str]) -> List[List[str]]:
    analyzer = ANALYZERS["text" if FeatureMode.parse(mode).is_text else "code"]
    return [analyzer(t) for t in texts]


# -- commands ----------------------------------------------------------------

def cmd_fetch(args, run: Run) -> int:
    lines = Path(args.addresses).read_text(encoding="utf-8").splitlines()
    addresses = [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    config = FetchConfig.from_env(base_url=args.base_url, rate_limit=args.rate_limit,
                                  timeout=args.timeout, cache_dir=args.cache_dir,
                                  max_retries=args.max_retries)
    if not config.api_key:
        logger.warning("no API key in the environment; requests may be throttled")
    client = EtherscanClient(config)
    records, errors = client.fetch_batch(addresses, max_workers=args.jobs)
    run.write(args.out, records_to_jsonl(records))
    if args.errors:
        run.write(args.errors, csv_text(("address", "error"),
                                        [(a, str(e)) for a, e in errors.items()]))
    print(f"fetched {len(records)} of {len(addresses)} addresses; {len(errors)} errors",
          file=sys.stderr)
    return 0


def cmd_ingest(args, run: Run) -> int:
    if args.dir:
        corpus = load_directory(args.dir, labels_from_dirs=args.labels_from_dirs)
    else:
        corpus = load_jsonl(args.jsonl)
    if not len(corpus):
        raise CorpusError("no documents")
    run.write(args.out, dump_jsonl(corpus))
    print(f"ingested {len(corpus)} documents", file=sys.stderr)
    return 0


def cmd_extract(args, run: Run) -> int:
    corpus = load_jsonl(args.corpus)
    texts = render_all(corpus.sources, args.mode)
    lines = []
    for doc, text in zip(corpus, texts):
        row = {"address": doc.address, "label": doc.label, "mode": args.mode, "text": text}
        lines.append(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    run.write(args.out, "".join(lines))
    return 0


def _model_document(vec: TfidfVectorizer, clf: OneVsRestClassifier, args, lam,
                    kept: List[str]) -> dict:
    vocab: Vocabulary = vec.vocabulary_
    return {
        "format": MODEL_FORMAT,
        "mode": args.mode,
        "model": args.model,
        "analyzer": vec.analyzer,
        "min_df": vec.min_df,
        "vocabulary": vocab.to_json(),
        "classifier": clf.to_json(vocab.fingerprint()),
        "kept_labels": kept,
        "lambda": lam,
        "seed": args.seed,
        "test_fraction": args.test_fraction,
        "folds": args.folds,
    }


def cmd_train(args, run: Run) -> int:
    corpus = _load_labeled(args.corpus, args.top_k)
    train_c, test_c = stratified_split(corpus, SplitSpec(args.test_fraction, args.folds, args.seed))
    texts_train = render_all(train_c.sources, args.mode)
    texts_test = render_all(test_c.sources, args.mode)
    labels_train = train_c.labels
    penalty = MODEL_ALIASES[args.model]
    common = dict(min_df_code=args.min_df_code, min_df_text=args.min_df_text)

    lam = args.lam
    if lam == "grid":
        lam, scores = select_lambda(texts_train, labels_train, args.mode, penalty=penalty,
                                    folds=args.folds, seed=args.seed, n_jobs=args.jobs, **common)
        print("lambda grid (mean CV macro AUC): "
              + ", ".join(f"{k:g}={v:.4f}" for k, v in scores.items())
              + f"; chose {lam:g}", file=sys.stderr)
    elif lam is None:
        lam = DEFAULT_LAMBDA[penalty]

    reports = cross_validate(texts_train, labels_train, args.mode, folds=args.folds,
                             seed=args.seed, penalty=penalty, lam=lam, n_jobs=args.jobs,
                             model_name=args.model, **common)
    vec = vectorizer_for(args.mode, args.min_df_code, args.min_df_text)
    X = vec.fit_transform(texts_train)
    clf = OneVsRestClassifier(penalty=penalty, lam=lam, other_threshold=args.threshold,
                              n_jobs=args.jobs).fit(X, labels_train)
    test_report = evaluate_scores(clf.predict_proba(vec.transform(texts_test)), test_c.labels,
                                  list(clf.classes_), mode=args.mode, model=args.model,
                                  seed=args.seed, fold="test")
    reports.append(test_report)

    kept = list(clf.classes_)
    run.write(args.out, json.dumps(_model_document(vec, clf, args, lam, kept),
                                   indent=1, sort_keys=True) + "\n")
    if args.report:
        run.write(args.report, csv_text(EVAL_HEADER, [r for rep in reports for r in rep.rows()]))
    for c in test_report.classes:
        print(f"test {c}: AUC={test_report.auc[c]:.4f} AP={test_report.ap[c]:.4f}")
    return 0


def load_model(path):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != MODEL_FORMAT:
        raise PipelineError(f"{path}: not a {MODEL_FORMAT} model file")
    vocab = Vocabulary.from_json(data["vocabulary"])
    clf_data = data["classifier"]
    if clf_data.get("vocabulary_fingerprint") != vocab.fingerprint():
        raise PipelineError(f"{path}: vocabulary fingerprint mismatch")
    vec = TfidfVectorizer(analyzer=data["analyzer"], min_df=data["min_df"])
    vec.vocabulary_ = vocab
    return data, vec, OneVsRestClassifier.from_json(clf_data)


def cmd_predict(args, run: Run) -> int:
    data, vec, clf = load_model(args.model)
    if args.threshold is not None:
        clf.other_threshold = args.threshold
    corpus = load_jsonl(args.corpus)
    if not len(corpus):
        raise CorpusError("no documents")
    scores = clf.predict_proba(vec.transform(render_all(corpus.sources, data["mode"])))
    predicted = clf.assign(scores)
    classes = [str(c) for c in clf.classes_]
    header = ["doc_id", "address", "label", "predicted"] + [f"score_{c}" for c in classes]
    rows = [[i, doc.address, doc.label or "", predicted[i]] + [float(s) for s in scores[i]]
            for i, doc in enumerate(corpus)]
    run.write(args.out, csv_text(header, rows))
    if args.freq_report:
        counts = Counter(predicted)
        for c in classes + [clf.other_label]:
            counts.setdefault(c, 0)
        n = len(corpus)
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        run.write(args.freq_report, csv_text(("category", "count", "relative"),
                                             [(c, k, k / n) for c, k in ordered]))
    return 0


def _vectorize_mode(corpus: Corpus, mode: str, min_df: int):
    texts = render_all(corpus.sources, mode)
    analyzer = "text" if FeatureMode.parse(mode).is_text else "code"
    return texts, TfidfVectorizer(analyzer=analyzer, min_df=min_df).fit_transform(texts)


def cmd_cluster(args, run: Run) -> int:
    corpus = load_jsonl(args.corpus)
    doc_ids = list(range(len(corpus)))
    if FeatureMode.parse(args.mode).is_text and not args.keep_short:
        filtered = filter_short_comments(corpus.documents)
        doc_ids = list(filtered.retained_indices)
        print(f"excluded {filtered.excluded} documents ({filtered.excluded_fraction:.1%}) "
              f"with short or missing comments", file=sys.stderr)
        corpus = Corpus(filtered.retained)
    n = len(corpus)
    if n < 3:
        raise CorpusError(f"need at least 3 documents to cluster, have {n}")
    _, X = _vectorize_mode(corpus, args.mode, args.min_df)
    dims = min(args.dims, min(X.shape))
    Z = truncated_svd(X, dims, seed=args.seed).projection
    k_max = min(args.k_max, n)
    curve = elbow_sweep(Z, args.k_min, k_max, seed=args.seed, n_init=args.n_init)
    k = args.k or curve.suggested_k
    result = kmeans(Z, k, seed=args.seed, n_init=args.n_init)
    run.write(args.out, csv_text(("doc_id", "cluster"),
                                 [(d, int(c)) for d, c in zip(doc_ids, result.assignments)]))
    if args.elbow:
        run.write(args.elbow, csv_text(("k", "db_score", "suggested"),
                                       [(kk, s, int(kk == curve.suggested_k))
                                        for kk, s in zip(curve.ks, curve.scores)]))
    print(f"suggested k={curve.suggested_k}; clustered with k={k}", file=sys.stderr)
    return 0


def _read_clusters(path) -> Dict[int, int]:
    rows = read_csv(path)
    try:
        return {int(r["doc_id"]): int(r["cluster"]) for r in rows}
    except (KeyError, ValueError):
        raise PipelineError(f"{path}: expected columns doc_id,cluster") from None


def cmd_topics(args, run: Run) -> int:
    corpus = load_jsonl(args.corpus)
    clusters = _read_clusters(args.clusters)
    if any(d < 0 or d >= len(corpus) for d in clusters):
        raise PipelineError("cluster file refers to documents outside the corpus")
    ids = sorted(clusters)
    texts = render_all([corpus[i].source for i in ids], args.mode)
    topics = cluster_topics([clusters[i] for i in ids], _tokens_for(args.mode, texts), args.top)
    rows = [(c, rank, term, weight)
            for c, terms in topics.items()
            for rank, (term, weight) in enumerate(terms, start=1)]
    run.write(args.out, csv_text(("cluster", "rank", "term", "weight"), rows))
    return 0


def cmd_embed2d(args, run: Run) -> int:
    corpus = load_jsonl(args.corpus)
    if len(corpus) < 2:
        raise CorpusError("need at least 2 documents to embed")
    _, X = _vectorize_mode(corpus, args.mode, args.min_df)
    config = TsneConfig(perplexity=args.perplexity, n_iter=args.iters, learning_rate=args.lr,
                        seed=args.seed, early_exaggeration=args.exaggeration)
    result = tsne(X, config)
    clusters = _read_clusters(args.clusters) if args.clusters else {}
    Y = result.embedding
    rows = [(i, float(Y[i, 0]), float(Y[i, 1]),
             clusters.get(i, ""), corpus[i].label or "") for i in range(len(corpus))]
    run.write(args.out, csv_text(("id", "x", "y", "cluster", "label"), rows))
    if args.svg:
        cats = [str(clusters.get(i, "")) if clusters else (corpus[i].label or "")
                for i in range(len(corpus))]
        emit_scatter_svg(Y, cats, args.svg)
        run.outputs.append(str(args.svg))
    print(f"KL divergence {result.kl_trace[0]:.4f} -> {result.kl_trace[-1]:.4f}", file=sys.stderr)
    return 0


def cmd_compare_modes(args, run: Run) -> int:
    corpus = _load_labeled(args.corpus, args.top_k)
    seeds = list(range(args.seed_base, args.seed_base + args.seeds))
    lam = None if args.lam is None else float(args.lam)
    report = compare_modes(corpus, args.modes, seeds=seeds, folds=args.folds,
                           penalty=MODEL_ALIASES[args.model], lam=lam,
                           min_df_code=args.min_df_code, min_df_text=args.min_df_text,
                           n_jobs=args.jobs)
    run.write(args.out, csv_text(WILCOXON_HEADER, report.test_rows()))
    if args.report:
        run.write(args.report, csv_text(EVAL_HEADER,
                                        [r for rep in report.reports for r in rep.rows()]))
    table = hypothesis_table(report)
    if args.table:
        run.write(args.table, csv_text(("mode_a", "mode_b", "metric", "h0", "p", "rejected"),
                                       [(r["mode_a"], r["mode_b"], r["metric"], r["h0"], r["p"],
                                         int(r["rejected"])) for r in table]))
    for m in report.modes:
        print(f"{m}: mean AUC={np.mean(report.auc[m]):.4f} mean AP={np.mean(report.ap[m]):.4f} "
              f"(n={len(report.auc[m])})")
    return 0


def cmd_replay(args, run: Optional[Run]) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    argv = manifest["argv"]
    if argv and argv[0] == "replay":
        raise PipelineError("refusing to replay a replay manifest")
    previous = os.getcwd()
    os.chdir(manifest.get("cwd", previous))
    try:
        return main(argv)
    finally:
        os.chdir(previous)


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scmine", description="Mine Solidity smart-contract sources.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fetch", help="download verified sources into a corpus JSONL")
    p.add_argument("--addresses", required=True, help="file with one address per line")
    p.add_argument("--out", required=True)
    p.add_argument("--errors", help="CSV of per-address failures")
    p.add_argument("--base-url", default="https://api.etherscan.io/api")
    p.add_argument("--cache-dir", default=".scmine-cache")
    p.add_argument("--rate-limit", type=float, default=5.0, help="requests per second")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("ingest", help="build a corpus JSONL from .sol files or JSONL")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dir")
    src.add_argument("--jsonl")
    p.add_argument("--labels-from-dirs", action="store_true",
                   help="label each file by its parent directory name")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("extract", help="render one feature view per document")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", type=_mode, required=True, help="fc|oc|ocom|ef")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    def add_vectorizer_flags(p):
        p.add_argument("--min-df-code", type=int, default=2)
        p.add_argument("--min-df-text", type=int, default=1)

    p = sub.add_parser("train", help="train and evaluate a one-vs-rest classifier")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", type=_mode, default="fc")
    p.add_argument("--model", choices=sorted(MODEL_ALIASES), default="ridge")
    p.add_argument("--lambda", dest="lam", type=_parse_lambda, default=None,
                   help="regularization strength or 'grid' (default: 1.0 ridge/svm, 0.01 lasso)")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--top-k", type=int, default=5, help="labels kept before folding into 'other'")
    p.add_argument("--threshold", type=float, default=0.5, help="'other' threshold stored in the model")
    p.add_argument("--jobs", type=int, default=1)
    add_vectorizer_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label a corpus with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--freq-report")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cluster", help="k-means over an SVD embedding with an elbow sweep")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", type=_mode, default="ocom")
    p.add_argument("--dims", type=int, default=5)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=20)
    p.add_argument("--k", type=int, default=None, help="override the suggested k")
    p.add_argument("--n-init", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-df", type=int, default=1)
    p.add_argument("--keep-short", action="store_true",
                   help="keep documents with short comments (comment mode only)")
    p.add_argument("--out", required=True)
    p.add_argument("--elbow")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("topics", help="top c-TF-IDF terms per cluster")
    p.add_argument("--clusters", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", type=_mode, default="ocom")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("embed2d", help="2-D t-SNE coordinates (and optional SVG)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", type=_mode, default="fc")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--lr", type=float, default=200.0)
    p.add_argument("--exaggeration", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-df", type=int, default=1)
    p.add_argument("--clusters", help="clusters.csv to attach and color by")
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.set_defaults(func=cmd_embed2d)

    p = sub.add_parser("compare-modes", help="Wilcoxon comparison of feature modes")
    p.add_argument("--corpus", required=True)
    p.add_argument("--modes", type=_modes, default=["fc", "oc", "ocom", "ef"])
    p.add_argument("--seeds", type=int, default=14)
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--model", choices=sorted(MODEL_ALIASES), default="ridge")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    add_vectorizer_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--table")
    p.set_defaults(func=cmd_compare_modes)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "replay":
        try:
            return cmd_replay(args, None)
        except (OSError, ValueError, KeyError, PipelineError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    run = Run(args, [a for a in argv if a not in ("-v", "--verbose")])
    try:
        code = args.func(args, run)
        run.finish()
        return code
    except (CorpusError, FetchError, PipelineError, OSError, ValueError, KeyError,
            RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
