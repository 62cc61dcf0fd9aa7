"""Command-line entry point: ``polylm <subcommand> ...``.

Every subcommand prints a tab-separated report to stdout (and to
``--report FILE`` when given).  Usage errors and missing input files exit
with status 2, other failures with status 1; either way a single-line
diagnostic goes to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

from . import align
from .corpus import Corpus
from .model import extract_embeddings
from .projection import project
from .serialization import export_embeddings, import_embeddings, load_checkpoint
from .synthetic import cipher_corpora
from .trainer import TrainConfig, perplexity, train

log = logging.getLogger("polylm")


class UsageError(Exception):
    pass


@dataclass
class RunReport:
    subcommand: str
    seed: int | None = None
    config: dict = field(default_factory=dict)
    metrics: list[tuple[str, str, float]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def metric(self, name: str, key: str, value: float) -> None:
        self.metrics.append((name, key, value))

    def lines(self) -> list[str]:
        out = [f"subcommand\t{self.subcommand}"]
        if self.seed is not None:
            out.append(f"seed\t{self.seed}")
        out += [f"config\t{k}\t{v}" for k, v in self.config.items()]
        out += [f"metric\t{name}\t{key}\t{value:.6g}" for name, key, value in self.metrics]
        out += [f"time\t{k}\t{v:.3f}" for k, v in self.timings.items()]
        return out

    def emit(self, path: str | None) -> None:
        text = "\n".join(self.lines()) + "\n"
        sys.stdout.write(text)
        if path:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)


def _existing(path: str) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"no such file: {path}")
    return path


def _lang_path(spec: str) -> tuple[str, str]:
    lang, sep, path = spec.partition(":")
    if not sep or not lang or not path:
        raise UsageError(f"expected LANG:PATH, got {spec!r}")
    return lang, path


def _min_counts(values: Sequence[str], langs: Sequence[str]) -> dict[str, int]:
    """``--min-count 3`` applies to all; ``--min-count en:5`` overrides one language."""
    default, per_lang = 1, {}
    for v in values:
        lang, sep, n = v.rpartition(":")
        try:
            count = int(n)
        except ValueError:
            raise UsageError(f"bad --min-count {v!r}") from None
        if not sep:
            default = count
        elif lang in langs:
            per_lang[lang] = count
        else:
            raise UsageError(f"--min-count for unknown language {lang!r}")
    return {lang: per_lang.get(lang, default) for lang in langs}


def cmd_train(args) -> RunReport:
    pairs = [_lang_path(s) for s in args.lang]
    if len(pairs) < 2:
        raise UsageError("train needs at least two --lang LANG:PATH")
    langs = [l for l, _ in pairs]
    for _, path in pairs:
        _existing(path)
    min_counts = _min_counts(args.min_count, langs)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        clip=args.clip,
        dropout=args.dropout,
        dim=args.dim,
        seed=args.seed,
        eos_loss=not args.no_eos_loss,
        dtype="float64" if args.precision == 64 else "float32",
        checkpoint_dir=args.out,
        eval_every=args.eval_every,
        val_words=args.val_words,
        csls_k=args.csls_k,
    )
    report = RunReport("train", seed=args.seed, config={**asdict(config), "min_count": min_counts, "max_len": args.max_len})
    t0 = time.perf_counter()
    resume = load_checkpoint(_existing(args.resume), dtype=config.dtype) if args.resume else None
    corpora = []
    for lang, path in pairs:
        vocab = resume.params.vocabs[lang] if resume else None
        corpora.append(Corpus.from_file(lang, path, min_count=min_counts[lang], vocab=vocab, max_len=args.max_len))
        log.info("%s: %d sentences, vocabulary %d", lang, len(corpora[-1]), len(corpora[-1].vocab))
    report.timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    params, history = train(config, corpora, resume=resume)
    report.timings["train"] = time.perf_counter() - t0
    history.write(os.path.join(args.out, "history.tsv"))
    for rec in history.records:
        for lang, v in rec.train_loss.items():
            report.metric(f"epoch{rec.epoch}.train_loss", lang, v)
        for lang, v in rec.perplexity.items():
            report.metric(f"epoch{rec.epoch}.perplexity", lang, v)
        for (s, t), v in rec.validation.items():
            report.metric(f"epoch{rec.epoch}.validation", f"{s}-{t}", v)
        report.timings[f"epoch{rec.epoch}"] = rec.seconds
    for lang in langs:
        path = os.path.join(args.out, f"emb.{lang}.txt")
        export_embeddings(extract_embeddings(params, lang), path)
    return report


def cmd_export(args) -> RunReport:
    ckpt = load_checkpoint(_existing(args.ckpt))
    space = extract_embeddings(ckpt.params, args.lang)
    export_embeddings(space, args.out)
    report = RunReport("export-emb", seed=ckpt.seed, config={"ckpt": args.ckpt, "lang": args.lang, "out": args.out})
    report.metric("rows", args.lang, len(space))
    return report


def cmd_perplexity(args) -> RunReport:
    ckpt = load_checkpoint(_existing(args.ckpt), dtype="float64")
    ckpt.params.check_lang(args.lang)
    corpus = Corpus.from_file(args.lang, _existing(args.corpus), vocab=ckpt.params.vocabs[args.lang])
    report = RunReport("perplexity", seed=ckpt.seed, config={"ckpt": args.ckpt, "lang": args.lang, "corpus": args.corpus})
    report.metric("perplexity", args.lang, perplexity(ckpt.params, corpus, args.batch_size))
    return report


def cmd_eval_align(args) -> RunReport:
    src = import_embeddings(_existing(args.src_emb), "src")
    tgt = import_embeddings(_existing(args.tgt_emb), "tgt")
    task = align.load_dictionary(_existing(args.dict), src, tgt, max_pairs=args.max_pairs)
    ks = sorted(set(args.k or [1, 5]))
    report = RunReport("eval-align", config={"src_emb": args.src_emb, "tgt_emb": args.tgt_emb, "dict": args.dict, "csls_k": args.csls_k, "k": ks})
    report.metric("pairs", "retained", task.n_retained)
    report.metric("pairs", "dropped", task.n_dropped)
    report.metric("pairs", "source_words", len(task))
    if not len(task):
        raise UsageError(f"no dictionary pair of {args.dict} is covered by both vocabularies")
    for k, p in align.precision_at_k(task, src, tgt, align.CslsConfig(k=args.csls_k), ks).items():
        report.metric(f"p@{k}", "-", p)
    return report


def cmd_nn(args) -> RunReport:
    space = import_embeddings(_existing(args.emb), "src")
    other = import_embeddings(_existing(args.cross), "tgt") if args.cross else None
    if args.query not in space:
        raise UsageError(f"{args.query!r} is not in {args.emb}")
    report = RunReport("nn", config={"emb": args.emb, "query": args.query, "k": args.k, "cross": args.cross or "-"})
    for rank, (tok, score) in enumerate(align.nearest(space, args.query, args.k, other, args.csls_k), start=1):
        report.metric(f"rank{rank}", tok, score)
    return report


def cmd_project(args) -> RunReport:
    spaces = []
    for spec in args.emb:
        lang, path = _lang_path(spec) if ":" in spec else (os.path.basename(spec), spec)
        spaces.append(import_embeddings(_existing(path), lang))
    rows = project(spaces, args.n_points)
    lines = [f"{lang} {tok} {x:.6f} {y:.6f}" for lang, tok, x, y in rows]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        sys.stdout.write("\n".join(lines) + "\n")
    report = RunReport("project", config={"emb": args.emb, "n_points": args.n_points, "out": args.out or "-"})
    report.metric("points", "-", len(rows))
    return report


def cmd_synth(args) -> RunReport:
    langs = tuple(args.langs.split(","))
    cc = cipher_corpora(langs, args.sentences, args.vocab, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    for lang, sents in cc.sentences.items():
        with open(os.path.join(args.out, f"{lang}.txt"), "w", encoding="utf-8") as fh:
            fh.writelines(" ".join(s) + "\n" for s in sents)
    for src in langs:
        for tgt in langs:
            if src != tgt:
                with open(os.path.join(args.out, f"dict.{src}-{tgt}.txt"), "w", encoding="utf-8") as fh:
                    fh.writelines(f"{s} {t}\n" for s, t in sorted(cc.gold(src, tgt).items()))
    report = RunReport("synth", seed=args.seed, config={"langs": args.langs, "sentences": args.sentences, "vocab": args.vocab, "out": args.out})
    report.metric("files", "-", len(langs) + len(langs) * (len(langs) - 1))
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polylm", description="Multilingual LSTM language models for cross-lingual word embeddings.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_report(sp):
        sp.add_argument("--report", help="also write the report to this file")
        return sp

    t = with_report(sub.add_parser("train", help="train a shared model on two or more languages"))
    t.add_argument("--lang", action="append", required=True, metavar="LANG:PATH", help="corpus file, one sentence per line (repeat per language)")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=1.0)
    t.add_argument("--clip", type=float, default=5.0)
    t.add_argument("--dropout", type=float, default=0.3)
    t.add_argument("--dim", type=int, default=300, help="embedding and hidden size")
    t.add_argument("--min-count", action="append", default=[], metavar="N|LANG:N", help="vocabulary threshold (default 1)")
    t.add_argument("--max-len", type=int, default=None, help="truncate longer sentences")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output directory for checkpoints, history and embeddings")
    t.add_argument("--no-eos-loss", action="store_true", help="do not train the end-of-sentence predictions")
    t.add_argument("--eval-every", type=int, default=0, help="log the validation score every N updates")
    t.add_argument("--val-words", type=int, default=3000)
    t.add_argument("--csls-k", type=int, default=10)
    t.add_argument("--precision", type=int, choices=(32, 64), default=32)
    t.add_argument("--resume", help="continue from a checkpoint written by an earlier run")
    t.set_defaults(func=cmd_train)

    e = with_report(sub.add_parser("export-emb", help="write one language's embeddings as text"))
    e.add_argument("--ckpt", required=True)
    e.add_argument("--lang", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)

    pp = with_report(sub.add_parser("perplexity", help="perplexity of a checkpoint on a corpus"))
    pp.add_argument("--ckpt", required=True)
    pp.add_argument("--lang", required=True)
    pp.add_argument("--corpus", required=True)
    pp.add_argument("--batch-size", type=int, default=64)
    pp.set_defaults(func=cmd_perplexity)

    a = with_report(sub.add_parser("eval-align", help="precision@k word translation with CSLS"))
    a.add_argument("--src-emb", required=True)
    a.add_argument("--tgt-emb", required=True)
    a.add_argument("--dict", required=True)
    a.add_argument("--csls-k", type=int, default=10)
    a.add_argument("--k", type=int, action="append")
    a.add_argument("--max-pairs", type=int, default=None)
    a.set_defaults(func=cmd_eval_align)

    n = with_report(sub.add_parser("nn", help="nearest neighbours of a word"))
    n.add_argument("--emb", required=True)
    n.add_argument("--query", required=True)
    n.add_argument("--k", type=int, default=10)
    n.add_argument("--cross", help="search this other space by CSLS instead")
    n.add_argument("--csls-k", type=int, default=10)
    n.set_defaults(func=cmd_nn)

    pr = with_report(sub.add_parser("project", help="2-D PCA coordinates of frequent words"))
    pr.add_argument("--emb", action="append", required=True, metavar="LANG:PATH")
    pr.add_argument("--n-points", type=int, default=1000)
    pr.add_argument("--out", help="coordinate table path (default: stdout)")
    pr.set_defaults(func=cmd_project)

    s = with_report(sub.add_parser("synth", help="write synthetic cipher corpora and their gold dictionaries"))
    s.add_argument("--langs", default="a,b")
    s.add_argument("--sentences", type=int, default=2000)
    s.add_argument("--vocab", type=int, default=150)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        report = args.func(args)
    except UsageError as exc:
        print(f"polylm {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"polylm {args.command}: error: {msg}", file=sys.stderr)
        return 1
    report.emit(getattr(args, "report", None))
    return 0


if __name__ == "__main__":
    sys.exit(main())
