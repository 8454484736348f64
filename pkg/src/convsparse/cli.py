"""Command-line pipelines: synth, index, train, search, rerank-prep, eval.

Settings come from an optional TOML file (``--config``) with ``[paths]``,
``[pipeline]`` and ``[train]`` tables; command-line flags override it.
Relative paths in the file are resolved against the file's directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .context import (
    AnswerScope,
    EncoderSet,
    compose_query,
    flat_context_input,
    query_id,
    read_conversations,
    write_conversations,
)
from .encoder import (
    ToyEncoder,
    TrainConfig,
    load_params,
    precomputed_encoder,
    save_params,
    train,
)
from .index import InvertedIndex, read_corpus, write_corpus
from .metrics import read_qrels, read_run, standard_report, write_per_query, write_report, write_run
from .rerank import build_enriched_query, extract_keywords, sample_pairs, write_enriched, write_pairs
from .sparse import Vocabulary

log = logging.getLogger("convsparse")

VARIANTS = {"raw": "rawQuery", "flat": "flatContext", "dual": "dual"}
PATH_FIELDS = (
    "corpus", "conversations", "vocab", "index", "checkpoints", "run", "qrels",
    "report", "per_query", "enriched", "pairs", "figures", "precomputed", "output",
)


class CliError(Exception):
    pass


@dataclass
class PipelineConfig:
    paths: dict[str, Path | None] = field(default_factory=lambda: dict.fromkeys(PATH_FIELDS))
    scope: str = "last"
    variant: str = "dual"
    keywords: int = 10
    topk: int = 1000
    seed: int = 0
    pairs_per_query: int = 8
    include_missing: bool = False
    train: dict = field(default_factory=dict)

    def path(self, name: str, required: bool = True) -> Path | None:
        p = self.paths.get(name)
        if p is None and required:
            raise CliError(f"missing required path '{name}' (set it in [paths] or pass --{name.replace('_', '-')})")
        return p


def derive_seed(seed: int, label: str) -> int:
    """Independent per-component seed from the master seed and a fixed label."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        cfg_path = Path(args.config)
        with open(cfg_path, "rb") as f:
            raw = tomllib.load(f)
        base = cfg_path.parent
        for name, value in raw.get("paths", {}).items():
            if name not in PATH_FIELDS:
                raise CliError(f"unknown path key {name!r} in {cfg_path}")
            cfg.paths[name] = base / value
        for name, value in raw.get("pipeline", {}).items():
            if name not in {f.name for f in dataclasses.fields(PipelineConfig)} - {"paths", "train"}:
                raise CliError(f"unknown pipeline key {name!r} in {cfg_path}")
            setattr(cfg, name, value)
        cfg.train = dict(raw.get("train", {}))
        unknown = set(cfg.train) - set(TRAIN_KEYS)
        if unknown:
            raise CliError(f"unknown train keys {sorted(unknown)} in {cfg_path}")
    for name in PATH_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            cfg.paths[name] = Path(value)
    for name in ("scope", "variant", "keywords", "topk", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "include_missing", False):
        cfg.include_missing = True
    if cfg.variant not in VARIANTS:
        raise CliError(f"unknown variant {cfg.variant!r}")
    AnswerScope(cfg.scope)
    if cfg.topk < 1 or cfg.keywords < 0:
        raise CliError("--topk must be >= 1 and --keywords >= 0")
    return cfg


class Outputs:
    """Tracks files written by a command; removes them all if the command fails."""

    def __init__(self):
        self.written: list[Path] = []

    def add(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(path)
        return path

    def discard(self) -> None:
        for p in self.written:
            if p.is_file():
                p.unlink()


# -- shared loading -------------------------------------------------------------------

def _vocab(cfg: PipelineConfig) -> Vocabulary:
    return Vocabulary.load(cfg.path("vocab"))


def _checkpoint(cfg: PipelineConfig, name: str) -> Path:
    p = cfg.path("checkpoints") / f"{name}.ckpt"
    if not p.exists():
        raise CliError(f"checkpoint not found: {p}")
    return p


def _reference(cfg: PipelineConfig, vocab: Vocabulary):
    if cfg.paths.get("precomputed") is not None:
        return precomputed_encoder(cfg.path("precomputed"), vocab.size)
    return ToyEncoder(load_params(_checkpoint(cfg, "reference")), vocab)


def _query_builder(cfg: PipelineConfig, vocab: Vocabulary):
    reference = _reference(cfg, vocab)
    if cfg.variant == "raw":
        return lambda conv, n: reference.encode(conv.turn(n).query)
    if cfg.variant == "flat":
        flat = ToyEncoder(load_params(_checkpoint(cfg, "flat")), vocab)
        return lambda conv, n: flat.encode(flat_context_input(conv, n))
    encoders = EncoderSet(
        ToyEncoder(load_params(_checkpoint(cfg, "queries")), vocab),
        ToyEncoder(load_params(_checkpoint(cfg, "answers")), vocab),
        reference,
    )
    scope = AnswerScope(cfg.scope)
    return lambda conv, n: compose_query(conv, n, scope, encoders)


# -- commands ---------------------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig, out: Outputs) -> None:
    """Write the synthetic suite (vocab, corpus, conversations, qrels, reference checkpoint)."""
    from .synthetic import make_suite

    root = cfg.path("output")
    suite = make_suite(seed=derive_seed(cfg.seed, "synth") % 2**32)
    suite.vocab.save(out.add(root / "vocab.txt"))
    write_corpus(out.add(root / "corpus.jsonl"), suite.corpus)
    write_conversations(out.add(root / "train.jsonl"), suite.train)
    write_conversations(out.add(root / "test.jsonl"), suite.test)
    with open(out.add(root / "qrels.txt"), "w", encoding="utf-8") as f:
        for qid in sorted(suite.qrels):
            for doc, rel in sorted(suite.qrels[qid].items()):
                f.write(f"{qid} 0 {doc} {rel}\n")
    save_params(out.add(root / "checkpoints" / "reference.ckpt"), suite.reference)
    print(f"wrote synthetic suite to {root}: {len(suite.train)} train / {len(suite.test)} test "
          f"conversations, {len(suite.corpus)} documents")


def cmd_index(cfg: PipelineConfig, out: Outputs) -> None:
    vocab = _vocab(cfg)
    docs = read_corpus(cfg.path("corpus"), vocab.size)
    index = InvertedIndex.build(docs, dim=vocab.size)
    index.save(out.add(cfg.path("index")))
    print(f"indexed {index.doc_count} documents ({index.nnz} postings)")


def cmd_train(cfg: PipelineConfig, out: Outputs) -> None:
    if cfg.variant == "raw":
        raise CliError("the raw variant has nothing to train")
    vocab = _vocab(cfg)
    convs = read_conversations(cfg.path("conversations"))
    for conv in convs:
        for n, t in enumerate(conv.turns, 1):
            if t.gold is None:
                raise CliError(f"conversation {conv.id!r}: turn {n} lacks a gold query")
    init = load_params(_checkpoint(cfg, "reference"))
    reference = _reference(cfg, vocab)
    tc = TrainConfig(scope=AnswerScope(cfg.scope), variant=cfg.variant,
                     seed=derive_seed(cfg.seed, "train") % 2**32, **cfg.train)
    result = train(convs, tc, init, reference, vocab)

    ckpt = cfg.path("checkpoints")
    if cfg.variant == "flat":
        save_params(out.add(ckpt / "flat.ckpt"), result.queries)
    else:
        save_params(out.add(ckpt / "queries.ckpt"), result.queries)
        save_params(out.add(ckpt / "answers.ckpt"), result.answers)
    with open(out.add(ckpt / f"{cfg.variant}_loss_trace.tsv"), "w", encoding="utf-8") as f:
        f.write("step\tloss\n")
        for i, v in enumerate(result.step_losses, 1):
            f.write(f"{i}\t{v:.9g}\n")
    if cfg.paths.get("figures") is not None:
        from .plots import plot_loss_trace

        plot_loss_trace(result.step_losses, out.add(cfg.path("figures") / f"{cfg.variant}_loss_trace.png"),
                        result.initial_loss, result.final_loss)
    if result.initial_loss is None:
        print("no training turns; parameters unchanged")
    else:
        print(f"trained {cfg.variant} on {len(result.step_losses)} batches: "
              f"mean loss {result.initial_loss:.6g} -> {result.final_loss:.6g}")


def cmd_search(cfg: PipelineConfig, out: Outputs) -> None:
    vocab = _vocab(cfg)
    index_path = cfg.path("index")
    if not index_path.exists():
        raise CliError(f"index not found: {index_path}")
    index = InvertedIndex.load(index_path)
    convs = read_conversations(cfg.path("conversations"))
    build = _query_builder(cfg, vocab)
    run = {}
    for conv in convs:
        for n in range(1, len(conv) + 1):
            hits = index.retrieve(build(conv, n), cfg.topk)
            run[query_id(conv, n)] = [(h.doc_id, h.score) for h in hits]
    write_run(out.add(cfg.path("run")), run, VARIANTS[cfg.variant])
    print(f"wrote {len(run)} queries to {cfg.path('run')}")


def cmd_rerank_prep(cfg: PipelineConfig, out: Outputs) -> None:
    vocab = _vocab(cfg)
    convs = read_conversations(cfg.path("conversations"))
    run = read_run(cfg.path("run"))
    build = _query_builder(cfg, vocab)
    prompts, pairs, short = [], [], 0
    for conv in convs:
        for n in range(1, len(conv) + 1):
            qid = query_id(conv, n)
            words = extract_keywords(build(conv, n), conv, n, cfg.keywords, vocab)
            prompts.append((qid, build_enriched_query(conv, n, words, cfg.keywords)))
            docs = [d for d, _ in run.get(qid, [])]
            if len(docs) < 4:
                short += 1
                continue
            seed = derive_seed(cfg.seed, f"pairs:{qid}")
            pairs += [(qid, p) for p in sample_pairs(docs, cfg.pairs_per_query, seed)]
    write_enriched(out.add(cfg.path("enriched")), prompts)
    write_pairs(out.add(cfg.path("pairs")), pairs)
    if short:
        log.warning("%d queries had fewer than 4 retrieved documents; no pairs sampled", short)
    print(f"wrote {len(prompts)} prompts and {len(pairs)} pairs")


def cmd_eval(cfg: PipelineConfig, out: Outputs) -> None:
    qrels_path = cfg.path("qrels")
    if not qrels_path.exists():
        raise CliError(f"qrels not found: {qrels_path}")
    results = standard_report(read_run(cfg.path("run")), read_qrels(qrels_path), cfg.topk,
                              cfg.include_missing)
    if results[0].skipped:
        log.warning("%d run queries have no qrels and were skipped", results[0].skipped)
    report = cfg.paths.get("report")
    if report is None:
        write_report(sys.stdout, results)
    else:
        write_report(out.add(report), results)
    if cfg.paths.get("per_query") is not None:
        write_per_query(out.add(cfg.path("per_query")), results)
    if cfg.paths.get("figures") is not None:
        from .plots import plot_metrics

        run_path = cfg.path("run")
        plot_metrics(results, out.add(cfg.path("figures") / f"{run_path.stem}_metrics.png"), title=run_path.name)


COMMANDS = {
    "synth": cmd_synth,
    "index": cmd_index,
    "train": cmd_train,
    "search": cmd_search,
    "rerank-prep": cmd_rerank_prep,
    "eval": cmd_eval,
}

HELP = {
    "synth": "write the synthetic conversational suite to --output",
    "index": "build an inverted index from a JSONL corpus",
    "train": "train the dual (or flat) query encoders",
    "search": "retrieve top-k documents for every conversation turn",
    "rerank-prep": "export keyword-enriched prompts and sampled document pairs",
    "eval": "score a TREC run against qrels",
}
TRAIN_KEYS = ("batch_size", "lr_queries", "lr_answers", "epochs", "max_tokens")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--variant", choices=sorted(VARIANTS))
    common.add_argument("--scope", choices=[s.value for s in AnswerScope])
    common.add_argument("--keywords", type=int, metavar="K")
    common.add_argument("--topk", type=int, metavar="N")
    common.add_argument("--include-missing", action="store_true",
                        help="score qrels queries absent from the run as 0")
    for name in PATH_FIELDS:
        common.add_argument(f"--{name.replace('_', '-')}", dest=name, metavar="PATH")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="convsparse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Outputs()
    try:
        cfg = load_config(args)
        COMMANDS[args.command](cfg, out)
    except (CliError, ValueError, KeyError, OSError) as exc:
        out.discard()
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
