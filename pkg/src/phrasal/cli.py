"""Operator CLI: one subcommand per pipeline stage plus the HTTP service.

Every run writes a manifest (subcommand, resolved configuration, paths,
seed, version, per-stage timings) next to its primary output, atomically.
Config precedence for training: CLI flag > config file > built-in default.
The PHRASAL_THREADS environment variable caps torch worker threads.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path

from . import __version__
from . import index as index_mod
from .aligner import (
    EMConfig,
    align_corpus,
    read_pharaoh,
    write_pharaoh,
)
from .corpus import (
    LoadStats,
    Vocabulary,
    build_vocab,
    load_monolingual,
    load_parallel,
    load_parallel_two_file,
)
from .encoder import (
    EncoderConfig,
    PhraseEncoder,
    UNK_TOKEN,
    load_checkpoint,
    save_checkpoint,
)
from .extract import ExtractionConfig, apply_filters, enumerate_consistent, phrase_pair_rows
from .pipeline import (
    PromptConfig,
    build_prompt,
    eval_acc_at_1,
    index_sentences,
    load_gold,
    result_to_json,
    retrieve,
    validate_gold,
)
from .segmenter import SegmentConfig, segment, segment_rows
from .service import SearchService, serve_forever
from .trainer import TrainConfig, train
from .util import atomic_write_json, env_thread_cap, write_jsonl


def version_string() -> str:
    root = Path(__file__).resolve().parents[2]
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=root, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"phrasal-{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"phrasal-{__version__}"


class Manifest:
    """Collects run metadata; written atomically at run end."""

    def __init__(self, subcommand: str, args: argparse.Namespace) -> None:
        self.subcommand = subcommand
        self.config = {
            k: v for k, v in vars(args).items() if k not in ("func",)
        }
        self.timings: dict[str, float] = {}
        self.outputs: list[str] = []
        self.extra: dict = {}
        self._started = time.time()
        self._t0 = time.perf_counter()

    def stage(self, name: str) -> "._Stage":
        return _Stage(self, name)

    def write(self, path: str | None) -> None:
        if not path:
            return
        payload = {
            "subcommand": self.subcommand,
            "version": version_string(),
            "config": self.config,
            "outputs": self.outputs,
            "seed": self.config.get("seed"),
            "timings_s": self.timings,
            "started_unix": round(self._started, 3),
            "wall_s": round(time.perf_counter() - self._t0, 3),
            **self.extra,
        }
        atomic_write_json(path, payload)


class _Stage:
    def __init__(self, manifest: Manifest, name: str) -> None:
        self.manifest = manifest
        self.name = name

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.timings[self.name] = round(
            time.perf_counter() - self._t0, 4
        )
        return False


def _default_manifest_path(primary_output: str | None) -> str | None:
    if primary_output is None:
        return None
    if os.path.isdir(primary_output) or primary_output.endswith(os.sep):
        return os.path.join(primary_output, "run_manifest.json")
    return primary_output + ".manifest.json"


def _load_pairs(args, stats: LoadStats | None = None):
    if args.bitext:
        return list(load_parallel(args.bitext, args.lowercase, stats))
    if not (args.src_file and args.tgt_file):
        raise SystemExit("either --bitext or --src-file/--tgt-file is required")
    return list(
        load_parallel_two_file(
            args.src_file, args.tgt_file, args.src_lang, args.tgt_lang,
            args.lowercase, stats,
        )
    )


def _add_bitext_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bitext", help="parallel JSONL file")
    p.add_argument("--src-file", help="two-file format: source side")
    p.add_argument("--tgt-file", help="two-file format: target side")
    p.add_argument("--src-lang", default="src")
    p.add_argument("--tgt-lang", default="tgt")
    p.add_argument("--lowercase", action="store_true")


def _model_dir_load(path: str) -> tuple[PhraseEncoder, Vocabulary]:
    model = load_checkpoint(os.path.join(path, "model.ckpt"))
    with open(os.path.join(path, "vocab.json"), encoding="utf-8") as fh:
        vocab = Vocabulary.from_json(json.load(fh))
    return model, vocab


def _model_dir_save(path: str, model: PhraseEncoder, vocab: Vocabulary) -> None:
    os.makedirs(path, exist_ok=True)
    save_checkpoint(model, os.path.join(path, "model.ckpt"))
    atomic_write_json(os.path.join(path, "vocab.json"), vocab.to_json())


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def cmd_align(args) -> int:
    manifest = Manifest("align", args)
    with manifest.stage("load"):
        stats = LoadStats()
        pairs = _load_pairs(args, stats)
    cfg = EMConfig(
        iterations=args.iters, epsilon=args.epsilon, use_null=not args.no_null
    )
    lls: list[float] = []
    with manifest.stage("align"):
        alignments = align_corpus(pairs, cfg, args.heuristic, lls)
    with manifest.stage("write"):
        write_pharaoh(alignments, args.out)
        manifest.outputs.append(args.out)
        if args.table_out:
            fwd_table = None
            # re-train forward table for the dump (cheap at desk scale)
            from .aligner import train_model1

            fwd_table = train_model1(pairs, cfg)
            write_jsonl(args.table_out, fwd_table.dump_rows())
            manifest.outputs.append(args.table_out)
    for it, ll in enumerate(lls, 1):
        print(f"iteration {it}: log-likelihood {ll:.6f}")
    manifest.extra["log_likelihoods"] = lls
    manifest.extra["pairs"] = len(pairs)
    manifest.extra["skipped_lines"] = stats.skipped
    manifest.write(args.manifest or _default_manifest_path(args.out))
    return 0


def cmd_extract(args) -> int:
    manifest = Manifest("extract", args)
    with manifest.stage("load"):
        pairs = _load_pairs(args)
        alignments = read_pharaoh(args.alignments, pairs)
    ext_cfg = ExtractionConfig(
        max_phrase_len=args.max_phrase_len,
        boundary_freq_threshold=args.boundary_freq_threshold,
        drop_numeric_punct=not args.keep_numeric_punct,
        strict_all_aligned=args.strict_all_aligned,
    )
    with manifest.stage("vocab"):
        vocab_x = build_vocab(p.x for p in pairs)
        vocab_y = build_vocab(p.y for p in pairs)
    total = 0
    with manifest.stage("extract"), open(args.out, "w", encoding="utf-8") as out:
        for pair, align in zip(pairs, alignments):
            found = enumerate_consistent(
                pair, align, ext_cfg.max_phrase_len, ext_cfg.strict_all_aligned
            )
            kept = apply_filters(found, vocab_x, vocab_y, ext_cfg)
            for row in phrase_pair_rows(kept, pair.id):
                out.write(json.dumps(row, ensure_ascii=False) + "\n")
            total += len(kept)
    manifest.outputs.append(args.out)
    manifest.extra["phrase_pairs"] = total
    manifest.write(args.manifest or _default_manifest_path(args.out))
    print(f"extracted {total} phrase pairs from {len(pairs)} sentence pairs")
    return 0


def _train_config(args) -> TrainConfig:
    base: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    overrides = {
        "learning_rate": args.lr,
        "dropout": args.dropout,
        "batch_size": args.batch_size,
        "steps": args.steps,
        "beta": args.beta,
        "max_pairs_per_sentence": args.max_pairs_per_sentence,
        "temperature": args.temperature,
        "seed": args.seed,
    }
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    return TrainConfig(**base)


def cmd_train(args) -> int:
    manifest = Manifest("train", args)
    with manifest.stage("load"):
        pairs = _load_pairs(args)
    cfg = _train_config(args)
    with manifest.stage("align"):
        if args.alignments:
            alignments = read_pharaoh(args.alignments, pairs)
        else:
            alignments = align_corpus(pairs, EMConfig(iterations=args.iters))
    with manifest.stage("extract"):
        vocab_x = build_vocab(p.x for p in pairs)
        vocab_y = build_vocab(p.y for p in pairs)
        ext_cfg = ExtractionConfig(
            max_phrase_len=args.max_phrase_len,
            boundary_freq_threshold=args.boundary_freq_threshold,
        )
        extracted = {}
        for pair, align in zip(pairs, alignments):
            found = enumerate_consistent(pair, align, ext_cfg.max_phrase_len)
            extracted[pair.id] = apply_filters(found, vocab_x, vocab_y, ext_cfg)
    with manifest.stage("train"):
        vocab = build_vocab(
            [p.x for p in pairs] + [p.y for p in pairs], specials=(UNK_TOKEN,)
        )
        enc_cfg = EncoderConfig(
            vocab_size=len(vocab), d=args.d, layers=args.layers,
            heads=args.heads, o=args.o, dropout=cfg.dropout,
            max_positions=args.max_positions,
        )
        model = PhraseEncoder(enc_cfg, seed=cfg.seed)
        metrics = train(
            pairs, extracted, vocab, model, cfg,
            metrics_path=args.metrics,
            max_phrase_len=args.max_phrase_len,
            log_every=args.log_every,
        )
    with manifest.stage("save"):
        _model_dir_save(args.out, model, vocab)
    manifest.outputs.append(args.out)
    if args.metrics:
        manifest.outputs.append(args.metrics)
    if metrics:
        manifest.extra["final_metrics"] = metrics[-1]
    manifest.write(
        args.manifest or os.path.join(args.out, "run_manifest.json")
    )
    print(f"trained {cfg.steps} steps; model saved to {args.out}")
    return 0


def cmd_segment(args) -> int:
    manifest = Manifest("segment", args)
    with manifest.stage("load"):
        model, vocab = _model_dir_load(args.model)
        sentences = list(
            load_monolingual(args.input, args.lang, args.lowercase)
        )
    count = 0
    with manifest.stage("segment"), open(args.out, "w", encoding="utf-8") as out:
        for sentence in sentences:
            scored = segment(
                sentence, model, vocab, args.threshold, args.max_span_len
            )
            for row in segment_rows(sentence, scored):
                out.write(json.dumps(row, ensure_ascii=False) + "\n")
            count += len(scored)
    manifest.outputs.append(args.out)
    manifest.extra["spans"] = count
    manifest.write(args.manifest or _default_manifest_path(args.out))
    print(f"kept {count} spans over {len(sentences)} sentences")
    return 0


def cmd_build_index(args) -> int:
    manifest = Manifest("build-index", args)
    with manifest.stage("load"):
        model, vocab = _model_dir_load(args.model)
        sentences = list(
            load_monolingual(args.input, args.lang, args.lowercase)
        )
    seg_cfg = SegmentConfig(
        index_threshold=args.threshold, max_span_len=args.max_span_len
    )
    with manifest.stage("encode"):
        entries = index_sentences(
            sentences, model, vocab, seg_cfg, ngram=args.ngram
        )
        idx = index_mod.build(entries)
    with manifest.stage("write"):
        index_mod.save(idx, args.out)
    manifest.outputs.append(args.out)
    manifest.extra["entries"] = len(idx)
    manifest.write(
        args.manifest or os.path.join(args.out, "run_manifest.json")
    )
    print(f"indexed {len(idx)} phrases from {len(sentences)} sentences")
    return 0


def cmd_search(args) -> int:
    manifest = Manifest("search", args)
    with manifest.stage("load"):
        model, vocab = _model_dir_load(args.model)
        idx = index_mod.load(args.index)
        sentences = list(
            load_monolingual(args.input, args.lang, args.lowercase)
        )
    seg_cfg = SegmentConfig(
        query_threshold=args.query_threshold, max_span_len=args.max_span_len
    )
    with manifest.stage("search"), open(args.out, "w", encoding="utf-8") as out:
        for sentence in sentences:
            results = retrieve(sentence, model, vocab, idx, seg_cfg, args.k)
            row = {
                "sent_id": sentence.id,
                "text": sentence.text,
                "results": [result_to_json(r) for r in results],
            }
            out.write(json.dumps(row, ensure_ascii=False) + "\n")
    manifest.outputs.append(args.out)
    manifest.write(args.manifest or _default_manifest_path(args.out))
    print(f"searched {len(sentences)} sentences against {len(idx)} entries")
    return 0


def cmd_prompt(args) -> int:
    manifest = Manifest("prompt", args)
    with manifest.stage("load"):
        model, vocab = _model_dir_load(args.model)
        idx = index_mod.load(args.index)
        sentences = list(
            load_monolingual(args.input, args.lang, args.lowercase)
        )
    seg_cfg = SegmentConfig(
        query_threshold=args.query_threshold, max_span_len=args.max_span_len
    )
    prompt_cfg = PromptConfig(
        src_display=args.src_name,
        tgt_display=args.tgt_name,
        max_context_chars=args.max_context_chars,
        max_phrases=args.max_phrases,
        mark_source_phrases=args.mark_source,
    )
    with manifest.stage("prompt"), open(args.out, "w", encoding="utf-8") as out:
        for pos, sentence in enumerate(sentences):
            results = retrieve(sentence, model, vocab, idx, seg_cfg, args.k)
            if pos:
                out.write(args.delimiter + "\n")
            out.write(build_prompt(sentence, results, prompt_cfg))
    manifest.outputs.append(args.out)
    manifest.write(args.manifest or _default_manifest_path(args.out))
    print(f"wrote {len(sentences)} prompts to {args.out}")
    return 0


def cmd_eval(args) -> int:
    manifest = Manifest("eval", args)
    with manifest.stage("load"):
        model, vocab = _model_dir_load(args.model)
        idx = index_mod.load(args.index)
        gold = load_gold(args.gold, args.lowercase)
    if args.require_resolvable:
        validate_gold(gold, idx)
    with manifest.stage("eval"):
        acc = eval_acc_at_1(gold, model, vocab, idx, lenient=args.lenient)
    manifest.extra["acc_at_1"] = acc
    manifest.extra["gold_size"] = len(gold)
    manifest.write(args.manifest)
    print(f"acc@1={acc:.4f}")
    return 0


def cmd_serve(args) -> int:
    manifest = Manifest("serve", args)
    with manifest.stage("load"):
        model, vocab = _model_dir_load(args.model)
        idx = index_mod.load(args.index)
    service = SearchService(
        model, vocab, idx,
        SegmentConfig(
            query_threshold=args.query_threshold, max_span_len=args.max_span_len
        ),
        language=args.lang,
        lowercase=args.lowercase,
    )
    manifest.extra["entries"] = len(idx)
    manifest.write(args.manifest)
    serve_forever(service, args.host, args.port)
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phrasal",
        description="cross-lingual contextualized phrase retrieval pipeline",
    )
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("align", help="train Model 1 both ways and symmetrize")
    _add_bitext_flags(p)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--no-null", action="store_true")
    p.add_argument(
        "--heuristic",
        choices=["intersection", "union", "grow-diag-final-and"],
        default="grow-diag-final-and",
    )
    p.add_argument("--out", required=True, help="Pharaoh output path")
    p.add_argument("--table-out", help="optional translation-table JSONL dump")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("extract", help="extract consistent phrase pairs")
    _add_bitext_flags(p)
    p.add_argument("--alignments", required=True, help="Pharaoh file")
    p.add_argument("--out", required=True, help="phrase-pair JSONL output")
    p.add_argument("--max-phrase-len", type=int, default=8)
    p.add_argument("--boundary-freq-threshold", type=int, default=30_000)
    p.add_argument("--keep-numeric-punct", action="store_true")
    p.add_argument("--strict-all-aligned", action="store_true")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the phrase encoder")
    _add_bitext_flags(p)
    p.add_argument("--alignments", help="Pharaoh file (default: align internally)")
    p.add_argument("--iters", type=int, default=5, help="EM iterations when aligning internally")
    p.add_argument("--out", required=True, help="model directory")
    p.add_argument("--config", help="JSON file with training config fields")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-pairs-per-sentence", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--o", type=int, default=32)
    p.add_argument("--max-positions", type=int, default=128)
    p.add_argument("--max-phrase-len", type=int, default=8)
    p.add_argument("--boundary-freq-threshold", type=int, default=30_000)
    p.add_argument("--metrics", help="per-step metrics JSONL path")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="score and dump spans of sentences")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="one sentence per line")
    p.add_argument("--lang", default="und")
    p.add_argument("--threshold", type=float, default=0.7)
    p.add_argument("--max-span-len", type=int, default=8)
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("build-index", help="segment, encode, and index")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="monolingual target text")
    p.add_argument("--lang", default="und")
    p.add_argument("--threshold", type=float, default=0.7)
    p.add_argument("--max-span-len", type=int, default=8)
    p.add_argument("--ngram", type=int, help="index all n-grams instead of learned segmentation")
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--out", required=True, help="index directory")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("search", help="retrieve top-k phrases per sentence")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--lang", default="und")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--query-threshold", type=float, default=0.9)
    p.add_argument("--max-span-len", type=int, default=8)
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("prompt", help="build translation prompts")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--lang", default="und")
    p.add_argument("--src-name", required=True, help="display name of the source language")
    p.add_argument("--tgt-name", required=True, help="display name of the target language")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--max-context-chars", type=int, default=100)
    p.add_argument("--max-phrases", type=int, default=8)
    p.add_argument("--query-threshold", type=float, default=0.9)
    p.add_argument("--max-span-len", type=int, default=8)
    p.add_argument("--mark-source", action="store_true")
    p.add_argument("--delimiter", default="=" * 32)
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("eval", help="gold-set retrieval accuracy")
    p.add_argument("--gold", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--lenient", action="store_true", help="match by phrase string")
    p.add_argument("--require-resolvable", action="store_true")
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="JSON-over-HTTP search service")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--lang", default="und")
    p.add_argument("--query-threshold", type=float, default=0.9)
    p.add_argument("--max-span-len", type=int, default=8)
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_serve)

    return parser


def run(argv: list[str]) -> int:
    cap = env_thread_cap()
    if cap is not None:
        import torch

        torch.set_num_threads(cap)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
