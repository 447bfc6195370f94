"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error. Every
run that writes an artifact also writes a sidecar manifest
(<output>.manifest.json) recording seeds, endpoints, config hashes, and
output digests, so any file can be traced to the run that produced it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import tomli

from . import core, chunker, contrastive, datagen, evaluation, feedback as fb, gateway, index as ix
from .manifest import RunManifest, manifest_path_for
from .util import ordered_parallel_map, sha256_file


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # spec'd exit codes: usage problems are validation errors (1), not 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


_METRIC_ALIASES = {
    "em": fb.METRIC_EXACT_MATCH,
    "exact_match": fb.METRIC_EXACT_MATCH,
    "f1": fb.METRIC_TOKEN_F1,
    "token_f1": fb.METRIC_TOKEN_F1,
    "acc": fb.METRIC_MC_ACCURACY,
    "mc": fb.METRIC_MC_ACCURACY,
    "mc_accuracy": fb.METRIC_MC_ACCURACY,
}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as f:
        return tomli.load(f)


def _make_generator(args):
    if getattr(args, "scripted", None):
        return gateway.ScriptedGenerator.from_file(args.scripted)
    if getattr(args, "gen_endpoint", None):
        return gateway.HTTPBackendClient(args.gen_endpoint)
    raise ValidationError("a generator is required: pass --scripted FILE or --gen-endpoint URL")


def _make_embedder(args, dim: int):
    if getattr(args, "endpoint", None):
        return gateway.HTTPBackendClient(args.endpoint, dim=dim,
                                         max_concurrency=getattr(args, "jobs", 1))
    return gateway.ReferenceEmbedder(dim=dim)


def _chunk_map(path: str) -> dict:
    return {c.id: c for c in core.read_chunks(path)}


def _write_manifest(out_path: str, manifest: RunManifest, outputs: list[str]) -> None:
    for p in outputs:
        manifest.outputs[p] = sha256_file(p)
    manifest.finish().write(manifest_path_for(out_path))


def _endpoint_of(args) -> dict:
    eps = {}
    if getattr(args, "endpoint", None):
        eps["embed"] = args.endpoint
    if getattr(args, "gen_endpoint", None):
        eps["generate"] = args.gen_endpoint
    if getattr(args, "scripted", None):
        eps["generate"] = f"scripted:{args.scripted}"
    return eps


# --------------------------------------------------------------------------
# subcommand implementations
# --------------------------------------------------------------------------


def cmd_chunk(args) -> int:
    manifest = RunManifest(config={"max_tokens": args.max_tokens, "strict": not args.lenient})
    store = core.ingest_corpus(args.infile, strict=not args.lenient)
    cfg = chunker.ChunkerConfig(max_text_tokens=args.max_tokens)
    per_doc = ordered_parallel_map(
        lambda doc: chunker.segment_document(doc, cfg),
        list(store.documents.values()), jobs=args.jobs,
    )
    chunks = [c for doc_chunks in per_doc for c in doc_chunks]
    core.write_chunks(args.out, chunks)
    _write_manifest(args.out, manifest, [args.out])
    skipped = len(store.ingest_report.skipped)
    print(f"chunked {len(store.documents)} documents into {len(chunks)} chunks"
          + (f" ({skipped} lines skipped)" if skipped else ""))
    return 0


def cmd_sample(args) -> int:
    manifest = RunManifest(seeds={"sample": args.seed}, config={"n": args.n})
    chunks = core.read_chunks(args.infile)
    sampled = chunker.stratified_sample(chunks, args.n, args.seed)
    core.write_chunks(args.out, sampled)
    _write_manifest(args.out, manifest, [args.out])
    print(f"sampled {len(sampled)} of {len(chunks)} chunks")
    return 0


def cmd_embed(args) -> int:
    manifest = RunManifest(config={"dim": args.dim, "role": args.role},
                           endpoints=_endpoint_of(args))
    chunks = core.read_chunks(args.chunks)
    embedder = _make_embedder(args, args.dim)
    instruction = args.instruction if args.role == gateway.ROLE_QUERY else None
    if isinstance(embedder, gateway.ReferenceEmbedder) and args.jobs > 1:
        vectors = [
            v
            for batch in ordered_parallel_map(
                lambda cs: embedder.embed([c.elements for c in cs], role=args.role,
                                          instruction=instruction),
                [chunks[s : s + 64] for s in range(0, len(chunks), 64)], jobs=args.jobs,
            )
            for v in batch
        ]
    else:
        vectors = embedder.embed([c.elements for c in chunks], role=args.role,
                                 instruction=instruction)
    ix.save_embeddings(args.out, {c.id: v for c, v in zip(chunks, vectors)})
    _write_manifest(args.out, manifest, [args.out])
    print(f"embedded {len(chunks)} chunks at dim {args.dim}")
    return 0


def cmd_index_build(args) -> int:
    manifest = RunManifest(config={"ladder": args.ladder})
    ladder = ix.DimensionLadder(tuple(int(d) for d in args.ladder.split(",")))
    embeddings = ix.load_embeddings(args.emb)
    built = ix.build(embeddings, ladder)
    ix.save(built, args.out)
    _write_manifest(args.out, manifest, [args.out])
    print(f"indexed {len(built)} vectors, ladder {ladder.dims}")
    return 0


def cmd_index_search(args) -> int:
    dense = ix.load(args.index)
    embedder = _make_embedder(args, dense.full_dim)
    results = []
    with open(args.query_file, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            elements = gateway.payload_from_obj(obj.get("question_elements", obj.get("elements")))
            query = embedder.embed([elements], role=gateway.ROLE_QUERY,
                                   instruction=args.instruction)[0]
            hits = ix.search(dense, query, args.k, args.dim)
            results.append({
                "qid": obj.get("qid"),
                "hits": [{"chunk_id": h.chunk_id, "score": h.score, "rank": h.rank} for h in hits],
            })
    text = json.dumps(results, ensure_ascii=False, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_synth_qa(args) -> int:
    manifest = RunManifest(seeds={"synth": args.seed}, endpoints=_endpoint_of(args))
    chunks = core.read_chunks(args.chunks)
    gen = _make_generator(args)
    items, report = datagen.synthesize_qa(chunks, gen, seed=args.seed)
    datagen.write_qa_items(args.out, items)
    outputs = [args.out]
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(report.to_obj(), ensure_ascii=False, indent=2) + "\n")
        outputs.append(args.report)
    _write_manifest(args.out, manifest, outputs)
    print(f"synthesized {len(items)} items from {report.raw_pairs} raw pairs "
          f"({report.total_drops()} dropped, {report.parse_failures} parse failures)")
    return 0


def cmd_mine_negatives(args) -> int:
    manifest = RunManifest(endpoints=_endpoint_of(args),
                           config={"top": args.top, "n": args.n})
    dense = ix.load(args.index)
    embedder = _make_embedder(args, dense.full_dim)
    retriever = ix.retriever_closure(dense, embedder, args.instruction)
    items = datagen.read_qa_items(args.qa)
    item_by_qid = {i.qid: i for i in items}
    report = datagen.DropReport()
    mined = datagen.mine_all(items, retriever, report, top=args.top, n_neg=args.n)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        for triplet in mined:
            item = item_by_qid[triplet.qid]
            f.write(contrastive.triplet_to_line(contrastive.ContrastiveTriplet(
                query_elements=item.question_elements,
                instruction=args.instruction,
                positive_id=triplet.positive_id,
                negative_ids=triplet.negative_ids,
            )))
    _write_manifest(args.out, manifest, [args.out])
    print(f"mined {len(mined)} triplets from {len(items)} items "
          f"({report.drops['negative-shortage']} short of negatives)")
    return 0


def cmd_train_head(args) -> int:
    config = _load_config(args.config)
    loss_cfg_kw = {}
    loss_section = config.get("loss", {})
    if "temperature" in loss_section:
        loss_cfg_kw["temperature"] = float(loss_section["temperature"])
    if "ladder" in loss_section:
        loss_cfg_kw["ladder"] = ix.DimensionLadder(tuple(loss_section["ladder"]))
    if "raw_weights" in loss_section:
        loss_cfg_kw["raw_weights"] = tuple(loss_section["raw_weights"])
    cfg = contrastive.LossConfig(**loss_cfg_kw)
    opt = contrastive.TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed
    )
    manifest = RunManifest(
        seeds={"train": args.seed},
        config={"temperature": cfg.temperature, "ladder": list(cfg.ladder.dims),
                "raw_weights": list(cfg.raw_weights),
                "normalized_weights": list(cfg.normalized_weights),
                "lr": args.lr, "epochs": args.epochs, "batch_size": args.batch_size},
        config_hashes={args.config: sha256_file(args.config)} if args.config else {},
    )
    triplets = contrastive.read_triplets(args.triplets)
    chunk_map = _chunk_map(args.chunks)
    embedder = _make_embedder(args, args.base_dim)

    def query_features(t):
        return embedder.embed([t.query_elements], role=gateway.ROLE_QUERY,
                              instruction=t.instruction)[0].values

    feature_cache: dict[str, object] = {}

    def chunk_features(cid):
        if cid not in feature_cache:
            if cid not in chunk_map:
                raise ValidationError(f"triplet references unknown chunk {cid!r}")
            feature_cache[cid] = embedder.embed(
                [chunk_map[cid].elements], role=gateway.ROLE_DOCUMENT
            )[0].values
        return feature_cache[cid]

    head, log = contrastive.train_head(triplets, query_features, chunk_features, cfg, opt)
    contrastive.save_head(head, args.out)
    log_lines = "".join(json.dumps(entry) + "\n" for entry in log)
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="\n") as f:
            f.write(log_lines)
    else:
        sys.stdout.write(log_lines)
    _write_manifest(args.out, manifest, [args.out])
    print(f"trained head {head.d_out}x{head.d_in}; "
          f"loss {log[0]['mean_loss']:.4f} -> {log[-1]['mean_loss']:.4f}")
    return 0


def cmd_feedback(args) -> int:
    cfg = fb.FeedbackConfig(
        k=args.k, window=args.l, stride=args.stride,
        metric=_METRIC_ALIASES[args.metric], threshold=args.threshold,
    )
    manifest = RunManifest(endpoints=_endpoint_of(args),
                           config={"k": cfg.k, "l": cfg.window, "stride": cfg.stride,
                                   "metric": cfg.metric, "threshold": cfg.threshold})
    dense = ix.load(args.index)
    embedder = _make_embedder(args, dense.full_dim)
    retriever = ix.retriever_closure(dense, embedder, args.instruction)
    chunk_map = _chunk_map(args.chunks)
    queries = evaluation.read_eval_queries(args.qa)
    gen = _make_generator(args)
    records, log = fb.build_preference_dataset(queries, retriever, chunk_map.__getitem__, gen, cfg)
    fb.write_preferences(args.out, records)
    _write_manifest(args.out, manifest, [args.out])
    print(f"kept {len(records)} of {len(queries)} queries "
          f"({len(log.no_pass)} no window passed, {len(log.skipped_short)} short retrievals)")
    return 0


def cmd_eval(args) -> int:
    manifest = RunManifest(endpoints=_endpoint_of(args), seeds={}, config={"k": args.k})
    dense = ix.load(args.index) if args.index else None
    if args.k >= 1 and dense is None:
        raise ValidationError("--index is required when k >= 1")
    if args.k >= 1 and not args.chunks:
        raise ValidationError("--chunks is required when k >= 1")
    chunk_map = _chunk_map(args.chunks) if args.chunks else {}
    embedder = _make_embedder(args, dense.full_dim if dense else gateway.FULL_DIM)
    retriever = (
        ix.retriever_closure(dense, embedder, args.instruction) if dense else (lambda e, k: [])
    )
    queries = evaluation.read_eval_queries(args.qa)
    gen = _make_generator(args)
    report = evaluation.run_rag_eval(
        queries, retriever, chunk_map.__getitem__, gen, k=args.k,
        dataset=args.dataset, manifest=manifest.finish().to_obj(),
    )
    report.write(args.out)
    agg = report.aggregates
    print(f"evaluated {len(queries)} queries: em={agg['em']:.4f} f1={agg['f1']:.4f} acc={agg['acc']:.4f}")
    return 0


def cmd_mcnemar(args) -> int:
    outcomes = evaluation.PairedOutcomes(a=args.a, b=args.b, c=args.c, d=args.d)
    variants = [args.continuity] if args.continuity is not None else [False, True]
    for cont in variants:
        result = evaluation.mcnemar(outcomes, continuity=cont)
        label = "with continuity correction" if cont else "no continuity correction"
        print(f"{label}: statistic={result['statistic']:.6f} p={result['p_value']:.6g} df=1")
    return 0


# --------------------------------------------------------------------------
# parser assembly
# --------------------------------------------------------------------------


def _add_embedder_args(p, with_instruction=True):
    p.add_argument("--endpoint", help="embedding backend URL (default: in-process reference embedder)")
    if with_instruction:
        p.add_argument("--instruction", default=gateway.DEFAULT_QUERY_INSTRUCTION,
                       help="query instruction string")


def _add_generator_args(p):
    group = p.add_mutually_exclusive_group()
    group.add_argument("--scripted", help="scripted generator fixtures JSON file")
    group.add_argument("--gen-endpoint", help="generation backend URL")


def build_parser() -> _Parser:
    parser = _Parser(prog="mmrag", description=__doc__)
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="worker pool size for parallel stages (default: logical cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("chunk", help="segment a corpus into token-capped chunks")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-tokens", type=int, default=chunker.DEFAULT_MAX_TEXT_TOKENS)
    p.add_argument("--lenient", action="store_true", help="skip malformed lines instead of aborting")
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser("sample", help="modality-stratified chunk sampling")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("embed", help="embed chunks into a binary embeddings file")
    p.add_argument("--chunks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=gateway.FULL_DIM)
    p.add_argument("--role", choices=[gateway.ROLE_DOCUMENT, gateway.ROLE_QUERY],
                   default=gateway.ROLE_DOCUMENT)
    _add_embedder_args(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("index", help="build or search the dense index")
    isub = p.add_subparsers(dest="index_command", required=True)
    pb = isub.add_parser("build")
    pb.add_argument("--emb", required=True)
    pb.add_argument("--out", required=True)
    pb.add_argument("--ladder", default=",".join(str(d) for d in ix.DEFAULT_LADDER_DIMS))
    pb.set_defaults(func=cmd_index_build)
    ps = isub.add_parser("search")
    ps.add_argument("--index", required=True)
    ps.add_argument("--dim", type=int, default=None)
    ps.add_argument("--k", type=int, default=10)
    ps.add_argument("--query-file", required=True)
    ps.add_argument("--out")
    _add_embedder_args(ps)
    ps.set_defaults(func=cmd_index_search)

    p = sub.add_parser("synth-qa", help="synthesize multiple-choice QA from chunks")
    p.add_argument("--chunks", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="drop-accounting JSON output")
    _add_generator_args(p)
    p.set_defaults(func=cmd_synth_qa)

    p = sub.add_parser("mine-negatives", help="mine hard negatives for QA items")
    p.add_argument("--qa", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--top", type=int, default=datagen.MINE_TOP)
    p.add_argument("--n", type=int, default=datagen.MINE_NEGATIVES)
    p.add_argument("--out", required=True)
    _add_embedder_args(p)
    p.set_defaults(func=cmd_mine_negatives)

    p = sub.add_parser("train-head", help="train the projection head on triplets")
    p.add_argument("--triplets", required=True)
    p.add_argument("--chunks", required=True)
    p.add_argument("--config", help="loss config TOML")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--base-dim", type=int, default=gateway.FULL_DIM)
    p.add_argument("--log", help="training log path (JSONL)")
    _add_embedder_args(p)
    p.set_defaults(func=cmd_train_head)

    p = sub.add_parser("feedback", help="build the generator-feedback preference dataset")
    p.add_argument("--qa", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--chunks", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--metric", choices=sorted(_METRIC_ALIASES), default="em")
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--out", required=True)
    _add_embedder_args(p)
    _add_generator_args(p)
    p.set_defaults(func=cmd_feedback)

    p = sub.add_parser("eval", help="run the retrieval-augmented evaluation harness")
    p.add_argument("--qa", required=True)
    p.add_argument("--index")
    p.add_argument("--chunks")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--dataset", default="dataset")
    p.add_argument("--out", required=True)
    _add_embedder_args(p)
    _add_generator_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mcnemar", help="McNemar paired test on a 2x2 outcome table")
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--c", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--continuity", action="store_const", const=True, default=None,
                   help="apply the continuity correction (default: report both variants)")
    p.set_defaults(func=cmd_mcnemar)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (core.CorpusError, ix.IndexError_, contrastive.ContrastiveError, fb.FeedbackError,
            datagen.DatagenError, evaluation.EvalError, gateway.GatewayError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
