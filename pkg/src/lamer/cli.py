"""Command-line driver: ``lamer index|search|run|eval|stats``.

Exit status: 0 on success, 1 when input data is unreadable or processing
fails, 2 for invalid arguments or manifests.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from lamer.bm25 import Bm25Params, retrieve
from lamer.corpus import CorpusError, iter_corpus, load_corpus, load_queries
from lamer.eval import RunFile, evaluate_run, format_run, load_qrels, load_run
from lamer.index import IndexFormatError, build_index, load_index, save_index, stats
from lamer.llm import CachedBackend, OpenAIChatBackend, StubBackend
from lamer.pipeline import LamerConfig, run_batch

log = logging.getLogger("lamer")


class ConfigError(Exception):
    """Invalid manifest or argument combination; the message names the field."""


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _bm25_params(args) -> Bm25Params:
    return Bm25Params(k1=args.k1, b=args.b, idf_variant=args.idf)


def cmd_index(args) -> int:
    idx = build_index(iter_corpus(args.corpus), truncation_cap=args.cap, use_title=not args.no_title)
    save_index(idx, args.out)
    print(f"indexed {idx.collection_size} documents, {idx.num_terms} terms -> {args.out}")
    return 0


def cmd_search(args) -> int:
    idx = load_index(args.index)
    params = _bm25_params(args)
    run = RunFile(run_tag=args.run_tag)
    for q in load_queries(args.queries):
        ranked = retrieve(idx, params, q.text, args.k)
        run.rankings[q.query_id] = [(e.doc_id, e.score) for e in ranked]
    write_atomic(args.out, format_run(run))
    return 0


def cmd_eval(args) -> int:
    result = evaluate_run(load_run(args.run), load_qrels(args.qrels, args.threshold))
    sys.stdout.write(result.format_table(per_query=args.per_query))
    if args.json:
        write_atomic(args.json, result.to_json() + "\n")
    return 0


def cmd_stats(args) -> int:
    idx = load_index(args.index)
    texts = [q.text for q in load_queries(args.queries)] if args.queries else None
    report = stats(idx, path=args.index, queries=texts, k=args.k)
    print(json.dumps(report, indent=2))
    return 0


# --- run -------------------------------------------------------------------

MANIFEST_PATHS = ("corpus", "queries", "qrels", "index", "output_dir", "cache_dir", "template_file")
MANIFEST_KEYS = set(MANIFEST_PATHS) | {"config", "backend"}


def _reject_secrets(obj, where="manifest") -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            lowered = k.lower()
            if ("key" in lowered and k not in ("template_key", "key_on")) or "secret" in lowered:
                raise ConfigError(f"{where}.{k}: secrets must come from the environment, not the manifest")
            _reject_secrets(v, f"{where}.{k}")


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"manifest {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"manifest {path}: invalid JSON ({e})") from None
    if not isinstance(manifest, dict):
        raise ConfigError(f"manifest {path}: top level must be an object")
    unknown = set(manifest) - MANIFEST_KEYS
    if unknown:
        raise ConfigError(f"manifest: unknown field(s) {', '.join(sorted(unknown))}")
    _reject_secrets(manifest)
    base = path.parent
    for key in MANIFEST_PATHS:
        if manifest.get(key):
            p = Path(manifest[key])
            manifest[key] = str(p if p.is_absolute() else (base / p).resolve())
    return manifest


def _env_defaults() -> dict:
    cfg: dict = {}
    if os.environ.get("LAMER_CONCURRENCY"):
        cfg["concurrency"] = int(os.environ["LAMER_CONCURRENCY"])
    if os.environ.get("LAMER_MODEL"):
        cfg["generation"] = {"model_name": os.environ["LAMER_MODEL"]}
    return cfg


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _cli_overrides(args) -> tuple[dict, dict]:
    """(top-level manifest overrides, config overrides) from CLI flags."""
    top = {}
    for key in ("corpus", "queries", "qrels", "index", "output_dir", "cache_dir"):
        v = getattr(args, key, None)
        if v is not None:
            top[key] = str(Path(v).resolve())
    cfg: dict = {}
    for flag, key in (("mode", "mode"), ("M", "M"), ("N", "N"), ("K", "K"),
                      ("template", "template_key"), ("concurrency", "concurrency"),
                      ("run_tag", "run_tag")):
        v = getattr(args, flag, None)
        if v is not None:
            cfg[key] = v
    if args.seed is not None:
        cfg["demo_selection"] = {"seed": args.seed}
    if args.scheme is not None:
        cfg = _merge(cfg, {"demo_selection": {"scheme": args.scheme}})
    return top, cfg


def build_config(cfg_dict: dict) -> LamerConfig:
    try:
        return LamerConfig.from_dict(cfg_dict)
    except TypeError as e:
        raise ConfigError(f"config: {e}") from None
    except ValueError as e:
        raise ConfigError(f"config: {e}") from None


def build_backend(spec: dict | None, cache_dir: str | None):
    spec = dict(spec or {"type": "stub", "mode": "echo_top_candidate"})
    kind = spec.pop("type", "stub")
    if kind == "stub":
        try:
            backend = StubBackend(**spec)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"backend: {e}") from None
    elif kind == "openai":
        allowed = {"base_url"}
        if set(spec) - allowed:
            raise ConfigError(f"backend: unknown field(s) {', '.join(sorted(set(spec) - allowed))}")
        backend = OpenAIChatBackend(base_url=spec.get("base_url"))
    else:
        raise ConfigError(f"backend.type: unknown backend {kind!r} (expected 'stub' or 'openai')")
    return CachedBackend(backend, cache_dir) if cache_dir else backend


def resolve_manifest(args) -> dict:
    manifest = load_manifest(args.manifest) if args.manifest else {}
    top, cfg_over = _cli_overrides(args)
    manifest = _merge(manifest, top)
    cfg = _merge(_merge(_env_defaults(), manifest.get("config", {})), cfg_over)
    manifest["config"] = LamerConfig.to_dict(build_config(cfg))
    manifest.setdefault("backend", {"type": "stub", "mode": "echo_top_candidate"})
    for key in ("queries", "output_dir"):
        if not manifest.get(key):
            raise ConfigError(f"manifest.{key}: required")
    if not manifest.get("index") and not manifest.get("corpus"):
        raise ConfigError("manifest.index: either index or corpus is required")
    for key in ("corpus", "queries", "qrels", "template_file"):
        if manifest.get(key) and not Path(manifest[key]).is_file():
            raise ConfigError(f"manifest.{key}: file not found: {manifest[key]}")
    if manifest.get("index") and not Path(manifest["index"]).is_dir() and not manifest.get("corpus"):
        raise ConfigError(f"manifest.index: directory not found: {manifest['index']}")
    if manifest["config"]["mode"] == "oracle" and not manifest.get("qrels"):
        raise ConfigError("manifest.qrels: required for mode 'oracle'")
    if manifest["config"]["mode"] != "baseline_bm25" and not manifest.get("corpus"):
        raise ConfigError("manifest.corpus: document texts are required to build prompts")
    return manifest


def cmd_run(args) -> int:
    manifest = resolve_manifest(args)
    cfg = build_config(manifest["config"])
    if manifest.get("template_file"):
        cfg = replace(cfg, template_file=manifest["template_file"])

    docs = None
    if manifest.get("corpus"):
        docs = {d.doc_id: d for d in load_corpus(manifest["corpus"])}
    if manifest.get("index") and Path(manifest["index"]).is_dir():
        idx = load_index(manifest["index"])
    else:
        idx = build_index(docs.values(), truncation_cap=cfg.doc_cap, use_title=cfg.use_title)
        if manifest.get("index"):
            save_index(idx, manifest["index"])
    queries = load_queries(manifest["queries"])
    qrels = load_qrels(manifest["qrels"]) if manifest.get("qrels") else None
    backend = None
    if cfg.mode != "baseline_bm25":
        backend = build_backend(manifest.get("backend"), manifest.get("cache_dir"))

    run, report = run_batch(queries, idx, cfg, backend, qrels, docs)

    out = Path(manifest["output_dir"])
    write_atomic(out / "run.trec", format_run(run))
    write_atomic(out / "report.json", report.to_json() + "\n")
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    summary = report.summary()
    print(
        f"{summary['num_queries']} queries, {summary['llm_calls']} LLM calls, "
        f"{summary['fallbacks']} fallbacks -> {out / 'run.trec'}"
    )
    if qrels is not None:
        sys.stdout.write(evaluate_run(run, qrels).format_table())
    return 0


# --- argument parsing --------------------------------------------------------


def _add_bm25_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k1", type=float, default=0.9, help="BM25 k1 (default 0.9)")
    p.add_argument("--b", type=float, default=0.4, help="BM25 b (default 0.4)")
    p.add_argument("--idf", choices=("paper", "lucene"), default="paper",
                   help="IDF variant: 'paper' = ln((N-n+.5)/(n+.5)), 'lucene' adds 1 inside the log")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lamer", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build an inverted index from a JSONL corpus")
    p.add_argument("--corpus", required=True, help="JSONL corpus: {id, title?, text} per line")
    p.add_argument("--out", required=True, help="output index directory")
    p.add_argument("--cap", type=int, default=128, help="tokens kept per document (default 128)")
    p.add_argument("--no-title", action="store_true", help="ignore document titles")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="plain BM25 retrieval to a TREC run file")
    p.add_argument("--index", required=True, help="index directory")
    p.add_argument("--queries", required=True, help="TSV queries: query_id<TAB>text")
    p.add_argument("--out", required=True, help="output run file")
    p.add_argument("--k", type=int, default=1000, help="depth per query (default 1000)")
    p.add_argument("--run-tag", default="lamer", help="run tag column (default 'lamer')")
    _add_bm25_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("run", help="full pipeline from a JSON manifest")
    p.add_argument("--manifest", help="JSON manifest (paths, config, backend)")
    p.add_argument("--corpus", help="override manifest.corpus")
    p.add_argument("--queries", help="override manifest.queries")
    p.add_argument("--qrels", help="override manifest.qrels")
    p.add_argument("--index", help="override manifest.index")
    p.add_argument("--output-dir", dest="output_dir", help="override manifest.output_dir")
    p.add_argument("--cache-dir", dest="cache_dir", help="on-disk LLM response cache")
    p.add_argument("--mode", choices=("lamer", "oracle", "second_round", "baseline_bm25"))
    p.add_argument("--M", type=int, help="demo passages per prompt (default 10)")
    p.add_argument("--N", type=int, help="answers sampled per query (default 5)")
    p.add_argument("--K", type=int, help="final retrieval depth (default 1000)")
    p.add_argument("--scheme", choices=("top_consecutive", "sample_top_n", "sample_collection", "oracle"),
                   help="demo selection scheme")
    p.add_argument("--seed", type=int, help="seed for sampled demo schemes")
    p.add_argument("--template", help="prompt template key (dl, scifact, arguana, covid, fiqa, dbpedia, news)")
    p.add_argument("--concurrency", type=int, help="queries in flight (default 4)")
    p.add_argument("--run-tag", dest="run_tag", help="run tag column")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="MAP / nDCG@10 / R@1k of a run against qrels")
    p.add_argument("--run", required=True, help="TREC run file")
    p.add_argument("--qrels", required=True, help="qrels: qid 0 docid grade")
    p.add_argument("--threshold", type=int, help="binarization grade (default 2 if graded, else 1)")
    p.add_argument("--per-query", action="store_true", help="print one row per query")
    p.add_argument("--json", help="also write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="index size, vocabulary and QPS")
    p.add_argument("--index", required=True, help="index directory")
    p.add_argument("--queries", help="TSV queries to time (reports QPS)")
    p.add_argument("--k", type=int, default=1000, help="depth for the QPS measurement")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CorpusError, IndexFormatError, OSError) as e:
        print(f"lamer: error: {e}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError) as e:
        print(f"lamer: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
