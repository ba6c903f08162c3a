"""Command line entry point.

Three subcommands:

  ingest  - convert a raw dataset dump into corpus.jsonl / questions.jsonl
  run     - execute a framework x decoder x seed matrix against a backend
  report  - aggregate run directories into report.md / report.json

Exit codes: 0 success, 1 validation error (bad flags or config, missing
file, backend without a required capability), 2 runtime failure.
All outputs are deterministic: content-addressed manifests, sorted JSON
keys, and no timestamps, so re-running a command over unchanged inputs
reproduces identical bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from .backends import (
    Backend,
    BackendError,
    CapabilityError,
    RemoteBackend,
    load_script,
)
from .corpus import load_corpus, save_corpus
from .datasets import (
    DATASET_KINDS,
    SchemaError,
    load_dataset,
    load_questions,
    save_questions,
)
from .decoding import require_capabilities
from .harness import (
    ExperimentConfig,
    aggregate_runs,
    decoder_from_config,
    decoder_label,
    load_run_record,
    render_report,
    run_experiment,
    save_run,
)
from .index import Bm25Params, build_index

log = logging.getLogger(__name__)

ENV_BACKEND_URL = "HOPQA_BACKEND_URL"


class UsageError(Exception):
    """Configuration or input problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract reserves 2 for bugs.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {path}: {exc}")


def _require(config: dict, key: str):
    if key not in config:
        raise UsageError(f"config is missing required key {key!r}")
    return config[key]


def cmd_ingest(args) -> int:
    config = _load_config(args.config)
    kind = _require(config, "dataset")
    if kind not in DATASET_KINDS:
        raise UsageError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    files = {name: Path(p) for name, p in _require(config, "files").items()}
    for name, path in files.items():
        if not path.exists():
            raise UsageError(f"input file for {name!r} not found: {path}")
    try:
        questions, corpus = load_dataset(kind, {k: str(v) for k, v in files.items()})
    except SchemaError as exc:
        raise UsageError(f"ingest failed: {exc}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out / "corpus.jsonl")
    save_questions(questions, out / "questions.jsonl")
    manifest = {
        "dataset": kind,
        "sources": {name: _sha256_file(path) for name, path in sorted(files.items())},
        "paragraphs": len(corpus),
        "articles": len(corpus.article_ids()),
        "questions": len(questions),
        "corpus_sha256": _sha256_file(out / "corpus.jsonl"),
        "questions_sha256": _sha256_file(out / "questions.jsonl"),
    }
    (out / "manifest.json").write_text(_dump(manifest) + "\n", encoding="utf-8")
    print(f"ingested {len(questions)} questions / {len(corpus)} paragraphs -> {out}")
    return 0


def _as_list(value) -> list:
    return value if isinstance(value, list) else [value]


def _make_backend(config: dict) -> Backend:
    url = os.environ.get(ENV_BACKEND_URL)
    spec = config.get("backend")
    if url:
        return RemoteBackend(url)
    if not isinstance(spec, dict) or len(spec) != 1:
        raise UsageError(
            'config needs a backend: {"mock": <script path>} or {"remote": <url>} '
            f"(or set {ENV_BACKEND_URL})"
        )
    (kind, value), = spec.items()
    if kind == "mock":
        if not Path(value).exists():
            raise UsageError(f"mock script not found: {value}")
        return load_script(value)
    if kind == "remote":
        return RemoteBackend(value)
    raise UsageError(f"unknown backend kind {kind!r}")


def cmd_run(args) -> int:
    config = _load_config(args.config)
    dataset = _require(config, "dataset")
    corpus = load_corpus(_require(config, "corpus"))
    questions = load_questions(_require(config, "questions"))
    backend = _make_backend(config)

    frameworks = _as_list(_require(config, "framework"))
    decoder_specs = _as_list(_require(config, "decoder"))
    seeds = [int(s) for s in _as_list(_require(config, "seeds"))]
    sample_size = int(_require(config, "sample_size"))

    num_layers = backend.capabilities.num_layers
    decoders = [decoder_from_config(spec, num_layers=num_layers) for spec in decoder_specs]
    for decoder in decoders:
        require_capabilities(decoder, backend.capabilities)

    index = build_index(
        corpus,
        Bm25Params(
            k1=float(config.get("bm25_k1", 1.2)),
            b=float(config.get("bm25_b", 0.75)),
        ),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, str] = {}
    for framework in frameworks:
        for decoder in decoders:
            for seed in seeds:
                cfg = ExperimentConfig(
                    dataset=dataset,
                    framework=framework,
                    decoder=decoder,
                    seed=seed,
                    sample_size=sample_size,
                    max_steps=int(config.get("max_steps", 7)),
                    retrieval_k=int(config.get("retrieval_k", 1)),
                    prompt_style=config.get("prompt_style", "default"),
                    max_new_tokens=int(config.get("max_new_tokens", 256)),
                    workers=int(config.get("workers", 4)),
                )
                run = run_experiment(questions, corpus, index, backend, cfg)
                cell = f"{framework}_{decoder_label(decoder)}_{seed}"
                save_run(run, out / cell)
                for name in ("run.json", "traces.jsonl"):
                    rel = f"{cell}/{name}"
                    artifacts[rel] = _sha256_file(out / cell / name)
                print(f"ran {cell}: answer_f1={run.metrics['answer_f1']:.4f}")
    (out / "manifest.json").write_text(_dump({"artifacts": artifacts}) + "\n",
                                       encoding="utf-8")
    return 0


def cmd_report(args) -> int:
    run_dirs: list[Path] = []
    for root in args.runs:
        path = Path(root)
        if not path.exists():
            raise UsageError(f"run path not found: {path}")
        if (path / "run.json").exists():
            run_dirs.append(path)
        else:
            run_dirs.extend(sorted(p.parent for p in path.glob("*/run.json")))
    if not run_dirs:
        raise UsageError("no run.json files found under the given paths")
    try:
        records = [load_run_record(p) for p in run_dirs]
        report = aggregate_runs(records)
    except ValueError as exc:
        raise UsageError(str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(_dump(report) + "\n", encoding="utf-8")
    markdown = render_report(report)
    (out / "report.md").write_text(markdown, encoding="utf-8")
    print(markdown)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="hopqa", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="convert a raw dataset dump")
    p_ingest.add_argument("--config", required=True, help="ingest config (JSON)")
    p_ingest.add_argument("--out", required=True, help="output directory")
    p_ingest.set_defaults(func=cmd_ingest)

    p_run = sub.add_parser("run", help="run a framework x decoder x seed matrix")
    p_run.add_argument("--config", required=True, help="run config (JSON)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_report = sub.add_parser("report", help="aggregate run results")
    p_report.add_argument("runs", nargs="+", help="run directories (or parents of them)")
    p_report.add_argument("--out", required=True, help="output directory")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, CapabilityError, SchemaError, FileNotFoundError, ValueError) as exc:
        # Validation problems: bad flags, bad config, missing inputs,
        # decoder/backend capability mismatch caught pre-flight.
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
