"""Experiment harness: run framework x decoder x seed cells, aggregate reports.

A run is one (dataset, framework, decoder, seed) cell: sample the test
set, trace every question, score it, and persist a run result plus a
trace file. Reports aggregate runs that differ only by seed and format
them the way the tables in the project README describe: percentages at
one decimal, mean over seeds with the sample standard deviation.
"""

from __future__ import annotations

import json
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .agent import DatasetProfile, Trace, profile_for, run_direct, run_oner, run_react
from .backends import Backend
from .corpus import Corpus
from .datasets import Question, SamplePlan, sample_test_set
from .decoding import (
    CadConfig,
    DecoderConfig,
    DecoreConfig,
    DolaConfig,
    StandardConfig,
    default_dola_layers,
    load_retrieval_heads,
    require_capabilities,
)
from .index import Bm25Index
from .metrics import QuestionScore, score_question

RUN_FORMAT = "run-result-v1"
REPORT_FORMAT = "report-v1"

FRAMEWORK_ORDER = ("direct", "oner", "react")
DECODER_ORDER = ("standard", "cad", "dola", "decore")

METRIC_NAMES = ("answer_f1", "answer_em", "support_recall", "paragraph_f1", "adherence")

# Frameworks shown per metric table: Direct retrieves nothing, and
# format adherence only means something for the ReAct grammar.
TABLE_FRAMEWORKS = {
    "answer_f1": ("direct", "oner", "react"),
    "answer_em": ("direct", "oner", "react"),
    "support_recall": ("oner", "react"),
    "paragraph_f1": ("oner", "react"),
    "adherence": ("react",),
}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    framework: str
    decoder: DecoderConfig
    seed: int
    sample_size: int
    max_steps: int = 7
    retrieval_k: int = 1
    prompt_style: str = "default"
    max_new_tokens: int = 256
    workers: int = 4


@dataclass
class RunResult:
    config: dict
    seed: int
    question_ids: list[str]
    scores: list[QuestionScore]
    metrics: dict[str, float]
    traces: list[Trace] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "format": RUN_FORMAT,
            "config": self.config,
            "seed": self.seed,
            "subset_manifest": {
                "seed": self.seed,
                "size": len(self.question_ids),
                "question_ids": list(self.question_ids),
            },
            "per_question": [
                {
                    "question_id": s.question_id,
                    "answer_f1": s.answer_f1,
                    "answer_em": s.answer_em,
                    "support_recall": s.support_recall,
                    "paragraph_f1": s.paragraph_f1,
                    "adherent": s.adherent,
                    "completed": s.completed,
                }
                for s in self.scores
            ],
            "metrics": self.metrics,
        }


def decoder_label(decoder: DecoderConfig) -> str:
    return decoder.kind


def decoder_to_config(decoder: DecoderConfig) -> dict:
    if isinstance(decoder, StandardConfig):
        return {"kind": "standard"}
    if isinstance(decoder, CadConfig):
        return {"kind": "cad", "alpha": decoder.alpha}
    if isinstance(decoder, DolaConfig):
        return {"kind": "dola", "candidate_layers": list(decoder.candidate_layers),
                "beta": decoder.beta}
    if isinstance(decoder, DecoreConfig):
        return {"kind": "decore", "retrieval_heads": [list(p) for p in decoder.retrieval_heads],
                "alpha_cap": decoder.alpha_cap}
    raise TypeError(f"unknown decoder config: {decoder!r}")


def decoder_from_config(spec: dict, *, num_layers: int | None = None) -> DecoderConfig:
    """Build a decoder from its JSON form; DoLa candidate layers default
    to the even-indexed lower half of the backend when omitted."""
    kind = spec.get("kind")
    if kind == "standard":
        return StandardConfig()
    if kind == "cad":
        return CadConfig(alpha=float(spec.get("alpha", 1.0)))
    if kind == "dola":
        layers = spec.get("candidate_layers")
        if layers is None:
            if num_layers is None:
                raise ValueError("dola candidate_layers omitted and backend depth unknown")
            layers = default_dola_layers(num_layers)
        return DolaConfig(candidate_layers=tuple(int(l) for l in layers),
                          beta=float(spec.get("beta", 0.1)))
    if kind == "decore":
        heads = spec.get("retrieval_heads")
        if isinstance(heads, str):
            heads = [list(p) for p in load_retrieval_heads(heads)]
        if not heads:
            raise ValueError("decore requires retrieval_heads (inline or a file path)")
        return DecoreConfig(
            retrieval_heads=tuple((int(l), int(h)) for l, h in heads),
            alpha_cap=float(spec.get("alpha_cap", 2.0)),
        )
    raise ValueError(f"unknown decoder kind: {kind!r}")


def _trace_one(question: Question, backend: Backend, cfg: ExperimentConfig,
               index: Bm25Index, profile: DatasetProfile) -> Trace:
    if cfg.framework == "react":
        return run_react(question, backend, cfg.decoder, index, profile,
                         max_steps=cfg.max_steps, retrieval_k=cfg.retrieval_k,
                         max_new_tokens=cfg.max_new_tokens)
    if cfg.framework == "oner":
        return run_oner(question, backend, cfg.decoder, index, profile,
                        retrieval_k=cfg.retrieval_k, max_new_tokens=cfg.max_new_tokens)
    if cfg.framework == "direct":
        return run_direct(question, backend, cfg.decoder, profile,
                          max_new_tokens=cfg.max_new_tokens)
    raise ValueError(f"unknown framework: {cfg.framework!r}")


def run_experiment(questions: list[Question], corpus: Corpus, index: Bm25Index,
                   backend: Backend, cfg: ExperimentConfig) -> RunResult:
    """Trace and score one (framework, decoder, seed) cell.

    Questionwise work is independent; it runs under a bounded worker
    pool when the backend declares itself shareable, serially otherwise.
    Results are collected in question order either way.
    """
    require_capabilities(cfg.decoder, backend.capabilities)
    profile = profile_for(cfg.dataset, cfg.prompt_style)
    subset = sample_test_set(questions, SamplePlan(size=cfg.sample_size, seed=cfg.seed))

    def work(q: Question) -> Trace:
        return _trace_one(q, backend, cfg, index, profile)

    if backend.shareable and cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            traces = list(pool.map(work, subset))
    else:
        traces = [work(q) for q in subset]

    scores = [score_question(t, q, corpus) for t, q in zip(traces, subset)]
    metrics = {
        "answer_f1": _mean(s.answer_f1 for s in scores),
        "answer_em": _mean(s.answer_em for s in scores),
        "support_recall": _mean(s.support_recall for s in scores),
        "paragraph_f1": _mean(s.paragraph_f1 for s in scores),
        "adherence": _mean(1.0 if s.adherent else 0.0 for s in scores),
    }
    config = {
        "dataset": cfg.dataset,
        "framework": cfg.framework,
        "decoder": decoder_to_config(cfg.decoder),
        "sample_size": cfg.sample_size,
        "max_steps": cfg.max_steps,
        "retrieval_k": cfg.retrieval_k,
        "prompt_style": cfg.prompt_style,
        "max_new_tokens": cfg.max_new_tokens,
    }
    return RunResult(
        config=config,
        seed=cfg.seed,
        question_ids=[q.id for q in subset],
        scores=scores,
        metrics=metrics,
        traces=traces,
    )


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def save_run(run: RunResult, out_dir: str | Path) -> None:
    """Write run.json and traces.jsonl; output is deterministic bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(_dump(run.to_record()) + "\n", encoding="utf-8")
    with open(out / "traces.jsonl", "w", encoding="utf-8") as fh:
        for trace in run.traces:
            fh.write(_dump(trace.to_record()))
            fh.write("\n")


def load_run_record(path: str | Path) -> dict:
    """Read one run.json (or a directory containing it)."""
    p = Path(path)
    if p.is_dir():
        p = p / "run.json"
    with open(p, encoding="utf-8") as fh:
        record = json.load(fh)
    if record.get("format") != RUN_FORMAT:
        raise ValueError(f"{p}: unsupported run format {record.get('format')!r}")
    return record


@dataclass(frozen=True)
class AggregateCell:
    mean: float
    sd: float
    n_runs: int

    def formatted(self) -> str:
        return f"{self.mean * 100:.1f} ± {self.sd * 100:.1f}"


def aggregate_cell(values: list[float]) -> AggregateCell:
    """Mean and sample standard deviation (ddof=1); a single run has
    dispersion 0.0 and is flagged by n_runs."""
    mean = _mean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return AggregateCell(mean=mean, sd=sd, n_runs=len(values))


def _group_key(record: dict) -> tuple[str, str]:
    return record["config"]["framework"], record["config"]["decoder"]["kind"]


def aggregate_runs(records: list[dict]) -> dict:
    """Aggregate run records into a report; runs in a group must differ
    only by seed, and every record must come from the same dataset."""
    if not records:
        raise ValueError("no runs to aggregate")
    datasets = {r["config"]["dataset"] for r in records}
    if len(datasets) > 1:
        raise ValueError(
            f"refusing to aggregate runs from different datasets: {sorted(datasets)}"
        )
    dataset = datasets.pop()

    groups: dict[tuple[str, str], list[dict]] = {}
    for record in records:
        groups.setdefault(_group_key(record), []).append(record)
    for key, members in groups.items():
        configs = {_dump(m["config"]) for m in members}
        if len(configs) > 1:
            raise ValueError(
                f"group {key} mixes configurations that differ beyond the seed"
            )
        seeds = [m["seed"] for m in members]
        if len(set(seeds)) != len(seeds):
            raise ValueError(f"group {key} repeats seed values: {seeds}")

    rows: dict[str, list[dict]] = {name: [] for name in METRIC_NAMES}
    for metric in METRIC_NAMES:
        for framework in FRAMEWORK_ORDER:
            candidates = [
                (kind, groups[(framework, kind)])
                for kind in DECODER_ORDER
                if (framework, kind) in groups
            ]
            if not candidates:
                continue
            cells = {
                kind: aggregate_cell([m["metrics"][metric] for m in members])
                for kind, members in candidates
            }
            best = max(cell.mean for cell in cells.values())
            for kind, cell in cells.items():
                rows[metric].append(
                    {
                        "framework": framework,
                        "decoder": kind,
                        "mean": cell.mean,
                        "sd": cell.sd,
                        "n_runs": cell.n_runs,
                        "formatted": cell.formatted(),
                        "best_in_group": math.isclose(cell.mean, best, abs_tol=1e-12),
                    }
                )
    return {
        "format": REPORT_FORMAT,
        "dataset": dataset,
        "metrics": rows,
    }


def _collapse_oner(table_rows: list[dict]) -> list[dict]:
    """OneR retrieval happens before any decoding, so when every decoder
    produced the same retrieval numbers the rows collapse into one "All" row."""
    oner = [r for r in table_rows if r["framework"] == "oner"]
    if len(oner) > 1 and len({(r["mean"], r["sd"]) for r in oner}) == 1:
        collapsed = dict(oner[0])
        collapsed["decoder"] = "All"
        collapsed["best_in_group"] = True
        out = [r for r in table_rows if r["framework"] != "oner"]
        return sorted(out + [collapsed], key=lambda r: FRAMEWORK_ORDER.index(r["framework"]))
    return table_rows


_METRIC_TITLES = {
    "answer_f1": "Answer F1",
    "answer_em": "Answer exact match",
    "support_recall": "Support recall",
    "paragraph_f1": "Paragraph F1",
    "adherence": "Format adherence",
}


def render_report(report: dict) -> str:
    """Markdown tables, one per metric, best decoder per framework bold."""
    lines = [f"# Report: {report['dataset']}", ""]
    for metric in METRIC_NAMES:
        all_rows = report["metrics"].get(metric, [])
        rows = [r for r in all_rows if r["framework"] in TABLE_FRAMEWORKS[metric]]
        if metric in ("support_recall", "paragraph_f1"):
            rows = _collapse_oner(rows)
        if not rows:
            continue
        lines.append(f"## {_METRIC_TITLES[metric]} (%)")
        lines.append("")
        lines.append(f"| Framework | Decoding | {report['dataset']} |")
        lines.append("| --- | --- | --- |")
        for row in rows:
            value = row["formatted"]
            if row["best_in_group"]:
                value = f"**{value}**"
            lines.append(f"| {row['framework']} | {row['decoder']} | {value} |")
        n_runs = sorted({r["n_runs"] for r in rows})
        lines.append("")
        lines.append(f"_n_runs per cell: {', '.join(str(n) for n in n_runs)}_")
        lines.append("")
    return "\n".join(lines)
