"""Multi-hop question answering over a local knowledge base.

The pieces compose in one direction: a corpus of paragraphs feeds a
BM25 index; a backend serves token logits; a decoding strategy turns
logits into greedy token choices; an agent framework (direct, one-shot
retrieval, or the interleaved reasoning loop) drives generation into a
trace; metrics score traces; the harness runs the full framework x
decoder x seed matrix and aggregates reports.
"""

from .agent import (
    DatasetProfile,
    FormatViolation,
    Step,
    Trace,
    extract_answer,
    parse_step,
    profile_for,
    run_direct,
    run_oner,
    run_react,
)
from .backends import (
    Backend,
    BackendCapabilities,
    BackendError,
    CapabilityError,
    ChatMessage,
    LogitsRequest,
    LogitsResponse,
    NoScriptError,
    RemoteBackend,
    ScriptedBackend,
    TransportError,
    load_script,
    render_chat,
)
from .corpus import Corpus, Paragraph, load_corpus, save_corpus
from .datasets import (
    Question,
    SamplePlan,
    SchemaError,
    load_dataset,
    load_questions,
    sample_test_set,
    save_questions,
)
from .decoding import (
    CadConfig,
    DecodeStep,
    DecoreConfig,
    DolaConfig,
    GenerationResult,
    StandardConfig,
    decode_cad,
    decode_decore,
    decode_dola,
    decode_standard,
    default_dola_layers,
    generate,
    require_capabilities,
)
from .harness import (
    AggregateCell,
    ExperimentConfig,
    RunResult,
    aggregate_cell,
    aggregate_runs,
    decoder_from_config,
    decoder_to_config,
    load_run_record,
    render_report,
    run_experiment,
    save_run,
)
from .index import (
    Bm25Index,
    Bm25Params,
    SearchResult,
    build_index,
    load_index,
    lookup,
    save_index,
    search,
    tokenize,
)
from .metrics import (
    QuestionScore,
    answer_em,
    answer_f1,
    format_adherence,
    normalize_answer,
    paragraph_f1,
    score_question,
    support_recall,
)

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BackendCapabilities",
    "BackendError",
    "Bm25Index",
    "Bm25Params",
    "CadConfig",
    "CapabilityError",
    "ChatMessage",
    "Corpus",
    "DatasetProfile",
    "DecodeStep",
    "DecoreConfig",
    "DolaConfig",
    "ExperimentConfig",
    "FormatViolation",
    "GenerationResult",
    "LogitsRequest",
    "LogitsResponse",
    "NoScriptError",
    "Paragraph",
    "Question",
    "QuestionScore",
    "RemoteBackend",
    "RunResult",
    "SamplePlan",
    "SchemaError",
    "ScriptedBackend",
    "SearchResult",
    "StandardConfig",
    "Step",
    "Trace",
    "TransportError",
    "AggregateCell",
    "aggregate_cell",
    "aggregate_runs",
    "decoder_from_config",
    "decoder_to_config",
    "load_run_record",
    "answer_em",
    "answer_f1",
    "build_index",
    "decode_cad",
    "decode_decore",
    "decode_dola",
    "decode_standard",
    "default_dola_layers",
    "extract_answer",
    "format_adherence",
    "generate",
    "load_corpus",
    "load_dataset",
    "load_index",
    "load_questions",
    "load_script",
    "lookup",
    "normalize_answer",
    "paragraph_f1",
    "parse_step",
    "profile_for",
    "render_chat",
    "render_report",
    "require_capabilities",
    "run_direct",
    "run_experiment",
    "run_oner",
    "run_react",
    "sample_test_set",
    "save_corpus",
    "save_index",
    "save_questions",
    "save_run",
    "score_question",
    "search",
    "support_recall",
    "tokenize",
    "__version__",
]
