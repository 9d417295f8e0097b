"""Iterative data analysis sessions driven by a language model.

The pipeline: profile every data file with small probe scripts, keep the
query-relevant ones, then loop plan -> implement -> execute -> verify,
letting a router either extend the plan or roll back a wrong step, until a
verifier accepts the result and a finalizer prints the answer. Every
session journals to a transcript that replays byte for byte.
"""
from __future__ import annotations

from .engine import (
    DEFAULT_MAX_ROUNDS,
    EngineConfig,
    EngineError,
    FinalizeRecord,
    InvalidStep,
    PendingWork,
    Plan,
    PlanStep,
    PromptContext,
    RoundRecord,
    RouteDecision,
    RouteKind,
    SessionOutcome,
    StepIndexOutOfRange,
    TerminationReason,
    UnparseableRoute,
    UnparseableVerdict,
    Verdict,
    VerdictValue,
    apply_route,
    finalize,
    implement_initial,
    implement_step,
    init_plan,
    next_step,
    parse_route,
    parse_verdict,
    route,
    run_session,
    select_base_script,
    verify,
)
from .executor import (
    DEFAULT_INTERPRETER_CMD,
    DEFAULT_STDOUT_CAP_BYTES,
    DEFAULT_TIMEOUT_SECS,
    ExecStatus,
    ExecutionRequest,
    ExecutionResult,
    ExecutorError,
    InterpreterNotFound,
    NotAnError,
    TRUNCATION_MARKER,
    WorkdirInvalid,
    display_result,
    extract_traceback,
    run_script,
)
from .extraction import ExtractedCode, extract_code_block, wrap_code_block
from .gateway import (
    Backend,
    BackendConfig,
    BackendReply,
    BackendUnavailable,
    ChatExchange,
    Gateway,
    GatewayError,
    HttpChatBackend,
    HttpError,
    KeyedScriptedBackend,
    MissingBinding,
    Role,
    RoleUsage,
    ScriptExhausted,
    ScriptedBackend,
    TemplateId,
    UnknownTemplate,
    UsageLedger,
    build_backend,
    estimate_tokens,
    load_backend_config,
    placeholder_names,
    render_prompt,
    template_body,
)
from .harness import (
    SuiteReport,
    TaskRow,
    prepare_descriptions,
    render_report_table,
    replay,
    replay_transcript_pair,
    run_suite,
    run_task,
    save_report,
    select_descriptions,
    summarize_rows,
)
from .profiler import (
    DESCRIPTIONS_FILENAME,
    DataFileRef,
    FileDescription,
    ProfileStatus,
    ProfilerConfig,
    list_data_files,
    load_descriptions,
    profile_all,
    profile_file,
    save_descriptions,
)
from .repair import (
    CONDENSE_THRESHOLD_BYTES,
    DEFAULT_REPAIR_CAP,
    CondensedError,
    CondensedSource,
    RepairAttempt,
    RepairVariant,
    repair_loop,
    repair_probe,
    repair_solution,
    summarize_traceback,
)
from .retrieval import (
    DEFAULT_TOP_K,
    INDEX_FILENAME,
    DimensionMismatch,
    Embedder,
    EmbeddingVector,
    EmptyIndex,
    HashEmbedder,
    RetrievalIndex,
    ZeroVector,
    build_index,
    cosine_similarity,
    load_index,
    save_index,
    select_top_k,
)
from .tasks import (
    BadDataDir,
    Difficulty,
    MissingField,
    ScoreOutcome,
    ScoringKind,
    ScoringSpec,
    TaskBundle,
    TaskError,
    load_task,
    score_answer,
)
from .transcript import (
    FORMAT_VERSION,
    DivergenceAt,
    Transcript,
    TranscriptCorrupt,
    TranscriptError,
    TranscriptWriter,
    compare_transcripts,
    integrity_hash,
    read_transcript,
    reconstruct_queue,
)

__version__ = "0.1.0"
