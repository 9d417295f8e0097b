"""Benchmark orchestration: run task suites, grade answers, replay journals.

A suite run is profile -> retrieve -> refine -> finalize -> score for each
task directory, with per-task isolation (one task blowing up is a row in
the report, not a dead run) and optional thread fan-out.
"""
from __future__ import annotations

import json
import logging
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .engine import (
    EngineConfig,
    PromptContext,
    SessionOutcome,
    run_session,
)
from .gateway import Gateway, RoleUsage
from .profiler import (
    DESCRIPTIONS_FILENAME,
    FileDescription,
    ProfilerConfig,
    list_data_files,
    load_descriptions,
    profile_all,
    save_descriptions,
)
from .retrieval import (
    DEFAULT_TOP_K,
    INDEX_FILENAME,
    Embedder,
    HashEmbedder,
    build_index,
    load_index,
    save_index,
    select_top_k,
)
from .tasks import TaskBundle, load_task, score_answer
from .transcript import (
    DivergenceAt,
    Transcript,
    compare_transcripts,
    read_transcript,
    reconstruct_queue,
)
from .gateway import ScriptedBackend

log = logging.getLogger(__name__)

DEFAULT_EMBED_DIM = 64

GatewayFactory = Callable[[], Gateway]


# ---------------------------------------------------------------------------
# Per-task pipeline
# ---------------------------------------------------------------------------


def prepare_descriptions(
    gw: Gateway,
    task: TaskBundle,
    *,
    engine_cfg: EngineConfig,
    profile_parallelism: int = 1,
    refresh: bool = False,
) -> list[FileDescription]:
    """Profile the task's data files, reusing the on-disk cache when fresh."""
    files = list_data_files(task.data_dir)
    cache = task.workdir / DESCRIPTIONS_FILENAME
    if not refresh:
        cached = load_descriptions(cache, files)
        if cached is not None:
            return cached
    cfg = ProfilerConfig(
        workdir=task.workdir,
        interpreter_cmd=engine_cfg.interpreter_cmd,
        timeout=engine_cfg.timeout,
        stdout_cap=engine_cfg.stdout_cap,
        repair_cap=engine_cfg.repair_cap,
        parallelism=profile_parallelism,
    )
    descriptions = profile_all(gw, cfg, files)
    save_descriptions(cache, descriptions)
    return descriptions


def select_descriptions(
    task: TaskBundle,
    descriptions: Sequence[FileDescription],
    *,
    top_k: int = DEFAULT_TOP_K,
    embedder: Embedder | None = None,
) -> list[FileDescription]:
    """Keep the top-k query-similar files; small data lakes pass whole.

    The index is persisted beside the descriptions cache so rankings can
    be inspected after the fact.
    """
    if len(descriptions) <= top_k:
        return list(descriptions)
    embedder = embedder or HashEmbedder(DEFAULT_EMBED_DIM)
    index_path = task.workdir / INDEX_FILENAME
    files = [d.file for d in descriptions]
    index = None
    if index_path.is_file():
        try:
            index = load_index(index_path, files)
            if index.dim != embedder.dim:
                index = None
        except Exception:
            index = None
    if index is None:
        index = build_index(embedder, descriptions)
        save_index(index_path, index)
    keep = {ref.path for ref in select_top_k(embedder.embed(task.query), index, top_k)}
    return [d for d in descriptions if d.file.path in keep]


def run_task(
    gw: Gateway,
    task: TaskBundle,
    *,
    engine_cfg: EngineConfig | None = None,
    top_k: int = DEFAULT_TOP_K,
    embedder: Embedder | None = None,
    profile_parallelism: int = 1,
    transcript_path: Path | None = None,
) -> SessionOutcome:
    """The full pipeline for one task, returning the session outcome."""
    engine_cfg = engine_cfg or EngineConfig()
    descriptions = prepare_descriptions(
        gw, task, engine_cfg=engine_cfg, profile_parallelism=profile_parallelism
    )
    selected = select_descriptions(task, descriptions, top_k=top_k, embedder=embedder)
    return run_session(task, selected, gw, engine_cfg, transcript_path=transcript_path)


# ---------------------------------------------------------------------------
# Suite reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskRow:
    task_id: str
    difficulty: str | None
    answer: str
    gold: str | None
    correct: bool
    diagnostic: str
    rounds: int | None
    terminated_by: str | None
    unanswered: bool | None
    calls: int
    input_tokens: int
    output_tokens: int
    error: str | None = None
    transcript: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SuiteReport:
    rows: tuple[TaskRow, ...]
    accuracy_total: float
    accuracy_by_difficulty: dict[str, float]
    mean_rounds_by_difficulty: dict[str, float]
    total_calls: int
    total_input_tokens: int
    total_output_tokens: int
    cost_usd: float | None

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "accuracy_total": self.accuracy_total,
            "accuracy_by_difficulty": self.accuracy_by_difficulty,
            "mean_rounds_by_difficulty": self.mean_rounds_by_difficulty,
            "total_calls": self.total_calls,
            "total_input_tokens": self.total_input_tokens,
            "total_output_tokens": self.total_output_tokens,
            "cost_usd": self.cost_usd,
        }


def _difficulty_key(row: TaskRow) -> str:
    return row.difficulty or "unspecified"


def summarize_rows(
    rows: Sequence[TaskRow], *, price_in: float | None = None, price_out: float | None = None
) -> SuiteReport:
    """Aggregate per-task rows; totals cross-foot against the rows by
    construction, and accuracy counts raw correctness over all tasks."""
    rows = tuple(rows)
    count = len(rows)
    accuracy = (sum(1 for r in rows if r.correct) / count) if count else 0.0

    by_diff: dict[str, list[TaskRow]] = {}
    for row in rows:
        by_diff.setdefault(_difficulty_key(row), []).append(row)
    accuracy_by = {
        key: sum(1 for r in group if r.correct) / len(group)
        for key, group in sorted(by_diff.items())
    }
    mean_rounds_by = {}
    for key, group in sorted(by_diff.items()):
        counted = [r.rounds for r in group if r.rounds is not None]
        if counted:
            mean_rounds_by[key] = sum(counted) / len(counted)

    calls = sum(r.calls for r in rows)
    tokens_in = sum(r.input_tokens for r in rows)
    tokens_out = sum(r.output_tokens for r in rows)
    cost = None
    if price_in is not None and price_out is not None:
        cost = price_in * tokens_in + price_out * tokens_out
    return SuiteReport(
        rows=rows,
        accuracy_total=accuracy,
        accuracy_by_difficulty=accuracy_by,
        mean_rounds_by_difficulty=mean_rounds_by,
        total_calls=calls,
        total_input_tokens=tokens_in,
        total_output_tokens=tokens_out,
        cost_usd=cost,
    )


def _run_one(
    factory: GatewayFactory,
    task_dir: Path,
    *,
    engine_cfg: EngineConfig,
    top_k: int,
    embedder: Embedder | None,
    transcript_dir: Path | None,
) -> TaskRow:
    transcript_path: Path | None = None
    task_id = task_dir.name
    try:
        task = load_task(task_dir)
        task_id = task.id
        if transcript_dir is not None:
            safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in task.id)
            transcript_path = transcript_dir / f"{safe}.jsonl"
        gw = factory()
        outcome = run_task(
            gw,
            task,
            engine_cfg=engine_cfg,
            top_k=top_k,
            embedder=embedder,
            transcript_path=transcript_path,
        )
    except Exception as exc:
        log.warning("task %s failed: %s", task_id, exc)
        return TaskRow(
            task_id=task_id,
            difficulty=None,
            answer="",
            gold=None,
            correct=False,
            diagnostic="task run failed",
            rounds=None,
            terminated_by=None,
            unanswered=None,
            calls=0,
            input_tokens=0,
            output_tokens=0,
            error=f"{type(exc).__name__}: {exc}",
            transcript=str(transcript_path) if transcript_path else None,
        )

    if task.gold_answer is None:
        correct, diagnostic = False, "no gold answer to grade against"
    else:
        outcome_score = score_answer(outcome.final_answer, task.gold_answer, task.scoring)
        correct, diagnostic = outcome_score.correct, outcome_score.diagnostic
    totals: RoleUsage = outcome.ledger_totals
    return TaskRow(
        task_id=task.id,
        difficulty=task.difficulty.value if task.difficulty else None,
        answer=outcome.final_answer,
        gold=task.gold_answer,
        correct=correct,
        diagnostic=diagnostic,
        rounds=len(outcome.rounds),
        terminated_by=outcome.terminated_by.value,
        unanswered=outcome.unanswered,
        calls=totals.calls,
        input_tokens=totals.input_tokens,
        output_tokens=totals.output_tokens,
        transcript=str(transcript_path) if transcript_path else None,
    )


def run_suite(
    task_dirs: Sequence[str | Path],
    gateway_factory: GatewayFactory,
    *,
    engine_cfg: EngineConfig | None = None,
    top_k: int = DEFAULT_TOP_K,
    embedder: Embedder | None = None,
    parallel: int = 1,
    transcript_dir: str | Path | None = None,
    price_in: float | None = None,
    price_out: float | None = None,
) -> SuiteReport:
    """Run every task directory and aggregate a report.

    ``gateway_factory`` is called once per task so each gets a fresh
    backend (scripted queues must not be shared across tasks). Failures
    are captured per task; the suite always finishes.
    """
    engine_cfg = engine_cfg or EngineConfig()
    transcript_dir = Path(transcript_dir) if transcript_dir else None
    if transcript_dir is not None:
        transcript_dir.mkdir(parents=True, exist_ok=True)
    dirs = [Path(d) for d in task_dirs]

    def job(task_dir: Path) -> TaskRow:
        return _run_one(
            gateway_factory,
            task_dir,
            engine_cfg=engine_cfg,
            top_k=top_k,
            embedder=embedder,
            transcript_dir=transcript_dir,
        )

    if parallel > 1 and len(dirs) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(job, dirs))
    else:
        rows = [job(d) for d in dirs]
    return summarize_rows(rows, price_in=price_in, price_out=price_out)


def save_report(path: str | Path, report: SuiteReport) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def render_report_table(report: SuiteReport) -> str:
    """A small fixed-width summary for terminals."""
    lines = []
    header = f"{'task':<24} {'diff':<11} {'rounds':>6} {'ok':<3} answer"
    lines.append(header)
    lines.append("-" * len(header))
    for row in report.rows:
        answer = row.answer.replace("\n", " ")
        if len(answer) > 40:
            answer = answer[:37] + "..."
        if row.error:
            answer = f"<error: {row.error[:40]}>"
        lines.append(
            f"{row.task_id[:24]:<24} {(row.difficulty or '-'):<11} "
            f"{('-' if row.rounds is None else row.rounds):>6} "
            f"{'yes' if row.correct else 'no':<3} {answer}"
        )
    lines.append("-" * len(header))
    lines.append(f"accuracy: {report.accuracy_total:.3f} over {len(report.rows)} tasks")
    for key, value in report.accuracy_by_difficulty.items():
        mean = report.mean_rounds_by_difficulty.get(key)
        rounds = f", mean rounds {mean:.2f}" if mean is not None else ""
        lines.append(f"  {key}: accuracy {value:.3f}{rounds}")
    cost = f"${report.cost_usd:.4f}" if report.cost_usd is not None else "n/a"
    lines.append(
        f"calls: {report.total_calls}, tokens in/out: "
        f"{report.total_input_tokens}/{report.total_output_tokens}, cost: {cost}"
    )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


def replay(
    transcript_path: str | Path,
    *,
    transcript_out: str | Path | None = None,
) -> SessionOutcome:
    """Re-drive a recorded session and insist on the identical journal.

    The recorded responses become a scripted backend; the engine re-runs
    against the same data directory; the fresh journal must match the old
    one record for record. TranscriptCorrupt means the file itself is
    damaged; DivergenceAt(i) means the re-run left the recorded path at
    round i.
    """
    original = read_transcript(transcript_path)
    queue = reconstruct_queue(original)
    header = original.header
    task = TaskBundle(
        id=str(header["task_id"]),
        query=str(header["query"]),
        data_dir=Path(header["workdir"]) / "data",
        guideline=header.get("guideline"),
    )
    ctx = PromptContext(
        filenames=tuple(header["filenames"]), summaries=tuple(header["summaries"])
    )
    cfg = EngineConfig.from_dict(header["config"])
    gw = Gateway(ScriptedBackend(queue))

    cleanup_dir: tempfile.TemporaryDirectory | None = None
    if transcript_out is None:
        cleanup_dir = tempfile.TemporaryDirectory(prefix="replay-")
        out_path = Path(cleanup_dir.name) / "rerun.jsonl"
    else:
        out_path = Path(transcript_out)
    try:
        outcome: SessionOutcome | None = None
        try:
            outcome = run_session(task, ctx, gw, cfg, transcript_path=out_path)
        except Exception as exc:
            log.warning("replay re-run aborted: %s", exc)
        rerun = read_transcript(out_path, require_complete=False)
        compare_transcripts(original, rerun)
        assert outcome is not None  # a complete, matching re-run implies success
        return outcome
    finally:
        if cleanup_dir is not None:
            cleanup_dir.cleanup()


def replay_transcript_pair(
    transcript_path: str | Path, transcript_out: str | Path
) -> tuple[Transcript, Transcript, SessionOutcome]:
    """Replay and hand back both parsed journals (for byte-level checks)."""
    outcome = replay(transcript_path, transcript_out=transcript_out)
    return (
        read_transcript(transcript_path),
        read_transcript(transcript_out),
        outcome,
    )


__all__ = [
    "DEFAULT_EMBED_DIM",
    "DivergenceAt",
    "GatewayFactory",
    "SuiteReport",
    "TaskRow",
    "prepare_descriptions",
    "render_report_table",
    "replay",
    "replay_transcript_pair",
    "run_suite",
    "run_task",
    "save_report",
    "select_descriptions",
    "select_top_k",
    "summarize_rows",
]
