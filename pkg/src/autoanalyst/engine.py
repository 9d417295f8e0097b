"""The refinement loop: plan, implement, execute, verify, route, finalize.

One round is one verification of the current (plan, script, result) triple.
On an insufficient verdict the router either appends a step or names a
wrong one; naming step l truncates the plan back to steps 1..l-1 and the
next step is regenerated by fresh sampling. The loop is strictly
sequential; every round is journaled so a session can be replayed exactly.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from . import executor as ex
from .extraction import extract_code_block
from .gateway import Gateway, Role, RoleUsage, TemplateId
from .profiler import FileDescription
from .repair import (
    DEFAULT_REPAIR_CAP,
    RepairAttempt,
    RepairVariant,
    repair_loop,
    repair_solution,
)
from .tasks import TaskBundle
from .transcript import TranscriptWriter

log = logging.getLogger(__name__)

DEFAULT_MAX_ROUNDS = 20


class EngineError(Exception):
    pass


class InvalidStep(EngineError):
    pass


class UnparseableVerdict(EngineError):
    def __init__(self, raw: str) -> None:
        super().__init__(
            "verifier response has no standalone yes/no in its first line: "
            f"{raw[:120]!r}"
        )
        self.raw = raw


class UnparseableRoute(EngineError):
    def __init__(self, raw: str) -> None:
        super().__init__(f"router response names neither Add Step nor a step: {raw[:120]!r}")
        self.raw = raw


class StepIndexOutOfRange(EngineError):
    def __init__(self, index: int, plan_len: int) -> None:
        super().__init__(f"router named step {index} of a {plan_len}-step plan")
        self.index = index
        self.plan_len = plan_len


# ---------------------------------------------------------------------------
# Plan types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    index: int  # 1-based
    text: str
    origin_round: int

    def __post_init__(self) -> None:
        if not self.text:
            raise InvalidStep("plan steps must have non-empty text")
        if self.index < 1:
            raise ValueError("step indices are 1-based")


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...] = ()

    def __post_init__(self) -> None:
        for i, step in enumerate(self.steps, 1):
            if step.index != i:
                raise ValueError(f"step {i} carries index {step.index}; plans are gapless")

    def __len__(self) -> int:
        return len(self.steps)

    def texts(self) -> list[str]:
        return [s.text for s in self.steps]

    def appended(self, text: str, origin_round: int) -> "Plan":
        step = PlanStep(index=len(self.steps) + 1, text=text, origin_round=origin_round)
        return Plan(self.steps + (step,))

    def truncated_before(self, index: int) -> "Plan":
        """Steps 1..index-1, re-indexed (a no-op for a prefix, by design)."""
        kept = self.steps[: index - 1]
        return Plan(tuple(replace(s, index=i) for i, s in enumerate(kept, 1)))


class VerdictValue(str, Enum):
    SUFFICIENT = "sufficient"
    INSUFFICIENT = "insufficient"


@dataclass(frozen=True)
class Verdict:
    value: VerdictValue
    raw_response: str

    @property
    def sufficient(self) -> bool:
        return self.value is VerdictValue.SUFFICIENT


class RouteKind(str, Enum):
    ADD_STEP = "add_step"
    WRONG_STEP = "wrong_step"


@dataclass(frozen=True)
class RouteDecision:
    kind: RouteKind
    raw_response: str
    wrong_index: int | None = None

    def __post_init__(self) -> None:
        if (self.kind is RouteKind.WRONG_STEP) != (self.wrong_index is not None):
            raise ValueError("wrong_index is set exactly for wrong-step decisions")


@dataclass(frozen=True)
class RoundRecord:
    round: int  # 0-based, one verification each
    plan_snapshot: tuple[PlanStep, ...]
    script: str
    exec_result: ex.ExecutionResult
    repairs: tuple[RepairAttempt, ...]
    verdict: Verdict
    route: RouteDecision | None
    ledger_delta: RoleUsage
    # Raw model responses behind this round's newest step and its script,
    # kept verbatim so replays re-consume byte-identical exchanges.
    planner_raw: str = ""
    coder_raw: str = ""


class TerminationReason(str, Enum):
    VERIFIER_SUFFICIENT = "verifier_sufficient"
    MAX_ROUNDS = "max_rounds"


@dataclass(frozen=True)
class PendingWork:
    """Script produced by the final refinement but never verified."""

    script: str
    exec_result: ex.ExecutionResult
    repairs: tuple[RepairAttempt, ...]
    planner_raw: str = ""
    coder_raw: str = ""


@dataclass(frozen=True)
class FinalizeRecord:
    response_script: str  # as extracted from the finalizer response
    final_script: str  # after any repairs
    repairs: tuple[RepairAttempt, ...]
    exec_result: ex.ExecutionResult
    answer: str
    unanswered: bool
    raw_response: str = ""


@dataclass(frozen=True)
class SessionOutcome:
    final_script: str
    final_answer: str
    rounds: tuple[RoundRecord, ...]
    terminated_by: TerminationReason
    ledger_totals: RoleUsage
    unanswered: bool
    final_plan: tuple[PlanStep, ...]
    pending: PendingWork | None
    finalize: FinalizeRecord
    transcript_path: Path | None = None


# ---------------------------------------------------------------------------
# Prompt context
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptContext:
    """The file list and summaries every prompt renders."""

    filenames: tuple[str, ...]
    summaries: tuple[str, ...]

    @classmethod
    def from_descriptions(cls, descriptions: Sequence[FileDescription]) -> "PromptContext":
        ordered = sorted(descriptions, key=lambda d: d.file.path)
        return cls(
            filenames=tuple(d.file.prompt_name for d in ordered),
            summaries=tuple(d.text for d in ordered),
        )

    def bindings(self) -> dict[str, object]:
        return {"filenames": list(self.filenames), "summaries": list(self.summaries)}


@dataclass(frozen=True)
class EngineConfig:
    max_rounds: int = DEFAULT_MAX_ROUNDS
    repair_cap: int = DEFAULT_REPAIR_CAP
    interpreter_cmd: str = ex.DEFAULT_INTERPRETER_CMD
    timeout: float = ex.DEFAULT_TIMEOUT_SECS
    stdout_cap: int = ex.DEFAULT_STDOUT_CAP_BYTES

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        # Pin numeric types so a config survives a JSON round trip unchanged.
        object.__setattr__(self, "max_rounds", int(self.max_rounds))
        object.__setattr__(self, "repair_cap", int(self.repair_cap))
        object.__setattr__(self, "timeout", float(self.timeout))
        object.__setattr__(self, "stdout_cap", int(self.stdout_cap))

    def to_dict(self) -> dict[str, object]:
        return {
            "max_rounds": self.max_rounds,
            "repair_cap": self.repair_cap,
            "interpreter_cmd": self.interpreter_cmd,
            "timeout": self.timeout,
            "stdout_cap": self.stdout_cap,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EngineConfig":
        return cls(
            max_rounds=int(raw["max_rounds"]),
            repair_cap=int(raw["repair_cap"]),
            interpreter_cmd=str(raw["interpreter_cmd"]),
            timeout=float(raw["timeout"]),
            stdout_cap=int(raw["stdout_cap"]),
        )


# ---------------------------------------------------------------------------
# Individual operations
# ---------------------------------------------------------------------------


def init_plan(
    gw: Gateway, query: str, ctx: PromptContext, *, origin_round: int = 0
) -> tuple[PlanStep, str]:
    """Ask the planner for the very first step; returns it with the raw reply."""
    exchange = gw.ask(
        Role.PLANNER, TemplateId.PLANNER_INIT, {"question": query, **ctx.bindings()}
    )
    text = exchange.response.strip()
    if not text:
        raise InvalidStep("planner returned an empty initial step")
    return PlanStep(index=1, text=text, origin_round=origin_round), exchange.response


def next_step(
    gw: Gateway, plan: Plan, query: str, last_result_text: str, ctx: PromptContext
) -> tuple[str, str]:
    """Ask the planner for the next step given the plan so far and results."""
    exchange = gw.ask(
        Role.PLANNER,
        TemplateId.PLANNER_NEXT,
        {
            "question": query,
            "steps": plan.texts(),
            "result": last_result_text,
            **ctx.bindings(),
        },
    )
    text = exchange.response.strip()
    if not text:
        raise InvalidStep("planner returned an empty next step")
    return text, exchange.response


def _plan_binding(plan: Plan) -> str:
    if len(plan) == 1:
        return plan.steps[0].text
    return "\n".join(f"{i}. {t}" for i, t in enumerate(plan.texts(), 1))


def implement_initial(gw: Gateway, plan: Plan, ctx: PromptContext) -> tuple[str, str]:
    """Implement a plan from scratch (initial round, or after a full reset)."""
    exchange = gw.ask(
        Role.CODER,
        TemplateId.CODER_INIT,
        {"plan": _plan_binding(plan), **ctx.bindings()},
    )
    return extract_code_block(exchange.response).text, exchange.response


def implement_step(
    gw: Gateway, base_script: str, plan: Plan, new_step: PlanStep, ctx: PromptContext
) -> tuple[str, str]:
    """Implement the newest step on top of the script for the previous ones."""
    exchange = gw.ask(
        Role.CODER,
        TemplateId.CODER_NEXT,
        {
            "base_code": base_script,
            "steps": plan.texts()[:-1],
            "next_step": new_step.text,
            **ctx.bindings(),
        },
    )
    return extract_code_block(exchange.response).text, exchange.response


def parse_verdict(raw: str) -> Verdict:
    """First non-empty line, first standalone yes/no token, case-insensitive."""
    first = next((line for line in raw.splitlines() if line.strip()), "")
    for token in re.findall(r"[a-z]+", first.lower()):
        if token == "yes":
            return Verdict(VerdictValue.SUFFICIENT, raw)
        if token == "no":
            return Verdict(VerdictValue.INSUFFICIENT, raw)
    raise UnparseableVerdict(raw)


def verify(
    gw: Gateway, plan: Plan, query: str, script: str, result_text: str
) -> Verdict:
    exchange = gw.ask(
        Role.VERIFIER,
        TemplateId.VERIFIER,
        {
            "steps": plan.texts(),
            "code": script,
            "result": result_text,
            "question": query,
        },
    )
    return parse_verdict(exchange.response)


def parse_route(raw: str, plan_len: int) -> RouteDecision:
    """"add step" anywhere wins; otherwise the first "step <n>" mention."""
    lowered = raw.lower()
    if re.search(r"\badd\s+step\b", lowered):
        return RouteDecision(RouteKind.ADD_STEP, raw)
    match = re.search(r"\bstep\s+(\d+)", lowered)
    if match:
        index = int(match.group(1))
        if not 1 <= index <= plan_len:
            raise StepIndexOutOfRange(index, plan_len)
        return RouteDecision(RouteKind.WRONG_STEP, raw, wrong_index=index)
    raise UnparseableRoute(raw)


def route(
    gw: Gateway, plan: Plan, query: str, result_text: str, ctx: PromptContext
) -> RouteDecision:
    exchange = gw.ask(
        Role.ROUTER,
        TemplateId.ROUTER,
        {
            "question": query,
            "steps": plan.texts(),
            "result": result_text,
            **ctx.bindings(),
        },
    )
    return parse_route(exchange.response, len(plan))


def apply_route(plan: Plan, decision: RouteDecision) -> Plan:
    """Add-step keeps the plan; wrong-step l keeps exactly steps 1..l-1."""
    if decision.kind is RouteKind.ADD_STEP:
        return plan
    assert decision.wrong_index is not None
    return plan.truncated_before(decision.wrong_index)


def select_base_script(rounds: Sequence[RoundRecord], plan: Plan) -> str | None:
    """Most recent recorded script whose plan snapshot prefixes ``plan``.

    The coder's base code must implement the previous steps; after a
    truncation that is the newest script from the surviving prefix era. No
    match (a truncation to nothing) means regenerating from scratch.
    """
    targets = plan.texts()
    for record in reversed(rounds):
        snapshot = [s.text for s in record.plan_snapshot]
        if len(snapshot) <= len(targets) and targets[: len(snapshot)] == snapshot:
            return record.script
    return None


# ---------------------------------------------------------------------------
# The session loop
# ---------------------------------------------------------------------------


class _LedgerMarker:
    def __init__(self, gw: Gateway) -> None:
        self._gw = gw
        self._mark = gw.ledger.totals

    def take(self) -> RoleUsage:
        now = self._gw.ledger.totals
        delta = now - self._mark
        self._mark = now
        return delta


def _execute_and_repair(
    gw: Gateway,
    script: str,
    task: TaskBundle,
    cfg: EngineConfig,
    ctx: PromptContext,
) -> tuple[str, ex.ExecutionResult, tuple[RepairAttempt, ...]]:
    def run(text: str) -> ex.ExecutionResult:
        return ex.run_script(
            ex.ExecutionRequest(
                script_text=text,
                workdir=task.workdir,
                timeout=cfg.timeout,
                interpreter_cmd=cfg.interpreter_cmd,
                stdout_cap=cfg.stdout_cap,
            )
        )

    def failed(result: object) -> bool:
        assert isinstance(result, ex.ExecutionResult)
        return result.status is ex.ExecStatus.RUNTIME_ERROR

    def error_text(result: object) -> str:
        assert isinstance(result, ex.ExecutionResult)
        return ex.extract_traceback(result)

    final_script, result, attempts = repair_loop(
        gw,
        script,
        run=run,
        failed=failed,
        error_text=error_text,
        repair=lambda code, bug: repair_solution(
            gw, code, bug, list(ctx.filenames), list(ctx.summaries)
        ),
        variant=RepairVariant.WITH_CONTEXT,
        script_name="solution",
        cap=cfg.repair_cap,
    )
    assert isinstance(result, ex.ExecutionResult)
    return final_script, result, tuple(attempts)


def _result_text(result: ex.ExecutionResult, cfg: EngineConfig) -> str:
    return ex.display_result(result, timeout=cfg.timeout)


def run_session(
    task: TaskBundle,
    descriptions: Sequence[FileDescription] | PromptContext,
    gw: Gateway,
    cfg: EngineConfig | None = None,
    *,
    transcript_path: str | Path | None = None,
) -> SessionOutcome:
    """Drive the full loop for one task and produce the final answer.

    ``descriptions`` must already be profiled (and retrieval-filtered when
    the data lake is larger than the retrieval budget). A transcript is
    journaled to ``transcript_path`` when given; on hard failures
    (unparseable judgments, scripted-queue exhaustion) the partial
    transcript is flushed with an abort footer before the error propagates.
    """
    cfg = cfg or EngineConfig()
    ctx = (
        descriptions
        if isinstance(descriptions, PromptContext)
        else PromptContext.from_descriptions(descriptions)
    )
    writer = TranscriptWriter.open(transcript_path) if transcript_path else None
    if writer:
        writer.write_header(_header_dict(task, ctx, cfg))
    try:
        outcome = _run_session_inner(task, ctx, gw, cfg, writer)
    except Exception as exc:
        if writer:
            writer.write_abort(type(exc).__name__, str(exc))
            writer.close()
        raise
    if writer:
        writer.close()
    return replace(outcome, transcript_path=Path(transcript_path) if transcript_path else None)


def _run_session_inner(
    task: TaskBundle,
    ctx: PromptContext,
    gw: Gateway,
    cfg: EngineConfig,
    writer: TranscriptWriter | None,
) -> SessionOutcome:
    marker = _LedgerMarker(gw)
    rounds: list[RoundRecord] = []

    first_step, planner_raw = init_plan(gw, task.query, ctx)
    plan = Plan((first_step,))
    script, coder_raw = implement_initial(gw, plan, ctx)
    script, result, repairs = _execute_and_repair(gw, script, task, cfg, ctx)

    terminated = TerminationReason.MAX_ROUNDS
    pending: PendingWork | None = None

    for round_no in range(cfg.max_rounds):
        verdict = verify(gw, plan, task.query, script, _result_text(result, cfg))
        decision = None
        if not verdict.sufficient:
            decision = route(gw, plan, task.query, _result_text(result, cfg), ctx)
        record = RoundRecord(
            round=round_no,
            plan_snapshot=plan.steps,
            script=script,
            exec_result=result,
            repairs=repairs,
            verdict=verdict,
            route=decision,
            ledger_delta=marker.take(),
            planner_raw=planner_raw,
            coder_raw=coder_raw,
        )
        rounds.append(record)
        if writer:
            writer.write_round(round_to_dict(record))
        if verdict.sufficient:
            terminated = TerminationReason.VERIFIER_SUFFICIENT
            break

        assert decision is not None
        plan = apply_route(plan, decision)
        if len(plan) == 0:
            # The first step itself was wrong: restart planning from scratch.
            first_step, planner_raw = init_plan(
                gw, task.query, ctx, origin_round=round_no + 1
            )
            plan = Plan((first_step,))
            script, coder_raw = implement_initial(gw, plan, ctx)
        else:
            text, planner_raw = next_step(
                gw, plan, task.query, _result_text(result, cfg), ctx
            )
            plan = plan.appended(text, origin_round=round_no + 1)
            base = select_base_script(rounds, plan)
            if base is None:
                script, coder_raw = implement_initial(gw, plan, ctx)
            else:
                script, coder_raw = implement_step(gw, base, plan, plan.steps[-1], ctx)
        script, result, repairs = _execute_and_repair(gw, script, task, cfg, ctx)
    else:
        log.info("session %s hit the %d-round cap", task.id, cfg.max_rounds)
        pending = PendingWork(
            script=script,
            exec_result=result,
            repairs=repairs,
            planner_raw=planner_raw,
            coder_raw=coder_raw,
        )

    fin = finalize(gw, task, script, result, ctx, cfg)
    outcome = SessionOutcome(
        final_script=fin.final_script,
        final_answer=fin.answer,
        rounds=tuple(rounds),
        terminated_by=terminated,
        ledger_totals=gw.ledger.totals,
        unanswered=fin.unanswered,
        final_plan=plan.steps,
        pending=pending,
        finalize=fin,
    )
    if writer:
        writer.write_footer(footer_dict(outcome, gw))
    return outcome


def finalize(
    gw: Gateway,
    task: TaskBundle,
    best_script: str,
    best_result: ex.ExecutionResult,
    ctx: PromptContext,
    cfg: EngineConfig,
) -> FinalizeRecord:
    """Rewrite the best script so it prints the answer per the guideline.

    An empty guideline is allowed (the template still renders). If the
    final script cannot be made to run within the repair cap, the outcome
    is flagged unanswered with an empty answer rather than guessed at.
    """
    exchange = gw.ask(
        Role.FINALIZER,
        TemplateId.FINALIZER,
        {
            "code": best_script,
            "result": _result_text(best_result, cfg),
            "question": task.query,
            "guidelines": task.guideline or "",
            **ctx.bindings(),
        },
    )
    response_script = extract_code_block(exchange.response).text
    final_script, result, attempts = _execute_and_repair(
        gw, response_script, task, cfg, ctx
    )
    if result.success:
        return FinalizeRecord(
            response_script=response_script,
            final_script=final_script,
            repairs=tuple(attempts),
            exec_result=result,
            answer=result.stdout.strip(),
            unanswered=False,
            raw_response=exchange.response,
        )
    return FinalizeRecord(
        response_script=response_script,
        final_script=final_script,
        repairs=tuple(attempts),
        exec_result=result,
        answer="",
        unanswered=True,
        raw_response=exchange.response,
    )


# ---------------------------------------------------------------------------
# Serialization (plain dicts; the transcript module handles files)
# ---------------------------------------------------------------------------


def _header_dict(task: TaskBundle, ctx: PromptContext, cfg: EngineConfig) -> dict:
    return {
        "task_id": task.id,
        "workdir": str(task.workdir),
        "query": task.query,
        "guideline": task.guideline,
        "filenames": list(ctx.filenames),
        "summaries": list(ctx.summaries),
        "config": cfg.to_dict(),
    }


def _steps_to_dicts(steps: Sequence[PlanStep]) -> list[dict]:
    return [
        {"index": s.index, "text": s.text, "origin_round": s.origin_round}
        for s in steps
    ]


def steps_from_dicts(raw: Sequence[dict]) -> tuple[PlanStep, ...]:
    return tuple(
        PlanStep(index=d["index"], text=d["text"], origin_round=d["origin_round"])
        for d in raw
    )


def _exec_to_dict(result: ex.ExecutionResult) -> dict:
    # Durations are deliberately not serialized: transcripts must be
    # byte-identical across replays, and wall clock never is.
    return {
        "status": result.status.value,
        "exit_code": result.exit_code,
        "stdout": result.stdout,
        "stderr": result.stderr,
        "stdout_truncated": result.stdout_truncated,
        "created_files": list(result.created_files),
    }


def exec_from_dict(raw: dict) -> ex.ExecutionResult:
    return ex.ExecutionResult(
        status=ex.ExecStatus(raw["status"]),
        stdout=raw["stdout"],
        stderr=raw["stderr"],
        exit_code=raw["exit_code"],
        duration=0.0,
        stdout_truncated=raw["stdout_truncated"],
        created_files=tuple(raw["created_files"]),
    )


def _repairs_to_dicts(repairs: Sequence[RepairAttempt]) -> list[dict]:
    return [
        {
            "variant": a.variant.value,
            "attempt_index": a.attempt_index,
            "original_script": a.original_script,
            "condensed_error": a.condensed_error,
            "condensed_source": a.condensed_source.value,
            "repaired_script": a.repaired_script,
            "repair_raw": a.repair_raw,
            "summary_raw": a.summary_raw,
            "fenced": a.fenced,
        }
        for a in repairs
    ]


def round_to_dict(record: RoundRecord) -> dict:
    return {
        "round": record.round,
        "plan": _steps_to_dicts(record.plan_snapshot),
        "script": record.script,
        "planner_raw": record.planner_raw,
        "coder_raw": record.coder_raw,
        "exec": _exec_to_dict(record.exec_result),
        "repairs": _repairs_to_dicts(record.repairs),
        "verdict": {"value": record.verdict.value.value, "raw": record.verdict.raw_response},
        "route": (
            None
            if record.route is None
            else {
                "kind": record.route.kind.value,
                "wrong_index": record.route.wrong_index,
                "raw": record.route.raw_response,
            }
        ),
        "ledger_delta": {
            "calls": record.ledger_delta.calls,
            "input_tokens": record.ledger_delta.input_tokens,
            "output_tokens": record.ledger_delta.output_tokens,
        },
    }


def footer_dict(outcome: SessionOutcome, gw: Gateway) -> dict:
    fin = outcome.finalize
    return {
        "terminated_by": outcome.terminated_by.value,
        "final_plan": _steps_to_dicts(outcome.final_plan),
        "pending": (
            None
            if outcome.pending is None
            else {
                "script": outcome.pending.script,
                "planner_raw": outcome.pending.planner_raw,
                "coder_raw": outcome.pending.coder_raw,
                "exec": _exec_to_dict(outcome.pending.exec_result),
                "repairs": _repairs_to_dicts(outcome.pending.repairs),
            }
        ),
        "finalize": {
            "response_script": fin.response_script,
            "final_script": fin.final_script,
            "raw_response": fin.raw_response,
            "repairs": _repairs_to_dicts(fin.repairs),
            "exec": _exec_to_dict(fin.exec_result),
        },
        "final_script": outcome.final_script,
        "final_answer": outcome.final_answer,
        "unanswered": outcome.unanswered,
        "ledger": {
            "per_role": {
                role.value: {
                    "calls": usage.calls,
                    "input_tokens": usage.input_tokens,
                    "output_tokens": usage.output_tokens,
                }
                for role, usage in sorted(gw.ledger.per_role.items())
            },
            "totals": {
                "calls": gw.ledger.totals.calls,
                "input_tokens": gw.ledger.totals.input_tokens,
                "output_tokens": gw.ledger.totals.output_tokens,
            },
            "estimated_calls": gw.ledger.estimated_calls,
        },
    }
