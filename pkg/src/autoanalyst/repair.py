"""The debugging agent: condense tracebacks and regenerate failing scripts.

Two repair variants exist because probe scripts run before any file
descriptions exist (NoContext), while solution scripts can lean on the full
description set (WithContext). Both feed a condensed error report back to
the model; condensation itself is skipped for short tracebacks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

from .extraction import extract_code_block
from .gateway import (
    BackendUnavailable,
    Gateway,
    HttpError,
    Role,
    TemplateId,
)

log = logging.getLogger(__name__)

DEFAULT_REPAIR_CAP = 3
CONDENSE_THRESHOLD_BYTES = 1024
FALLBACK_TAIL_BYTES = 2048


class RepairVariant(str, Enum):
    NO_CONTEXT = "no_context"
    WITH_CONTEXT = "with_context"


class CondensedSource(str, Enum):
    LLM = "llm"  # summarizer response
    RAW = "raw"  # under the condensation threshold, passed through
    RAW_TAIL = "raw_tail"  # backend failed; last 2 KiB of the raw report


@dataclass(frozen=True)
class CondensedError:
    text: str
    source: CondensedSource
    # The unstripped summarizer response, kept so replays estimate the
    # same token counts the original run did. None unless source is LLM.
    raw: str | None = None


@dataclass(frozen=True)
class RepairAttempt:
    variant: RepairVariant
    attempt_index: int  # 1-based
    original_script: str
    condensed_error: str
    condensed_source: CondensedSource
    repaired_script: str
    repair_raw: str  # full model response the repaired script came from
    summary_raw: str | None = None  # full summarizer response, when one was made
    fenced: bool = True


def summarize_traceback(gw: Gateway, raw: str, script_name: str) -> CondensedError:
    """Condense an error report, or pass it through when already short.

    HTTP-backend failures degrade to the raw tail instead of killing the
    session; scripted-queue exhaustion still raises, because a scripted run
    that goes off-script must fail loudly.
    """
    if not raw:
        raise ValueError("cannot summarize an empty error report")
    if len(raw.encode("utf-8")) < CONDENSE_THRESHOLD_BYTES:
        return CondensedError(raw, CondensedSource.RAW)
    try:
        exchange = gw.ask(
            Role.DEBUGGER,
            TemplateId.TRACEBACK_SUMMARIZE,
            {"bug": raw, "filename": script_name},
        )
    except (HttpError, BackendUnavailable) as exc:
        log.warning("traceback summarizer failed (%s); using raw tail", exc)
        tail = raw.encode("utf-8")[-FALLBACK_TAIL_BYTES:]
        return CondensedError(tail.decode("utf-8", errors="ignore"), CondensedSource.RAW_TAIL)
    text = exchange.response.strip() or raw
    return CondensedError(text, CondensedSource.LLM, raw=exchange.response)


def repair_probe(gw: Gateway, script: str, condensed_error: str) -> tuple[str, bool, str]:
    """Regenerate a failing probe script from the error alone.

    Returns the repaired script, whether it arrived fenced, and the full
    model response it was extracted from.
    """
    exchange = gw.ask(
        Role.DEBUGGER,
        TemplateId.REPAIR_NO_CONTEXT,
        {"code": script, "bug": condensed_error},
    )
    extracted = extract_code_block(exchange.response)
    return extracted.text, extracted.fenced, exchange.response


def repair_solution(
    gw: Gateway,
    script: str,
    condensed_error: str,
    filenames: Sequence[str],
    summaries: Sequence[str],
) -> tuple[str, bool, str]:
    """Regenerate a failing solution script with the file descriptions."""
    exchange = gw.ask(
        Role.DEBUGGER,
        TemplateId.REPAIR_WITH_CONTEXT,
        {
            "code": script,
            "bug": condensed_error,
            "filenames": list(filenames),
            "summaries": list(summaries),
        },
    )
    extracted = extract_code_block(exchange.response)
    return extracted.text, extracted.fenced, exchange.response


RepairFn = Callable[[str, str], tuple[str, bool, str]]


def repair_loop(
    gw: Gateway,
    script: str,
    *,
    run: Callable[[str], object],
    failed: Callable[[object], bool],
    error_text: Callable[[object], str],
    repair: RepairFn,
    variant: RepairVariant,
    script_name: str,
    cap: int = DEFAULT_REPAIR_CAP,
) -> tuple[str, object, list[RepairAttempt]]:
    """Run a script, repairing up to ``cap`` times while ``failed`` holds.

    Returns the last script, its result, and the attempts made. A repair
    that hands back the very script that just failed is a stall; the loop
    aborts there instead of burning the remaining attempts on a fixpoint.
    """
    attempts: list[RepairAttempt] = []
    seen = {script}
    result = run(script)
    while failed(result) and len(attempts) < cap:
        raw_error = error_text(result)
        condensed = summarize_traceback(gw, raw_error, script_name)
        repaired, fenced, repair_raw = repair(script, condensed.text)
        attempts.append(
            RepairAttempt(
                variant=variant,
                attempt_index=len(attempts) + 1,
                original_script=script,
                condensed_error=condensed.text,
                condensed_source=condensed.source,
                repaired_script=repaired,
                repair_raw=repair_raw,
                summary_raw=condensed.raw,
                fenced=fenced,
            )
        )
        if repaired in seen:
            log.info("repair stalled on an already-seen script; aborting early")
            break
        seen.add(repaired)
        script = repaired
        result = run(script)
    return script, result, attempts
