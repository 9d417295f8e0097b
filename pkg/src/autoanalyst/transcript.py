"""Session journals: JSON-lines transcripts that replay byte for byte.

A transcript is a header line (task, file summaries, engine config, and an
integrity hash over all of it), one line per round, and a footer (or an
abort marker when the session died mid-flight). Everything is plain dicts
here; the engine owns the conversion to and from its own types.

Replay works by turning a finished transcript back into a scripted
response queue: feed those responses through the real engine and it must
walk the same path. ``reconstruct_queue`` encodes the exact call order the
engine makes, so the two must be changed together.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator, Sequence

FORMAT_VERSION = 1


class TranscriptError(Exception):
    pass


class TranscriptCorrupt(TranscriptError):
    """The file is unreadable or its header fails the integrity check."""


class DivergenceAt(TranscriptError):
    """Replaying the transcript produced a different round.

    ``index`` counts rounds; a divergence in the footer (or a re-run that
    ended early) reports the index one past the last recorded round.
    """

    def __init__(self, index: int, detail: str = "") -> None:
        msg = f"replay diverged at round {index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.index = index
        self.detail = detail


def integrity_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _dump_line(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n"


class TranscriptWriter:
    """Append-only journal; every record is flushed as soon as written."""

    def __init__(self, fh: IO[str], path: Path | None = None) -> None:
        self._fh = fh
        self.path = path

    @classmethod
    def open(cls, path: str | Path) -> "TranscriptWriter":
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        return cls(path.open("w", encoding="utf-8", newline="\n"), path)

    def _write(self, record: dict) -> None:
        self._fh.write(_dump_line(record))
        self._fh.flush()

    def write_header(self, fields: dict) -> None:
        record = {"kind": "header", "format_version": FORMAT_VERSION, **fields}
        record["integrity"] = integrity_hash(fields)
        self._write(record)

    def write_round(self, fields: dict) -> None:
        self._write({"kind": "round", **fields})

    def write_footer(self, fields: dict) -> None:
        self._write({"kind": "footer", **fields})

    def write_abort(self, error: str, detail: str) -> None:
        self._write({"kind": "abort", "error": error, "detail": detail})

    def close(self) -> None:
        self._fh.close()


@dataclass(frozen=True)
class Transcript:
    header: dict
    rounds: tuple[dict, ...]
    footer: dict | None
    abort: dict | None

    @property
    def complete(self) -> bool:
        return self.footer is not None


def _iter_records(path: Path) -> Iterator[dict]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TranscriptCorrupt(f"{path}:{lineno}: not valid JSON ({exc})") from None
            if not isinstance(record, dict) or "kind" not in record:
                raise TranscriptCorrupt(f"{path}:{lineno}: record has no kind")
            yield record


def read_transcript(path: str | Path, *, require_complete: bool = True) -> Transcript:
    """Parse and validate a transcript file.

    Raises TranscriptCorrupt on structural damage: bad JSON, a missing or
    tampered header (the integrity hash is recomputed), out-of-order
    rounds, or a missing footer when ``require_complete`` is set.
    """
    path = Path(path)
    if not path.is_file():
        raise TranscriptCorrupt(f"{path} does not exist")
    header: dict | None = None
    rounds: list[dict] = []
    footer: dict | None = None
    abort: dict | None = None
    for record in _iter_records(path):
        kind = record["kind"]
        if header is None:
            if kind != "header":
                raise TranscriptCorrupt(f"{path}: first record is {kind!r}, not a header")
            fields = {
                k: v
                for k, v in record.items()
                if k not in ("kind", "format_version", "integrity")
            }
            if record.get("format_version") != FORMAT_VERSION:
                raise TranscriptCorrupt(f"{path}: unsupported format_version")
            if record.get("integrity") != integrity_hash(fields):
                raise TranscriptCorrupt(f"{path}: header integrity hash does not match")
            header = fields
        elif kind == "round":
            if footer is not None or abort is not None:
                raise TranscriptCorrupt(f"{path}: round recorded after the footer")
            if record.get("round") != len(rounds):
                raise TranscriptCorrupt(
                    f"{path}: expected round {len(rounds)}, found {record.get('round')!r}"
                )
            rounds.append(record)
        elif kind == "footer":
            if footer is not None or abort is not None:
                raise TranscriptCorrupt(f"{path}: duplicate footer")
            footer = record
        elif kind == "abort":
            if footer is not None or abort is not None:
                raise TranscriptCorrupt(f"{path}: abort after footer")
            abort = record
        else:
            raise TranscriptCorrupt(f"{path}: unknown record kind {kind!r}")
    if header is None:
        raise TranscriptCorrupt(f"{path}: empty transcript")
    if require_complete and footer is None:
        raise TranscriptCorrupt(f"{path}: no footer; session did not complete")
    return Transcript(header=header, rounds=tuple(rounds), footer=footer, abort=abort)


# ---------------------------------------------------------------------------
# Queue reconstruction
# ---------------------------------------------------------------------------


def _repair_responses(repairs: Sequence[dict]) -> Iterator[dict]:
    for attempt in repairs:
        # A short traceback (source "raw") never reached the model. The
        # "raw_tail" source means a live backend failed mid-summarize; the
        # replayed backend answers instead, so the source flips to "llm"
        # and replay reports a divergence there. That is the honest outcome
        # for a transcript recorded during a backend outage.
        if attempt["condensed_source"] == "llm":
            yield {"role": "debugger", "response": attempt["summary_raw"]}
        elif attempt["condensed_source"] == "raw_tail":
            yield {"role": "debugger", "response": attempt["condensed_error"]}
        yield {"role": "debugger", "response": attempt["repair_raw"]}


def reconstruct_queue(transcript: Transcript) -> list[dict]:
    """Rebuild the scripted responses that reproduce this transcript.

    Mirrors the engine's call order exactly: initial plan and script, then
    per round verify / route / next step / next script (with any repair
    exchanges where they occurred), then the finalizer.
    """
    if not transcript.complete or not transcript.rounds:
        raise TranscriptError("only completed transcripts can be replayed")
    footer = transcript.footer
    assert footer is not None
    rounds = transcript.rounds
    queue: list[dict] = []

    def emit_generation(round_like: dict) -> None:
        queue.append({"role": "planner", "response": round_like["planner_raw"]})
        queue.append({"role": "coder", "response": round_like["coder_raw"]})
        queue.extend(_repair_responses(round_like.get("repairs") or []))

    emit_generation(rounds[0])
    for i, this_round in enumerate(rounds):
        queue.append({"role": "verifier", "response": this_round["verdict"]["raw"]})
        if this_round.get("route"):
            queue.append({"role": "router", "response": this_round["route"]["raw"]})
        if i + 1 < len(rounds):
            emit_generation(rounds[i + 1])
        elif footer.get("pending"):
            emit_generation(footer["pending"])

    fin = footer["finalize"]
    queue.append({"role": "finalizer", "response": fin["raw_response"]})
    queue.extend(_repair_responses(fin.get("repairs") or []))
    return queue


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------


def _strip_accounting(record: dict) -> dict:
    return {k: v for k, v in record.items() if k not in ("ledger_delta", "ledger")}


def compare_transcripts(original: Transcript, rerun: Transcript) -> None:
    """Raise DivergenceAt on the first difference between two transcripts.

    Accounting fields are compared only when the original was fully
    estimated (a scripted run): a transcript recorded against a live
    backend carries reported token counts a replay cannot reproduce.
    """
    footer = original.footer
    assert footer is not None
    ledger = footer.get("ledger", {})
    strict = ledger.get("estimated_calls") == ledger.get("totals", {}).get("calls")
    clean = (lambda r: r) if strict else _strip_accounting

    if clean(rerun.header) != clean(original.header):
        raise DivergenceAt(0, "header mismatch")
    for i, original_round in enumerate(original.rounds):
        if i >= len(rerun.rounds):
            detail = "re-run ended early"
            if rerun.abort:
                detail += f" ({rerun.abort.get('error')}: {rerun.abort.get('detail')})"
            raise DivergenceAt(i, detail)
        if clean(rerun.rounds[i]) != clean(original_round):
            raise DivergenceAt(i, _first_difference(clean(original_round), clean(rerun.rounds[i])))
    if len(rerun.rounds) > len(original.rounds):
        raise DivergenceAt(len(original.rounds), "re-run produced extra rounds")
    if rerun.footer is None:
        detail = "re-run aborted before the footer"
        if rerun.abort:
            detail += f" ({rerun.abort.get('error')})"
        raise DivergenceAt(len(original.rounds), detail)
    if clean(rerun.footer) != clean(footer):
        raise DivergenceAt(
            len(original.rounds),
            "footer mismatch: " + _first_difference(clean(footer), clean(rerun.footer)),
        )


def _first_difference(a: dict, b: dict) -> str:
    for key in sorted(set(a) | set(b)):
        if a.get(key) != b.get(key):
            return f"field {key!r} differs"
    return "records differ"
