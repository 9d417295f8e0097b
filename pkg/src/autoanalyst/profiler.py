"""File profiling: generate a probe script per data file, run it, keep stdout.

The printed output of a successful probe becomes the file's description,
which is the context every downstream role sees. Failures are repaired up
to a cap; a file whose probes never succeed keeps its last error text as
context (still better than nothing for planning).
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from . import executor as ex
from .extraction import extract_code_block
from .gateway import Gateway, Role, TemplateId
from .repair import (
    DEFAULT_REPAIR_CAP,
    RepairVariant,
    repair_loop,
    repair_probe,
)

log = logging.getLogger(__name__)

DESCRIPTIONS_FILENAME = "descriptions.json"
_DESCRIPTIONS_VERSION = 1

EMPTY_OUTPUT_BUG = "The script ran successfully but printed nothing to stdout."


class ProfileStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"


@dataclass(frozen=True)
class DataFileRef:
    """One file inside a task's data directory."""

    path: str  # relative to the data directory, POSIX separators
    size: int
    extension: str

    def __post_init__(self) -> None:
        p = Path(self.path)
        if p.is_absolute() or ".." in p.parts:
            raise ValueError(f"data file path escapes the data directory: {self.path}")

    @property
    def prompt_name(self) -> str:
        """The name prompts use; scripts run with the task dir as cwd."""
        return f"data/{self.path}"


@dataclass(frozen=True)
class FileDescription:
    file: DataFileRef
    text: str  # probe stdout when ok; last error text when failed
    probe_script: str
    attempts: int  # repair attempts consumed
    status: ProfileStatus
    truncated: bool = False
    unfenced: bool = False  # probe response carried no code fence
    source_mtime_ns: int = 0

    @property
    def ok(self) -> bool:
        return self.status is ProfileStatus.OK


def list_data_files(data_dir: str | Path) -> list[DataFileRef]:
    """Enumerate files under ``data_dir``, sorted by relative path."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise NotADirectoryError(f"not a data directory: {data_dir}")
    refs = []
    for path in sorted(p for p in data_dir.rglob("*") if p.is_file()):
        rel = path.relative_to(data_dir).as_posix()
        refs.append(
            DataFileRef(path=rel, size=path.stat().st_size, extension=path.suffix)
        )
    return refs


@dataclass(frozen=True)
class ProfilerConfig:
    workdir: Path  # task directory containing data/
    interpreter_cmd: str = ex.DEFAULT_INTERPRETER_CMD
    timeout: float = ex.DEFAULT_TIMEOUT_SECS
    stdout_cap: int = ex.DEFAULT_STDOUT_CAP_BYTES
    repair_cap: int = DEFAULT_REPAIR_CAP
    parallelism: int = 1


def generate_probe_script(gw: Gateway, file: DataFileRef) -> tuple[str, bool]:
    """Ask the analyzer role for a probe script; extract its code block."""
    exchange = gw.ask(Role.ANALYZER, TemplateId.ANALYZER, {"filename": file.prompt_name})
    extracted = extract_code_block(exchange.response)
    if not extracted.fenced:
        log.info("probe response for %s had no code fence; using it whole", file.path)
    return extracted.text, extracted.fenced


def profile_file(gw: Gateway, cfg: ProfilerConfig, file: DataFileRef) -> FileDescription:
    """Generate, execute, and if necessary repair the probe for one file.

    A probe counts as failed when it raises or when it prints nothing: an
    empty description is useless, so it goes through repair like an error.
    Timeouts are terminal (repairing them would just burn wall clock).
    """
    script, fenced = generate_probe_script(gw, file)

    def run(text: str) -> ex.ExecutionResult:
        return ex.run_script(
            ex.ExecutionRequest(
                script_text=text,
                workdir=cfg.workdir,
                timeout=cfg.timeout,
                interpreter_cmd=cfg.interpreter_cmd,
                stdout_cap=cfg.stdout_cap,
            )
        )

    def failed(result: object) -> bool:
        assert isinstance(result, ex.ExecutionResult)
        if result.status is ex.ExecStatus.RUNTIME_ERROR:
            return True
        return result.success and not result.stdout.strip()

    def error_text(result: object) -> str:
        assert isinstance(result, ex.ExecutionResult)
        if result.status is ex.ExecStatus.RUNTIME_ERROR:
            return ex.extract_traceback(result)
        return EMPTY_OUTPUT_BUG

    script, result, attempts = repair_loop(
        gw,
        script,
        run=run,
        failed=failed,
        error_text=error_text,
        repair=lambda code, bug: repair_probe(gw, code, bug),
        variant=RepairVariant.NO_CONTEXT,
        script_name=Path(file.path).stem,
        cap=cfg.repair_cap,
    )
    assert isinstance(result, ex.ExecutionResult)

    mtime_ns = _source_mtime_ns(cfg.workdir, file)
    if result.success and result.stdout.strip():
        return FileDescription(
            file=file,
            text=result.stdout,
            probe_script=script,
            attempts=len(attempts),
            status=ProfileStatus.OK,
            truncated=result.stdout_truncated,
            unfenced=not fenced,
            source_mtime_ns=mtime_ns,
        )
    if result.status is ex.ExecStatus.RUNTIME_ERROR:
        last_error = ex.extract_traceback(result)
    elif result.status is ex.ExecStatus.TIMEOUT:
        last_error = f"Probe timed out after {cfg.timeout:g}s."
    else:
        last_error = EMPTY_OUTPUT_BUG
    return FileDescription(
        file=file,
        text=last_error,
        probe_script=script,
        attempts=len(attempts),
        status=ProfileStatus.FAILED,
        unfenced=not fenced,
        source_mtime_ns=mtime_ns,
    )


def _source_mtime_ns(workdir: Path, file: DataFileRef) -> int:
    try:
        return (Path(workdir) / "data" / file.path).stat().st_mtime_ns
    except OSError:
        return 0


def profile_all(
    gw: Gateway, cfg: ProfilerConfig, files: Sequence[DataFileRef]
) -> list[FileDescription]:
    """Profile every file; output order always matches input order.

    Fan-out is bounded by ``cfg.parallelism``; with a scripted backend keyed
    by filename the result is identical at any parallelism degree.
    """
    if not files:
        return []
    if cfg.parallelism <= 1 or len(files) == 1:
        return [profile_file(gw, cfg, f) for f in files]
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        return list(pool.map(lambda f: profile_file(gw, cfg, f), files))


# ---------------------------------------------------------------------------
# Persistence: descriptions.json
# ---------------------------------------------------------------------------


def save_descriptions(path: str | Path, descriptions: Sequence[FileDescription]) -> None:
    payload = {
        "version": _DESCRIPTIONS_VERSION,
        "entries": [
            {
                "path": d.file.path,
                "size": d.file.size,
                "extension": d.file.extension,
                "mtime_ns": d.source_mtime_ns,
                "status": d.status.value,
                "text": d.text,
                "probe_script": d.probe_script,
                "attempts": d.attempts,
                "truncated": d.truncated,
                "unfenced": d.unfenced,
            }
            for d in descriptions
        ],
    }
    tmp = Path(f"{path}.tmp")
    tmp.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def load_descriptions(
    path: str | Path, files: Sequence[DataFileRef] | None = None
) -> list[FileDescription] | None:
    """Load a cached description set, or None when absent or stale.

    Staleness is judged against ``files``: any added, removed, or modified
    file (size or mtime changed) invalidates the whole cache.
    """
    path = Path(path)
    if not path.is_file():
        return None
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        if payload.get("version") != _DESCRIPTIONS_VERSION:
            return None
        entries = payload["entries"]
        descriptions = [
            FileDescription(
                file=DataFileRef(
                    path=e["path"], size=e["size"], extension=e["extension"]
                ),
                text=e["text"],
                probe_script=e["probe_script"],
                attempts=e["attempts"],
                status=ProfileStatus(e["status"]),
                truncated=e.get("truncated", False),
                unfenced=e.get("unfenced", False),
                source_mtime_ns=e.get("mtime_ns", 0),
            )
            for e in entries
        ]
    except (ValueError, KeyError, TypeError):
        log.warning("unreadable descriptions cache at %s; ignoring", path)
        return None
    if files is not None:
        current = {(f.path, f.size) for f in files}
        cached = {(d.file.path, d.file.size) for d in descriptions}
        if current != cached:
            return None
        mtimes = {d.file.path: d.source_mtime_ns for d in descriptions}
        data_dir = path.parent / "data"
        for f in files:
            try:
                actual = (data_dir / f.path).stat().st_mtime_ns
            except OSError:
                return None
            if actual != mtimes.get(f.path):
                return None
        # Re-order to match the requested file order.
        by_path = {d.file.path: d for d in descriptions}
        descriptions = [by_path[f.path] for f in files]
    return descriptions
