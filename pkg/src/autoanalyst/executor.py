"""Subprocess execution of generated scripts.

Scripts run from a temp file inside the task workdir with the workdir as
current directory, so the relative ``data/...`` paths every prompt promises
actually resolve. Isolation is process + cwd + timeout; there is no
container or network filter, which is a documented limitation.
"""
from __future__ import annotations

import hashlib
import logging
import os
import shlex
import shutil
import subprocess
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_SECS = 120.0
DEFAULT_STDOUT_CAP_BYTES = 64 * 1024
DEFAULT_INTERPRETER_CMD = "python3 {script}"

_TRACEBACK_HEADER = "Traceback (most recent call last):"
TRUNCATION_MARKER = "[truncated]"


class ExecutorError(Exception):
    pass


class InterpreterNotFound(ExecutorError):
    pass


class WorkdirInvalid(ExecutorError):
    pass


class NotAnError(ExecutorError):
    """extract_traceback was called on a result that is not a RuntimeError."""


class ExecStatus(str, Enum):
    SUCCESS = "success"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ExecutionRequest:
    script_text: str
    workdir: Path
    timeout: float = DEFAULT_TIMEOUT_SECS
    interpreter_cmd: str = DEFAULT_INTERPRETER_CMD
    stdout_cap: int = DEFAULT_STDOUT_CAP_BYTES

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.stdout_cap <= 0:
            raise ValueError("stdout_cap must be positive")


@dataclass(frozen=True)
class ExecutionResult:
    status: ExecStatus
    stdout: str
    stderr: str
    exit_code: int
    duration: float
    stdout_truncated: bool = False
    created_files: tuple[str, ...] = ()

    @property
    def success(self) -> bool:
        return self.status is ExecStatus.SUCCESS


def _script_filename(script_text: str) -> str:
    digest = hashlib.sha1(script_text.encode("utf-8")).hexdigest()[:12]
    return f"script_{digest}.py"


def _cap_text(text: str, cap: int) -> tuple[str, bool]:
    raw = text.encode("utf-8")
    if len(raw) <= cap:
        return text, False
    return raw[:cap].decode("utf-8", errors="ignore"), True


def _listing(workdir: Path) -> set[str]:
    return {
        str(p.relative_to(workdir))
        for p in workdir.rglob("*")
        if p.is_file()
    }


def run_script(req: ExecutionRequest) -> ExecutionResult:
    """Execute ``req.script_text`` and capture the outcome.

    The temp file name is derived from the script content and the script is
    invoked by relative path, so tracebacks (which embed the file name) are
    identical across runs and machines; transcript replay depends on that.
    """
    workdir = Path(req.workdir)
    if not workdir.is_dir() or not (workdir / "data").is_dir():
        raise WorkdirInvalid(
            f"workdir must exist and contain a data/ subdirectory: {workdir}"
        )

    argv_template = shlex.split(req.interpreter_cmd)
    if not argv_template or "{script}" not in argv_template:
        raise InterpreterNotFound(
            f"interpreter_cmd must mention {{script}}: {req.interpreter_cmd!r}"
        )
    if shutil.which(argv_template[0]) is None:
        raise InterpreterNotFound(f"interpreter not found: {argv_template[0]!r}")

    # Content-addressed name; suffix only on a live collision (two concurrent
    # runs of the same bytes), which keeps stderr deterministic otherwise.
    base_name = _script_filename(req.script_text)
    script_path: Path | None = None
    for attempt in range(100):
        name = base_name if attempt == 0 else f"{base_name[:-3]}_{attempt}.py"
        candidate = workdir / name
        try:
            with open(candidate, "x", encoding="utf-8") as fh:
                fh.write(req.script_text)
            script_path = candidate
            break
        except FileExistsError:
            continue
    if script_path is None:  # pragma: no cover - 100 live collisions
        raise ExecutorError("could not allocate a script file name")

    argv = [a.replace("{script}", script_path.name) for a in argv_template]
    env = dict(os.environ)
    env["PYTHONHASHSEED"] = "0"  # deterministic set/dict iteration in scripts

    before = _listing(workdir)
    start = time.monotonic()
    try:
        proc = subprocess.run(
            argv,
            cwd=workdir,
            env=env,
            capture_output=True,
            text=True,
            errors="replace",
            timeout=req.timeout,
        )
        duration = time.monotonic() - start
        stdout, stderr = proc.stdout, proc.stderr
        exit_code = proc.returncode
        timed_out = False
    except subprocess.TimeoutExpired as exc:
        duration = time.monotonic() - start
        stdout = _decode(exc.output)
        stderr = _decode(exc.stderr)
        exit_code = -1
        timed_out = True
    finally:
        created = _listing(workdir) - before - {script_path.name}
        script_path.unlink(missing_ok=True)

    stdout, truncated = _cap_text(stdout, req.stdout_cap)
    if timed_out:
        status = ExecStatus.TIMEOUT
    elif exit_code == 0:
        status = ExecStatus.SUCCESS
    else:
        status = ExecStatus.RUNTIME_ERROR
    return ExecutionResult(
        status=status,
        stdout=stdout,
        stderr=stderr,
        exit_code=exit_code,
        duration=duration,
        stdout_truncated=truncated,
        created_files=tuple(sorted(created)),
    )


def _decode(data: bytes | str | None) -> str:
    if data is None:
        return ""
    if isinstance(data, bytes):
        return data.decode("utf-8", errors="replace")
    return data


def extract_traceback(res: ExecutionResult) -> str:
    """The last traceback block in stderr, or all of stderr if none."""
    if res.status is not ExecStatus.RUNTIME_ERROR:
        raise NotAnError(f"no traceback to extract from a {res.status.value} result")
    idx = res.stderr.rfind(_TRACEBACK_HEADER)
    if idx == -1:
        return res.stderr
    return res.stderr[idx:]


def display_result(res: ExecutionResult, timeout: float | None = None) -> str:
    """Render an execution result the way prompts should see it.

    Successes show stdout (with an explicit marker when capped); runtime
    errors show the traceback; timeouts a one-line notice. Files the script
    wrote are listed on a suffix line so judgment roles know about them.
    """
    if res.status is ExecStatus.SUCCESS:
        text = res.stdout
        if res.stdout_truncated:
            text = f"{text}\n{TRUNCATION_MARKER}"
    elif res.status is ExecStatus.RUNTIME_ERROR:
        text = extract_traceback(res)
    else:
        limit = f" after {timeout:g}s" if timeout is not None else ""
        text = f"Execution timed out{limit} and was killed."
    if res.created_files:
        text = f"{text}\nFiles written: {', '.join(res.created_files)}"
    return text
