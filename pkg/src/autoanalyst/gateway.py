"""Chat-completion backends, prompt templating, and usage accounting.

Every agent role speaks through this module: prompts are rendered from
fixture templates shipped under ``autoanalyst/prompts/``, sent through a
pluggable backend, and recorded in a :class:`UsageLedger`. The scripted
backend replays a canned response queue, which is what makes the whole
engine testable offline and transcripts replayable.
"""
from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx

log = logging.getLogger(__name__)


class GatewayError(Exception):
    """Base class for template and backend failures."""


class UnknownTemplate(GatewayError):
    pass


class MissingBinding(GatewayError):
    def __init__(self, name: str) -> None:
        super().__init__(f"template binding missing: {name!r}")
        self.name = name


class BackendUnavailable(GatewayError):
    pass


class ScriptExhausted(GatewayError):
    """The scripted backend has no queued response left for a role."""

    def __init__(self, role: "Role") -> None:
        super().__init__(f"scripted backend exhausted for role {role.value!r}")
        self.role = role


class HttpError(GatewayError):
    def __init__(self, status: int, detail: str = "") -> None:
        super().__init__(f"backend returned HTTP {status}: {detail[:200]}")
        self.status = status


class Role(str, Enum):
    ANALYZER = "analyzer"
    PLANNER = "planner"
    CODER = "coder"
    VERIFIER = "verifier"
    ROUTER = "router"
    FINALIZER = "finalizer"
    DEBUGGER = "debugger"


class TemplateId(str, Enum):
    ANALYZER = "analyzer"
    PLANNER_INIT = "planner_init"
    PLANNER_NEXT = "planner_next"
    CODER_INIT = "coder_init"
    CODER_NEXT = "coder_next"
    VERIFIER = "verifier"
    ROUTER = "router"
    FINALIZER = "finalizer"
    TRACEBACK_SUMMARIZE = "traceback_summarize"
    REPAIR_NO_CONTEXT = "repair_no_context"
    REPAIR_WITH_CONTEXT = "repair_with_context"


# Judgment roles are pinned to temperature 0 by default; the planner keeps
# sampling temperature so regeneration after a truncation can explore.
DEFAULT_ROLE_TEMPERATURES: Mapping[Role, float] = {
    Role.PLANNER: 1.0,
    Role.VERIFIER: 0.0,
    Role.ROUTER: 0.0,
}


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

# The multi-line list blocks the templates use. They are replaced as a unit:
# the file block expands to interleaved "name\nsummary" pairs, the plan block
# to "1. <step>\n2. <step>..." lines.
_FILE_BLOCK = (
    "{filenames #1}\n{summaries #1}\n...\n{filenames #N}\n{summaries #N}"
)
_PLAN_BLOCK = "1. {Step 1}\n...\nk. {Step k}"
_NEXT_STEP = "{Step k+1}"

_SIMPLE_PLACEHOLDERS = (
    "filename",
    "filenames",
    "question",
    "plan",
    "base_code",
    "code",
    "result",
    "bug",
    "guidelines",
)

_TOKEN_RE = re.compile(
    "|".join(
        re.escape(tok)
        for tok in (
            _FILE_BLOCK,
            _PLAN_BLOCK,
            _NEXT_STEP,
            *(f"{{{name}}}" for name in _SIMPLE_PLACEHOLDERS),
        )
    )
)


def template_body(template_id: TemplateId | str) -> str:
    """Return the raw fixture text for a template, byte-exact."""
    template_id = _coerce_template_id(template_id)
    path = resources.files("autoanalyst.prompts") / f"{template_id.value}.txt"
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:  # packaging error, not a user error
        raise UnknownTemplate(f"fixture missing for {template_id.value}") from exc


def _coerce_template_id(template_id: TemplateId | str) -> TemplateId:
    if isinstance(template_id, TemplateId):
        return template_id
    try:
        return TemplateId(template_id)
    except ValueError:
        raise UnknownTemplate(f"no template named {template_id!r}") from None


@lru_cache(maxsize=None)
def _segments(template_id: TemplateId) -> tuple[str | tuple[str], ...]:
    """Split a template body into literal text and placeholder tokens.

    Placeholders are returned as 1-tuples so a literal "{code}" that somehow
    appeared in bound text can never be re-substituted.
    """
    body = template_body(template_id)
    parts: list[str | tuple[str]] = []
    pos = 0
    for m in _TOKEN_RE.finditer(body):
        if m.start() > pos:
            parts.append(body[pos : m.start()])
        parts.append((m.group(0),))
        pos = m.end()
    if pos < len(body):
        parts.append(body[pos:])
    return tuple(parts)


def placeholder_names(template_id: TemplateId | str) -> tuple[str, ...]:
    """Distinct placeholder tokens in a template, in order of first use."""
    seen: list[str] = []
    for part in _segments(_coerce_template_id(template_id)):
        if isinstance(part, tuple) and part[0] not in seen:
            seen.append(part[0])
    return tuple(seen)


def _string_list(bindings: Mapping[str, object], name: str) -> list[str]:
    try:
        value = bindings[name]
    except KeyError:
        raise MissingBinding(name) from None
    if isinstance(value, str) or not isinstance(value, Sequence):
        raise TypeError(f"binding {name!r} must be a sequence of strings")
    return [str(item) for item in value]


def _string(bindings: Mapping[str, object], name: str) -> str:
    try:
        value = bindings[name]
    except KeyError:
        raise MissingBinding(name) from None
    return str(value)


def _render_token(token: str, bindings: Mapping[str, object]) -> str:
    if token == _FILE_BLOCK:
        names = _string_list(bindings, "filenames")
        summaries = _string_list(bindings, "summaries")
        if len(names) != len(summaries):
            raise ValueError(
                f"filenames ({len(names)}) and summaries ({len(summaries)}) "
                "must have equal length"
            )
        return "\n".join(f"{n}\n{s}" for n, s in zip(names, summaries))
    if token == _PLAN_BLOCK:
        steps = _string_list(bindings, "steps")
        return "\n".join(f"{i}. {text}" for i, text in enumerate(steps, 1))
    if token == _NEXT_STEP:
        return _string(bindings, "next_step")
    if token == "{filenames}":
        # The templates were written as f-strings over a list of names, so
        # the whole-list placeholder renders as the list repr.
        return repr(_string_list(bindings, "filenames"))
    return _string(bindings, token[1:-1])


def render_prompt(template_id: TemplateId | str, bindings: Mapping[str, object]) -> str:
    """Substitute ``bindings`` into a template, leaving nothing unresolved.

    Raises :class:`MissingBinding` if the template references a binding that
    was not supplied and :class:`UnknownTemplate` for a bad id.
    """
    template_id = _coerce_template_id(template_id)
    out: list[str] = []
    for part in _segments(template_id):
        if isinstance(part, tuple):
            out.append(_render_token(part[0], bindings))
        else:
            out.append(part)
    return "".join(out)


# ---------------------------------------------------------------------------
# Usage accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoleUsage:
    calls: int = 0
    input_tokens: int = 0
    output_tokens: int = 0

    def __add__(self, other: "RoleUsage") -> "RoleUsage":
        return RoleUsage(
            self.calls + other.calls,
            self.input_tokens + other.input_tokens,
            self.output_tokens + other.output_tokens,
        )

    def __sub__(self, other: "RoleUsage") -> "RoleUsage":
        return RoleUsage(
            self.calls - other.calls,
            self.input_tokens - other.input_tokens,
            self.output_tokens - other.output_tokens,
        )


@dataclass(frozen=True)
class ChatExchange:
    role: Role
    prompt: str
    response: str
    input_tokens: int
    output_tokens: int
    latency_secs: float
    backend_id: str
    usage_estimated: bool = False


class UsageLedger:
    """Per-role call/token accounting for one session (or one suite)."""

    def __init__(self) -> None:
        self._per_role: dict[Role, RoleUsage] = {}
        self._exchange_count = 0
        self._estimated_calls = 0
        self._lock = threading.Lock()

    def record(self, exchange: ChatExchange) -> None:
        delta = RoleUsage(1, exchange.input_tokens, exchange.output_tokens)
        with self._lock:
            self._per_role[exchange.role] = (
                self._per_role.get(exchange.role, RoleUsage()) + delta
            )
            self._exchange_count += 1
            if exchange.usage_estimated:
                self._estimated_calls += 1

    @property
    def per_role(self) -> dict[Role, RoleUsage]:
        with self._lock:
            return dict(self._per_role)

    @property
    def totals(self) -> RoleUsage:
        with self._lock:
            total = RoleUsage()
            for usage in self._per_role.values():
                total = total + usage
            return total

    @property
    def exchange_count(self) -> int:
        with self._lock:
            return self._exchange_count

    @property
    def estimated_calls(self) -> int:
        """How many recorded calls used the token estimator, not backend usage."""
        with self._lock:
            return self._estimated_calls

    def cost(self, price_in: float, price_out: float) -> float:
        """Total cost at per-token prices."""
        totals = self.totals
        return price_in * totals.input_tokens + price_out * totals.output_tokens


def estimate_tokens(text: str) -> int:
    """Fallback token count when the backend reports no usage: ceil(bytes/4)."""
    return math.ceil(len(text.encode("utf-8")) / 4)


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BackendReply:
    text: str
    input_tokens: int | None = None
    output_tokens: int | None = None


class Backend(Protocol):
    backend_id: str

    def complete(
        self, role: Role, prompt: str, *, temperature: float | None = None
    ) -> BackendReply: ...


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # "http_chat" or "scripted"
    model_name: str = "unspecified"
    endpoint: str | None = None
    api_key_env: str | None = None
    script_path: Path | None = None
    temperature: float = 1.0
    max_output_tokens: int = 8192
    request_timeout_secs: float = 120.0
    # Per-million-token prices, used for the ledger cost report.
    price_per_million_input_tokens: float = 0.0
    price_per_million_output_tokens: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "http_chat":
            if not self.endpoint or not self.api_key_env:
                raise ValueError("http_chat backend requires endpoint and api_key_env")
        elif self.kind == "scripted":
            if not self.script_path:
                raise ValueError("scripted backend requires script_path")
        else:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")

    @property
    def price_in(self) -> float:
        return self.price_per_million_input_tokens / 1_000_000

    @property
    def price_out(self) -> float:
        return self.price_per_million_output_tokens / 1_000_000


def load_backend_config(path: str | Path) -> BackendConfig:
    """Read a declarative backend config (JSON). API keys never live here:
    the file names the environment variable that holds the key."""
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    if "api_key" in raw:
        raise ValueError(
            "backend config must not embed an API key; use api_key_env to "
            "name an environment variable instead"
        )
    if raw.get("script_path"):
        script = Path(raw["script_path"])
        if not script.is_absolute():
            script = path.parent / script
        raw["script_path"] = script
    known = {f.name for f in BackendConfig.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown backend config keys: {sorted(unknown)}")
    return BackendConfig(**raw)


class ScriptedBackend:
    """Deterministic mock backend replaying queued responses per role.

    The on-disk format is JSON-lines, one ``{"role": ..., "response": ...}``
    record per line, consumed FIFO within each role. Exhaustion is loud by
    design: a session that asks for more than was scripted is a test bug.
    """

    backend_id = "scripted"

    def __init__(self, records: Iterable[Mapping[str, str]]) -> None:
        self._queues: dict[Role, deque[str]] = {}
        self._locks: dict[Role, threading.Lock] = {}
        for i, rec in enumerate(records):
            try:
                role = Role(rec["role"])
                response = rec["response"]
            except (KeyError, ValueError) as exc:
                raise ValueError(f"bad scripted record #{i}: {exc}") from None
            self._queues.setdefault(role, deque()).append(response)
            self._locks.setdefault(role, threading.Lock())

    @classmethod
    def from_path(cls, path: str | Path) -> "ScriptedBackend":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return cls(records)

    def complete(
        self, role: Role, prompt: str, *, temperature: float | None = None
    ) -> BackendReply:
        lock = self._locks.get(role)
        if lock is None:
            raise ScriptExhausted(role)
        with lock:
            queue = self._queues[role]
            if not queue:
                raise ScriptExhausted(role)
            return BackendReply(queue.popleft())

    def remaining(self, role: Role | None = None) -> int:
        if role is not None:
            return len(self._queues.get(role, ()))
        return sum(len(q) for q in self._queues.values())


class KeyedScriptedBackend:
    """Scripted backend whose records match by (role, key-in-prompt).

    Used for parallel profiling tests: responses are keyed by filename, so
    whichever worker asks first still gets the response meant for its file.
    Records are ``{"role": ..., "key": ..., "response": ...}``.
    """

    backend_id = "scripted-keyed"

    def __init__(self, records: Iterable[Mapping[str, str]]) -> None:
        self._records: dict[Role, list[tuple[str, str]]] = {}
        for i, rec in enumerate(records):
            try:
                role = Role(rec["role"])
                pair = (rec["key"], rec["response"])
            except (KeyError, ValueError) as exc:
                raise ValueError(f"bad keyed record #{i}: {exc}") from None
            self._records.setdefault(role, []).append(pair)
        self._lock = threading.Lock()

    @classmethod
    def from_path(cls, path: str | Path) -> "KeyedScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.loads(line) for line in fh if line.strip())

    def complete(
        self, role: Role, prompt: str, *, temperature: float | None = None
    ) -> BackendReply:
        with self._lock:
            queue = self._records.get(role, [])
            for i, (key, response) in enumerate(queue):
                if key in prompt:
                    del queue[i]
                    return BackendReply(response)
        raise ScriptExhausted(role)


class HttpChatBackend:
    """OpenAI-style chat-completions client over a single POST endpoint."""

    def __init__(self, config: BackendConfig) -> None:
        if config.kind != "http_chat":
            raise ValueError("HttpChatBackend requires an http_chat config")
        self._config = config
        self.backend_id = f"http:{config.model_name}"

    def _api_key(self) -> str:
        assert self._config.api_key_env is not None
        key = os.environ.get(self._config.api_key_env, "")
        if not key:
            raise BackendUnavailable(
                f"environment variable {self._config.api_key_env} is not set"
            )
        return key

    def complete(
        self, role: Role, prompt: str, *, temperature: float | None = None
    ) -> BackendReply:
        cfg = self._config
        payload = {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature if temperature is None else temperature,
            "max_tokens": cfg.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        try:
            resp = httpx.post(
                cfg.endpoint,
                json=payload,
                headers=headers,
                timeout=cfg.request_timeout_secs,
            )
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"request to {cfg.endpoint} failed: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise HttpError(resp.status_code, resp.text)
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise BackendUnavailable(f"malformed backend response: {exc}") from exc
        usage = data.get("usage") or {}
        return BackendReply(
            text=text,
            input_tokens=usage.get("prompt_tokens"),
            output_tokens=usage.get("completion_tokens"),
        )


def build_backend(config: BackendConfig) -> Backend:
    if config.kind == "scripted":
        assert config.script_path is not None
        return ScriptedBackend.from_path(config.script_path)
    return HttpChatBackend(config)


# ---------------------------------------------------------------------------
# The gateway facade
# ---------------------------------------------------------------------------


def complete(
    backend: Backend,
    role: Role,
    prompt: str,
    *,
    ledger: UsageLedger,
    temperature: float | None = None,
) -> ChatExchange:
    """Send one prompt, record the exchange, return it.

    Token counts prefer what the backend reports; the byte-length estimator
    fills in otherwise and the exchange is flagged as estimated.
    """
    start = time.monotonic()
    reply = backend.complete(role, prompt, temperature=temperature)
    latency = time.monotonic() - start
    estimated = reply.input_tokens is None or reply.output_tokens is None
    exchange = ChatExchange(
        role=role,
        prompt=prompt,
        response=reply.text,
        input_tokens=(
            reply.input_tokens if reply.input_tokens is not None else estimate_tokens(prompt)
        ),
        output_tokens=(
            reply.output_tokens
            if reply.output_tokens is not None
            else estimate_tokens(reply.text)
        ),
        latency_secs=latency,
        backend_id=backend.backend_id,
        usage_estimated=estimated,
    )
    ledger.record(exchange)
    return exchange


@dataclass
class Gateway:
    """A backend plus the ledger and temperature policy it is used with."""

    backend: Backend
    ledger: UsageLedger = field(default_factory=UsageLedger)
    role_temperatures: Mapping[Role, float] = field(
        default_factory=lambda: dict(DEFAULT_ROLE_TEMPERATURES)
    )

    def ask(
        self, role: Role, template_id: TemplateId | str, bindings: Mapping[str, object]
    ) -> ChatExchange:
        prompt = render_prompt(template_id, bindings)
        return complete(
            self.backend,
            role,
            prompt,
            ledger=self.ledger,
            temperature=self.role_temperatures.get(role),
        )
