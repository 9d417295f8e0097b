"""Pulling code out of LLM responses.

Coder, analyzer, debugger, and finalizer responses are expected to be a
single fenced code block; models sometimes wrap it in prose or skip the
fence entirely, so extraction is forgiving and reports what it did.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

_FENCE_RE = re.compile(r"```[ \t]*[A-Za-z0-9_+-]*[ \t]*\n(.*?)\n?[ \t]*```", re.DOTALL)


@dataclass(frozen=True)
class ExtractedCode:
    text: str
    fenced: bool  # False means the whole response was taken as-is


def extract_code_block(response: str) -> ExtractedCode:
    """Return the first fenced block's interior, or the whole response.

    The no-fence fallback keeps the response verbatim rather than guessing
    at boundaries; if it is not runnable the repair loop will hear about it.
    """
    match = _FENCE_RE.search(response)
    if match:
        return ExtractedCode(match.group(1), fenced=True)
    return ExtractedCode(response, fenced=False)


def wrap_code_block(script: str, language: str = "python") -> str:
    """Inverse of extraction for replay: extract(wrap(s)).text == s."""
    return f"```{language}\n{script}\n```"
