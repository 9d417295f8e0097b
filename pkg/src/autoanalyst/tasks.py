"""Task bundles: what a single analysis job looks like on disk.

A task directory holds ``task.json`` plus a ``data/`` subdirectory with the
files the scripts may read. Scoring is part of the bundle so benchmark
runs are self-describing.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

DEFAULT_NUMERIC_REL_TOL = 1e-6


class TaskError(Exception):
    pass


class MissingField(TaskError):
    def __init__(self, field: str, source: Path) -> None:
        super().__init__(f"{source} is missing required field {field!r}")
        self.field = field


class BadDataDir(TaskError):
    pass


class Difficulty(str, Enum):
    EASY = "Easy"
    HARD = "Hard"


class ScoringKind(str, Enum):
    EXACT = "exact"
    NUMERIC = "numeric"
    CONTAINS_NORMALIZED = "contains_normalized"


@dataclass(frozen=True)
class ScoringSpec:
    kind: ScoringKind = ScoringKind.EXACT
    rel_tol: float = DEFAULT_NUMERIC_REL_TOL

    def __post_init__(self) -> None:
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")


@dataclass(frozen=True)
class TaskBundle:
    id: str
    query: str
    data_dir: Path
    guideline: str | None = None
    gold_answer: str | None = None
    difficulty: Difficulty | None = None
    scoring: ScoringSpec = ScoringSpec()

    @property
    def workdir(self) -> Path:
        """Directory scripts run in; its ``data/`` child is ``data_dir``."""
        return self.data_dir.parent


def _parse_scoring(raw: object, source: Path) -> ScoringSpec:
    if raw is None:
        return ScoringSpec()
    if isinstance(raw, str):
        return ScoringSpec(kind=ScoringKind(raw))
    if isinstance(raw, dict):
        kind = ScoringKind(raw.get("kind", "exact"))
        rel_tol = float(raw.get("rel_tol", DEFAULT_NUMERIC_REL_TOL))
        return ScoringSpec(kind=kind, rel_tol=rel_tol)
    raise TaskError(f"{source}: scoring must be a string or an object")


def _load_guideline(raw: dict, task_dir: Path) -> str | None:
    if "guideline" in raw and raw["guideline"] is not None:
        return str(raw["guideline"])
    if "guideline_file" in raw and raw["guideline_file"] is not None:
        path = task_dir / str(raw["guideline_file"])
        return path.read_text(encoding="utf-8").strip()
    default = task_dir / "guideline.md"
    if default.is_file():
        return default.read_text(encoding="utf-8").strip()
    return None


def load_task(task_dir: str | Path) -> TaskBundle:
    """Read ``<task_dir>/task.json`` and validate the data directory."""
    task_dir = Path(task_dir)
    manifest = task_dir / "task.json"
    if not manifest.is_file():
        raise TaskError(f"{manifest} not found")
    raw = json.loads(manifest.read_text(encoding="utf-8"))
    for field in ("id", "query"):
        if field not in raw or raw[field] in (None, ""):
            raise MissingField(field, manifest)

    data_dir = task_dir / "data"
    if not data_dir.is_dir():
        raise BadDataDir(f"{data_dir} is missing or not a directory")

    difficulty = None
    if raw.get("difficulty") is not None:
        difficulty = Difficulty(str(raw["difficulty"]))

    gold = raw.get("gold_answer")
    return TaskBundle(
        id=str(raw["id"]),
        query=str(raw["query"]),
        data_dir=data_dir,
        guideline=_load_guideline(raw, task_dir),
        gold_answer=None if gold is None else str(gold),
        difficulty=difficulty,
        scoring=_parse_scoring(raw.get("scoring"), manifest),
    )


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreOutcome:
    correct: bool
    diagnostic: str

    def __bool__(self) -> bool:
        return self.correct


def _normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text.lower()).strip()


def score_answer(predicted: str, gold: str, spec: ScoringSpec) -> ScoreOutcome:
    """Grade an answer string against the gold answer.

    Exact compares the trimmed strings byte for byte. Numeric parses both
    as reals and allows ``rel_tol * max(1, |gold|)`` of slack; anything
    that does not parse is simply wrong, with the parse failure noted.
    Contains matching lowercases, collapses runs of whitespace, and asks
    whether the gold answer appears inside the prediction.
    """
    if spec.kind is ScoringKind.EXACT:
        ok = predicted.strip() == gold.strip()
        return ScoreOutcome(ok, "exact match" if ok else "exact mismatch")
    if spec.kind is ScoringKind.NUMERIC:
        try:
            p = float(predicted.strip())
            g = float(gold.strip())
        except ValueError as exc:
            return ScoreOutcome(False, f"NumericParseFailure: {exc}")
        slack = spec.rel_tol * max(1.0, abs(g))
        ok = abs(p - g) <= slack
        return ScoreOutcome(ok, f"|{p} - {g}| {'<=' if ok else '>'} {slack}")
    if spec.kind is ScoringKind.CONTAINS_NORMALIZED:
        ok = _normalize(gold) in _normalize(predicted)
        return ScoreOutcome(ok, "normalized containment" if ok else "gold not contained")
    raise ValueError(f"unknown scoring kind {spec.kind!r}")
