"""Shared fixtures: scripted gateways and the golden task directory."""
from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

from autoanalyst import Gateway, ScriptedBackend

FIXTURES = Path(__file__).resolve().parent / "fixtures"
GOLDEN = FIXTURES / "golden"


def materialize_golden(target: Path) -> Path:
    """Copy the golden task into ``target`` and refresh the cache's mtimes.

    The description cache stores file mtimes for staleness checks; a
    checkout has arbitrary mtimes, so the copy stamps in the live values.
    """
    shutil.copytree(GOLDEN, target, dirs_exist_ok=True)
    (target / "_generate.py").unlink()
    cache_path = target / "descriptions.json"
    payload = json.loads(cache_path.read_text())
    for entry in payload["entries"]:
        stat = (target / "data" / entry["path"]).stat()
        entry["mtime_ns"] = stat.st_mtime_ns
        entry["size"] = stat.st_size
    cache_path.write_text(json.dumps(payload, indent=2) + "\n")
    return target


@pytest.fixture
def golden_dir(tmp_path: Path) -> Path:
    return materialize_golden(tmp_path / "golden")


@pytest.fixture
def golden_gateway(golden_dir: Path) -> Gateway:
    return Gateway(ScriptedBackend.from_path(golden_dir / "responses.jsonl"))


def scripted_gateway(records: list[dict]) -> Gateway:
    return Gateway(ScriptedBackend(records))


def make_workdir(tmp_path: Path, files: dict[str, str] | None = None) -> Path:
    """A scratch workdir with a data/ directory the executor will accept."""
    workdir = tmp_path / "work"
    (workdir / "data").mkdir(parents=True, exist_ok=True)
    for name, content in (files or {}).items():
        target = workdir / "data" / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(content)
    return workdir
