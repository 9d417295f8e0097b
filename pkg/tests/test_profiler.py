"""Data-file profiling: probes, repair-on-failure, and the cache."""
from __future__ import annotations

import json
import os

import pytest

from autoanalyst import (
    DataFileRef,
    FileDescription,
    Gateway,
    KeyedScriptedBackend,
    ProfileStatus,
    ProfilerConfig,
    list_data_files,
    load_descriptions,
    profile_all,
    profile_file,
    save_descriptions,
)
from autoanalyst.profiler import EMPTY_OUTPUT_BUG
from conftest import make_workdir, scripted_gateway


def fenced(script: str) -> str:
    return f"```python\n{script}\n```"


class TestDataFileRef:
    def test_prompt_name_is_data_relative(self):
        ref = DataFileRef(path="nested/a.csv", size=10, extension=".csv")
        assert ref.prompt_name == "data/nested/a.csv"

    def test_absolute_path_rejected(self):
        with pytest.raises(ValueError, match="escapes"):
            DataFileRef(path="/etc/passwd", size=1, extension="")

    def test_parent_escape_rejected(self):
        with pytest.raises(ValueError, match="escapes"):
            DataFileRef(path="../secrets.txt", size=1, extension=".txt")


class TestListDataFiles:
    def test_sorted_recursive_listing(self, tmp_path):
        workdir = make_workdir(
            tmp_path, {"b.json": "{}", "a.csv": "x\n", "sub/c.txt": "hi"}
        )
        refs = list_data_files(workdir / "data")
        assert [r.path for r in refs] == ["a.csv", "b.json", "sub/c.txt"]
        assert refs[0].size == 2
        assert refs[1].extension == ".json"

    def test_missing_dir_is_loud(self, tmp_path):
        with pytest.raises(NotADirectoryError):
            list_data_files(tmp_path / "nope")


class TestProfileFile:
    def _cfg(self, workdir, **kwargs):
        return ProfilerConfig(workdir=workdir, timeout=10.0, **kwargs)

    def test_successful_probe(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "h1,h2\n1,2\n"})
        gw = scripted_gateway(
            [{"role": "analyzer", "response": fenced("print(open('data/a.csv').read())")}]
        )
        ref = list_data_files(workdir / "data")[0]
        desc = profile_file(gw, self._cfg(workdir), ref)
        assert desc.ok
        assert desc.status is ProfileStatus.OK
        assert desc.text == "h1,h2\n1,2\n\n"
        assert desc.attempts == 0
        assert not desc.unfenced
        assert desc.source_mtime_ns == (workdir / "data" / "a.csv").stat().st_mtime_ns

    def test_unfenced_probe_is_used_whole_and_flagged(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n"})
        gw = scripted_gateway([{"role": "analyzer", "response": "print('raw probe')"}])
        ref = list_data_files(workdir / "data")[0]
        desc = profile_file(gw, self._cfg(workdir), ref)
        assert desc.ok
        assert desc.unfenced
        assert desc.text == "raw probe\n"

    def test_empty_stdout_goes_through_repair(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n"})
        gw = scripted_gateway(
            [
                {"role": "analyzer", "response": fenced("pass")},
                {"role": "debugger", "response": fenced("print('recovered')")},
            ]
        )
        ref = list_data_files(workdir / "data")[0]
        desc = profile_file(gw, self._cfg(workdir), ref)
        assert desc.ok
        assert desc.attempts == 1
        assert desc.text == "recovered\n"

    def test_unrepairable_probe_keeps_last_error(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n"})
        gw = scripted_gateway(
            [
                {"role": "analyzer", "response": fenced("raise KeyError('v1')")},
                {"role": "debugger", "response": fenced("raise KeyError('v2')")},
                {"role": "debugger", "response": fenced("raise KeyError('v3')")},
            ]
        )
        ref = list_data_files(workdir / "data")[0]
        desc = profile_file(gw, self._cfg(workdir, repair_cap=2), ref)
        assert not desc.ok
        assert desc.status is ProfileStatus.FAILED
        assert desc.attempts == 2
        assert desc.text.startswith("Traceback")
        assert "KeyError: 'v3'" in desc.text

    def test_empty_output_after_repairs_reports_the_empty_bug(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n"})
        gw = scripted_gateway(
            [
                {"role": "analyzer", "response": fenced("pass")},
                {"role": "debugger", "response": fenced("x = 1")},
            ]
        )
        ref = list_data_files(workdir / "data")[0]
        desc = profile_file(gw, self._cfg(workdir, repair_cap=1), ref)
        assert not desc.ok
        assert desc.text == EMPTY_OUTPUT_BUG

    def test_timeout_is_terminal_no_repair(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n"})
        gw = scripted_gateway(
            [{"role": "analyzer", "response": fenced("import time\ntime.sleep(30)")}]
        )
        ref = list_data_files(workdir / "data")[0]
        cfg = ProfilerConfig(workdir=workdir, timeout=0.5)
        desc = profile_file(gw, cfg, ref)
        assert not desc.ok
        assert desc.attempts == 0
        assert desc.text == "Probe timed out after 0.5s."


def _keyed_gateway(names):
    records = [
        {
            "role": "analyzer",
            "key": f"data/{name}",
            "response": fenced(f"print('profile of {name}')"),
        }
        for name in names
    ]
    return Gateway(KeyedScriptedBackend(records))


class TestProfileAll:
    def test_output_order_matches_input_order(self, tmp_path):
        names = [f"f{i}.csv" for i in range(6)]
        workdir = make_workdir(tmp_path, {n: "x\n" for n in names})
        refs = list_data_files(workdir / "data")
        descs = profile_all(_keyed_gateway(names), ProfilerConfig(workdir=workdir), refs)
        assert [d.file.path for d in descs] == sorted(names)
        assert all(d.ok for d in descs)

    def test_parallel_profiling_matches_serial(self, tmp_path):
        names = [f"f{i:02d}.csv" for i in range(8)]
        workdir = make_workdir(tmp_path, {n: "x\n" for n in names})
        refs = list_data_files(workdir / "data")
        serial = profile_all(
            _keyed_gateway(names), ProfilerConfig(workdir=workdir, parallelism=1), refs
        )
        parallel = profile_all(
            _keyed_gateway(names), ProfilerConfig(workdir=workdir, parallelism=8), refs
        )
        assert serial == parallel

    def test_empty_file_list(self, tmp_path):
        workdir = make_workdir(tmp_path)
        assert profile_all(scripted_gateway([]), ProfilerConfig(workdir=workdir), []) == []


class TestDescriptionsCache:
    def _profile(self, workdir):
        names = [p.name for p in sorted((workdir / "data").iterdir())]
        refs = list_data_files(workdir / "data")
        return profile_all(_keyed_gateway(names), ProfilerConfig(workdir=workdir), refs)

    def test_round_trip(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n", "b.json": "{}"})
        descs = self._profile(workdir)
        cache = workdir / "descriptions.json"
        save_descriptions(cache, descs)
        refs = list_data_files(workdir / "data")
        loaded = load_descriptions(cache, refs)
        assert loaded == descs

    def test_load_without_files_skips_staleness(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n"})
        cache = workdir / "descriptions.json"
        save_descriptions(cache, self._profile(workdir))
        os.utime(workdir / "data" / "a.csv", ns=(1, 1))
        assert load_descriptions(cache) is not None
        assert load_descriptions(cache, list_data_files(workdir / "data")) is None

    def test_added_file_invalidates(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n"})
        cache = workdir / "descriptions.json"
        save_descriptions(cache, self._profile(workdir))
        (workdir / "data" / "new.csv").write_text("y\n")
        assert load_descriptions(cache, list_data_files(workdir / "data")) is None

    def test_removed_file_invalidates(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n", "b.csv": "y\n"})
        cache = workdir / "descriptions.json"
        save_descriptions(cache, self._profile(workdir))
        (workdir / "data" / "b.csv").unlink()
        assert load_descriptions(cache, list_data_files(workdir / "data")) is None

    def test_size_change_invalidates(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n"})
        cache = workdir / "descriptions.json"
        save_descriptions(cache, self._profile(workdir))
        (workdir / "data" / "a.csv").write_text("different length\n")
        assert load_descriptions(cache, list_data_files(workdir / "data")) is None

    def test_mtime_change_invalidates(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n"})
        cache = workdir / "descriptions.json"
        save_descriptions(cache, self._profile(workdir))
        stat = (workdir / "data" / "a.csv").stat()
        os.utime(workdir / "data" / "a.csv", ns=(stat.st_atime_ns, stat.st_mtime_ns + 7))
        assert load_descriptions(cache, list_data_files(workdir / "data")) is None

    def test_loaded_order_follows_requested_files(self, tmp_path):
        workdir = make_workdir(tmp_path, {"a.csv": "x\n", "b.csv": "y\n"})
        cache = workdir / "descriptions.json"
        save_descriptions(cache, self._profile(workdir))
        refs = list(reversed(list_data_files(workdir / "data")))
        loaded = load_descriptions(cache, refs)
        assert [d.file.path for d in loaded] == ["b.csv", "a.csv"]

    def test_missing_cache_returns_none(self, tmp_path):
        assert load_descriptions(tmp_path / "nope.json") is None

    def test_version_mismatch_returns_none(self, tmp_path):
        cache = tmp_path / "descriptions.json"
        cache.write_text(json.dumps({"version": 99, "entries": []}))
        assert load_descriptions(cache) is None

    def test_corrupt_cache_returns_none(self, tmp_path):
        cache = tmp_path / "descriptions.json"
        cache.write_text("{not json")
        assert load_descriptions(cache) is None
        cache.write_text(json.dumps({"version": 1, "entries": [{"path": "a"}]}))
        assert load_descriptions(cache) is None


def test_file_description_ok_property():
    ref = DataFileRef(path="a.csv", size=1, extension=".csv")
    ok = FileDescription(ref, "t", "s", 0, ProfileStatus.OK)
    bad = FileDescription(ref, "t", "s", 0, ProfileStatus.FAILED)
    assert ok.ok and not bad.ok
