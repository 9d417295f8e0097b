"""The autoanalyst command line: profile, run, bench, replay."""
from __future__ import annotations

import json

import pytest

from autoanalyst.cli import build_parser, main

GOLD_ANSWER = "2.67727200000000"


def scripted_config(golden_dir) -> str:
    path = golden_dir / "backend.json"
    path.write_text(json.dumps({"kind": "scripted", "script_path": "responses.jsonl"}))
    return str(path)


class TestParser:
    def test_engine_defaults(self):
        args = build_parser().parse_args(["run", "somedir", "--backend", "b.json"])
        assert args.max_rounds == 20
        assert args.top_k == 100
        assert args.timeout_secs == 120.0
        assert args.transcript_dir is None

    def test_backend_is_required(self, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["run", "somedir"])
        assert "--backend" in capsys.readouterr().err

    def test_command_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestRun:
    def test_end_to_end_prints_answer_and_score(self, golden_dir, tmp_path, capsys):
        code = main(
            [
                "run",
                str(golden_dir),
                "--backend",
                scripted_config(golden_dir),
                "--transcript-dir",
                str(tmp_path / "journals"),
            ]
        )
        captured = capsys.readouterr()
        assert code == 0
        assert captured.out.strip() == GOLD_ANSWER
        assert "score: correct" in captured.err
        assert "transcript:" in captured.err
        assert (tmp_path / "journals" / "rafa-ai-fee-delta.jsonl").is_file()

    def test_missing_task_dir_is_a_clean_error(self, tmp_path, capsys):
        cfg = tmp_path / "backend.json"
        cfg.write_text(json.dumps({"kind": "scripted", "script_path": "r.jsonl"}))
        code = main(["run", str(tmp_path / "nope"), "--backend", str(cfg)])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_embedded_api_key_is_refused(self, golden_dir, capsys):
        bad = golden_dir / "bad.json"
        bad.write_text(
            json.dumps(
                {
                    "kind": "http_chat",
                    "endpoint": "http://x/v1",
                    "api_key_env": "K",
                    "api_key": "sk-secret",
                }
            )
        )
        code = main(["run", str(golden_dir), "--backend", str(bad)])
        assert code == 1
        err = capsys.readouterr().err
        assert "must not embed an API key" in err
        assert "api_key_env" in err


class TestProfile:
    def test_cached_descriptions_are_listed(self, golden_dir, capsys):
        code = main(
            ["profile", str(golden_dir), "--backend", scripted_config(golden_dir)]
        )
        captured = capsys.readouterr()
        assert code == 0
        lines = captured.out.splitlines()
        assert sum(1 for l in lines if l.startswith("ok ")) == 4
        assert any("data/payments.csv" in l for l in lines)
        assert "4 file descriptions cached" in captured.out

    def test_refresh_reprofiles(self, tmp_path, capsys):
        task_dir = tmp_path / "small"
        (task_dir / "data").mkdir(parents=True)
        (task_dir / "data" / "a.csv").write_text("h\n1\n")
        (task_dir / "task.json").write_text(json.dumps({"id": "small", "query": "Q?"}))
        responses = task_dir / "responses.jsonl"
        responses.write_text(
            json.dumps(
                {
                    "role": "analyzer",
                    "response": "```python\nprint(open('data/a.csv').read())\n```",
                }
            )
            + "\n"
        )
        cfg = task_dir / "backend.json"
        cfg.write_text(json.dumps({"kind": "scripted", "script_path": "responses.jsonl"}))
        code = main(
            ["profile", str(task_dir), "--backend", str(cfg), "--refresh"]
        )
        assert code == 0
        assert "ok  data/a.csv: h" in capsys.readouterr().out
        assert (task_dir / "descriptions.json").is_file()


class TestBench:
    def test_suite_report_and_table(self, golden_dir, tmp_path, capsys):
        suite_dir = golden_dir.parent  # contains just the golden task dir
        code = main(
            [
                "bench",
                str(suite_dir),
                "--backend",
                scripted_config(golden_dir),
                "--transcript-dir",
                str(tmp_path / "journals"),
                "--report",
                str(tmp_path / "report.json"),
            ]
        )
        captured = capsys.readouterr()
        assert code == 0
        assert "rafa-ai-fee-delta" in captured.out
        assert "accuracy: 1.000 over 1 tasks" in captured.out
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["accuracy_total"] == 1.0
        assert report["rows"][0]["answer"] == GOLD_ANSWER
        assert report["accuracy_by_difficulty"] == {"Hard": 1.0}

    def test_empty_suite_dir(self, tmp_path, capsys):
        cfg = tmp_path / "backend.json"
        cfg.write_text(json.dumps({"kind": "scripted", "script_path": "r.jsonl"}))
        code = main(["bench", str(tmp_path), "--backend", str(cfg)])
        assert code == 1
        assert "no task directories" in capsys.readouterr().err


@pytest.fixture
def recorded_session(golden_dir, tmp_path):
    journals = tmp_path / "journals"
    code = main(
        [
            "run",
            str(golden_dir),
            "--backend",
            scripted_config(golden_dir),
            "--transcript-dir",
            str(journals),
        ]
    )
    assert code == 0
    return journals / "rafa-ai-fee-delta.jsonl"


class TestReplay:
    def test_replay_ok(self, recorded_session, capsys):
        capsys.readouterr()
        code = main(["replay", str(recorded_session)])
        captured = capsys.readouterr()
        assert code == 0
        assert "replay ok: 6 rounds reproduced" in captured.out
        assert GOLD_ANSWER in captured.out

    def test_replay_keeps_out_journal(self, recorded_session, tmp_path, capsys):
        out = tmp_path / "rerun.jsonl"
        code = main(["replay", str(recorded_session), "--out", str(out)])
        assert code == 0
        assert out.is_file()
        assert out.read_text() == recorded_session.read_text()

    def test_corrupt_journal_exits_nonzero(self, recorded_session, capsys):
        recorded_session.write_text(
            recorded_session.read_text().replace('"kind": "header"', '"kind": "mystery"', 1)
        )
        capsys.readouterr()
        code = main(["replay", str(recorded_session)])
        captured = capsys.readouterr()
        assert code == 1
        assert "transcript corrupt" in captured.err

    def test_tampered_journal_reports_divergence(self, recorded_session, capsys):
        lines = recorded_session.read_text().splitlines()
        record = json.loads(lines[1])  # round 0
        record["verdict"]["raw"] = record["verdict"]["raw"].replace("No", "Nq", 1)
        lines[1] = json.dumps(record, ensure_ascii=False)
        recorded_session.write_text("\n".join(lines) + "\n")
        capsys.readouterr()
        code = main(["replay", str(recorded_session)])
        captured = capsys.readouterr()
        assert code == 1
        assert "replay divergence" in captured.err

    def test_missing_journal(self, tmp_path, capsys):
        code = main(["replay", str(tmp_path / "ghost.jsonl")])
        assert code == 1
        assert "transcript corrupt" in capsys.readouterr().err
