"""Command line entry points: profile, run, bench, replay."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .engine import DEFAULT_MAX_ROUNDS, EngineConfig, EngineError
from .executor import DEFAULT_TIMEOUT_SECS
from .gateway import Gateway, GatewayError, build_backend, load_backend_config
from .harness import (
    prepare_descriptions,
    render_report_table,
    replay,
    run_suite,
    run_task,
    save_report,
)
from .retrieval import DEFAULT_TOP_K
from .tasks import TaskError, load_task, score_answer
from .transcript import DivergenceAt, TranscriptCorrupt

log = logging.getLogger(__name__)


def _add_backend_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend",
        metavar="CONFIG",
        required=True,
        help="path to a backend config JSON (API keys come from the "
        "environment variable it names, never from the file)",
    )


def _add_engine_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--max-rounds",
        type=int,
        default=DEFAULT_MAX_ROUNDS,
        help=f"verification rounds before giving up (default {DEFAULT_MAX_ROUNDS})",
    )
    parser.add_argument(
        "--top-k",
        type=int,
        default=DEFAULT_TOP_K,
        help=f"retrieval budget for large data lakes (default {DEFAULT_TOP_K})",
    )
    _add_timeout_arg(parser)
    parser.add_argument(
        "--transcript-dir",
        metavar="DIR",
        default=None,
        help="write session journals here (one .jsonl per task)",
    )


def _add_timeout_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--timeout-secs",
        type=float,
        default=DEFAULT_TIMEOUT_SECS,
        help=f"per-script wall clock limit (default {DEFAULT_TIMEOUT_SECS:g})",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autoanalyst",
        description="Iterative data analysis sessions over files in a task directory.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_profile = sub.add_parser(
        "profile", help="describe every data file and cache the results"
    )
    p_profile.add_argument("task_dir", help="directory holding task.json and data/")
    _add_backend_arg(p_profile)
    _add_timeout_arg(p_profile)
    p_profile.add_argument(
        "--parallel", type=int, default=1, help="profile this many files at once"
    )
    p_profile.add_argument(
        "--refresh", action="store_true", help="ignore any cached descriptions"
    )

    p_run = sub.add_parser("run", help="answer a single task end to end")
    p_run.add_argument("task_dir")
    _add_backend_arg(p_run)
    _add_engine_args(p_run)

    p_bench = sub.add_parser("bench", help="run a whole suite and write a report")
    p_bench.add_argument(
        "suite_dir", help="directory whose subdirectories each hold a task"
    )
    _add_backend_arg(p_bench)
    _add_engine_args(p_bench)
    p_bench.add_argument(
        "--parallel", type=int, default=1, help="run this many tasks concurrently"
    )
    p_bench.add_argument(
        "--report", metavar="PATH", default=None, help="where to write report.json"
    )

    p_replay = sub.add_parser(
        "replay", help="re-drive a recorded session and verify it reproduces"
    )
    p_replay.add_argument("transcript", help="a session journal (.jsonl)")
    p_replay.add_argument(
        "--out", metavar="PATH", default=None, help="keep the re-run journal here"
    )
    return parser


def _engine_config(args: argparse.Namespace) -> EngineConfig:
    return EngineConfig(max_rounds=args.max_rounds, timeout=args.timeout_secs)


def _gateway_factory(backend_path: str):
    config = load_backend_config(backend_path)

    def factory() -> Gateway:
        return Gateway(build_backend(config))

    return factory, config


def _cmd_profile(args: argparse.Namespace) -> int:
    task = load_task(args.task_dir)
    factory, _ = _gateway_factory(args.backend)
    cfg = EngineConfig(timeout=args.timeout_secs)
    descriptions = prepare_descriptions(
        factory(),
        task,
        engine_cfg=cfg,
        profile_parallelism=args.parallel,
        refresh=args.refresh,
    )
    for d in descriptions:
        first_line = d.text.splitlines()[0] if d.text else ""
        marker = "ok " if d.ok else "ERR"
        print(f"{marker} {d.file.prompt_name}: {first_line[:100]}")
    print(f"{len(descriptions)} file descriptions cached under {task.workdir}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    task = load_task(args.task_dir)
    factory, _ = _gateway_factory(args.backend)
    transcript_path = None
    if args.transcript_dir:
        transcript_path = Path(args.transcript_dir) / f"{task.id}.jsonl"
    outcome = run_task(
        factory(),
        task,
        engine_cfg=_engine_config(args),
        top_k=args.top_k,
        transcript_path=transcript_path,
    )
    print(outcome.final_answer)
    if outcome.unanswered:
        print("(unanswered: the final script never ran clean)", file=sys.stderr)
    if task.gold_answer is not None:
        verdict = score_answer(outcome.final_answer, task.gold_answer, task.scoring)
        print(
            f"score: {'correct' if verdict else 'incorrect'} ({verdict.diagnostic})",
            file=sys.stderr,
        )
    if transcript_path:
        print(f"transcript: {transcript_path}", file=sys.stderr)
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    suite_dir = Path(args.suite_dir)
    task_dirs = sorted(
        d for d in suite_dir.iterdir() if d.is_dir() and (d / "task.json").is_file()
    )
    if not task_dirs:
        print(f"no task directories under {suite_dir}", file=sys.stderr)
        return 1
    factory, backend_cfg = _gateway_factory(args.backend)
    report = run_suite(
        task_dirs,
        factory,
        engine_cfg=_engine_config(args),
        top_k=args.top_k,
        parallel=args.parallel,
        transcript_dir=args.transcript_dir,
        price_in=backend_cfg.price_in,
        price_out=backend_cfg.price_out,
    )
    report_path = Path(args.report) if args.report else suite_dir / "report.json"
    save_report(report_path, report)
    print(render_report_table(report))
    print(f"report written to {report_path}", file=sys.stderr)
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    outcome = replay(args.transcript, transcript_out=args.out)
    print(
        f"replay ok: {len(outcome.rounds)} rounds reproduced, "
        f"answer {outcome.final_answer!r}"
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "profile": _cmd_profile,
        "run": _cmd_run,
        "bench": _cmd_bench,
        "replay": _cmd_replay,
    }
    try:
        return handlers[args.command](args)
    except (TaskError, EngineError, GatewayError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TranscriptCorrupt as exc:
        print(f"transcript corrupt: {exc}", file=sys.stderr)
        return 1
    except DivergenceAt as exc:
        print(f"replay divergence: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
