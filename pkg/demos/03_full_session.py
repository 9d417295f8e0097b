"""
A complete plan-verify-route session, replayed from a journal
=============================================================

This walks the whole loop on the bundled fee-delta task: plan one step at a
time, implement the plan as a script, run it, let a verifier judge the
result, and either stop, extend the plan, or back up to the wrong step.
The model is a scripted backend replaying canned responses, so the run is
deterministic and finishes in seconds.  At the end the session journal is
replayed and checked byte for byte.
"""

import json
import shutil
import tempfile
from pathlib import Path

from autoanalyst import (
    Gateway,
    ScriptedBackend,
    list_data_files,
    load_descriptions,
    load_task,
    replay_transcript_pair,
    run_session,
    score_answer,
)

REPO = Path(__file__).resolve().parents[1]
GOLDEN = REPO / "tests" / "fixtures" / "golden"

# Copy the bundled task somewhere writable and stamp live mtimes into its
# description cache (the cache refuses to serve entries for files whose
# size or mtime changed, and a fresh checkout has arbitrary mtimes).
task_dir = Path(tempfile.mkdtemp(prefix="session-demo-")) / "fee-delta"
shutil.copytree(GOLDEN, task_dir)
(task_dir / "_generate.py").unlink()
cache = task_dir / "descriptions.json"
payload = json.loads(cache.read_text())
for entry in payload["entries"]:
    stat = (task_dir / "data" / entry["path"]).stat()
    entry["mtime_ns"] = stat.st_mtime_ns
    entry["size"] = stat.st_size
cache.write_text(json.dumps(payload, indent=2) + "\n")

task = load_task(task_dir)
print(f"task {task.id}: {task.query[:72]}...")

descriptions = load_descriptions(cache, files=list_data_files(task.data_dir))
assert descriptions is not None
gw = Gateway(ScriptedBackend.from_path(task_dir / "responses.jsonl"))

journal = task_dir / "session.jsonl"
outcome = run_session(task, descriptions, gw, transcript_path=journal)

# One line per round: how long the plan was when judged, what the verifier
# said, and where the router sent the loop next.
print("\nround  plan  verdict       route")
for rec in outcome.rounds:
    verdict = "sufficient" if rec.verdict.sufficient else "insufficient"
    if rec.route is None:
        route = "-"
    elif rec.route.wrong_index is None:
        route = "add step"
    else:
        route = f"wrong step {rec.route.wrong_index}"
    print(f"{rec.round:>5}  {len(rec.plan_snapshot):>4}  {verdict:<12}  {route}")

print(f"\nterminated by: {outcome.terminated_by.value}")
print(f"final answer:  {outcome.final_answer}")
verdict = score_answer(outcome.final_answer, task.gold_answer, task.scoring)
print(f"scored against gold {task.gold_answer!r}: {verdict.diagnostic}")

# The journal captures every exchange and execution, enough to re-drive the
# identical session without the original backend. Replay writes a second
# journal; byte equality proves the engine retraced every step.
rerun = task_dir / "session-replay.jsonl"
replay_transcript_pair(journal, rerun)
assert journal.read_bytes() == rerun.read_bytes()
print(f"\nreplay reproduced {journal.stat().st_size} journal bytes exactly")
