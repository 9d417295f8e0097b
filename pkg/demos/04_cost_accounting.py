"""
Watching the meter: per-role call and token accounting
======================================================

Every call through the gateway lands in a usage ledger: calls, input
tokens, and output tokens, bucketed by agent role.  Pricing stays out of
the hot path; cost is computed on demand from per-token prices carried by
the backend config.  This demo runs a few exchanges through a scripted
backend and then reads the meter.
"""

from autoanalyst import (
    ChatExchange,
    Gateway,
    Role,
    ScriptedBackend,
    TemplateId,
    UsageLedger,
    estimate_tokens,
)

# Three scripted responses: a probe script, a plan step, and a verdict.
gw = Gateway(
    ScriptedBackend(
        [
            {"role": "analyzer", "response": "```python\nprint(open('data/a.csv').read())\n```"},
            {"role": "planner", "response": "Filter the payments to February and sum the fees."},
            {"role": "verifier", "response": "No. The merchant filter is missing."},
        ]
    )
)

gw.ask(Role.ANALYZER, TemplateId.ANALYZER, {"filename": "data/a.csv"})
gw.ask(
    Role.PLANNER,
    TemplateId.PLANNER_INIT,
    {
        "question": "What were the February fees?",
        "filenames": ["data/a.csv"],
        "summaries": ["payments ledger, one row per transaction"],
    },
)
gw.ask(
    Role.VERIFIER,
    TemplateId.VERIFIER,
    {
        "question": "What were the February fees?",
        "steps": ["Load the payments file."],
        "code": "print('todo')",
        "result": "todo",
    },
)

# Scripted backends return no usage metadata, so the gateway estimates
# tokens from byte length and marks each exchange as estimated.
print("role        calls  tokens in  tokens out")
for role, usage in sorted(gw.ledger.per_role.items(), key=lambda kv: kv[0].value):
    print(
        f"{role.value:<10}  {usage.calls:>5}  {usage.input_tokens:>9}  "
        f"{usage.output_tokens:>10}"
    )
totals = gw.ledger.totals
print(
    f"{'total':<10}  {totals.calls:>5}  {totals.input_tokens:>9}  "
    f"{totals.output_tokens:>10}"
)
print(f"estimated usage on {gw.ledger.estimated_calls} of {gw.ledger.exchange_count} calls")

# Cost is linear in tokens. At $1.25 per million input tokens and $10.00
# per million output tokens, a heavyweight session with 154,669 input and
# 3,373 output tokens comes out just under a quarter.
price_in = 1.25 / 1_000_000
price_out = 10.00 / 1_000_000

session = UsageLedger()
session.record(
    ChatExchange(
        role=Role.PLANNER,
        prompt="",
        response="",
        input_tokens=154_669,
        output_tokens=3_373,
        latency_secs=0.0,
        backend_id="sample",
    )
)
print(f"\nsample heavyweight session: ${session.cost(price_in, price_out):.4f}")
print(f"this demo's three calls:    ${gw.ledger.cost(price_in, price_out):.6f}")

# The estimator is deliberately simple: one token per four UTF-8 bytes,
# rounded up. Good enough for budgeting when a backend reports nothing.
for text in ("abcd", "twelve bytes", "€" * 4):
    print(f"estimate_tokens({text!r}) = {estimate_tokens(text)}")
