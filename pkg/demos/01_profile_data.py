"""
Describing unknown data files with probe scripts
================================================

Every downstream agent works from short textual descriptions of the task's
data files.  The profiler asks a model for a tiny probe script per file,
runs it in the task workdir, and keeps whatever the probe printed.  This
demo fakes the model with a keyed scripted backend so it runs offline.
"""

import tempfile
from pathlib import Path

from autoanalyst import (
    Gateway,
    KeyedScriptedBackend,
    ProfilerConfig,
    list_data_files,
    load_descriptions,
    profile_all,
    save_descriptions,
    wrap_code_block,
)

# A throwaway workdir with two small files. The executor insists on a
# data/ subdirectory so generated scripts can rely on relative paths.
workdir = Path(tempfile.mkdtemp(prefix="profile-demo-")) / "work"
(workdir / "data").mkdir(parents=True)
(workdir / "data" / "orders.csv").write_text(
    "order_id,amount\n1001,19.99\n1002,5.00\n1003,42.50\n"
)
(workdir / "data" / "catalog.json").write_text(
    '{"widgets": [{"sku": "W-1", "price": 19.99}, {"sku": "W-2", "price": 5.0}]}'
)

files = list_data_files(workdir / "data")
print("files to profile:")
for ref in files:
    print(f"  {ref.path}  ({ref.size} bytes, {ref.extension})")

# The scripted backend stands in for the analyzer model.  Each record is
# matched by (role, key-in-prompt), so parallel profiling stays deterministic.
# The probe scripts are real programs; the executor actually runs them.
records = [
    {
        "role": "analyzer",
        "key": "data/orders.csv",
        "response": wrap_code_block(
            "import csv\n"
            "rows = list(csv.DictReader(open('data/orders.csv')))\n"
            "print('orders.csv:', len(rows), 'rows, columns', list(rows[0]))\n"
            "print('amounts:', [r['amount'] for r in rows])"
        ),
    },
    {
        "role": "analyzer",
        "key": "data/catalog.json",
        "response": wrap_code_block(
            "import json\n"
            "doc = json.load(open('data/catalog.json'))\n"
            "print('catalog.json: keys', list(doc))\n"
            "print('first widget:', doc['widgets'][0])"
        ),
    },
]

gw = Gateway(KeyedScriptedBackend(records))
descriptions = profile_all(gw, ProfilerConfig(workdir=workdir, timeout=30.0), files)

print("\ndescriptions, as downstream prompts will see them:")
for d in descriptions:
    print(f"--- {d.file.prompt_name} (status={d.status.value}, attempts={d.attempts})")
    print(d.text.rstrip())

# Descriptions are cached next to the task so repeat runs skip the model
# entirely. The cache stores file size and mtime and refuses to serve stale
# entries when the underlying data changes.
cache = workdir / "descriptions.json"
save_descriptions(cache, descriptions)
reloaded = load_descriptions(cache, files=files)
assert reloaded == descriptions
print(f"\ncache round trip ok: {cache}")
