"""
Picking the relevant files out of a data lake
=============================================

When a task ships with dozens or hundreds of files, prompts cannot carry
every description.  The retriever embeds each description, embeds the
question, and keeps the top-K files by cosine similarity.  The built-in
hash embedder is deterministic and needs no model, which makes the ranking
reproducible anywhere.
"""

import tempfile
from pathlib import Path

from autoanalyst import (
    DataFileRef,
    FileDescription,
    HashEmbedder,
    ProfileStatus,
    build_index,
    cosine_similarity,
    load_index,
    save_index,
    select_top_k,
)
from autoanalyst.retrieval import embed_text_for

# A mock lake: a handful of files with one-line descriptions. In a real run
# these come from the profiler (see 01_profile_data.py).
SUMMARIES = {
    "lake/payments_2023.csv": "card payment transactions with merchant, date, amount",
    "lake/payments_2024.csv": "card payment transactions for the current year",
    "lake/merchants.json": "merchant registry with category codes and countries",
    "lake/fee_schedule.json": "per-scheme card processing fee rules and rates",
    "lake/weather_daily.csv": "daily temperature and rainfall by city",
    "lake/population.csv": "city population counts from the last census",
    "lake/server_logs.txt": "raw web server access logs, one request per line",
    "lake/readme.md": "notes about how the lake directories are laid out",
}

descriptions = [
    FileDescription(
        file=DataFileRef(path, 1024, Path(path).suffix),
        text=summary,
        probe_script="",
        attempts=0,
        status=ProfileStatus.OK,
    )
    for path, summary in sorted(SUMMARIES.items())
]

embedder = HashEmbedder(dim=64)
index = build_index(embedder, descriptions)
print(f"indexed {len(index)} files at dim {index.dim}")

# Rank the lake against a fee question. The query goes through the same
# embedding as the file descriptions. The hash embedder has no notion of
# meaning, so treat the order below as a determinism demo; swap in a real
# embedding backend and the same call ranks by topic.
question = "How much did merchant fees on card payments change between 2023 and 2024?"
query_vec = embedder.embed(question)

print(f"\ntop 4 files for: {question!r}")
for ref in select_top_k(query_vec, index, k=4):
    text = embed_text_for(ref, SUMMARIES[ref.path])
    score = cosine_similarity(query_vec, embedder.embed(text))
    print(f"  {score:+.4f}  {ref.path}")

# Indexes persist as a small binary file so a big lake is embedded once.
# The file stores vectors only; rows pair back up with the refs in order.
target = Path(tempfile.mkdtemp(prefix="retrieval-demo-")) / "index.bin"
save_index(target, index)
restored = load_index(target, [d.file for d in descriptions])
assert [r.path for r in select_top_k(query_vec, restored, k=4)] == [
    r.path for r in select_top_k(query_vec, index, k=4)
]
print(f"\nindex round trip ok: {target} ({target.stat().st_size} bytes)")
