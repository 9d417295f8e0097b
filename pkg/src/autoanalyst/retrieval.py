"""Embedding-based file selection for large data lakes.

When a task has more files than fit a prompt, descriptions are embedded and
the top-K most query-similar files are kept. Everything here is exhaustive
(N is at most a few thousand); there is deliberately no ANN structure.
"""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .profiler import DataFileRef, FileDescription

log = logging.getLogger(__name__)

DEFAULT_TOP_K = 100
DEFAULT_EMBED_INPUT_CHARS = 8192
INDEX_FILENAME = "index.bin"

_MAGIC = b"AAIX"
_VERSION = 1


class RetrievalError(Exception):
    pass


class DimensionMismatch(RetrievalError):
    pass


class ZeroVector(RetrievalError):
    pass


class EmptyIndex(RetrievalError):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    source_id: str = ""

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding components must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.size)


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> EmbeddingVector: ...


class HashEmbedder:
    """Deterministic stand-in embedder: text → unit vector seeded by hash.

    Carries no semantics at all; it exists so ranking, persistence, and the
    top-k contract are testable offline with stable results everywhere.
    """

    def __init__(self, dim: int = 64) -> None:
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> EmbeddingVector:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dim)
        norm = np.linalg.norm(vec)
        if norm == 0.0:  # pragma: no cover - standard_normal never returns all-zero
            vec[0] = 1.0
            norm = 1.0
        return EmbeddingVector(vec / norm)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"dim {a.dim} vs {b.dim}")
    norm_a = float(np.linalg.norm(a.values))
    norm_b = float(np.linalg.norm(b.values))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine similarity is undefined for an all-zero vector")
    return float(np.dot(a.values, b.values) / (norm_a * norm_b))


@dataclass(frozen=True)
class RetrievalIndex:
    entries: tuple[tuple[DataFileRef, EmbeddingVector], ...]
    dim: int

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for ref, vec in self.entries:
            if vec.dim != self.dim:
                raise DimensionMismatch(
                    f"index dim {self.dim}, entry {ref.path} has dim {vec.dim}"
                )
            if ref.path in seen:
                raise ValueError(f"duplicate index entry for {ref.path}")
            seen.add(ref.path)

    def __len__(self) -> int:
        return len(self.entries)


def embed_text_for(ref: DataFileRef, description: str, limit: int = DEFAULT_EMBED_INPUT_CHARS) -> str:
    """What gets embedded per file: path, newline, head of the description.

    Head-first truncation, because probe output front-loads schema info.
    """
    return f"{ref.path}\n{description[:limit]}"


def build_index(
    embedder: Embedder,
    descriptions: Sequence[FileDescription],
    *,
    input_limit: int = DEFAULT_EMBED_INPUT_CHARS,
) -> RetrievalIndex:
    entries = tuple(
        (d.file, embedder.embed(embed_text_for(d.file, d.text, input_limit)))
        for d in descriptions
    )
    return RetrievalIndex(entries=entries, dim=embedder.dim)


def select_top_k(
    query_vec: EmbeddingVector, index: RetrievalIndex, k: int
) -> list[DataFileRef]:
    """The k most query-similar files, most similar first.

    With k at or above the index size every file is returned (small data
    lakes are used whole). Ties break by path ascending so rankings are
    reproducible across filesystems and runs.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(index) == 0:
        raise EmptyIndex("cannot select from an empty index")
    scored = [
        (cosine_similarity(query_vec, vec), ref) for ref, vec in index.entries
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1].path))
    if len(index) <= k:
        return [ref for _, ref in scored]
    return [ref for _, ref in scored[:k]]


# ---------------------------------------------------------------------------
# Persistence: index.bin
# ---------------------------------------------------------------------------
# Layout: 4-byte magic "AAIX", then three little-endian uint32s (format
# version, dim, count), then count*dim little-endian float32s, row-major in
# entry order. Paths are not stored here; the index pairs with the entry
# order of descriptions.json written by the profiler.


def save_index(path: str | Path, index: RetrievalIndex) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, index.dim, len(index)))
        for _, vec in index.entries:
            fh.write(vec.values.astype("<f4").tobytes())


def load_index(path: str | Path, files: Sequence[DataFileRef]) -> RetrievalIndex:
    """Read an index back, pairing rows with ``files`` in order."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise RetrievalError(f"not an index file (bad magic): {path}")
    version, dim, count = struct.unpack_from("<III", raw, 4)
    if version != _VERSION:
        raise RetrievalError(f"unsupported index version {version}")
    if count != len(files):
        raise RetrievalError(
            f"index holds {count} rows but {len(files)} files were given"
        )
    expected = 16 + 4 * dim * count
    if len(raw) != expected:
        raise RetrievalError(
            f"index file truncated: {len(raw)} bytes, expected {expected}"
        )
    rows = np.frombuffer(raw, dtype="<f4", offset=16).reshape(count, dim)
    entries = tuple(
        (ref, EmbeddingVector(row.astype(np.float64)))
        for ref, row in zip(files, rows)
    )
    return RetrievalIndex(entries=entries, dim=int(dim))
