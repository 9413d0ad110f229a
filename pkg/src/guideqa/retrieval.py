"""Transcript chunking and exact top-k similarity search.

Per-video corpora are small (at most a few hundred chunks), so the index is a
plain normalized matrix and search is an exhaustive scan. That keeps ranking
exact, which the test oracles rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import Transcript
from .gateway import EndpointConfig, Gateway


class RetrievalError(Exception):
    pass


class NormalizationError(RetrievalError):
    pass


@dataclass
class IndexConfig:
    chunk_target_chars: int = 1500
    chunk_overlap_chars: int = 200
    top_k: int = 5

    def __post_init__(self):
        if self.chunk_target_chars < 1:
            raise ValueError("chunk_target_chars must be positive")
        if self.chunk_overlap_chars < 0:
            raise ValueError("chunk_overlap_chars must be non-negative")
        if self.chunk_overlap_chars >= self.chunk_target_chars:
            raise ValueError("overlap must be smaller than the chunk target")
        if self.top_k < 1:
            raise ValueError("top_k must be positive")


@dataclass
class Chunk:
    chunk_id: int
    video_id: str
    text: str
    start_line: int
    end_line: int


def chunk_transcript(t: Transcript, cfg: IndexConfig) -> list[Chunk]:
    """Split at line boundaries into chunks of roughly chunk_target_chars,
    with consecutive chunks overlapping by whole lines worth about
    chunk_overlap_chars. Every line lands in at least one chunk."""
    lines = t.lines
    n = len(lines)
    chunks: list[Chunk] = []
    start = 0  # 0-based index of the first line of the next chunk
    while start < n:
        size = len(lines[start])
        end = start + 1
        while end < n and size + 1 + len(lines[end]) <= cfg.chunk_target_chars:
            size += 1 + len(lines[end])
            end += 1
        chunks.append(
            Chunk(
                chunk_id=len(chunks),
                video_id=t.meta.video_id,
                text="\n".join(lines[start:end]),
                start_line=start + 1,
                end_line=end,
            )
        )
        if end >= n:
            break
        # Walk back whole lines until we have ~overlap chars of carry-over,
        # never consuming the entire previous chunk.
        overlap_start = end
        carried = 0
        while overlap_start > start + 1 and carried < cfg.chunk_overlap_chars:
            if carried + len(lines[overlap_start - 1]) > cfg.chunk_overlap_chars:
                break
            carried += len(lines[overlap_start - 1]) + 1
            overlap_start -= 1
        start = overlap_start
    return chunks


@dataclass
class VectorIndex:
    config: IndexConfig
    chunks: list[Chunk]
    vectors: np.ndarray  # shape (n_chunks, dim), rows L2-normalized
    embed_endpoint: EndpointConfig

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.chunks)


def _normalize(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise NormalizationError("cannot L2-normalize a zero or non-finite vector")
    return matrix / norms[:, None]


def build_index(
    chunks: list[Chunk],
    gw: Gateway,
    endpoint: EndpointConfig,
    cfg: Optional[IndexConfig] = None,
    batch_size: int = 64,
) -> VectorIndex:
    if not chunks:
        raise ValueError("cannot index an empty chunk list")
    cfg = cfg or IndexConfig()
    rows = []
    for i in range(0, len(chunks), batch_size):
        batch = [c.text for c in chunks[i : i + batch_size]]
        rows.extend(v.values for v in gw.embed(endpoint, batch))
    matrix = np.asarray(rows, dtype=np.float32)
    return VectorIndex(
        config=cfg, chunks=list(chunks), vectors=_normalize(matrix), embed_endpoint=endpoint
    )


def search(
    idx: VectorIndex, query: str, k: int, gw: Gateway
) -> list[tuple[Chunk, float]]:
    """Exact cosine top-k, ties broken toward the lower chunk_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    qvec = np.asarray(gw.embed(idx.embed_endpoint, [query])[0].values, dtype=np.float32)
    qnorm = np.linalg.norm(qvec)
    if qnorm == 0:
        raise NormalizationError("query embedded to a zero vector")
    qvec = qvec / qnorm
    sims = idx.vectors @ qvec
    order = sorted(range(len(idx.chunks)), key=lambda i: (-float(sims[i]), idx.chunks[i].chunk_id))
    return [(idx.chunks[i], float(sims[i])) for i in order[: min(k, len(idx.chunks))]]


# --------------------------------------------------------------------------
# Persistence: one file with a JSON header line followed by the raw vectors
# as little-endian float32.


def save_index(idx: VectorIndex, path: str | Path) -> None:
    header = {
        "config": {
            "chunk_target_chars": idx.config.chunk_target_chars,
            "chunk_overlap_chars": idx.config.chunk_overlap_chars,
            "top_k": idx.config.top_k,
        },
        "endpoint": {
            "name": idx.embed_endpoint.name,
            "base_url": idx.embed_endpoint.base_url,
            "model_id": idx.embed_endpoint.model_id,
            "api_key_env": idx.embed_endpoint.api_key_env,
        },
        "dimension": idx.dimension,
        "count": len(idx.chunks),
        "chunks": [
            {
                "chunk_id": c.chunk_id,
                "video_id": c.video_id,
                "text": c.text,
                "start_line": c.start_line,
                "end_line": c.end_line,
            }
            for c in idx.chunks
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, ensure_ascii=False).encode("utf-8"))
        fh.write(b"\n")
        fh.write(idx.vectors.astype("<f4").tobytes())


def load_index(path: str | Path) -> VectorIndex:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    count, dim = header["count"], header["dimension"]
    vectors = np.frombuffer(blob, dtype="<f4", count=count * dim).reshape(count, dim)
    chunks = [Chunk(**c) for c in header["chunks"]]
    endpoint = EndpointConfig(
        name=header["endpoint"]["name"],
        base_url=header["endpoint"]["base_url"],
        model_id=header["endpoint"]["model_id"],
        api_key_env=header["endpoint"].get("api_key_env", ""),
    )
    return VectorIndex(
        config=IndexConfig(**header["config"]),
        chunks=chunks,
        vectors=vectors.copy(),
        embed_endpoint=endpoint,
    )
