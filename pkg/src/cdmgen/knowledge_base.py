"""Chunked example corpus with lexical or embedding-based retrieval.

Example instances are split along subtree boundaries into chunks that fit a
token budget, preserving well-formed JSON in every chunk body. Retrieval is
exhaustive scoring: corpora here are at most hundreds of chunks, so no
nearest-neighbor index is needed. The default scorer is a deterministic
lexical overlap so the whole pipeline runs offline; an embedding provider
can be attached for cosine scoring.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .errors import DimensionMismatch, EmptyExampleDir, MalformedDocument

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

DEFAULT_K = 3


def lexical_tokens(text: str) -> list[str]:
    """Lowercased alphanumeric tokens; the unit for budgets and overlap."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Chunk:
    """One retrievable fragment of an example instance.

    ``source_path`` locates the subtree within its example (array indices
    included; empty string means the whole file). ``oversized`` marks a
    non-splittable subtree that exceeded the budget but was emitted anyway.
    """

    chunk_id: str
    contract_type: str
    source_path: str
    body: str
    token_estimate: int
    oversized: bool = False
    vector: Optional[tuple[float, ...]] = None


@dataclass
class KnowledgeBase:
    chunks: list[Chunk]
    scorer: str = "lexical"
    embedding_dim: Optional[int] = None
    _embedder: object = field(default=None, repr=False, compare=False)

    def save(self, path) -> None:
        payload = {
            "scorer": self.scorer,
            "embedding_dim": self.embedding_dim,
            "chunks": [
                {
                    "chunk_id": c.chunk_id,
                    "contract_type": c.contract_type,
                    "source_path": c.source_path,
                    "body": c.body,
                    "token_estimate": c.token_estimate,
                    "oversized": c.oversized,
                    "vector": list(c.vector) if c.vector is not None else None,
                }
                for c in self.chunks
            ],
        }
        Path(path).write_text(
            json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "KnowledgeBase":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        chunks = [
            Chunk(
                chunk_id=c["chunk_id"],
                contract_type=c["contract_type"],
                source_path=c["source_path"],
                body=c["body"],
                token_estimate=c["token_estimate"],
                oversized=c.get("oversized", False),
                vector=tuple(c["vector"]) if c.get("vector") is not None else None,
            )
            for c in payload["chunks"]
        ]
        return cls(
            chunks=chunks,
            scorer=payload.get("scorer", "lexical"),
            embedding_dim=payload.get("embedding_dim"),
        )


def ingest_examples(example_dir, contract_type: str, chunk_budget: int) -> KnowledgeBase:
    """Split every example under ``example_dir`` into budget-sized chunks.

    A subtree becomes one chunk when its serialized body fits the budget;
    otherwise the split recurses into its children, so every leaf of every
    example lands in exactly one chunk. Leaves that alone exceed the budget
    are emitted oversized rather than dropped.
    """
    if chunk_budget <= 0:
        raise ValueError("chunk_budget must be positive")
    base = Path(example_dir)
    files = sorted(base.rglob("*.json")) if base.is_dir() else []
    if not files:
        raise EmptyExampleDir(f"no example files found in {example_dir}")

    chunks: list[Chunk] = []
    for file in files:
        try:
            parsed = json.loads(file.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MalformedDocument(file.name, exc.pos, exc.msg) from exc
        _split(parsed, file.name, "", None, False, contract_type, chunk_budget, chunks)
    return KnowledgeBase(chunks=chunks)


def _split(value, file_name, path, name, in_array, contract_type, budget, out) -> None:
    body = _chunk_body(value, name, in_array)
    tokens = len(lexical_tokens(body))
    splittable = (isinstance(value, dict) and value) or (isinstance(value, list) and value)
    if tokens <= budget or not splittable:
        oversized = tokens > budget
        if oversized:
            logger.warning(
                "oversized leaf: %s#%s needs %d tokens against a budget of %d",
                file_name,
                path,
                tokens,
                budget,
            )
        out.append(
            Chunk(
                chunk_id=f"{file_name}#{path}",
                contract_type=contract_type,
                source_path=path,
                body=body,
                token_estimate=tokens,
                oversized=oversized,
            )
        )
        return
    if isinstance(value, dict):
        for key, child in value.items():
            child_path = f"{path}.{key}" if path else key
            _split(child, file_name, child_path, key, False, contract_type, budget, out)
    else:
        for i, element in enumerate(value):
            child_path = f"{path}.{i}" if path else str(i)
            _split(element, file_name, child_path, name, True, contract_type, budget, out)


def _chunk_body(value, name: Optional[str], in_array: bool) -> str:
    """Serialize a subtree, wrapped under its field name when it has one.

    Keeping the field name in the body preserves the logical structure and
    lets lexical retrieval match queries built from field names. An array
    element is wrapped as a one-element array under the array's name.
    """
    if name is None:
        payload = value
    elif in_array:
        payload = {name: [value]}
    else:
        payload = {name: value}
    return json.dumps(payload, indent=2, ensure_ascii=False)


def retrieve(
    kb: KnowledgeBase,
    query: str,
    k: int = DEFAULT_K,
    use_path_affinity: bool = False,
) -> list[Chunk]:
    """Top-``k`` chunks for a query, ties broken by chunk id ascending.

    The lexical scorer counts distinct query tokens present in the chunk
    body, normalized by the chunk's token count. With ``use_path_affinity``
    the overlap between the query and the chunk's source path is added,
    normalized the same way. Embedding-scored knowledge bases rank by cosine
    against the attached embedder's query vector.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not kb.chunks:
        raise ValueError("knowledge base is empty")
    if kb.scorer == "embedding":
        scored = _embedding_scores(kb, query)
    else:
        scored = _lexical_scores(kb, query, use_path_affinity)
    ranked = sorted(scored, key=lambda pair: (-pair[0], pair[1].chunk_id))
    return [chunk for _, chunk in ranked[:k]]


def _lexical_scores(kb: KnowledgeBase, query: str, use_path_affinity: bool):
    query_tokens = set(lexical_tokens(query))
    for chunk in kb.chunks:
        body_tokens = lexical_tokens(chunk.body)
        overlap = len(query_tokens & set(body_tokens))
        score = overlap / max(1, len(body_tokens))
        if use_path_affinity:
            path_tokens = lexical_tokens(chunk.source_path)
            score += len(query_tokens & set(path_tokens)) / max(1, len(path_tokens))
        yield score, chunk


def _embedding_scores(kb: KnowledgeBase, query: str):
    embedder = kb._embedder
    if embedder is None:
        raise ValueError("embedding-scored knowledge base has no attached provider")
    query_vec = _unit(embedder.embed([query])[0])
    if kb.embedding_dim is not None and len(query_vec) != kb.embedding_dim:
        raise DimensionMismatch(
            f"query vector has {len(query_vec)} components, corpus uses {kb.embedding_dim}"
        )
    for chunk in kb.chunks:
        score = sum(a * b for a, b in zip(query_vec, chunk.vector or ()))
        yield score, chunk


def embed_corpus(kb: KnowledgeBase, provider) -> KnowledgeBase:
    """Attach unit-normalized vectors to every chunk and switch scorers.

    ``provider`` must expose ``embed(texts) -> list of equal-length vectors``.
    Re-embedding an embedded corpus is idempotent for deterministic
    providers.
    """
    vectors = provider.embed([chunk.body for chunk in kb.chunks])
    if len(vectors) != len(kb.chunks):
        raise DimensionMismatch(
            f"provider returned {len(vectors)} vectors for {len(kb.chunks)} chunks"
        )
    dim = len(vectors[0]) if vectors else 0
    normalized = []
    for chunk, vector in zip(kb.chunks, vectors):
        if len(vector) != dim:
            raise DimensionMismatch(
                f"chunk {chunk.chunk_id}: vector has {len(vector)} components, expected {dim}"
            )
        normalized.append(replace(chunk, vector=_unit(vector)))
    return KnowledgeBase(
        chunks=normalized,
        scorer="embedding",
        embedding_dim=dim,
        _embedder=provider,
    )


def _unit(vector: Sequence[float]) -> tuple[float, ...]:
    norm = math.sqrt(sum(v * v for v in vector))
    if norm == 0:
        return tuple(float(v) for v in vector)
    return tuple(float(v) / norm for v in vector)
