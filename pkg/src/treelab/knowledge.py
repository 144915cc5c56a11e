"""Domain knowledge base: chunked text, embeddings, cosine retrieval.

Documents are split into whitespace-token chunks (default block size
4000 tokens), embedded by a pluggable client, and retrieved by exact
brute-force cosine similarity — index sizes stay small enough that an
approximate index would only obscure the oracle property. Instructions
route to the knowledge path when the best similarity reaches the
retrieval threshold (>= 0.6 at the boundary).

The offline embedder is a hashed bag-of-words: tokens hash into a fixed
number of buckets and the count vector is L2-normalized. Deterministic
and dependency-free, which makes identical texts embed identically and
disjoint vocabularies embed orthogonally.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import ConfigurationError

DEFAULT_CHUNK_TOKENS = 4000
DEFAULT_THRESHOLD = 0.6

Tokenizer = Callable[[str], list[str]]


def whitespace_tokens(text: str) -> list[str]:
    return text.split()


def chunk_text(
    text: str,
    max_tokens: int = DEFAULT_CHUNK_TOKENS,
    tokenizer: Tokenizer = whitespace_tokens,
) -> list[str]:
    """Greedy packing of the token stream into blocks of at most
    ``max_tokens`` tokens; concatenating the chunks' tokens reproduces the
    original token sequence. Empty text gives no chunks."""
    if max_tokens < 1:
        raise ValueError(f"max_tokens must be >= 1, got {max_tokens}")
    tokens = tokenizer(text)
    return [" ".join(tokens[i:i + max_tokens]) for i in range(0, len(tokens), max_tokens)]


class EmbeddingClient(Protocol):
    def embed(self, texts: list[str]) -> np.ndarray: ...


class HashedEmbedder:
    """Offline deterministic embedder: hashed bag-of-words over ``dim``
    buckets, L2-normalized."""

    def __init__(self, dim: int = 256, tokenizer: Tokenizer = whitespace_tokens):
        self.dim = dim
        self.tokenizer = tokenizer

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            for tok in self.tokenizer(text):
                out[i, self.bucket(tok)] += 1.0
        return out


@dataclass(frozen=True)
class KnowledgeChunk:
    chunk_id: int
    doc_id: str
    text: str
    token_count: int
    embedding: np.ndarray  # unit norm

    def __eq__(self, other):
        return (isinstance(other, KnowledgeChunk)
                and self.chunk_id == other.chunk_id
                and self.doc_id == other.doc_id
                and self.text == other.text
                and self.token_count == other.token_count
                and np.array_equal(self.embedding, other.embedding))


@dataclass(frozen=True)
class RetrievalResult:
    query: str
    hits: tuple[tuple[int, float], ...]  # (chunk_id, similarity), descending

    def __post_init__(self):
        sims = [s for _, s in self.hits]
        if any(a < b for a, b in zip(sims, sims[1:])):
            raise ValueError("similarities must be non-increasing")

    def __len__(self) -> int:
        return len(self.hits)


KNOWLEDGE_QUESTION = "knowledge_question"
AGENT_TASK = "agent_task"


@dataclass(frozen=True)
class Route:
    kind: str
    best_similarity: float


def normalize_rows(vectors: np.ndarray) -> np.ndarray:
    arr = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    safe = np.where(norms == 0, 1.0, norms)
    return arr / safe


class KnowledgeBase:
    """In-memory chunk index over a pluggable embedding client."""

    def __init__(
        self,
        embedder: EmbeddingClient | None = None,
        threshold: float = DEFAULT_THRESHOLD,
        tokenizer: Tokenizer = whitespace_tokens,
    ):
        self.embedder = embedder if embedder is not None else HashedEmbedder()
        self.threshold = threshold
        self.tokenizer = tokenizer
        self.chunks: list[KnowledgeChunk] = []
        self._dim: int | None = None
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.chunks)

    def embed(self, texts: list[str]) -> np.ndarray:
        """Embed texts and L2-normalize whatever the client returned.
        The vector dimension is pinned on first use; drift is an error."""
        raw = np.asarray(self.embedder.embed(texts), dtype=float)
        if raw.ndim != 2 or raw.shape[0] != len(texts):
            raise ConfigurationError(
                f"embedding client returned shape {raw.shape} for {len(texts)} texts")
        if self._dim is None:
            self._dim = raw.shape[1]
        elif raw.shape[1] != self._dim:
            raise ConfigurationError(
                f"embedding dimension drifted from {self._dim} to {raw.shape[1]}")
        return normalize_rows(raw)

    def ingest(self, text: str, doc_id: str = "doc",
               max_tokens: int = DEFAULT_CHUNK_TOKENS) -> list[KnowledgeChunk]:
        """Chunk, embed and index a document; returns the new chunks."""
        texts = chunk_text(text, max_tokens, self.tokenizer)
        if not texts:
            return []
        vectors = self.embed(texts)
        start = max((c.chunk_id for c in self.chunks), default=0) + 1
        new = [
            KnowledgeChunk(
                chunk_id=start + i,
                doc_id=doc_id,
                text=t,
                token_count=len(self.tokenizer(t)),
                embedding=vectors[i],
            )
            for i, t in enumerate(texts)
        ]
        self.chunks.extend(new)
        self._matrix = None
        return new

    def add_chunks(self, chunks: list[KnowledgeChunk]) -> None:
        self.chunks.extend(chunks)
        self._matrix = None
        if chunks and self._dim is None:
            self._dim = len(chunks[0].embedding)

    def chunk_by_id(self, chunk_id: int) -> KnowledgeChunk:
        for c in self.chunks:
            if c.chunk_id == chunk_id:
                return c
        raise KeyError(chunk_id)

    def _similarity_matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.stack([c.embedding for c in self.chunks]) \
                if self.chunks else np.zeros((0, self._dim or 1))
        return self._matrix

    def retrieve_vector(self, vector: np.ndarray, k: int,
                        threshold: float | None = None) -> tuple[tuple[int, float], ...]:
        """Exact top-k by cosine similarity, ties by chunk_id ascending;
        hits with similarity <= threshold are dropped."""
        if threshold is None:
            threshold = self.threshold
        if not self.chunks:
            return ()
        sims = self._similarity_matrix() @ np.asarray(vector, dtype=float)
        order = sorted(range(len(self.chunks)),
                       key=lambda i: (-sims[i], self.chunks[i].chunk_id))
        hits = [(self.chunks[i].chunk_id, float(sims[i])) for i in order[:k]]
        return tuple((cid, s) for cid, s in hits if s > threshold)

    def retrieve(self, query: str, k: int = 5,
                 threshold: float | None = None) -> RetrievalResult:
        if not self.chunks:
            return RetrievalResult(query=query, hits=())
        vec = self.embed([query])[0]
        return RetrievalResult(query=query, hits=self.retrieve_vector(vec, k, threshold))

    def best_similarity(self, instruction: str) -> float:
        """Top cosine similarity over the whole index; -1 when empty."""
        if not self.chunks:
            return -1.0
        vec = self.embed([instruction])[0]
        sims = self._similarity_matrix() @ vec
        return float(sims.max())

    def route(self, instruction: str) -> Route:
        """Knowledge question iff the best similarity reaches the
        threshold (>= at the boundary), else an agent task."""
        best = self.best_similarity(instruction)
        kind = KNOWLEDGE_QUESTION if best >= self.threshold else AGENT_TASK
        return Route(kind=kind, best_similarity=best)

    # sqlite persistence (see store.TreeStore kb tables)

    def to_rows(self) -> list[tuple[int, str, str, int, int, bytes]]:
        return [
            (c.chunk_id, c.doc_id, c.text, c.token_count,
             len(c.embedding), np.asarray(c.embedding, dtype=np.float64).tobytes())
            for c in self.chunks
        ]

    @classmethod
    def from_rows(cls, rows, embedder: EmbeddingClient | None = None,
                  threshold: float = DEFAULT_THRESHOLD) -> "KnowledgeBase":
        kb = cls(embedder=embedder, threshold=threshold)
        chunks = [
            KnowledgeChunk(
                chunk_id=r[0], doc_id=r[1], text=r[2], token_count=r[3],
                embedding=np.frombuffer(r[5], dtype=np.float64).reshape(r[4]),
            )
            for r in rows
        ]
        kb.add_chunks(chunks)
        return kb


CONTEXT_PROMPT = "Given {context}, could you please explain the meaning of {query}?"


def build_context_prompt(query: str, result: RetrievalResult, kb: KnowledgeBase) -> str:
    """Retained chunk texts joined by blank lines in rank order, substituted
    into the context prompt template."""
    if not result.hits:
        raise ValueError("cannot build a context prompt from an empty retrieval result")
    context = "\n\n".join(kb.chunk_by_id(cid).text for cid, _ in result.hits)
    return CONTEXT_PROMPT.format(context=context, query=query)


def answer_with_context(query: str, result: RetrievalResult,
                        kb: KnowledgeBase, llm) -> tuple[str, str]:
    """Build the context prompt, send it to the LLM client, and return
    (prompt, completion). The completion is returned verbatim."""
    prompt = build_context_prompt(query, result, kb)
    answer = llm.complete([{"role": "user", "content": prompt}])
    return prompt, answer
