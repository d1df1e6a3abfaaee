"""Attribute word vectors from PPMI factorization.

Categories are treated as bags of attributes; the PPMI matrix of attribute
co-occurrence over those bags is factorized with a truncated symmetric
eigendecomposition (power iteration + deflation), giving a deterministic,
dependency-free stand-in for an external word-embedding tool. Both the
graph and these vectors derive from the same co-occurrence counts, so the
regression target stays consistent with the knowledge graph.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateDataError, ValidationError
from .graph import compute_pmi

DEFAULT_DIM = 10


@dataclass
class AttributeCorpus:
    """One attribute-index set per category."""

    documents: list[set[int]]
    num_attributes: int

    def __post_init__(self):
        for i, doc in enumerate(self.documents):
            if not doc:
                raise DegenerateDataError(f"category {i} has an empty attribute bag")
            if max(doc) >= self.num_attributes:
                raise ValidationError(f"category {i} references attribute >= m")

    @classmethod
    def from_membership(cls, membership: np.ndarray) -> "AttributeCorpus":
        membership = np.asarray(membership)
        docs = [set(np.flatnonzero(row).tolist()) for row in membership]
        return cls(documents=docs, num_attributes=membership.shape[1])

    def membership_matrix(self) -> np.ndarray:
        out = np.zeros((len(self.documents), self.num_attributes), dtype=np.int64)
        for i, doc in enumerate(self.documents):
            out[i, sorted(doc)] = 1
        return out


@dataclass
class WordEmbeddingTable:
    """m x d table of attribute vectors; row j embeds attribute j."""

    vectors: np.ndarray
    attribute_names: list[str] | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] < 1:
            raise ValidationError("embedding table must be m x d with d >= 1")
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("embedding table contains NaN/Inf")

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def build_ppmi(corpus: AttributeCorpus) -> np.ndarray:
    """Positive PMI of attribute co-occurrence; diagonal is max(0, log 1/p)."""
    raw = compute_pmi(corpus.membership_matrix())
    ppmi = np.where(np.isfinite(raw), np.maximum(raw, 0.0), 0.0)
    return ppmi


def factorize(ppmi: np.ndarray, d: int = DEFAULT_DIM, seed: int = 0,
              iters: int = 500) -> WordEmbeddingTable:
    """Rank-d factorization E with E E^T ~= PPMI, via power iteration.

    Eigenvector signs are fixed by making the largest-magnitude component
    non-negative; columns beyond the number of positive eigenvalues are
    zero. Deterministic for a fixed seed.
    """
    ppmi = np.asarray(ppmi, dtype=np.float64)
    m = ppmi.shape[0]
    if ppmi.shape != (m, m):
        raise ConfigError("PPMI matrix must be square")
    if not 1 <= d <= m:
        raise ConfigError(f"embedding dim must satisfy 1 <= d <= m, got d={d}, m={m}")

    rng = np.random.default_rng(seed)
    work = ppmi.copy()
    vectors = np.zeros((m, d))
    for col in range(d):
        v = rng.standard_normal(m)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            w = work @ v
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                break
            v_next = w / norm
            lam = float(v_next @ work @ v_next)
            if np.linalg.norm(v_next - v) < 1e-13:
                v = v_next
                break
            v = v_next
        peak = np.argmax(np.abs(v))
        if v[peak] < 0:
            v = -v
        if lam > 0:
            vectors[:, col] = v * np.sqrt(lam)
        work = work - lam * np.outer(v, v)
    return WordEmbeddingTable(vectors=vectors)


def class_targets(table: WordEmbeddingTable, membership_row: np.ndarray) -> list[tuple[int, np.ndarray]]:
    """The (vertex index, word vector) pairs for a class's member attributes."""
    membership_row = np.asarray(membership_row)
    idx = np.flatnonzero(membership_row)
    if idx.size == 0:
        raise DegenerateDataError("class has no member attributes")
    return [(int(j), table.vectors[j].copy()) for j in idx]


# ---------------------------------------------------------------------------
# CSV interface
# ---------------------------------------------------------------------------

def write_embedding_csv(path, table: WordEmbeddingTable) -> None:
    names = table.attribute_names or [f"att{j}" for j in range(table.m)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attribute"] + [f"e{c}" for c in range(table.dim)])
        for name, row in zip(names, table.vectors):
            writer.writerow([name] + [repr(float(v)) for v in row])


def read_embedding_csv(path) -> WordEmbeddingTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path}: row {lineno} has wrong column count")
            names.append(row[0])
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise ValidationError(f"{path}: no embedding rows")
    return WordEmbeddingTable(vectors=np.array(rows), attribute_names=names)
