"""Attribute co-occurrence knowledge graph and the GCN propagation operator.

Vertices are attributes; an edge exists where the min-max-normalized PMI of
the pair (counted over category membership) clears a threshold. Pairs that
never co-occur carry no PMI value at all (stored as NaN) and can never
become edges. A category-level cosine-similarity graph is available as an
alternative graph type.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    DegenerateDataError,
    EmptyGraphError,
    ValidationError,
)

DEFAULT_DELTA = 0.75
DEFAULT_CATEGORY_THRESHOLD = 0.5


@dataclass
class CategoryAttributeMatrix:
    """Per-category attribute strengths in [0, 1], one row per category."""

    values: np.ndarray  # |Y| x m
    category_names: list[str]
    attribute_names: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError("attribute matrix must be 2-D")
        ny, m = self.values.shape
        if ny < 2 or m < 2:
            raise ValidationError(f"need at least 2 categories and 2 attributes, got {ny}x{m}")
        if len(self.category_names) != ny or len(self.attribute_names) != m:
            raise ValidationError("name lists do not match matrix shape")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("attribute matrix contains NaN/Inf")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValidationError("attribute entries must lie in [0, 1]")

    @property
    def num_categories(self) -> int:
        return self.values.shape[0]

    @property
    def num_attributes(self) -> int:
        return self.values.shape[1]


@dataclass
class KnowledgeGraph:
    """Symmetric binary edges over m vertices plus the PMI values behind them."""

    m: int
    edges: np.ndarray  # m x m, {0,1}, zero diagonal
    pmi: np.ndarray  # m x m normalized PMI in [0,1], NaN where absent
    delta: float = DEFAULT_DELTA
    vertex_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64)
        self.pmi = np.asarray(self.pmi, dtype=np.float64)
        if self.edges.shape != (self.m, self.m) or self.pmi.shape != (self.m, self.m):
            raise ValidationError("edge/pmi matrices must be m x m")
        if not np.array_equal(self.edges, self.edges.T):
            raise ValidationError("edge matrix must be symmetric")
        if np.any(np.diag(self.edges) != 0):
            raise ValidationError("edge matrix must have a zero diagonal")

    @property
    def num_edges(self) -> int:
        return int(self.edges.sum()) // 2

    def to_json(self) -> str:
        pairs = [
            [int(i), int(j)]
            for i in range(self.m)
            for j in range(i + 1, self.m)
            if self.edges[i, j]
        ]
        pmi_entries = [
            [int(i), int(j), float(self.pmi[i, j])]
            for i in range(self.m)
            for j in range(i + 1, self.m)
            if np.isfinite(self.pmi[i, j])
        ]
        return json.dumps(
            {"m": self.m, "delta": self.delta, "edges": pairs, "pmi": pmi_entries},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "KnowledgeGraph":
        obj = json.loads(text)
        m = int(obj["m"])
        edges = np.zeros((m, m), dtype=np.int64)
        pmi = np.full((m, m), np.nan)
        for i, j in obj["edges"]:
            edges[i, j] = edges[j, i] = 1
        for i, j, v in obj["pmi"]:
            pmi[i, j] = pmi[j, i] = v
        return cls(m=m, edges=edges, pmi=pmi, delta=float(obj["delta"]))


@dataclass
class PropagationOperator:
    """Row-normalized adjacency with self-loops: D_hat^{-1} (G_a + I)."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        rowsums = self.matrix.sum(axis=1)
        if np.any(self.matrix < 0) or not np.allclose(rowsums, 1.0, atol=1e-12):
            raise ValidationError("propagation operator rows must be non-negative and sum to 1")

    @property
    def m(self) -> int:
        return self.matrix.shape[0]


def binarize_attributes(cam: CategoryAttributeMatrix, mode: str = "nonzero") -> np.ndarray:
    """Turn continuous attribute strengths into per-category membership sets."""
    if mode == "nonzero":
        member = cam.values > 0.0
    elif mode == "mean-threshold":
        member = cam.values > cam.values.mean(axis=0, keepdims=True)
    else:
        raise ConfigError(f"unknown binarize mode: {mode!r}")
    empty = np.where(~member.any(axis=1))[0]
    if empty.size:
        raise DegenerateDataError(f"categories with zero member attributes: {empty.tolist()}")
    return member.astype(np.int64)


def compute_pmi(membership: np.ndarray) -> np.ndarray:
    """Raw PMI over category co-occurrence; NaN marks zero co-occurrence.

    p(v) is the fraction of categories containing v, p(v_i, v_j) the
    fraction containing both; the diagonal holds log(1/p(v)).
    """
    membership = np.asarray(membership)
    ny, m = membership.shape
    occ = membership.sum(axis=0).astype(np.float64)
    missing = np.where(occ == 0)[0]
    if missing.size:
        raise DegenerateDataError(f"attributes occurring in zero categories: {missing.tolist()}")
    joint = (membership.T.astype(np.float64) @ membership.astype(np.float64)) / ny
    p = occ / ny
    raw = np.full((m, m), np.nan)
    present = joint > 0
    with np.errstate(divide="ignore"):
        raw[present] = np.log(joint[present] / np.outer(p, p)[present])
    return raw


def normalize_pmi(raw: np.ndarray) -> np.ndarray:
    """Min-max map of present off-diagonal values onto [0, 1]."""
    m = raw.shape[0]
    off = ~np.eye(m, dtype=bool)
    vals = raw[off & np.isfinite(raw)]
    if vals.size == 0:
        raise EmptyGraphError("no attribute pair ever co-occurs")
    lo, hi = vals.min(), vals.max()
    out = np.full_like(raw, np.nan)
    sel = np.isfinite(raw)
    if hi == lo:
        out[sel] = 1.0
    else:
        out[sel] = (raw[sel] - lo) / (hi - lo)
        out[sel] = np.clip(out[sel], 0.0, 1.0)  # diagonal values may overshoot
    return out


def build_attribute_graph(
    cam: CategoryAttributeMatrix,
    delta: float = DEFAULT_DELTA,
    mode: str = "nonzero",
) -> KnowledgeGraph:
    """Edge between attributes whose normalized PMI exceeds delta."""
    if not 0.0 <= delta <= 1.0:
        raise ConfigError(f"delta must lie in [0, 1], got {delta}")
    membership = binarize_attributes(cam, mode)
    norm = normalize_pmi(compute_pmi(membership))
    m = cam.num_attributes
    with np.errstate(invalid="ignore"):
        edges = np.where(np.isfinite(norm) & (norm > delta), 1, 0)
    np.fill_diagonal(edges, 0)
    np.fill_diagonal(norm, np.nan)
    return KnowledgeGraph(m=m, edges=edges, pmi=norm, delta=delta, vertex_names=list(cam.attribute_names))


def build_category_graph(
    cam: CategoryAttributeMatrix,
    threshold: float = DEFAULT_CATEGORY_THRESHOLD,
) -> KnowledgeGraph:
    """Category-level graph: edge where cosine similarity of attribute rows > threshold."""
    rows = cam.values
    norms = np.linalg.norm(rows, axis=1)
    zero = np.where(norms == 0)[0]
    if zero.size:
        raise DegenerateDataError(f"categories with all-zero attribute rows: {zero.tolist()}")
    sim = (rows @ rows.T) / np.outer(norms, norms)
    edges = (sim > threshold).astype(np.int64)
    np.fill_diagonal(edges, 0)
    simvals = sim.copy()
    np.fill_diagonal(simvals, np.nan)
    return KnowledgeGraph(
        m=cam.num_categories,
        edges=edges,
        pmi=np.clip(simvals, 0.0, 1.0),
        delta=threshold,
        vertex_names=list(cam.category_names),
    )


def propagation_operator(g: KnowledgeGraph, self_loops: bool = True) -> PropagationOperator:
    """Row-normalized propagation matrix for GCN layers.

    Self-loops are added by default so each vertex keeps its own features;
    without them an isolated vertex would have zero degree, so the
    no-self-loop variant falls back to a self-loop for isolated vertices.
    """
    adj = g.edges.astype(np.float64)
    if self_loops:
        adj = adj + np.eye(g.m)
    else:
        deg = adj.sum(axis=1)
        isolated = deg == 0
        adj[isolated, isolated] = 1.0
    return PropagationOperator(adj / adj.sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# CSV interface
# ---------------------------------------------------------------------------

def read_attribute_csv(path) -> CategoryAttributeMatrix:
    """Header row of attribute names; each data row: category name, floats."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty attribute CSV") from None
        attribute_names = header[1:]
        names, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path}: row {lineno} has {len(row)} columns, expected {len(header)}")
            names.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ValidationError(f"{path}: row {lineno}: {exc}") from None
    if not rows:
        raise ValidationError(f"{path}: no category rows")
    return CategoryAttributeMatrix(np.array(rows), names, attribute_names)


def write_attribute_csv(path, cam: CategoryAttributeMatrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category"] + list(cam.attribute_names))
        for name, row in zip(cam.category_names, cam.values):
            writer.writerow([name] + [repr(float(v)) for v in row])
