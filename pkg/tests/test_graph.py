"""Knowledge graph: PMI against a brute-force oracle, normalization,
thresholding, propagation operator invariants, JSON/CSV round-trips."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvse.errors import DegenerateDataError, EmptyGraphError, ValidationError
from gvse.graph import (
    CategoryAttributeMatrix,
    KnowledgeGraph,
    binarize_attributes,
    build_attribute_graph,
    build_category_graph,
    compute_pmi,
    normalize_pmi,
    propagation_operator,
    read_attribute_csv,
    write_attribute_csv,
)


def pmi_oracle(membership):
    """Independent brute-force PMI over explicit category sets."""
    n, m = membership.shape
    cats = [set(np.where(membership[c] > 0)[0]) for c in range(n)]
    out = np.full((m, m), np.nan)
    for i in range(m):
        for j in range(m):
            pi = sum(i in c for c in cats) / n
            pj = sum(j in c for c in cats) / n
            pij = sum(i in c and j in c for c in cats) / n
            if i != j and pij > 0:
                out[i, j] = math.log(pij / (pi * pj))
            if i == j:
                out[i, j] = math.log(1.0 / pi)
    return out


def random_membership(rng, n, m):
    mem = (rng.random((n, m)) > 0.5).astype(float)
    for j in range(m):  # every attribute must occur somewhere
        if mem[:, j].sum() == 0:
            mem[rng.integers(n), j] = 1.0
    for c in range(n):  # every category must own an attribute
        if mem[c].sum() == 0:
            mem[c, rng.integers(m)] = 1.0
    return mem


class TestPmi:
    def test_brute_force_200_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(2, 11))
            mem = random_membership(rng, n, m)
            got = compute_pmi(mem)
            want = pmi_oracle(mem)
            both = ~np.isnan(want)
            assert np.array_equal(np.isnan(got), np.isnan(want))
            assert np.allclose(got[both], want[both], atol=1e-12)

    def test_worked_example_ln2(self):
        # attributes A,B appear together in 2 of 4 categories and nowhere else:
        # raw PMI = ln(0.5 / (0.5 * 0.5)) = ln 2
        mem = np.array([
            [1, 1, 0, 0],  # C1: A, B
            [1, 1, 0, 0],  # C2: A, B
            [0, 0, 1, 0],  # C3: C
            [0, 0, 0, 1],  # C4: D
        ], dtype=float)
        raw = compute_pmi(mem)
        assert raw[0, 1] == pytest.approx(math.log(2.0), abs=1e-12)
        # A-B is the only co-occurring pair, so after min-max normalization it
        # sits at 1.0 and survives delta=0.75 as the single edge
        cam = CategoryAttributeMatrix(mem, [f"C{i}" for i in range(1, 5)], list("ABCD"))
        g = build_attribute_graph(cam, delta=0.75)
        assert g.num_edges == 1
        assert g.edges[0, 1] == 1 and g.edges[1, 0] == 1

    def test_symmetry_and_nan_for_absent(self, rng):
        mem = random_membership(rng, 6, 8)
        raw = compute_pmi(mem)
        mask = ~np.isnan(raw)
        assert np.array_equal(mask, mask.T)
        assert np.allclose(raw[mask], raw.T[mask], atol=1e-12)

    def test_attribute_never_occurring_rejected(self):
        mem = np.array([[1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(DegenerateDataError):
            compute_pmi(mem)


class TestNormalize:
    def test_range_and_extremes(self, rng):
        mem = random_membership(rng, 8, 10)
        raw = compute_pmi(mem)
        norm = normalize_pmi(raw)
        off = ~np.isnan(norm) & ~np.eye(10, dtype=bool)
        if off.any():
            vals = norm[off]
            assert vals.min() >= 0.0 and vals.max() <= 1.0
            present_raw = raw[off]
            if present_raw.max() > present_raw.min():
                assert vals.min() == 0.0 and vals.max() == 1.0

    def test_constant_present_values_map_to_one(self):
        raw = np.full((3, 3), np.nan)
        raw[0, 1] = raw[1, 0] = 0.7
        np.fill_diagonal(raw, 1.0)
        norm = normalize_pmi(raw)
        assert norm[0, 1] == 1.0

    def test_all_absent_raises(self):
        raw = np.full((3, 3), np.nan)
        np.fill_diagonal(raw, 1.0)
        with pytest.raises(EmptyGraphError):
            normalize_pmi(raw)


class TestThreshold:
    def test_delta_monotone(self, rng):
        mem = random_membership(rng, 10, 12)
        cam = CategoryAttributeMatrix(mem, [f"c{i}" for i in range(10)],
                                      [f"a{j}" for j in range(12)])
        counts = [build_attribute_graph(cam, delta=d).num_edges
                  for d in (0.0, 0.25, 0.5, 0.75, 1.0)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_delta_one_gives_empty_graph(self, rng):
        mem = random_membership(rng, 10, 12)
        cam = CategoryAttributeMatrix(mem, [f"c{i}" for i in range(10)],
                                      [f"a{j}" for j in range(12)])
        g = build_attribute_graph(cam, delta=1.0)
        assert g.num_edges == 0  # strict inequality: nothing exceeds 1.0


class TestCategoryGraph:
    def test_cosine_oracle(self, rng):
        vals = rng.random((5, 7)) + 0.01
        cam = CategoryAttributeMatrix(vals, [f"c{i}" for i in range(5)],
                                      [f"a{j}" for j in range(7)])
        g = build_category_graph(cam, threshold=0.5)
        for i in range(5):
            for j in range(i + 1, 5):
                sim = vals[i] @ vals[j] / (np.linalg.norm(vals[i]) * np.linalg.norm(vals[j]))
                assert g.edges[i, j] == (1 if sim > 0.5 else 0)

    def test_zero_norm_category_rejected(self):
        vals = np.array([[0.0, 0.0], [1.0, 0.5]])
        cam = CategoryAttributeMatrix(vals, ["c0", "c1"], ["a0", "a1"])
        with pytest.raises(DegenerateDataError):
            build_category_graph(cam)


class TestPropagation:
    def _graph(self, edges, m):
        e = np.zeros((m, m), dtype=int)
        for i, j in edges:
            e[i, j] = e[j, i] = 1
        pmi = np.where(e > 0, 1.0, np.nan)
        return KnowledgeGraph(m=m, delta=0.5, edges=e, pmi=pmi)

    def test_rows_sum_to_one(self, rng):
        for _ in range(25):
            m = int(rng.integers(2, 9))
            pairs = {(int(a), int(b)) for a, b in
                     zip(rng.integers(0, m, 10), rng.integers(0, m, 10)) if a != b}
            g = self._graph(pairs, m)
            op = propagation_operator(g, self_loops=True)
            assert np.allclose(op.matrix.sum(axis=1), 1.0, atol=1e-12)

    def test_self_loops_on_path_graph(self):
        g = self._graph([(0, 1), (1, 2)], 3)
        op = propagation_operator(g, self_loops=True).matrix
        assert np.allclose(op[0], [0.5, 0.5, 0.0])
        assert np.allclose(op[1], [1 / 3, 1 / 3, 1 / 3])

    def test_isolated_vertex_without_self_loops_falls_back(self):
        g = self._graph([(0, 1)], 3)
        op = propagation_operator(g, self_loops=False).matrix
        assert np.allclose(op.sum(axis=1), 1.0, atol=1e-12)
        assert op[2, 2] == 1.0  # isolated vertex keeps its own signal

    def test_edgeless_graph_with_self_loops_is_identity(self):
        g = self._graph([], 4)
        op = propagation_operator(g, self_loops=True).matrix
        assert np.array_equal(op, np.eye(4))


class TestSerialization:
    def test_json_round_trip(self, rng):
        mem = random_membership(rng, 8, 9)
        cam = CategoryAttributeMatrix(mem, [f"c{i}" for i in range(8)],
                                      [f"a{j}" for j in range(9)])
        g = build_attribute_graph(cam, delta=0.5)
        g2 = KnowledgeGraph.from_json(g.to_json())
        assert g2.m == g.m and g2.delta == g.delta
        assert np.array_equal(g2.edges, g.edges)
        present = ~np.isnan(g.pmi)
        assert np.allclose(g2.pmi[present], g.pmi[present], atol=0)

    def test_json_schema_keys(self, rng):
        mem = random_membership(rng, 6, 6)
        cam = CategoryAttributeMatrix(mem, [f"c{i}" for i in range(6)],
                                      [f"a{j}" for j in range(6)])
        obj = json.loads(build_attribute_graph(cam, 0.5).to_json())
        assert set(obj) == {"m", "delta", "edges", "pmi"}
        for i, j in obj["edges"]:
            assert 0 <= i < j < 6

    def test_attribute_csv_round_trip(self, tmp_path, rng):
        mem = rng.random((5, 6))
        cam = CategoryAttributeMatrix(mem, [f"c{i}" for i in range(5)],
                                      [f"a{j}" for j in range(6)])
        path = tmp_path / "att.csv"
        write_attribute_csv(path, cam)
        cam2 = read_attribute_csv(path)
        assert cam2.category_names == cam.category_names
        assert cam2.attribute_names == cam.attribute_names
        assert np.array_equal(cam2.values, cam.values)  # bitwise via repr round-trip


class TestBinarize:
    def test_nonzero(self):
        cam = CategoryAttributeMatrix(np.array([[0.0, 0.3], [0.8, 0.0]]),
                                      ["c0", "c1"], ["a0", "a1"])
        assert np.array_equal(binarize_attributes(cam, "nonzero"),
                              np.array([[0, 1], [1, 0]]))

    def test_mean_threshold(self):
        vals = np.array([[0.2, 0.9], [0.4, 0.1]])
        cam = CategoryAttributeMatrix(vals, ["c0", "c1"], ["a0", "a1"])
        mem = binarize_attributes(cam, "mean-threshold")
        means = vals.mean(axis=0)
        assert np.array_equal(mem, (vals > means).astype(mem.dtype))


class TestValidation:
    def test_cam_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            CategoryAttributeMatrix(np.array([[1.5, 0.0], [0.0, 1.0]]),
                                    ["c0", "c1"], ["a0", "a1"])

    def test_graph_rejects_asymmetric_edges(self):
        e = np.zeros((3, 3), dtype=int)
        e[0, 1] = 1
        with pytest.raises(ValidationError):
            KnowledgeGraph(m=3, delta=0.5, edges=e, pmi=np.full((3, 3), np.nan))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(2, 10), st.integers(0, 2 ** 31 - 1))
def test_pmi_matches_oracle_property(n, m, seed):
    rng = np.random.default_rng(seed)
    mem = random_membership(rng, n, m)
    got, want = compute_pmi(mem), pmi_oracle(mem)
    both = ~np.isnan(want)
    assert np.array_equal(np.isnan(got), np.isnan(want))
    assert np.allclose(got[both], want[both], atol=1e-12)
