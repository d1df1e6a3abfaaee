"""PPMI word embeddings: clamping, eigendecomposition against numpy's
symmetric solver, reconstruction behavior, CSV round-trip."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvse.embed import (
    AttributeCorpus,
    build_ppmi,
    class_targets,
    factorize,
    read_embedding_csv,
    write_embedding_csv,
)
from gvse.errors import ConfigError
from tests.test_graph import random_membership


def eigh_oracle(ppmi, d):
    """Reference factorization: numpy.linalg.eigh with the same clamping."""
    lam, q = np.linalg.eigh(ppmi)
    order = np.argsort(lam)[::-1]
    lam, q = lam[order], q[:, order]
    vecs = np.zeros((ppmi.shape[0], d))
    for k in range(min(d, len(lam))):
        if lam[k] <= 0:
            break
        vecs[:, k] = q[:, k] * np.sqrt(lam[k])
    return vecs


class TestPpmi:
    def test_nonnegative_and_symmetric(self, rng):
        mem = random_membership(rng, 8, 10)
        ppmi = build_ppmi(AttributeCorpus.from_membership(mem))
        assert (ppmi >= 0).all()
        assert np.allclose(ppmi, ppmi.T, atol=1e-12)
        assert not np.isnan(ppmi).any()  # absent pairs clamp to 0, not NaN

    def test_clamps_negative_pmi(self):
        # attributes occurring in most categories but rarely together -> raw PMI < 0
        mem = np.array([
            [1, 1, 0],
            [1, 0, 1],
            [0, 1, 1],
            [1, 1, 1],
        ], dtype=float)
        from gvse.graph import compute_pmi
        raw = compute_pmi(mem)
        ppmi = build_ppmi(AttributeCorpus.from_membership(mem))
        neg = np.nan_to_num(raw, nan=0.0) < 0
        assert (ppmi[neg] == 0).all()


class TestFactorize:
    def test_reconstruction_matches_eigh(self, rng):
        for _ in range(10):
            mem = random_membership(rng, 8, 9)
            ppmi = build_ppmi(AttributeCorpus.from_membership(mem))
            for d in (2, 5, 9):
                table = factorize(ppmi, d=d, seed=0)
                ref = eigh_oracle(ppmi, d)
                # eigenvectors are sign/rotation ambiguous under degeneracy;
                # compare the reconstructions, which are canonical
                got = table.vectors @ table.vectors.T
                want = ref @ ref.T
                assert np.allclose(got, want, atol=1e-6)

    def test_reconstruction_error_nonincreasing_in_d(self, rng):
        mem = random_membership(rng, 10, 8)
        ppmi = build_ppmi(AttributeCorpus.from_membership(mem))
        errs = []
        for d in range(1, 9):
            v = factorize(ppmi, d=d, seed=0).vectors
            errs.append(np.linalg.norm(ppmi - v @ v.T))
        assert all(a >= b - 1e-9 for a, b in zip(errs, errs[1:]))

    def test_identical_rows_get_identical_embeddings(self):
        mem = np.array([
            [1, 1, 0, 1],
            [1, 1, 0, 0],
            [0, 0, 1, 1],
        ], dtype=float)
        # attributes 0 and 1 have identical membership columns
        ppmi = build_ppmi(AttributeCorpus.from_membership(mem))
        assert np.allclose(ppmi[0], ppmi[1][[1, 0, 2, 3]], atol=1e-12)
        v = factorize(ppmi, d=4, seed=0).vectors
        recon = v @ v.T
        assert np.allclose(recon[0, 2:], recon[1, 2:], atol=1e-8)

    def test_d_larger_than_m_rejected(self, rng):
        mem = random_membership(rng, 5, 4)
        ppmi = build_ppmi(AttributeCorpus.from_membership(mem))
        with pytest.raises(ConfigError):
            factorize(ppmi, d=5)

    def test_deterministic(self, rng):
        mem = random_membership(rng, 7, 7)
        ppmi = build_ppmi(AttributeCorpus.from_membership(mem))
        a = factorize(ppmi, d=4, seed=3).vectors
        b = factorize(ppmi, d=4, seed=3).vectors
        assert np.array_equal(a, b)


class TestTargets:
    def test_class_targets_members_only(self, rng):
        mem = random_membership(rng, 6, 8)
        ppmi = build_ppmi(AttributeCorpus.from_membership(mem))
        table = factorize(ppmi, d=4, seed=0)
        row = mem[0]
        targets = class_targets(table, row)
        assert {i for i, _ in targets} == set(np.where(row > 0)[0])
        for i, vec in targets:
            assert np.array_equal(vec, table.vectors[i])


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        mem = random_membership(rng, 6, 7)
        ppmi = build_ppmi(AttributeCorpus.from_membership(mem))
        table = factorize(ppmi, d=3, seed=1)
        table.attribute_names = [f"a{j}" for j in range(7)]
        path = tmp_path / "emb.csv"
        write_embedding_csv(path, table)
        table2 = read_embedding_csv(path)
        assert table2.attribute_names == table.attribute_names
        assert np.array_equal(table2.vectors, table.vectors)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 8), st.integers(3, 8), st.integers(0, 2 ** 31 - 1))
def test_factorize_reconstruction_bounded_by_eigh(n, m, seed):
    rng = np.random.default_rng(seed)
    mem = random_membership(rng, n, m)
    ppmi = build_ppmi(AttributeCorpus.from_membership(mem))
    v = factorize(ppmi, d=m, seed=0).vectors
    ref = eigh_oracle(ppmi, m)
    got = np.linalg.norm(ppmi - v @ v.T)
    want = np.linalg.norm(ppmi - ref @ ref.T)
    assert got <= want + 1e-5
