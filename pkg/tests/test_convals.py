"""CT-ALS building blocks checked against dense linear algebra."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensordict.circulant import circulant_dense
from tensordict.convals import (AlsConfig, FilterBank, PsiBlocks, apply_gram_pinv,
                                block_unitary, compute_M, cp_model, ct_als,
                                cumulant_recon_error, filter_recovery_error, filter_update,
                                khatri_rao_rows, lambda_update, psi_build, psi_pinv)
from tensordict.cumulant import cumulant_from_model, stacked_circulant
from tensordict.errors import DegenerateBlockError, ShapeError
from tensordict.tensor import khatri_rao


def dense_gram(g, h):
    G, H = stacked_circulant(g), stacked_circulant(h)
    return (H.T @ H) * (G.T @ G)


class TestFilterBank:
    def test_unit_norm_enforced(self):
        with pytest.raises(ValueError):
            FilterBank(np.ones((1, 4)))
        F = FilterBank.normalized(np.ones((2, 4)))
        np.testing.assert_allclose(np.linalg.norm(F.filters, axis=1), 1.0)
        assert (F.L, F.n) == (2, 4)

    def test_csv_roundtrip(self, tmp_path, rng):
        F = FilterBank.random(3, 5, rng)
        F.to_csv(tmp_path / "f.csv")
        np.testing.assert_allclose(FilterBank.from_csv(tmp_path / "f.csv").filters, F.filters)


class TestPsi:
    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from([2, 4, 5, 8]), st.integers(1, 3), st.integers(0, 2 ** 31 - 1))
    def test_blocks_match_dense_gram(self, n, L, seed):
        r = np.random.default_rng(seed)
        g, h = r.standard_normal((L, n)), r.standard_normal((L, n))
        Ub = block_unitary(n, L)
        psi = psi_build(g, h)
        np.testing.assert_allclose(Ub @ psi.to_dense() @ Ub.conj().T, dense_gram(g, h), atol=1e-9)
        assert psi.is_hermitian()

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from([4, 8]), st.integers(1, 3), st.integers(0, 2 ** 31 - 1))
    def test_pinv_matches_dense(self, n, L, seed):
        r = np.random.default_rng(seed)
        g, h = r.standard_normal((L, n)), r.standard_normal((L, n))
        Ub = block_unitary(n, L)
        P = Ub @ psi_pinv(psi_build(g, h)).to_dense() @ Ub.conj().T
        np.testing.assert_allclose(P, np.linalg.pinv(dense_gram(g, h)), atol=1e-8)

    def test_pinv_of_singular_gram(self):
        # identical filters make the Gram singular; fallback must still give the pseudoinverse
        f = np.array([1.0, 1.0, 0.0, 0.0]) / np.sqrt(2)
        g = np.stack([f, f])
        Ub = block_unitary(4, 2)
        P = Ub @ psi_pinv(psi_build(g, g)).to_dense() @ Ub.conj().T
        np.testing.assert_allclose(P, np.linalg.pinv(dense_gram(g, g), rcond=1e-8), atol=1e-8)

    def test_zero_psi(self):
        out = psi_pinv(PsiBlocks(np.zeros((2, 2, 4))))
        assert not np.any(out.blocks)

    def test_apply_gram_pinv(self, rng):
        g, h = rng.standard_normal((2, 6)), rng.standard_normal((2, 6))
        X = rng.standard_normal((3, 12))
        ref = X @ np.linalg.pinv(dense_gram(g, h))
        np.testing.assert_allclose(apply_gram_pinv(psi_pinv(psi_build(g, h)), X), ref, atol=1e-9)

    def test_per_frequency_roundtrip(self, rng):
        psi = psi_build(rng.standard_normal((2, 4)), rng.standard_normal((2, 4)))
        back = PsiBlocks.from_per_frequency(psi.per_frequency())
        np.testing.assert_array_equal(back.blocks, psi.blocks)


class TestM:
    def test_khatri_rao_rows(self, rng):
        n, L = 5, 2
        C = rng.standard_normal((n, n * n))
        g, h = rng.standard_normal((L, n)), rng.standard_normal((L, n))
        ref = C @ khatri_rao(stacked_circulant(h), stacked_circulant(g))
        np.testing.assert_allclose(khatri_rao_rows(C, g, h), ref, atol=1e-12)

    def test_M_matches_dense_pinv(self, rng):
        n, L = 6, 2
        C = rng.standard_normal((n, n * n))
        g, h = rng.standard_normal((L, n)), rng.standard_normal((L, n))
        KR = khatri_rao(stacked_circulant(h), stacked_circulant(g))
        np.testing.assert_allclose(compute_M(C, g, h), C @ np.linalg.pinv(KR.T), atol=1e-9)

    def test_requires_L_below_n(self, rng):
        with pytest.raises(ShapeError):
            compute_M(np.zeros((3, 9)), np.ones((3, 3)), np.ones((3, 3)))

    def test_exact_factors_recover_filters(self, rng):
        # with G, H at the truth, M = F Λ, so the filter update returns F
        bank = FilterBank.random(2, 8, rng)
        lam = np.repeat([0.7, 1.3], 8)
        C = cumulant_from_model(bank, lam)
        M = compute_M(C, bank, bank)
        np.testing.assert_allclose(lambda_update(M), lam, atol=1e-9)
        F = filter_update(M)
        assert filter_recovery_error(F, bank) < 1e-9


class TestFilterUpdate:
    def test_diagonal_average(self, rng):
        f = rng.standard_normal(5)
        f /= np.linalg.norm(f)
        M = 2.5 * circulant_dense(f)
        np.testing.assert_allclose(filter_update(M).filters[0], f, atol=1e-12)

    def test_noisy_block_is_projected(self, rng):
        n = 6
        f = rng.standard_normal(n)
        f /= np.linalg.norm(f)
        M = circulant_dense(f) + 1e-3 * rng.standard_normal((n, n))
        out = filter_update(M).filters[0]
        # closest circulant in Frobenius norm averages each cyclic diagonal
        Mn = M / np.linalg.norm(M, axis=0)
        ref = np.array([np.mean([Mn[(p + j) % n, j] for j in range(n)]) for p in range(n)])
        np.testing.assert_allclose(out, ref / np.linalg.norm(ref), atol=1e-12)

    def test_zero_block(self):
        M = np.zeros((4, 8))
        M[:, :4] = np.eye(4)
        with pytest.raises(DegenerateBlockError):
            filter_update(M)
        out, skipped = filter_update(M, return_skipped=True)
        assert skipped == [1]


class TestAls:
    def test_model_error_zero_at_truth(self, rng):
        bank = FilterBank.random(2, 6, rng)
        C = cumulant_from_model(bank, 1.0)
        assert cumulant_recon_error(C, bank.filters, bank.filters, bank.filters, np.ones(12)) < 1e-12
        np.testing.assert_allclose(cp_model(bank.filters, bank.filters, bank.filters, np.ones(12)),
                                   C.C3, atol=1e-12)

    def test_fixed_point_at_truth(self, rng):
        bank = FilterBank.random(2, 8, rng)
        C = cumulant_from_model(bank, 0.5)
        F = bank.filters
        res = ct_als(C, 2, AlsConfig(max_iters=3), init=(F, F, F))
        assert res.trace[-1]["recon_error"] < 1e-10
        assert filter_recovery_error(res.F, bank) < 1e-10

    def test_reduces_reconstruction_error(self, rng):
        bank = FilterBank.random(2, 12, rng)
        C = cumulant_from_model(bank, 1.0)
        res = ct_als(C, 2, AlsConfig(max_iters=150), rng)
        errs = [e["recon_error"] for e in res.trace]
        assert errs[-1] < 0.5 * errs[0]

    def test_identifiable_recovery(self):
        # n=12, L=2 is generically identifiable (31 invariant dims > 24 parameters)
        bank = FilterBank.random(2, 12, np.random.default_rng(1))
        C = cumulant_from_model(bank, 1.0)
        res = ct_als(C, 2, AlsConfig(max_iters=400, tol=1e-12), np.random.default_rng(1),
                     truth=bank)
        assert res.trace[-1]["recovery_error"] < 1e-2

    def test_report_and_determinism(self, tmp_path, rng):
        bank = FilterBank.random(2, 6, rng)
        C = cumulant_from_model(bank, 1.0)
        a = ct_als(C, 2, AlsConfig(max_iters=5, seed=3), truth=bank)
        b = ct_als(C, 2, AlsConfig(max_iters=5, seed=3))
        np.testing.assert_array_equal(a.F.filters, b.F.filters)
        rep = a.report(bank)
        assert rep["iters"] == 5 and "recovery_error" in rep and len(rep["per_iter"]) == 5
        a.save_report(tmp_path / "r.json", bank)
        assert (tmp_path / "r.json").stat().st_size > 0

    def test_rejects_L_ge_n(self):
        with pytest.raises(ShapeError):
            ct_als(np.zeros((3, 9)), 3)


class TestRecoveryMetric:
    def test_invariances(self, rng):
        bank = FilterBank.random(3, 7, rng)
        F = bank.filters
        moved = np.stack([np.roll(F[2], 3), -F[0], np.roll(F[1], 1)])
        assert filter_recovery_error(moved, bank) < 1e-12
        assert filter_recovery_error(moved, bank, signed=False) > 0.1

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            filter_recovery_error(np.ones((2, 4)), np.ones((3, 4)))
