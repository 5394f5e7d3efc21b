"""Dense tensor helpers: index conventions, multilinear forms, unfoldings, I/O."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensordict.errors import ShapeError, UnsupportedOrderError
from tensordict.tensor import (DenseTensor, cyclic_index, fold3, frobenius, khatri_rao,
                               multilinear_form, one_based, outer, outer_power, ptrace,
                               read_dtns, unfold3, write_dtns)


class TestIndexHelpers:
    def test_one_based(self):
        assert one_based(1) == 0
        assert one_based(5) == 4

    @pytest.mark.parametrize("i,n,expected", [(1, 4, 1), (4, 4, 4), (5, 4, 1), (0, 4, 4),
                                              (-1, 4, 3), (8, 4, 4)])
    def test_cyclic_index(self, i, n, expected):
        assert cyclic_index(i, n) == expected


class TestDenseTensor:
    def test_roundtrip_and_readonly(self, rng):
        a = rng.standard_normal((2, 3, 4))
        T = DenseTensor.from_array(a)
        assert T.order == 3 and T.dims == (2, 3, 4)
        np.testing.assert_array_equal(np.asarray(T), a)
        with pytest.raises(ValueError):
            T.data[0, 0, 0] = 1.0

    def test_rejects_bad_input(self):
        with pytest.raises(ShapeError):
            DenseTensor((2, 0), np.zeros(0))
        with pytest.raises(ShapeError):
            DenseTensor((2, 2), np.zeros(3))
        with pytest.raises(UnsupportedOrderError):
            DenseTensor((1,) * 7, np.zeros(1))
        with pytest.raises(ValueError):
            DenseTensor((2,), [1.0, np.nan])


class TestOuterAndForms:
    def test_outer_power_entries(self, rng):
        v = rng.standard_normal(3)
        T = outer_power(v, 4)
        for idx in np.ndindex(*T.shape):
            assert T[idx] == pytest.approx(np.prod(v[list(idx)]))

    def test_outer_power_order_limits(self):
        with pytest.raises(UnsupportedOrderError):
            outer_power(np.ones(2), 5)
        with pytest.raises(UnsupportedOrderError):
            outer_power(np.ones(2), 1)

    def test_multilinear_form_matches_loops(self, rng):
        T = rng.standard_normal((3, 4, 2))
        maps = [rng.standard_normal((3, 2)), rng.standard_normal((4, 3)), rng.standard_normal((2, 2))]
        out = multilinear_form(T, maps)
        ref = np.zeros((2, 3, 2))
        for i1, i2, i3 in np.ndindex(*ref.shape):
            for j1, j2, j3 in np.ndindex(*T.shape):
                ref[i1, i2, i3] += T[j1, j2, j3] * maps[0][j1, i1] * maps[1][j2, i2] * maps[2][j3, i3]
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_all_vectors_give_scalar(self, rng):
        d = 4
        u = rng.standard_normal(d)
        val = multilinear_form(outer_power(u, 4), [u, u, u, u])
        assert isinstance(val, float)
        assert val == pytest.approx(np.dot(u, u) ** 4)

    def test_identity_maps_leave_tensor(self, rng):
        T = rng.standard_normal((3, 3, 3))
        np.testing.assert_allclose(multilinear_form(T, [np.eye(3)] * 3), T)

    def test_shape_errors(self, rng):
        with pytest.raises(ShapeError):
            multilinear_form(np.zeros((2, 2)), [np.ones(2)])
        with pytest.raises(ShapeError):
            multilinear_form(np.zeros((2, 2)), [np.ones(3), np.ones(2)])

    def test_outer_and_ptrace(self, rng):
        a = rng.standard_normal((2, 2, 2))
        b = rng.standard_normal((2, 2, 2))
        T = outer(a, b)
        P = ptrace(T)
        ref = np.zeros((2, 2, 2, 2))
        for i1, i2, i3, i4 in np.ndindex(2, 2, 2, 2):
            ref[i1, i2, i3, i4] = sum(a[i, i1, i2] * b[i, i3, i4] for i in range(2))
        np.testing.assert_allclose(P, ref, atol=1e-12)
        with pytest.raises(UnsupportedOrderError):
            outer(np.zeros((1,) * 4), np.zeros((1,) * 3))

    def test_frobenius(self):
        assert frobenius(np.full((2, 2), 0.5)) == pytest.approx(1.0)


class TestUnfold:
    def test_entry_placement(self):
        n = 3
        T = np.arange(n ** 3, dtype=float).reshape(n, n, n)
        C = unfold3(T)
        for a, b, c in np.ndindex(n, n, n):
            assert C[a, b + c * n] == T[a, b, c]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
    def test_fold_inverts_unfold(self, n, seed):
        T = np.random.default_rng(seed).standard_normal((n, n, n))
        np.testing.assert_array_equal(fold3(unfold3(T)), T)

    def test_khatri_rao_columns(self, rng):
        A = rng.standard_normal((3, 4))
        B = rng.standard_normal((2, 4))
        K = khatri_rao(A, B)
        for j in range(4):
            np.testing.assert_allclose(K[:, j], np.kron(A[:, j], B[:, j]))
        with pytest.raises(ShapeError):
            khatri_rao(A, B[:, :3])

    def test_cp_unfolding_identity(self, rng):
        # unfold(Σ λ a⊗b⊗c) = A Λ (C⊙B)ᵀ
        n, r = 4, 3
        A, B, Cm = (rng.standard_normal((n, r)) for _ in range(3))
        lam = rng.standard_normal(r)
        T = np.einsum("r,ar,br,cr->abc", lam, A, B, Cm)
        np.testing.assert_allclose(unfold3(T), A @ np.diag(lam) @ khatri_rao(Cm, B).T, atol=1e-12)


class TestDtns:
    def test_roundtrip(self, tmp_path, rng):
        a = rng.standard_normal((2, 3, 4))
        p = tmp_path / "t.dtns"
        write_dtns(p, a)
        T = read_dtns(p)
        assert T.dims == (2, 3, 4)
        np.testing.assert_array_equal(T.data, a)

    def test_header_format(self, tmp_path):
        p = tmp_path / "t.dtns"
        write_dtns(p, np.ones(3))
        head = p.read_bytes().split(b"\n", 1)[0]
        assert b'"dtype": "f64"' in head and b'"endianness": "little"' in head

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "t.dtns"
        write_dtns(p, np.ones(4))
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ValueError):
            read_dtns(p)
