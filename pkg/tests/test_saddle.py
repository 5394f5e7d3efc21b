"""Orthogonal tensor decomposition by projected noisy SGD."""

import numpy as np
import pytest

from tensordict.errors import DivergenceError, PreconditionError, ShapeError
from tensordict.saddle import (SgdConfig, decompose, loss_ica, noisy_pgd, objective_pairwise,
                               objective_pairwise_factored, objective_single, orthogonal_tensor,
                               project_spheres, random_orthonormal, reconstruction_error,
                               reconstruction_error_factored, sample_ica, sample_simple,
                               stoch_grad_ica, stoch_grad_simple, z_tensor)
from tensordict.tensor import outer_power


def fd_grad(fun, U, h=1e-5):
    G = np.zeros_like(U)
    for idx in np.ndindex(*U.shape):
        E = np.zeros_like(U)
        E[idx] = h
        G[idx] = (fun(U + E) - fun(U - E)) / (2 * h)
    return G


class TestTensors:
    def test_z_is_gaussian_fourth_moment(self, rng):
        d = 3
        y = rng.standard_normal((400000, d))
        M = np.einsum("ta,tb,tc,td->abcd", y, y, y, y, optimize=True) / y.shape[0]
        np.testing.assert_allclose(M, z_tensor(d), atol=0.05)

    def test_ica_identity_exact(self, rng):
        # E[½(Z - y⊗4)] = Σ a_i⊗4 by enumerating all sign vectors
        d = 3
        A = random_orthonormal(d, rng)
        acc = np.zeros((d,) * 4)
        for bits in np.ndindex(*(2,) * d):
            y = A @ (2.0 * np.array(bits) - 1.0)
            acc += outer_power(y, 4)
        acc /= 2 ** d
        np.testing.assert_allclose(0.5 * (z_tensor(d) - acc), orthogonal_tensor(A), atol=1e-12)

    def test_simple_oracle_moment(self, rng):
        d = 4
        A = random_orthonormal(d, rng)
        acc = sum(outer_power(d ** 0.25 * A[:, i], 4) for i in range(d)) / d
        np.testing.assert_allclose(acc, orthogonal_tensor(A), atol=1e-12)

    def test_samplers(self, rng):
        A = random_orthonormal(5, rng)
        assert sample_simple(A, rng).shape == (5,)
        assert sample_ica(A, rng, 7).shape == (7, 5)
        x = sample_simple(A, rng, 10)
        np.testing.assert_allclose(np.linalg.norm(x, axis=1), 5 ** 0.25)
        with pytest.raises(PreconditionError):
            sample_ica(np.ones((2, 2)), rng)


class TestObjectives:
    def test_single(self, rng):
        A = random_orthonormal(4, rng)
        T = orthogonal_tensor(A)
        assert objective_single(T, A[:, 1]) == pytest.approx(1.0)
        with pytest.raises(PreconditionError):
            objective_single(T, 2 * A[:, 1])

    def test_pairwise_zero_at_components(self, rng):
        A = random_orthonormal(5, rng)
        T = orthogonal_tensor(A)
        P = A[:, rng.permutation(5)] * rng.choice([-1, 1], 5)
        assert objective_pairwise(T, P) == pytest.approx(0.0, abs=1e-12)
        assert objective_pairwise(T, project_spheres(rng.standard_normal((5, 5)))) > 0

    def test_pairwise_loop_oracle(self, rng):
        A = random_orthonormal(4, rng)
        T = orthogonal_tensor(A)
        U = rng.standard_normal((4, 3))
        ref = sum(np.einsum("abcd,a,b,c,d->", T, U[:, i], U[:, i], U[:, j], U[:, j])
                  for i in range(3) for j in range(3) if i != j)
        assert objective_pairwise(T, U) == pytest.approx(ref)
        assert objective_pairwise_factored(A, U) == pytest.approx(ref)

    def test_pairwise_warns_k_gt_d(self, rng):
        with pytest.warns(RuntimeWarning):
            objective_pairwise(np.zeros((2,) * 4), np.ones((2, 3)))
        with pytest.raises(ShapeError):
            objective_pairwise(np.zeros((2,) * 4), np.ones((3, 2)))

    def test_reconstruction_errors_agree(self, rng):
        A = random_orthonormal(4, rng)
        U = project_spheres(rng.standard_normal((4, 4)))
        T = orthogonal_tensor(A)
        assert reconstruction_error_factored(A, U) == pytest.approx(reconstruction_error(T, U))
        assert reconstruction_error(T, A) == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(ZeroDivisionError):
            reconstruction_error(np.zeros((2,) * 4), U[:2, :2])


class TestGradients:
    def test_ica_matches_finite_differences(self, rng):
        for _ in range(5):
            U = rng.standard_normal((5, 3))
            y = rng.standard_normal(5)
            fd = fd_grad(lambda V: loss_ica(V, y), U)
            np.testing.assert_allclose(stoch_grad_ica(U, y), fd, rtol=1e-6, atol=1e-7)

    def test_ica_batch_is_mean(self, rng):
        U = rng.standard_normal((4, 4))
        Y = rng.standard_normal((6, 4))
        mean = np.mean([stoch_grad_ica(U, y) for y in Y], axis=0)
        np.testing.assert_allclose(stoch_grad_ica(U, Y), mean, atol=1e-12)

    def test_simple_matches_finite_differences(self, rng):
        U = rng.standard_normal((4, 3))
        x = rng.standard_normal(4)

        def loss(V):
            p = (x @ V) ** 2
            return p.sum() ** 2 - (p ** 2).sum()

        np.testing.assert_allclose(stoch_grad_simple(U, x), fd_grad(loss, U), rtol=1e-6, atol=1e-7)

    def test_ica_expected_gradient_vanishes_at_solution(self, rng):
        # at U = A the projected expected gradient is zero
        d = 3
        A = random_orthonormal(d, rng)
        Y = np.array([A @ (2.0 * np.array(b) - 1.0) for b in np.ndindex(*(2,) * d)])
        G = stoch_grad_ica(A, Y)
        tangent = G - A * np.sum(G * A, axis=0)
        np.testing.assert_allclose(tangent, 0.0, atol=1e-12)

    def test_grad_shape_errors(self):
        with pytest.raises(ShapeError):
            stoch_grad_ica(np.ones((3, 2)), np.ones((1, 4)))
        with pytest.raises(ValueError):
            stoch_grad_ica(np.ones((3, 2)), np.ones((0, 3)))


class TestSgd:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            SgdConfig(schedule="cosine")
        with pytest.raises(ValueError):
            SgdConfig(t_scale=0)
        c = SgdConfig(eta=1.0, schedule="inverse-t", t_burn=10, t_scale=5)
        assert c.step_size(10) == 1.0 and c.step_size(20) == pytest.approx(0.5)
        assert SgdConfig(eta=1.0, schedule="inverse-t").step_size(4) == pytest.approx(0.25)

    def test_projection(self, rng):
        V = project_spheres(rng.standard_normal((4, 3)))
        np.testing.assert_allclose(np.linalg.norm(V, axis=0), 1.0)
        with pytest.raises(Exception):
            project_spheres(np.zeros((2, 2)))

    def test_simple_converges(self):
        rng = np.random.default_rng(3)
        A = random_orthonormal(6, rng)
        res = decompose(A, "simple", SgdConfig(eta=3e-3, iters=10000, record_every=50,
                                               stop_at=0.05), rng)
        assert res.converged and res.final_error <= 0.05

    def test_deterministic(self):
        A = random_orthonormal(4, np.random.default_rng(0))
        cfg = SgdConfig(eta=3e-3, iters=200, record_every=20)
        a = decompose(A, "ica", cfg, np.random.default_rng(5))
        b = decompose(A, "ica", cfg, np.random.default_rng(5))
        np.testing.assert_array_equal(a.U, b.U)

    def test_divergence_detected(self, rng):
        A = random_orthonormal(3, rng)

        def bad_grad(U, batch):
            return np.full_like(U, np.inf)

        with pytest.raises(DivergenceError) as info:
            noisy_pgd(bad_grad, lambda r, s: sample_simple(A, r, s), SgdConfig(iters=5),
                      np.eye(3), rng)
        assert info.value.iteration == 1

    def test_unknown_mode(self, rng):
        with pytest.raises(ValueError):
            decompose(np.eye(3), "tensor-power", SgdConfig(iters=1), rng)
