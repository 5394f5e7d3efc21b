"""Orthogonal 4th-order tensor decomposition by projected noisy SGD.

The decision variable is a ``d x k`` matrix ``U`` with unit-norm
columns.  The pairwise objective ``Σ_{i≠j} T(u_i, u_i, u_j, u_j)`` vanishes
exactly when ``U`` is a signed permutation of the orthonormal components
of ``T``.  Stochastic gradients come from one of two sample oracles:

* simple: ``x = d^{1/4} a_i`` with ``i`` uniform, so ``E[x^{⊗4}] = T``;
* ICA: ``y = A x`` with Rademacher ``x``, using ``E[½(Z - y^{⊗4})] = T``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DivergenceError, PreconditionError, ShapeError
from .tensor import multilinear_form, outer_power

DIVERGENCE_FACTOR = 1e6


def z_tensor(d):
    """Fourth moment of a standard Gaussian: ``Z(i,i,i,i) = 3``, ``Z(i,i,j,j) = Z(i,j,i,j) = Z(i,j,j,i) = 1``."""
    I = np.eye(d)
    return (np.einsum("ab,cd->abcd", I, I) + np.einsum("ac,bd->abcd", I, I)
            + np.einsum("ad,bc->abcd", I, I))


def random_orthonormal(d, rng):
    """Haar-distributed orthogonal ``d x d`` matrix."""
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))[None, :]


def orthogonal_tensor(A):
    """``Σ_i a_i^{⊗4}`` over the columns of ``A``."""
    A = np.asarray(A, dtype=np.float64)
    return np.einsum("ai,bi,ci,di->abcd", A, A, A, A)


def _check_orthonormal(A, tol=1e-10):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise PreconditionError("components must form a square d x d matrix")
    if not np.allclose(A @ A.T, np.eye(A.shape[0]), atol=tol):
        raise PreconditionError("components are not orthonormal")
    return A


def sample_simple(A, rng, size=None):
    """Draw ``x = d^{1/4} a_i`` with ``i`` uniform; returns (d,) or (size, d)."""
    A = _check_orthonormal(A)
    d = A.shape[0]
    idx = rng.integers(d, size=size)
    return d ** 0.25 * A[:, idx].T


def sample_ica(A, rng, size=None):
    """Draw ``y = A x`` with ``x`` uniform on ``{±1}^d``; returns (d,) or (size, d)."""
    A = _check_orthonormal(A)
    d = A.shape[0]
    shape = (d,) if size is None else (size, d)
    x = rng.choice(np.array([-1.0, 1.0]), size=shape)
    return x @ A.T


def _check_unit(u, tol=1e-8):
    if abs(np.linalg.norm(u) - 1.0) > tol:
        raise PreconditionError("expected a unit vector, got norm %.6g" % np.linalg.norm(u))


def objective_single(T, u):
    """``T(u, u, u, u)`` for unit ``u``."""
    u = np.asarray(u, dtype=np.float64)
    _check_unit(u)
    return multilinear_form(T, [u, u, u, u])


def objective_pairwise(T, U):
    """``Σ_{i≠j} T(u_i, u_i, u_j, u_j)`` over the columns of ``U``."""
    T = np.asarray(T, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] != T.shape[0]:
        raise ShapeError("U must be d x k with d = %d" % T.shape[0])
    d, k = U.shape
    if k > d:
        warnings.warn("k > d: components are redundant", RuntimeWarning, stacklevel=2)
    # W[i, j] = T(u_i, u_i, u_j, u_j)
    W = np.einsum("abcd,ai,bi,cj,dj->ij", T, U, U, U, U, optimize=True)
    return float(W.sum() - np.trace(W))


def objective_pairwise_factored(A, U):
    """Pairwise objective for ``T = Σ a_m^{⊗4}`` without forming ``T``."""
    P = (np.asarray(A).T @ np.asarray(U)) ** 2         # P[m, i] = <a_m, u_i>^2
    W = P.T @ P
    return float(W.sum() - np.trace(W))


def stoch_grad_ica(U, Y):
    """Mini-batch gradient of ``φ(U, y) = Σ_{i≠j} ½(Z - y^{⊗4})(u_i, u_i, u_j, u_j)``.

    Column i is the batch mean of
    ``Σ_{j≠i} 2‖u_j‖² u_i + 4⟨u_i,u_j⟩ u_j - 2⟨u_j,y⟩²⟨u_i,y⟩ y``.
    The sample-independent terms are computed once; the sample term
    only needs the inner products ``Yᵀ U``.

    Parameters
    ----------
    U : array_like, shape (d, k)
    Y : array_like, shape (B, d) or (d,)
    """
    U = np.asarray(U, dtype=np.float64)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if Y.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    if Y.shape[1] != U.shape[0]:
        raise ShapeError("samples have length %d, components %d" % (Y.shape[1], U.shape[0]))
    G = U.T @ U
    sq = np.diag(G)
    shared = 2.0 * U * (sq.sum() - sq)[None, :] + 4.0 * U @ (G - np.diag(sq))
    P = Y @ U                                          # (B, k)
    P2 = P ** 2
    others = P2.sum(axis=1, keepdims=True) - P2        # Σ_{j≠i} <u_j,y>^2
    sample = -2.0 * Y.T @ (others * P) / Y.shape[0]
    return shared + sample


def stoch_grad_simple(U, X):
    """Mini-batch gradient of ``Σ_{i≠j} ⟨u_i,x⟩²⟨u_j,x⟩²`` (simple oracle)."""
    U = np.asarray(U, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != U.shape[0]:
        raise ShapeError("samples have length %d, components %d" % (X.shape[1], U.shape[0]))
    P = X @ U
    P2 = P ** 2
    others = P2.sum(axis=1, keepdims=True) - P2
    return 4.0 * X.T @ (others * P) / X.shape[0]


def project_spheres(V):
    """Scale every column to unit ℓ2 norm (projection onto a product of spheres)."""
    V = np.asarray(V, dtype=np.float64)
    norms = np.linalg.norm(V, axis=0)
    if np.any(norms == 0):
        raise DegenerateInputError("cannot project a zero column")
    return V / norms[None, :]


def reconstruction_error(T, U):
    """``‖T - Σ u_i^{⊗4}‖²_F / ‖T‖²_F``."""
    T = np.asarray(T, dtype=np.float64)
    tn = float(np.sum(T ** 2))
    if tn == 0:
        raise ZeroDivisionError("reference tensor is zero")
    return float(np.sum((T - orthogonal_tensor(U)) ** 2) / tn)


def reconstruction_error_factored(A, U):
    """Same as :func:`reconstruction_error` for ``T = Σ a_m^{⊗4}``, using Gram matrices."""
    A = np.asarray(A, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    tt = float(np.sum((A.T @ A) ** 4))
    tu = float(np.sum((A.T @ U) ** 4))
    uu = float(np.sum((U.T @ U) ** 4))
    return (tt - 2.0 * tu + uu) / tt


@dataclass(frozen=True)
class SgdConfig:
    """Step size, iteration budget and noise for :func:`noisy_pgd`.

    ``schedule="inverse-t"`` uses ``η_t = η / max(1, (t - t_burn) / t_scale)``;
    the default ``t_scale=1`` gives the plain ``η / (t - t_burn)`` decay.
    """

    eta: float = 1e-2
    iters: int = 10000
    noise_scale: float = 1.0
    batch: int = 1
    schedule: str = "constant"
    t_burn: int = 0
    t_scale: float = 1.0
    per_column_noise: bool = False
    record_every: int = 1
    stop_at: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if not self.eta >= 0 or self.iters <= 0 or self.batch < 1:
            raise ValueError("need eta >= 0, iters > 0, batch >= 1")
        if self.schedule not in ("constant", "inverse-t"):
            raise ValueError("unknown schedule %r" % self.schedule)
        if self.noise_scale < 0 or self.t_burn < 0 or self.record_every < 1 or self.t_scale <= 0:
            raise ValueError("invalid noise_scale, t_burn, t_scale or record_every")

    def step_size(self, t):
        if self.schedule == "constant":
            return self.eta
        return self.eta / max(1.0, (t - self.t_burn) / self.t_scale)


@dataclass
class PgdResult:
    U: np.ndarray
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def final_error(self):
        return self.trace[-1]["recon_error"] if self.trace else None


def _sphere_noise(shape, rng, per_column):
    n = rng.standard_normal(shape)
    if per_column:
        return n / np.linalg.norm(n, axis=0, keepdims=True)
    return n / np.linalg.norm(n)


def noisy_pgd(grad_fn, sampler, config, U0, rng, monitor=None):
    """Projected noisy stochastic gradient descent on a product of spheres.

    Each step draws a batch, forms ``V = U - η_t (SG(U) + s·n)`` with ``n``
    uniform on the unit sphere of ``R^{d·k}`` and ``s = noise_scale``, then
    normalizes the columns of ``V``.

    Parameters
    ----------
    grad_fn : callable ``(U, batch) -> (d, k) array``
    sampler : callable ``(rng, size) -> (size, d) array``
    config : SgdConfig
    U0 : array_like, shape (d, k)
    rng : numpy.random.Generator
    monitor : callable ``U -> (objective, recon_error)``, optional
        Evaluated every ``config.record_every`` iterations (and at 0).

    Returns
    -------
    PgdResult

    Raises
    ------
    DivergenceError
        When the objective becomes non-finite or exceeds ``1e6`` times its
        initial value.
    """
    U = project_spheres(U0)
    result = PgdResult(U)

    def record(t):
        if monitor is None:
            return None
        obj, err = monitor(U)
        if not (np.isfinite(obj) and np.isfinite(err)):
            raise DivergenceError(t)
        result.trace.append({"iter": t, "objective": float(obj), "recon_error": float(err)})
        return obj

    first = record(0)
    limit = None if first is None else DIVERGENCE_FACTOR * max(abs(first), 1e-12)
    for t in range(1, config.iters + 1):
        batch = sampler(rng, config.batch)
        g = grad_fn(U, batch)
        eta = config.step_size(t)
        step = g
        if config.noise_scale > 0:
            step = g + config.noise_scale * _sphere_noise(U.shape, rng, config.per_column_noise)
        V = U - eta * step
        if not np.all(np.isfinite(V)):
            raise DivergenceError(t)
        U = project_spheres(V)
        result.iterations = t
        if monitor is not None and (t % config.record_every == 0 or t == config.iters):
            obj = record(t)
            if limit is not None and abs(obj) > limit:
                raise DivergenceError(t)
            if config.stop_at is not None and result.trace[-1]["recon_error"] <= config.stop_at:
                result.converged = True
                break
    result.U = U
    return result


def factored_monitor(A):
    """Monitor computing pairwise objective and reconstruction error from the true components."""
    def monitor(U):
        return objective_pairwise_factored(A, U), reconstruction_error_factored(A, U)
    return monitor


def decompose(A, mode, config, rng, U0=None):
    """Run the orthogonal decomposition pipeline against planted components ``A``.

    Parameters
    ----------
    A : array_like, shape (d, d)
        Orthonormal ground truth.
    mode : {"simple", "ica"}
    """
    A = _check_orthonormal(A)
    d = A.shape[0]
    if mode == "simple":
        sampler = lambda r, size: sample_simple(A, r, size)  # noqa: E731
        grad_fn = stoch_grad_simple
    elif mode == "ica":
        sampler = lambda r, size: sample_ica(A, r, size)  # noqa: E731
        grad_fn = stoch_grad_ica
    else:
        raise ValueError("mode must be 'simple' or 'ica', got %r" % mode)
    if U0 is None:
        U0 = rng.standard_normal((d, d))
    return noisy_pgd(grad_fn, sampler, config, U0, rng, monitor=factored_monitor(A))


def loss_ica(U, y):
    """Explicit per-sample loss ``Σ_{i≠j} ½(Z - y^{⊗4})(u_i,u_i,u_j,u_j)`` from dense tensors."""
    U = np.asarray(U, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    D = 0.5 * (z_tensor(U.shape[0]) - outer_power(y, 4))
    k = U.shape[1]
    total = 0.0
    for i in range(k):
        for j in range(k):
            if i != j:
                total += multilinear_form(D, [U[:, i], U[:, i], U[:, j], U[:, j]])
    return total
