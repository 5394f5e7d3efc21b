"""Third-order cumulants, their unfolded form, and convolutional ICA generators."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamplesError, PreconditionError, ShapeError
from .tensor import fold3, khatri_rao, read_dtns, unfold3, write_dtns

CHUNK = 65536


@dataclass(frozen=True)
class SampleSet:
    """Observations stored column-wise, ``X`` has shape (n, N)."""

    X: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ShapeError("SampleSet needs an n x N matrix with N >= 1, got %s" % (X.shape,))
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def N(self):
        return self.X.shape[1]

    def save(self, path):
        path = str(path)
        if path.endswith(".csv"):
            np.savetxt(path, self.X, delimiter=",", fmt="%.17g")
        else:
            write_dtns(path, self.X)

    @classmethod
    def load(cls, path):
        path = str(path)
        if path.endswith(".csv"):
            return cls(np.atleast_2d(np.loadtxt(path, delimiter=",")))
        T = read_dtns(path)
        if T.order != 2:
            raise ShapeError("expected an order-2 tensor, got order %d" % T.order)
        return cls(np.array(T.data))


@dataclass(frozen=True)
class UnfoldedCumulant:
    """Unfolded third cumulant ``C3`` (n x n²)."""

    C3: np.ndarray

    def __post_init__(self):
        C3 = np.array(self.C3, dtype=np.float64, copy=True)
        n = C3.shape[0]
        if C3.ndim != 2 or C3.shape[1] != n * n:
            raise ShapeError("C3 must be n x n², got %s" % (C3.shape,))
        if not np.all(np.isfinite(C3)):
            raise ValueError("C3 has non-finite entries")
        C3.setflags(write=False)
        object.__setattr__(self, "C3", C3)

    @property
    def n(self):
        return self.C3.shape[0]

    def folded(self):
        return fold3(self.C3)


@dataclass(frozen=True)
class ActivationSpec:
    """Distribution of the i.i.d. activation entries.

    ``kind="poisson"`` uses ``mean``; ``kind="bernoulli-gaussian"`` draws
    ``b·g`` with ``b ~ Bernoulli(prob)`` and ``g ~ N(0, scale²)``.
    """

    kind: str = "poisson"
    mean: float = 0.5
    prob: float = 0.1
    scale: float = 1.0

    def __post_init__(self):
        if self.kind == "poisson":
            if not self.mean > 0:
                raise ValueError("poisson mean must be positive")
        elif self.kind == "bernoulli-gaussian":
            if not (0 < self.prob <= 1 and self.scale > 0):
                raise ValueError("bernoulli-gaussian needs 0 < prob <= 1 and scale > 0")
        else:
            raise ValueError("unknown activation kind %r" % self.kind)

    @classmethod
    def parse(cls, text):
        """Parse ``"poisson:0.5"`` or ``"bernoulli-gaussian:0.1:1.0"``."""
        parts = text.split(":")
        if parts[0] == "poisson":
            return cls("poisson", mean=float(parts[1]) if len(parts) > 1 else 0.5)
        if parts[0] == "bernoulli-gaussian":
            prob = float(parts[1]) if len(parts) > 1 else 0.1
            scale = float(parts[2]) if len(parts) > 2 else 1.0
            return cls("bernoulli-gaussian", prob=prob, scale=scale)
        raise ValueError("unknown activation kind %r" % parts[0])

    def sample(self, shape, rng):
        if self.kind == "poisson":
            return rng.poisson(self.mean, size=shape).astype(np.float64)
        on = rng.random(shape) < self.prob
        return np.where(on, rng.normal(0.0, self.scale, size=shape), 0.0)

    def moments(self):
        """Mean, variance and third cumulant of one activation entry."""
        if self.kind == "poisson":
            return self.mean, self.mean, self.mean
        # symmetric, so the third cumulant vanishes
        return 0.0, self.prob * self.scale ** 2, 0.0


def third_cumulant(samples):
    """Empirical unfolded third cumulant ``E[x (x⊙x)ᵀ] - unfold(Z)``.

    Expectations are plain ``1/N`` averages accumulated in one streaming
    pass; ``Z[a,b,c] = E[x_a]E[x_b x_c] + E[x_b]E[x_a x_c] + E[x_c]E[x_a x_b]
    - 2 E[x_a]E[x_b]E[x_c]``.

    Parameters
    ----------
    samples : SampleSet or array_like, shape (n, N)

    Returns
    -------
    UnfoldedCumulant
    """
    X = samples.X if isinstance(samples, SampleSet) else np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("samples must be an n x N matrix")
    n, N = X.shape
    if N < 2:
        raise InsufficientSamplesError("need at least 2 samples, got %d" % N)
    s1 = np.zeros(n)
    s2 = np.zeros((n, n))
    s3 = np.zeros((n, n * n))
    for start in range(0, N, CHUNK):
        Xc = X[:, start:start + CHUNK]
        s1 += Xc.sum(axis=1)
        s2 += Xc @ Xc.T
        # rows of khatri_rao(Xc, Xc) index (b, c) as b*n + c; symmetric in b, c
        s3 += Xc @ khatri_rao(Xc, Xc).T
    m1 = s1 / N
    m2 = s2 / N
    m3 = s3.reshape(n, n, n) / N
    Z = (np.einsum("a,bc->abc", m1, m2) + np.einsum("b,ac->abc", m1, m2)
         + np.einsum("c,ab->abc", m1, m2) - 2.0 * np.einsum("a,b,c->abc", m1, m1, m1))
    return UnfoldedCumulant(unfold3(m3 - Z))


def gamma_slice(C3, m):
    """Row ``m`` (1-based) of ``C3`` matricized: ``Γ(i, j) = C3(m, i + (j-1)n)``."""
    C = C3.C3 if isinstance(C3, UnfoldedCumulant) else np.asarray(C3, dtype=np.float64)
    n = C.shape[0]
    if not 1 <= m <= n:
        raise IndexError("row index %d outside 1..%d" % (m, n))
    return C[m - 1].reshape(n, n).T.copy()


def stack_slices(slices):
    """Stack ``Γ^(1..n)`` into the order-3 tensor ``T[m, i, j]``."""
    return np.stack([np.asarray(G, dtype=np.float64) for G in slices], axis=0)


def _filters_array(filters):
    F = getattr(filters, "filters", filters)
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    return F


def stacked_circulant(filters):
    """Column-stacked ``[Cir(f_1), ..., Cir(f_L)]`` (n x nL)."""
    F = _filters_array(filters)
    L, n = F.shape
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return np.concatenate([F[l][idx] for l in range(L)], axis=1)


def cumulant_from_model(filters, lambdas):
    """Model cumulant ``F Λ (F⊙F)ᵀ`` for filter shifts ``F`` and weights ``Λ``.

    Parameters
    ----------
    filters : FilterBank or array_like, shape (L, n)
    lambdas : array_like, shape (n L,) or scalar
        One weight per column of the stacked circulant.
    """
    F = _filters_array(filters)
    L, n = F.shape
    if L >= n:
        warnings.warn("L >= n: the full-rank condition requires nL < n² (L < n)",
                      RuntimeWarning, stacklevel=2)
    lam = np.broadcast_to(np.asarray(lambdas, dtype=np.float64), (n * L,))
    Fs = stacked_circulant(F)
    T = np.einsum("j,aj,bj,cj->abc", lam, Fs, Fs, Fs, optimize=True)
    return UnfoldedCumulant(unfold3(T))


def synth_conv_ica(filters, act, N, rng, noise_std=0.0):
    """Draw ``x = Σ_l f_l ∗ w_l (+ noise)`` with i.i.d. activations.

    Parameters
    ----------
    filters : FilterBank or array_like, shape (L, n)
        Unit-norm filters.
    act : ActivationSpec
    N : int
    rng : numpy.random.Generator
    noise_std : float
        Standard deviation of optional additive Gaussian noise.

    Returns
    -------
    samples : SampleSet
    activations : numpy.ndarray, shape (L, n, N)
    """
    F = _filters_array(filters)
    L, n = F.shape
    norms = np.linalg.norm(F, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-8):
        raise PreconditionError("filters must have unit norm, got norms %s" % norms)
    W = act.sample((L, n, N), rng)
    spec = np.einsum("lk,lkN->kN", np.fft.rfft(F, axis=1), np.fft.rfft(W, axis=1))
    X = np.fft.irfft(spec, n=n, axis=0)
    if noise_std > 0:
        X = X + rng.normal(0.0, noise_std, size=X.shape)
    return SampleSet(X), W


def model_lambdas(act, L, n):
    """Per-column weights implied by an activation law (its third cumulant)."""
    return np.full(n * L, act.moments()[2])


def relative_error(A, B):
    """``‖A - B‖_F / ‖B‖_F``."""
    A = getattr(A, "C3", A)
    B = getattr(B, "C3", B)
    return float(np.linalg.norm(np.asarray(A) - np.asarray(B)) / np.linalg.norm(B))

