"""Cyclic convolution, circulant matrices and their Fourier diagonalization.

FFT convention: forward transform is unnormalized with kernel
``exp(-2πi/n)`` and the inverse carries ``1/n`` (numpy's default).  The
DFT matrix is ``F[m, k] = ω^{mk}`` (0-based) and ``U = √n F⁻¹`` is the
unitary eigenbasis shared by all ``n x n`` circulants, so
``Cir(f) = U diag(FFT f) Uᴴ``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import cyclic_index, one_based

# public real outputs may carry at most this much imaginary residue
IMAG_TOL = 1e-8


def _vec(x, name="vector"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("%s must be 1-d, got shape %s" % (name, x.shape))
    return x


def _check_same_length(a, b):
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError("length mismatch: %d vs %d" % (a.shape[-1], b.shape[-1]))


def real_part(z, tol=IMAG_TOL):
    """Strip the imaginary part of ``z`` after checking it is negligible.

    The check is relative to the magnitude of ``z``.
    """
    z = np.asarray(z)
    if not np.iscomplexobj(z):
        return z.astype(np.float64)
    scale = max(1.0, float(np.max(np.abs(z), initial=0.0)))
    resid = float(np.max(np.abs(z.imag), initial=0.0))
    if resid > tol * scale:
        raise ValueError("imaginary residue %.3g exceeds tolerance" % resid)
    return np.ascontiguousarray(z.real)


def cyclic_conv(f, w):
    """n-cyclic convolution ``v(i) = Σ_j f(j) w((i - j) mod n + 1)`` (1-based).

    Evaluated directly from the definition; :func:`cyclic_conv_fft` is the
    spectral equivalent.
    """
    f = _vec(f, "f")
    w = _vec(w, "w")
    _check_same_length(f, w)
    n = f.size
    v = np.zeros(n)
    for i in range(1, n + 1):
        acc = 0.0
        for j in range(1, n + 1):
            acc += f[one_based(j)] * w[one_based(cyclic_index(i - j + 1, n))]
        v[one_based(i)] = acc
    return v


def cyclic_conv_fft(f, w):
    """Cyclic convolution via ``IFFT(FFT f · FFT w)``; operates along the last axis."""
    f = np.asarray(f, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_same_length(f, w)
    return np.fft.irfft(np.fft.rfft(f) * np.fft.rfft(w), n=f.shape[-1])


def circulant_dense(f):
    """``Cir(f)`` with entry (i, j) = ``f((i - j) mod n + 1)``; column j is f shifted by j - 1."""
    f = _vec(f, "f")
    n = f.size
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return f[idx]


def fourier_matrix(n):
    """DFT matrix ``F[m, k] = ω_n^{m k}`` with ``ω_n = exp(-2πi/n)`` (0-based)."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


@dataclass(frozen=True)
class FourierBasis:
    """DFT matrix ``F`` and unitary circulant eigenbasis ``U = √n F⁻¹`` for length ``n``."""

    n: int
    F: np.ndarray = field(init=False, repr=False)
    U: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        F = fourier_matrix(self.n)
        U = np.sqrt(self.n) * np.linalg.inv(F)
        F.setflags(write=False)
        U.setflags(write=False)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "U", U)

    def circulant(self, f):
        """Complex ``U diag(FFT f) Uᴴ``."""
        f = _vec(f, "f")
        if f.size != self.n:
            raise ShapeError("filter length %d != basis size %d" % (f.size, self.n))
        return (self.U * np.fft.fft(f)[None, :]) @ self.U.conj().T


def circulant_from_fft(f):
    """``Cir(f)`` assembled from its spectral factorization (complex result)."""
    f = _vec(f, "f")
    return FourierBasis(f.size).circulant(f)


def gamma_corr(a, b):
    """Cyclic cross-correlation with ``FFT γ(a, b) = conj(FFT a) · FFT b``.

    Satisfies ``Cir(a)ᵀ Cir(b) = Cir(γ(a, b))``; in particular
    ``γ(a, a)`` has ``‖a‖²`` at lag zero.  Works along the last axis.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_length(a, b)
    n = a.shape[-1]
    return real_part(np.fft.ifft(np.conj(np.fft.fft(a)) * np.fft.fft(b), n=n))


def cyclic_reverse(f):
    """``f(1), f(n), f(n-1), ..., f(2)``: the generator of ``Cir(f)ᵀ``."""
    f = np.asarray(f, dtype=np.float64)
    return np.roll(f[..., ::-1], 1, axis=-1)


def cyclic_shift(f, s):
    """Shift ``f`` down by ``s`` positions cyclically (column ``s + 1`` of ``Cir(f)``)."""
    return np.roll(np.asarray(f, dtype=np.float64), s, axis=-1)
