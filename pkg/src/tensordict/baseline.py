"""Alternating-minimization baseline for convolutional dictionary learning.

Minimizes ``Σ_samples ‖x - Σ_l f_l ∗ w_l‖²`` with ``‖f_l‖ = 1`` by exact
least squares in each block.  Both half-steps decouple over DFT
frequencies: at frequency k the model is ``x̂(k) = Σ_l f̂_l(k) ŵ_l(k)``.
Unlike the tensor method, every iteration touches every sample.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .convals import AlsConfig, FilterBank, filter_recovery_error
from .cumulant import SampleSet
from .errors import ShapeError

RIDGE_EPS = 1e-8


@dataclass
class AltMinResult:
    filters: FilterBank
    activations: np.ndarray          # (L, n, N)
    trace: list = field(default_factory=list)


def _objective(Xh, Fh, Wh, n):
    # Parseval on the half spectrum: double every bin except DC (and Nyquist)
    resid = Xh - np.einsum("lk,lkN->kN", Fh, Wh)
    weight = np.full(Xh.shape[0], 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    return float(np.sum(weight[:, None] * np.abs(resid) ** 2) / n)


def decode_activations(Xh, Fh):
    """Least-norm activations per frequency; ridge ``ε`` where the filters vanish."""
    power = np.sum(np.abs(Fh) ** 2, axis=0)           # (k,)
    singular = power <= RIDGE_EPS * max(float(power.max()), 1.0)
    denom = np.where(singular, power + RIDGE_EPS, power)
    return np.conj(Fh)[:, :, None] * (Xh / denom[:, None])[None, :, :]


def fit_filters(Xh, Wh):
    """Per-frequency least-squares filters given activations (ridge fallback)."""
    L = Wh.shape[0]
    A = np.einsum("akN,bkN->kab", np.conj(Wh), Wh)     # (k, L, L)
    b = np.einsum("akN,kN->ka", np.conj(Wh), Xh)        # (k, L)
    out = np.empty((Wh.shape[1], L), dtype=np.complex128)
    eye = np.eye(L)
    for k in range(A.shape[0]):
        Ak = A[k]
        scale = max(float(np.abs(np.trace(Ak)).real), 1.0)
        if np.linalg.cond(Ak) > 1.0 / RIDGE_EPS:
            Ak = Ak + RIDGE_EPS * scale * eye
        out[k] = np.linalg.solve(Ak, b[k])
    return out.T


def alt_min_baseline(samples, L, config=None, rng=None, init=None, truth=None):
    """Alternate exact least-squares updates of activations and filters.

    Parameters
    ----------
    samples : SampleSet or array_like, shape (n, N)
    L : int
        Number of filters, ``L < n``.
    config : AlsConfig
        ``max_iters`` and ``tol`` (max filter change) are used.
    rng : numpy.random.Generator
        For the Gaussian initialization.
    init : array_like (L, n), optional
    truth : FilterBank, optional
        Adds ``recovery_error`` to each trace entry.

    Returns
    -------
    AltMinResult
        The trace holds the objective after each half-step (before and
        after renormalization) and per-iteration wall time.
    """
    config = config or AlsConfig()
    X = samples.X if isinstance(samples, SampleSet) else np.asarray(samples, dtype=np.float64)
    n, N = X.shape
    if L >= n:
        raise ShapeError("requires L < n, got L=%d, n=%d" % (L, n))
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    F = (FilterBank.random(L, n, rng) if init is None else FilterBank.normalized(init)).filters
    Xh = np.fft.rfft(X, axis=0)                         # (k, N)
    result = AltMinResult(FilterBank(F), np.zeros((L, n, N)))
    Wh = None
    for it in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        Fh = np.fft.rfft(F, axis=1)
        Wh = decode_activations(Xh, Fh)
        obj_w = _objective(Xh, Fh, Wh, n)
        Fh_new = fit_filters(Xh, Wh)
        obj_f = _objective(Xh, Fh_new, Wh, n)
        F_new = np.fft.irfft(Fh_new, n=n, axis=1)
        norms = np.linalg.norm(F_new, axis=1)
        norms = np.where(norms > 0, norms, 1.0)
        F_new = F_new / norms[:, None]
        Wh = Wh * norms[:, None, None]
        obj_norm = _objective(Xh, np.fft.rfft(F_new, axis=1), Wh, n)
        change = float(np.max(np.linalg.norm(F_new - F, axis=1)))
        F = F_new
        entry = {
            "iter": it,
            "objective_after_activations": obj_w,
            "objective_after_filters": obj_f,
            "objective": obj_norm,
            "change": change,
            "seconds": time.perf_counter() - t0,
        }
        if truth is not None:
            entry["recovery_error"] = filter_recovery_error(F, truth)
        result.trace.append(entry)
        if change < config.tol:
            break
    result.filters = FilterBank(F)
    if Wh is not None:
        result.activations = np.fft.irfft(Wh, n=n, axis=1)
    return result
