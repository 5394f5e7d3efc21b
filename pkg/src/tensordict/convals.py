"""Convolutional tensor (CT) decomposition by circulant-constrained ALS.

The unfolded cumulant is fitted as ``C3 ≈ F Λ (H⊙G)ᵀ`` where each of
``F``, ``G``, ``H`` is a column-stacked circulant ``[Cir(f_1), ..., Cir(f_L)]``.
Every mode update has a closed form:

1. ``M = C3 (H⊙G) ((HᵀH).*(GᵀG))†``.  The Gram inverse equals
   ``𝐔 Ψ† 𝐔ᴴ`` where ``Ψ`` is an L x L grid of diagonal blocks, so only
   length-n FFTs and per-frequency L x L algebra are needed.
2. ``f_l`` is the normalized average of the diagonals of the
   column-normalized l-th block of ``M``; ``λ(i) = ‖M_i‖``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .circulant import gamma_corr, real_part
from .cumulant import UnfoldedCumulant, stacked_circulant
from .errors import DegenerateBlockError, DegenerateInputError, ShapeError
from .tensor import fold3, unfold3


@dataclass(frozen=True)
class FilterBank:
    """``L`` unit-norm real filters of length ``n``, stored as rows of an (L, n) array."""

    filters: np.ndarray

    def __post_init__(self):
        F = np.array(self.filters, dtype=np.float64, copy=True)
        if F.ndim == 1:
            F = F[None, :]
        if F.ndim != 2 or F.shape[1] < 1:
            raise ShapeError("filters must be an (L, n) array, got %s" % (F.shape,))
        if not np.all(np.isfinite(F)):
            raise ValueError("filters must be finite")
        norms = np.linalg.norm(F, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-10, rtol=0):
            raise ValueError("filters must have unit norm, got %s" % norms)
        F.setflags(write=False)
        object.__setattr__(self, "filters", F)

    @property
    def L(self):
        return self.filters.shape[0]

    @property
    def n(self):
        return self.filters.shape[1]

    @classmethod
    def normalized(cls, F):
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        norms = np.linalg.norm(F, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise DegenerateInputError("cannot normalize a zero filter")
        return cls(F / norms)

    @classmethod
    def random(cls, L, n, rng):
        """I.i.d. Gaussian filters, normalized."""
        return cls.normalized(rng.standard_normal((L, n)))

    def stacked(self):
        return stacked_circulant(self.filters)

    def to_csv(self, path):
        np.savetxt(path, self.filters, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        return cls.normalized(np.atleast_2d(np.loadtxt(path, delimiter=",")))


def _bank(x):
    if isinstance(x, FilterBank):
        return x.filters
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class PsiBlocks:
    """L x L grid of length-n diagonals; ``blocks[j, l]`` is the (j, l) block's diagonal."""

    blocks: np.ndarray

    def __post_init__(self):
        B = np.array(self.blocks, dtype=np.complex128, copy=True)
        if B.ndim != 3 or B.shape[0] != B.shape[1]:
            raise ShapeError("blocks must have shape (L, L, n), got %s" % (B.shape,))
        B.setflags(write=False)
        object.__setattr__(self, "blocks", B)

    @property
    def L(self):
        return self.blocks.shape[0]

    @property
    def n(self):
        return self.blocks.shape[2]

    def per_frequency(self):
        """Stack of n L x L matrices, one per frequency."""
        return np.ascontiguousarray(self.blocks.transpose(2, 0, 1))

    @classmethod
    def from_per_frequency(cls, P):
        return cls(np.asarray(P).transpose(1, 2, 0))

    def to_dense(self):
        """Full nL x nL matrix with diagonal blocks."""
        L, n = self.L, self.n
        D = np.zeros((L * n, L * n), dtype=np.complex128)
        d = np.arange(n)
        for j in range(L):
            for l in range(L):
                D[j * n + d, l * n + d] = self.blocks[j, l]
        return D

    def is_hermitian(self, atol=1e-10):
        return np.allclose(self.blocks, np.conj(self.blocks.transpose(1, 0, 2)), atol=atol)


@dataclass(frozen=True)
class AlsConfig:
    max_iters: int = 500
    tol: float = 1e-8
    pinv_cutoff: float = 1e-8
    ridge: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.max_iters <= 0 or self.tol <= 0 or self.pinv_cutoff <= 0 or self.ridge < 0:
            raise ValueError("AlsConfig values must be positive")


def block_unitary(n, L):
    """Block-diagonal ``𝐔 = blkdiag(U, ..., U)`` with ``U = √n F⁻¹``."""
    U = np.sqrt(n) * np.fft.ifft(np.eye(n), axis=0)
    return np.kron(np.eye(L), U)


# --- Ψ -----------------------------------------------------------------------

def psi_build(g, h):
    """Diagonal-block form of ``(HᵀH).*(GᵀG)``.

    ``blk(j, l) = diag(FFT(γ(g_j, g_l) .* γ(h_j, h_l)))`` so that
    ``𝐔 Ψ 𝐔ᴴ = (HᵀH).*(GᵀG)``.
    """
    g = _bank(g)
    h = _bank(h)
    if g.shape != h.shape:
        raise ShapeError("filter banks differ in shape: %s vs %s" % (g.shape, h.shape))
    gg = gamma_corr(g[:, None, :], g[None, :, :])
    hh = gamma_corr(h[:, None, :], h[None, :, :])
    return PsiBlocks(np.fft.fft(gg * hh, axis=-1))


def _svd_pinv(P, tol):
    """Per-frequency pseudoinverse with absolute singular-value cutoff ``tol``."""
    u, s, vh = np.linalg.svd(P)
    s_inv = np.where(s > tol, 1.0 / np.where(s > tol, s, 1.0), 0.0)
    return np.einsum("kji,kj,klj->kil", np.conj(vh), s_inv, np.conj(u))


def _recursive_inverse(P, tol):
    """Invert each L x L matrix of ``P`` by bordering: ``J^L = [[J^{L-1}, O], [R, D]]``.

    Returns the inverses and a mask of frequencies whose Schur pivot fell
    below ``tol``.
    """
    n, L, _ = P.shape
    bad = np.zeros(n, dtype=bool)
    d0 = P[:, 0, 0]
    bad |= np.abs(d0) <= tol
    inv = (1.0 / np.where(bad, 1.0, d0))[:, None, None]
    for m in range(1, L):
        O = P[:, :m, m:m + 1]           # (n, m, 1)
        R = P[:, m:m + 1, :m]           # (n, 1, m)
        D = P[:, m, m]
        JO = inv @ O                    # J⁻¹ O
        RJ = R @ inv                    # R J⁻¹
        S = D - (R @ JO)[:, 0, 0]       # Schur complement of the leading block
        small = np.abs(S) <= tol
        bad |= small
        S_inv = 1.0 / np.where(small, 1.0, S)
        top_left = inv + (JO * S_inv[:, None, None]) @ RJ
        top_right = -JO * S_inv[:, None, None]
        bottom_left = -RJ * S_inv[:, None, None]
        new = np.empty((n, m + 1, m + 1), dtype=np.complex128)
        new[:, :m, :m] = top_left
        new[:, :m, m:] = top_right
        new[:, m:, :m] = bottom_left
        new[:, m, m] = S_inv
        inv = new
    return inv, bad


def psi_pinv(psi, cutoff=1e-8):
    """Pseudoinverse of ``Ψ`` by recursive 2 x 2 block partition.

    Since all blocks are diagonal, the recursion runs on every frequency
    at once.  Frequencies where a pivot is below ``cutoff`` times the
    largest singular value of ``Ψ`` are redone with a dense SVD
    pseudoinverse using the same cutoff.
    """
    P = psi.per_frequency()
    smax = float(np.max(np.linalg.norm(P, ord=2, axis=(1, 2)), initial=0.0))
    if smax == 0.0:
        return PsiBlocks(np.zeros_like(psi.blocks))
    tol = cutoff * smax
    inv, bad = _recursive_inverse(P, tol)
    if np.any(bad):
        inv[bad] = _svd_pinv(P[bad], tol)
    return PsiBlocks.from_per_frequency(inv)


def apply_gram_pinv(psi_inv, X):
    """Multiply ``𝐔 Ψ† 𝐔ᴴ`` with each row of ``X`` (shape (m, nL)).

    The product is real symmetric, so row and column application coincide.
    """
    L, n = psi_inv.L, psi_inv.n
    Xh = np.fft.fft(np.asarray(X, dtype=np.float64).reshape(-1, L, n), axis=-1)
    Yh = np.einsum("jlk,mlk->mjk", psi_inv.blocks, Xh)
    return real_part(np.fft.ifft(Yh, axis=-1)).reshape(-1, L * n)


# --- M and closed-form updates ----------------------------------------------

def _c3_array(C3):
    C = C3.C3 if isinstance(C3, UnfoldedCumulant) else np.asarray(C3, dtype=np.float64)
    n = C.shape[0]
    if C.ndim != 2 or C.shape[1] != n * n:
        raise ShapeError("C3 must be n x n², got %s" % (C.shape,))
    return C


def khatri_rao_rows(C3, g, h):
    """``C3 (H⊙G)`` without forming the Khatri-Rao product.

    Row ``m`` holds the diagonal of ``Gᵀ Γ^(m) H`` with ``Γ^(m)`` the
    matricized m-th row of ``C3``.
    """
    C = _c3_array(C3)
    n = C.shape[0]
    G = stacked_circulant(g)
    H = stacked_circulant(h)
    if G.shape[0] != n:
        raise ShapeError("filter length %d != cumulant size %d" % (G.shape[0], n))
    T = fold3(C)                       # T[m] is Γ^(m)
    TH = np.einsum("mbc,ck->mbk", T, H)
    return np.einsum("mbk,bk->mk", TH, G)


def compute_M(C3, g, h, cutoff=1e-8, ridge=0.0):
    """``M = C3 ((H⊙G)ᵀ)†`` (n x nL) via the Khatri-Rao pseudoinverse identity.

    Parameters
    ----------
    C3 : UnfoldedCumulant or array_like
    g, h : FilterBank or array_like, shape (L, n)
        Mode-2 and mode-3 filters.
    cutoff : float
        Relative singular-value cutoff for ``Ψ†``.
    ridge : float
        Added to the Gram diagonal before inversion.
    """
    g = _bank(g)
    h = _bank(h)
    L, n = g.shape
    if L >= n:
        raise ShapeError("full-rank condition requires L < n, got L=%d, n=%d" % (L, n))
    psi = psi_build(g, h)
    if ridge > 0:
        blocks = psi.blocks.copy()
        blocks[np.arange(L), np.arange(L)] += ridge
        psi = PsiBlocks(blocks)
    psi_inv = psi_pinv(psi, cutoff)
    if not np.any(np.abs(psi_inv.blocks) > 0):
        raise DegenerateInputError("Gram matrix collapsed: every Ψ diagonal is below cutoff")
    return apply_gram_pinv(psi_inv, khatri_rao_rows(C3, g, h))


def lambda_update(M):
    """``λ(i) = ‖M_i‖`` (column norms)."""
    return np.linalg.norm(np.asarray(M, dtype=np.float64), axis=0)


def filter_update(M, lam=None, cutoff=1e-8, return_skipped=False):
    """Closest unit-norm circulant generator for each block of ``M Λ†``.

    For block l, columns are scaled by ``1/λ`` (``λ`` defaults to the
    column norms of ``M``; entries below ``cutoff·max|λ|`` are dropped),
    each cyclic diagonal ``(i - j) mod n = p - 1`` is averaged over the
    kept columns, and the result is normalized.

    Raises
    ------
    DegenerateBlockError
        If every column of some block is dropped.
    """
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    if M.ndim != 2 or M.shape[1] % n:
        raise ShapeError("M must be n x nL, got %s" % (M.shape,))
    if not np.all(np.isfinite(M)):
        raise ValueError("M has non-finite entries")
    L = M.shape[1] // n
    lam = lambda_update(M) if lam is None else np.abs(np.asarray(lam, dtype=np.float64))
    top = float(np.max(lam, initial=0.0))
    keep = lam > cutoff * top if top > 0 else np.zeros_like(lam, dtype=bool)
    w = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    diag_idx = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n   # [p, j] -> row i
    cols = np.arange(n)[None, :]
    out = np.zeros((L, n))
    skipped = []
    for l in range(L):
        sl = slice(l * n, (l + 1) * n)
        kept = int(keep[sl].sum())
        if kept == 0:
            if return_skipped:
                skipped.append(l)
                continue
            raise DegenerateBlockError(l)
        A = M[:, sl] * w[sl][None, :]
        f = A[diag_idx, cols].sum(axis=1) / kept
        nrm = np.linalg.norm(f)
        if nrm == 0:
            if return_skipped:
                skipped.append(l)
                continue
            raise DegenerateBlockError(l)
        out[l] = f / nrm
    if return_skipped:
        return out, skipped
    return FilterBank(out)


# --- ALS driver --------------------------------------------------------------

def cp_model(F, G, H, lam):
    """Unfolded ``Σ_j λ_j F_j ⊗ G_j ⊗ H_j`` for stacked circulant factors."""
    Fs, Gs, Hs = stacked_circulant(F), stacked_circulant(G), stacked_circulant(H)
    T = np.einsum("j,aj,bj,cj->abc", np.asarray(lam), Fs, Gs, Hs, optimize=True)
    return unfold3(T)


def cumulant_recon_error(C3, F, G, H, lam):
    """``‖C3 - F Λ (H⊙G)ᵀ‖_F / ‖C3‖_F``."""
    C = _c3_array(C3)
    return float(np.linalg.norm(C - cp_model(F, G, H, lam)) / np.linalg.norm(C))


@dataclass
class AlsResult:
    F: FilterBank
    G: FilterBank
    H: FilterBank
    lam: np.ndarray
    trace: list = field(default_factory=list)
    converged: bool = False
    skipped: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.trace)

    def report(self, truth=None):
        """Decomposition report as a JSON-ready dict."""
        out = {
            "iters": self.iterations,
            "converged": self.converged,
            "final_recon_error": self.trace[-1]["recon_error"] if self.trace else None,
            "per_iter": self.trace,
        }
        if truth is not None:
            out["recovery_error"] = filter_recovery_error(self.F, truth)
        return out

    def save_report(self, path, truth=None):
        with open(path, "w") as fh:
            json.dump(self.report(truth), fh, indent=2)


def _mode_update(C, g, h, prev, config, ridge):
    M = compute_M(C, g, h, cutoff=config.pinv_cutoff, ridge=ridge)
    lam = lambda_update(M)
    new, skipped = filter_update(M, lam, cutoff=config.pinv_cutoff, return_skipped=True)
    for l in skipped:
        new[l] = prev[l]
    return new, lam, skipped


def ct_als(C3, L, config=None, rng=None, init=None, truth=None, callback=None):
    """Fit ``L`` filters to an unfolded cumulant by circulant-constrained ALS.

    Parameters
    ----------
    C3 : UnfoldedCumulant or array_like (n x n²)
    L : int
        Number of filters; must satisfy ``L < n``.
    config : AlsConfig
    rng : numpy.random.Generator
        Used for the Gaussian initialization when ``init`` is None.
    init : tuple of three (L, n) arrays, optional
        Starting ``(F, G, H)``.
    truth : FilterBank, optional
        When given, each trace entry also carries ``recovery_error``.

    Returns
    -------
    AlsResult
        Mode-1 bank ``F`` is the reported estimate; ``G`` and ``H`` are
        kept for diagnostics.
    """
    config = config or AlsConfig()
    C = _c3_array(C3)
    n = C.shape[0]
    if L >= n:
        raise ShapeError("full-rank condition requires L < n, got L=%d, n=%d" % (L, n))
    if init is None:
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        F = FilterBank.random(L, n, rng).filters.copy()
        G = FilterBank.random(L, n, rng).filters.copy()
        H = FilterBank.random(L, n, rng).filters.copy()
    else:
        F, G, H = (np.array(FilterBank.normalized(x).filters) for x in init)
    T = fold3(C)
    C_mode2 = unfold3(T.transpose(1, 2, 0))
    C_mode3 = unfold3(T.transpose(2, 0, 1))
    result = AlsResult(FilterBank(F), FilterBank(G), FilterBank(H), np.zeros(n * L))
    ridge = config.ridge
    for it in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        old = np.concatenate([F, G, H])
        try:
            F, _, sF = _mode_update(C, G, H, F, config, ridge)
            G, _, sG = _mode_update(C_mode2, H, F, G, config, ridge)
            H, lam, sH = _mode_update(C_mode3, F, G, H, config, ridge)
        except DegenerateInputError:
            if ridge > 0:
                raise
            # regularize from here on
            ridge = max(config.pinv_cutoff, 1e-8)
            continue
        if len(sF) == L or len(sG) == L or len(sH) == L:
            raise DegenerateBlockError(sF[0] if sF else (sG[0] if sG else sH[0]), it)
        change = float(np.max(np.linalg.norm(np.concatenate([F, G, H]) - old, axis=1)))
        entry = {
            "iter": it,
            "recon_error": cumulant_recon_error(C, F, G, H, lam),
            "change": change,
            "seconds": time.perf_counter() - t0,
        }
        if sF or sG or sH:
            result.skipped.append({"iter": it, "F": sF, "G": sG, "H": sH})
        if truth is not None:
            entry["recovery_error"] = filter_recovery_error(F, truth)
        result.trace.append(entry)
        if callback is not None:
            callback(it, F, G, H, lam)
        if change < config.tol:
            result.converged = True
            break
    result.F, result.G, result.H = FilterBank(F), FilterBank(G), FilterBank(H)
    result.lam = lam if result.trace else result.lam
    return result


# --- metrics -----------------------------------------------------------------

def _pair_distance(a, b, signed):
    """min over cyclic shifts (and optionally sign) of ‖a - shift(b)‖."""
    n = a.size
    shifts = np.stack([np.roll(b, s) for s in range(n)])
    d = np.linalg.norm(shifts - a[None, :], axis=1)
    if signed:
        d = np.minimum(d, np.linalg.norm(shifts + a[None, :], axis=1))
    return float(d.min())


def filter_recovery_error(est, truth, signed=True):
    """Mean ℓ2 distance after optimal matching of filters, shifts and signs.

    Parameters
    ----------
    est, truth : FilterBank or array_like, shape (L, n)
    signed : bool
        Also minimize over a ±1 flip per filter.
    """
    E = _bank(est)
    T = _bank(truth)
    if E.shape != T.shape:
        raise ShapeError("banks differ in shape: %s vs %s" % (E.shape, T.shape))
    L = E.shape[0]
    cost = np.array([[_pair_distance(E[i], T[j], signed) for j in range(L)] for i in range(L)])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())
