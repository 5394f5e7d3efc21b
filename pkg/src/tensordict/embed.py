"""Word-sequence embeddings from per-coordinate convolutional filters.

Pipeline: one-hot encode a sequence (d x N), project onto the top-k left
singular vectors of the stacked corpus encoding, learn a filter bank per
projected coordinate from the third cumulant of its patches, then decode
activations by deconvolution, max-k pool them and concatenate.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .convals import AlsConfig, FilterBank, ct_als
from .cumulant import third_cumulant
from .errors import DegenerateBlockError, DegenerateInputError, PreconditionError, ShapeError
from .tensor import read_dtns, write_dtns

MANIFEST = "manifest.json"
FORMAT_VERSION = 1
# relative spectral power below which a frequency is treated as zero
SPECTRAL_CUTOFF = 1e-10


class ModelNotTrainedError(FileNotFoundError):
    """Raised when a model directory has no valid manifest."""


@dataclass(frozen=True)
class Vocab:
    """Ordered token list; token ``tokens[i]`` has 1-based index ``i + 1``."""

    tokens: tuple
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        index = {t: i + 1 for i, t in enumerate(tokens)}
        if len(index) != len(tokens):
            raise ValueError("vocabulary tokens must be distinct")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "index", index)

    @property
    def d(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    @classmethod
    def from_corpus(cls, corpus):
        """Tokens in order of first appearance."""
        seen = {}
        for seq in corpus:
            for t in seq:
                seen.setdefault(t, None)
        return cls(tuple(seen))


def read_corpus(path):
    """One sequence per line, whitespace-tokenized (UTF-8)."""
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh.read().splitlines()]


def encode_one_hot(tokens, vocab, oov="skip"):
    """Stack one-hot columns ``e_{index(token)}`` in sequence order.

    Parameters
    ----------
    tokens : sequence of str
    vocab : Vocab
    oov : {"skip", "error"}
        Out-of-vocabulary tokens are dropped with a warning, or raise
        ``KeyError``.

    Returns
    -------
    numpy.ndarray, shape (d, N)
    """
    if oov not in ("skip", "error"):
        raise ValueError("oov policy must be 'skip' or 'error'")
    idx = []
    missing = []
    for t in tokens:
        i = vocab.index.get(t)
        if i is None:
            if oov == "error":
                raise KeyError("token %r not in vocabulary" % t)
            missing.append(t)
        else:
            idx.append(i - 1)
    if missing:
        warnings.warn("skipped %d out-of-vocabulary token(s): %s"
                      % (len(missing), ", ".join(map(repr, missing[:5]))), RuntimeWarning,
                      stacklevel=2)
    S = np.zeros((vocab.d, len(idx)))
    S[idx, np.arange(len(idx))] = 1.0
    return S


def fit_projection(corpus, vocab, k, oov="skip"):
    """Top-k left singular vectors of ``[S_1, ..., S_M]``.

    Each column's largest-magnitude entry is made positive.  If ``k``
    exceeds the rank of the stacked encoding, a warning is issued and
    only ``rank`` columns are returned.
    """
    if not corpus:
        raise ValueError("corpus must be nonempty")
    if not 1 <= k <= vocab.d:
        raise PreconditionError("need 1 <= k <= d = %d, got k=%d" % (vocab.d, k))
    S = np.concatenate([encode_one_hot(seq, vocab, oov) for seq in corpus], axis=1)
    if S.shape[1] == 0:
        raise DegenerateInputError("corpus contains no in-vocabulary tokens")
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(S.shape) * np.finfo(float).eps))
    if k > rank:
        warnings.warn("k=%d exceeds the encoding rank %d; using k=%d" % (k, rank, rank),
                      RuntimeWarning, stacklevel=2)
        k = rank
    U = U[:, :k]
    pivot = np.argmax(np.abs(U), axis=0)
    U = U * np.sign(U[pivot, np.arange(k)])[None, :]
    return U


def project(Senc, U):
    """``Y = Uᵀ S``; row j is the coordinate signal ``y^(j)``."""
    Senc = np.asarray(Senc, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if Senc.ndim != 2 or U.ndim != 2 or Senc.shape[0] != U.shape[0]:
        raise ShapeError("cannot project %s with basis %s" % (Senc.shape, U.shape))
    return U.T @ Senc


def extract_patches(y, n):
    """Length-n windows starting at every position, stride 1, zero tail padding.

    Returns
    -------
    numpy.ndarray, shape (n, N)
        Column ``t`` is ``y[t : t + n]`` padded with zeros.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if n < 1:
        raise ValueError("patch length must be >= 1")
    N = y.size
    padded = np.concatenate([y, np.zeros(n)])
    idx = np.arange(N)[None, :] + np.arange(n)[:, None]
    return padded[idx]


def fit_bank(patches, L, config=None, rng=None, restarts=3):
    """Learn one filter bank from the columns of ``patches`` (n x P).

    ALS is restarted ``restarts`` times from random initializations and the
    run with the smallest cumulant reconstruction error is kept.  Returns
    ``None`` when the patches carry no signal or every run degenerates;
    callers treat that as an inactive bank.
    """
    P = np.asarray(patches, dtype=np.float64)
    if P.shape[1] < 2 or not np.any(P):
        return None
    C3 = third_cumulant(P)
    if not np.any(C3.C3):
        return None
    rng = rng if rng is not None else np.random.default_rng()
    best, best_err = None, np.inf
    for _ in range(max(1, restarts)):
        try:
            res = ct_als(C3, L, config, rng=rng)
        except (DegenerateBlockError, DegenerateInputError):
            continue
        err = res.trace[-1]["recon_error"] if res.trace else np.inf
        if err < best_err:
            best, best_err = res.F, err
    return best


@dataclass(frozen=True)
class EmbedModel:
    """Projection basis, one filter bank per coordinate and pooling size.

    Inactive coordinates hold a placeholder bank (unit impulses) and
    contribute zeros to every embedding.
    """

    vocab: Vocab
    U: np.ndarray
    banks: tuple
    active: tuple
    n: int
    L: int
    kpool: int
    oov: str = "skip"

    def __post_init__(self):
        U = np.array(self.U, dtype=np.float64, copy=True)
        k = U.shape[1]
        if U.shape[0] != self.vocab.d:
            raise ShapeError("basis has %d rows, vocabulary %d" % (U.shape[0], self.vocab.d))
        if not np.allclose(U.T @ U, np.eye(k), atol=1e-8):
            raise PreconditionError("projection basis is not orthonormal")
        if len(self.banks) != k or len(self.active) != k:
            raise ShapeError("need one bank per coordinate")
        for b in self.banks:
            if not isinstance(b, FilterBank) or b.filters.shape != (self.L, self.n):
                raise ShapeError("every bank must be an (L, n) FilterBank")
        if self.kpool < 1:
            raise ValueError("kpool must be >= 1")
        U.setflags(write=False)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "banks", tuple(self.banks))
        object.__setattr__(self, "active", tuple(bool(a) for a in self.active))

    @property
    def k(self):
        return self.U.shape[1]

    @property
    def dim(self):
        return self.k * self.L * self.kpool

    def save(self, directory):
        """Write ``manifest.json``, ``U.dtns`` and ``banks.dtns`` into ``directory``."""
        os.makedirs(directory, exist_ok=True)
        write_dtns(os.path.join(directory, "U.dtns"), self.U)
        write_dtns(os.path.join(directory, "banks.dtns"),
                   np.stack([b.filters for b in self.banks]))
        manifest = {
            "format_version": FORMAT_VERSION,
            "vocab": list(self.vocab.tokens),
            "k": self.k,
            "n": self.n,
            "L": self.L,
            "kpool": self.kpool,
            "oov": self.oov,
            "active": list(self.active),
            "arrays": {"U": "U.dtns", "banks": "banks.dtns"},
        }
        with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        path = os.path.join(directory, MANIFEST)
        if not os.path.isfile(path):
            raise ModelNotTrainedError("no trained model at %s" % directory)
        with open(path, encoding="utf-8") as fh:
            m = json.load(fh)
        U = np.array(read_dtns(os.path.join(directory, m["arrays"]["U"])).data)
        B = np.array(read_dtns(os.path.join(directory, m["arrays"]["banks"])).data)
        return cls(Vocab(m["vocab"]), U, tuple(FilterBank(b) for b in B), tuple(m["active"]),
                   m["n"], m["L"], m["kpool"], m.get("oov", "skip"))


def _placeholder_bank(L, n):
    F = np.zeros((L, n))
    F[np.arange(L), np.arange(L) % n] = 1.0
    return FilterBank(F)


def train_embed_model(corpus, vocab, k=8, n=5, L=3, als_config=None, kpool=2, seed=0,
                      oov="skip", restarts=3):
    """Fit the projection and one filter bank per projected coordinate.

    Coordinates are trained independently; coordinate ``j`` uses the
    generator ``default_rng([seed, j])`` so results do not depend on
    evaluation order.
    """
    if L >= n:
        raise PreconditionError("requires nL < n² or L < n, got L=%d, n=%d" % (L, n))
    U = fit_projection(corpus, vocab, k, oov)
    Ys = [project(encode_one_hot(seq, vocab, oov), U) for seq in corpus]
    banks, active = [], []
    for j in range(U.shape[1]):
        patches = np.concatenate([extract_patches(Y[j], n) for Y in Ys], axis=1)
        bank = fit_bank(patches, L, als_config, np.random.default_rng([seed, j]), restarts)
        active.append(bank is not None)
        banks.append(bank if bank is not None else _placeholder_bank(L, n))
    return EmbedModel(vocab, U, tuple(banks), tuple(active), n, L, kpool, oov)


def _cyclic_pad(F, N):
    """Zero-pad (L, n) filters to length N; filters longer than N wrap around."""
    L, n = F.shape
    out = np.zeros((L, N))
    np.add.at(out, (slice(None), np.arange(n) % N), F)
    return out


def synthesize(w, bank, N):
    """``[Cir(f_1), ..., Cir(f_L)] w`` with filters zero-padded to length N."""
    F = _cyclic_pad(getattr(bank, "filters", np.atleast_2d(bank)), N)
    W = np.asarray(w, dtype=np.float64).reshape(F.shape[0], N)
    return np.fft.irfft(np.sum(np.fft.rfft(F, axis=1) * np.fft.rfft(W, axis=1), axis=0), n=N)


def deconv_decode(y, bank):
    """Least-norm activations ``w = F† y`` for the N-cyclic stacked circulant.

    At each frequency the row ``(f̂_1(k), ..., f̂_L(k))`` is pseudo-inverted;
    frequencies where every filter vanishes contribute zero.

    Returns
    -------
    numpy.ndarray, length N·L
        Filter-major: ``w[l·N : (l+1)·N]`` is the activation of filter l.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    Fb = getattr(bank, "filters", None)
    if Fb is None:
        Fb = FilterBank(bank).filters
    N = y.size
    L = Fb.shape[0]
    if N == 0:
        return np.zeros(0)
    Fh = np.fft.rfft(_cyclic_pad(Fb, N), axis=1)
    power = np.sum(np.abs(Fh) ** 2, axis=0)
    live = power > SPECTRAL_CUTOFF * max(float(power.max()), np.finfo(float).tiny)
    gain = np.where(live, 1.0 / np.where(live, power, 1.0), 0.0)
    Wh = np.conj(Fh) * (np.fft.rfft(y) * gain)[None, :]
    return np.fft.irfft(Wh, n=N, axis=1).reshape(L * N)


def max_k_pool(w, kpool, channels=1):
    """Top ``kpool`` values of each channel, in descending order.

    ``w`` is split into ``channels`` equal consecutive channels.  Channels
    shorter than ``kpool`` are padded with their minimum; empty channels
    give zeros.
    """
    if kpool < 1:
        raise ValueError("kpool must be >= 1")
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.size % channels:
        raise ShapeError("length %d not divisible into %d channels" % (w.size, channels))
    W = w.reshape(channels, -1)
    if W.shape[1] == 0:
        return np.zeros(channels * kpool)
    top = -np.sort(-W, axis=1)[:, :kpool]
    if top.shape[1] < kpool:
        fill = np.repeat(top[:, -1:], kpool - top.shape[1], axis=1)
        top = np.concatenate([top, fill], axis=1)
    return top.ravel()


def embed(tokens, model):
    """Embedding of length ``k·L·kpool``, coordinate-major then filter-minor."""
    Y = project(encode_one_hot(tokens, model.vocab, model.oov), model.U)
    parts = []
    for j in range(model.k):
        if not model.active[j]:
            parts.append(np.zeros(model.L * model.kpool))
            continue
        w = deconv_decode(Y[j], model.banks[j])
        parts.append(max_k_pool(w, model.kpool, channels=model.L))
    return np.concatenate(parts)


def pair_features(wL, wR, norm=False):
    """``[wL ⊙ wR, |wL - wR|]``; with ``norm=True`` the second part is the scalar ``‖wL - wR‖``."""
    wL = np.asarray(wL, dtype=np.float64).ravel()
    wR = np.asarray(wR, dtype=np.float64).ravel()
    if wL.shape != wR.shape:
        raise ShapeError("embedding lengths differ: %d vs %d" % (wL.size, wR.size))
    diff = np.abs(wL - wR)
    second = np.array([np.linalg.norm(diff)]) if norm else diff
    return np.concatenate([wL * wR, second])


def discretize_similarity(tau, K1, K2):
    """Spread a rating ``τ ∈ [K1, K2]`` over the two nearest integer bins.

    Returns ``p`` of length ``K2 - K1 + 1`` where bin ``i`` (0-based) stands
    for rating ``K1 + i``.
    """
    if not K1 < K2:
        raise ValueError("need K1 < K2")
    if not K1 <= tau <= K2:
        raise ValueError("rating %g outside [%d, %d]" % (tau, K1, K2))
    p = np.zeros(K2 - K1 + 1)
    lo = int(np.floor(tau))
    frac = tau - lo
    p[lo - K1] = 1.0 - frac
    if frac > 0:
        p[lo - K1 + 1] = frac
    return p


def expected_rating(p, K1):
    """``Σ_i (K1 + i) p_i`` over 0-based bins."""
    p = np.asarray(p, dtype=np.float64)
    return float(np.dot(K1 + np.arange(p.size), p))
