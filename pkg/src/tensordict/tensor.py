"""Dense tensors and the multilinear / Khatri-Rao algebra.

Tensors are plain C-ordered :class:`numpy.ndarray` objects (last index
fastest).  :class:`DenseTensor` is a thin immutable wrapper used where a
validated container is wanted, e.g. for the ``.dtns`` binary format.

Index conventions: formulas in docstrings are 1-based, storage is
0-based.  :func:`one_based` and :func:`cyclic_index` are the only places
where the two are converted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError, UnsupportedOrderError

MAX_ORDER = 6
DTNS_SUFFIX = ".dtns"


def one_based(i):
    """Map a 1-based index to its 0-based storage offset."""
    return i - 1


def cyclic_index(i, n):
    """Residue of a 1-based index modulo ``n``, with residue 0 mapped to ``n``.

    Returns the 1-based index; callers subtract one via :func:`one_based`.
    """
    r = i % n
    return n if r == 0 else r


@dataclass(frozen=True)
class DenseTensor:
    """Finite real tensor stored in row-major order.

    Attributes
    ----------
    dims : tuple of int
        Positive extents, one per mode.
    data : numpy.ndarray
        Read-only float64 array of shape ``dims``.
    """

    dims: tuple
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d <= 0 for d in dims):
            raise ShapeError("extents must be positive, got %s" % (dims,))
        if len(dims) > MAX_ORDER:
            raise UnsupportedOrderError("order %d > %d" % (len(dims), MAX_ORDER))
        data = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if data.size != int(np.prod(dims)):
            raise ShapeError("data length %d != prod(dims) %d" % (data.size, np.prod(dims)))
        data = data.reshape(dims)
        if not np.all(np.isfinite(data)):
            raise ValueError("tensor entries must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.shape, arr)

    @property
    def order(self):
        return len(self.dims)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


def _as_array(T):
    if isinstance(T, DenseTensor):
        return T.data
    return np.asarray(T, dtype=np.float64)


def outer_power(v, p):
    """Symmetric rank-one tensor ``v^{⊗p}`` for ``p`` in 2..4.

    Parameters
    ----------
    v : array_like, shape (d,)
    p : int

    Returns
    -------
    numpy.ndarray, shape (d,) * p
    """
    if p not in (2, 3, 4):
        raise UnsupportedOrderError("outer_power supports orders 2..4, got %r" % (p,))
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ShapeError("vector must be nonempty")
    out = v
    for _ in range(p - 1):
        out = np.multiply.outer(out, v)
    return out


def multilinear_form(T, maps):
    """Apply one linear map per mode: ``[T(M1..Mp)]_{i1..ip} = Σ T_{j1..jp} Π M_t[j_t, i_t]``.

    Vectors are treated as ``d x 1`` maps whose output mode is dropped, so
    an all-vector argument list returns a Python float.

    Parameters
    ----------
    T : array_like or DenseTensor
    maps : sequence of array_like
        ``maps[t]`` has ``T.shape[t]`` rows.
    """
    T = _as_array(T)
    if len(maps) != T.ndim:
        raise ShapeError("need %d maps, got %d" % (T.ndim, len(maps)))
    out = T
    for t, M in enumerate(maps):
        M = np.asarray(M, dtype=np.float64)
        if M.ndim not in (1, 2) or M.shape[0] != T.shape[t]:
            raise ShapeError(
                "map %d has shape %s, mode extent is %d" % (t, M.shape, T.shape[t]))
        # contract the current leading axis; new output axis goes last
        out = np.tensordot(out, M, axes=([0], [0]))
    if out.ndim == 0:
        return float(out)
    return out


def unfold3(T):
    """Side-by-side frontal slices ``[T[:,:,1], ..., T[:,:,n]]`` (shape n x n²).

    Entry ``T[a,b,c]`` lands at row ``a``, column ``b + (c-1)n`` (1-based).
    """
    T = _as_array(T)
    if T.ndim != 3 or len(set(T.shape)) != 1:
        raise ShapeError("unfold3 needs an n x n x n tensor, got %s" % (T.shape,))
    n = T.shape[0]
    return np.ascontiguousarray(T.transpose(0, 2, 1).reshape(n, n * n))


def fold3(C):
    """Inverse of :func:`unfold3`."""
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    if C.ndim != 2 or C.shape[1] != n * n:
        raise ShapeError("fold3 needs an n x n² matrix, got %s" % (C.shape,))
    return np.ascontiguousarray(C.reshape(n, n, n).transpose(0, 2, 1))


def khatri_rao(A, B):
    """Column-wise Kronecker product; column j is ``[A[0,j]·B[:,j]; A[1,j]·B[:,j]; ...]``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[1] != B.shape[1]:
        raise ShapeError("column counts differ: %d vs %d" % (A.shape[1], B.shape[1]))
    return (A[:, None, :] * B[None, :, :]).reshape(A.shape[0] * B.shape[0], A.shape[1])


def outer(A, B):
    """Tensor product ``(A⊗B)_{i..,j..} = A_{i..} B_{j..}``."""
    A = _as_array(A)
    B = _as_array(B)
    if A.ndim + B.ndim > MAX_ORDER:
        raise UnsupportedOrderError("result order %d > %d" % (A.ndim + B.ndim, MAX_ORDER))
    return np.multiply.outer(A, B)


def ptrace(T):
    """Partial trace of an order-6 tensor over modes 1 and 4.

    ``ptrace(T)_{i1,i2,i3,i4} = Σ_i T(i, i1, i2, i, i3, i4)``; turns the
    product of two third-order samples into a fourth-order tensor.
    """
    T = _as_array(T)
    if T.ndim != 6 or len(set(T.shape)) != 1:
        raise ShapeError("ptrace needs a d^6 tensor, got %s" % (T.shape,))
    return np.einsum("iabicd->abcd", T)


def frobenius(T):
    return float(np.linalg.norm(_as_array(T).ravel()))


# --- binary .dtns format ----------------------------------------------------

def write_dtns(path, T):
    """Write a tensor as a JSON header line followed by little-endian float64 data."""
    T = T if isinstance(T, DenseTensor) else DenseTensor.from_array(T)
    header = {"order": T.order, "dims": list(T.dims), "dtype": "f64",
              "endianness": "little"}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(T.data, dtype="<f8").tobytes())


def read_dtns(path):
    """Read a ``.dtns`` file and return a :class:`DenseTensor`."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError("missing .dtns header line")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("dtype") != "f64" or header.get("endianness") != "little":
        raise ValueError("unsupported .dtns encoding: %r" % header)
    dims = [int(d) for d in header["dims"]]
    if header.get("order", len(dims)) != len(dims):
        raise ValueError("order does not match dims")
    data = np.frombuffer(raw[nl + 1:], dtype="<f8")
    if data.size != int(np.prod(dims)):
        raise ValueError("payload has %d values, header expects %d" % (data.size, np.prod(dims)))
    return DenseTensor(tuple(dims), data.astype(np.float64))
