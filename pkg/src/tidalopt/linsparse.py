"""Sparse matrices in compressed-row form and direct LU solves.

Matrices are plain :class:`scipy.sparse.csr_matrix` objects. Factorisation is
delegated to SuperLU; one factorisation serves both ``A x = b`` and
``A^T x = b`` so the adjoint reuses the forward work.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import IndexOutOfRange, ShapeMismatch, SingularMatrix

# Diagonal pivoting threshold per ordering. The symmetric minimum-degree
# ordering only pays off when diagonal pivots are preferred strongly.
PIVOT_THRESHOLD = {"mmd": 0.01, "colamd": 0.1, "rcm": 0.1}


class SparsityPattern:
    """Fixed CSR structure for repeated assembly from the same triplet layout.

    Building the pattern sorts the (row, col) keys once; every later
    :meth:`assemble` is a single ``bincount`` into the CSR value array, with
    duplicates summed in a fixed order.
    """

    def __init__(self, shape, rows, cols):
        nrows, ncols = shape
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if rows.shape != cols.shape:
            raise ShapeMismatch("rows and cols differ in length")
        if rows.size and (rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols):
            raise IndexOutOfRange(f"triplet index outside {shape}")
        keys = rows * ncols + cols
        unique, self.scatter = np.unique(keys, return_inverse=True)
        self.shape = (nrows, ncols)
        self.indices = (unique % ncols).astype(np.int32)
        self.row_of = unique // ncols
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(self.row_of, minlength=nrows))]).astype(np.int32)
        self.nnz = len(unique)

    def sum_values(self, values) -> np.ndarray:
        return np.bincount(self.scatter, weights=np.asarray(values, dtype=float).ravel(), minlength=self.nnz)

    def to_csr(self, data) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)

    def assemble(self, values) -> sp.csr_matrix:
        return self.to_csr(self.sum_values(values))

    def locate(self, rows, cols) -> np.ndarray:
        """Positions in the CSR value array of existing entries ``(rows, cols)``."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        keys = self.row_of * self.shape[1] + self.indices
        wanted = rows * self.shape[1] + cols
        pos = np.searchsorted(keys, wanted)
        if np.any(pos >= self.nnz) or np.any(keys[np.minimum(pos, self.nnz - 1)] != wanted):
            raise IndexOutOfRange("requested entry is not part of the pattern")
        return pos


def assemble_from_triplets(nrows: int, ncols: int, triplets) -> sp.csr_matrix:
    """CSR matrix from ``(i, j, value)`` triplets; duplicate entries are summed."""
    triplets = list(triplets)
    if not triplets:
        return sp.csr_matrix((nrows, ncols))
    i, j, v = zip(*triplets)
    return SparsityPattern((nrows, ncols), i, j).assemble(v)


class Factorisation:
    """Sparse LU factors of a square matrix.

    ``ordering`` selects the fill-reducing ordering: ``"mmd"`` (default;
    minimum degree on the pattern of ``A + A^T``), ``"colamd"``, or ``"rcm"``
    (symmetric reverse Cuthill-McKee followed by a natural-order
    factorisation).
    """

    def __init__(self, A, ordering: str = "mmd"):
        A = sp.csr_matrix(A)
        n, m = A.shape
        if n != m:
            raise ShapeMismatch(f"cannot factorise a {n}x{m} matrix")
        self.shape = A.shape
        self.ordering = ordering
        if ordering == "rcm":
            self._perm = reverse_cuthill_mckee(A + A.T, symmetric_mode=True)
            B = A[self._perm][:, self._perm]
            spec = "NATURAL"
        elif ordering in ("mmd", "colamd"):
            self._perm = None
            B = A
            spec = "MMD_AT_PLUS_A" if ordering == "mmd" else "COLAMD"
        else:
            raise ValueError(f"unknown ordering {ordering!r}")
        try:
            self._lu = spla.splu(B.tocsc(), permc_spec=spec, diag_pivot_thresh=PIVOT_THRESHOLD[ordering])
        except RuntimeError as exc:
            raise SingularMatrix(f"LU factorisation failed: {exc}") from None

    def _solve(self, b, trans):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise ShapeMismatch(f"right-hand side has length {b.shape[0]}, expected {self.shape[0]}")
        if self._perm is None:
            x = self._lu.solve(b, trans=trans)
        else:
            x = np.empty_like(b)
            x[self._perm] = self._lu.solve(b[self._perm], trans=trans)
        if not np.all(np.isfinite(x)):
            bad = np.flatnonzero(~np.isfinite(x))
            raise SingularMatrix("solve produced non-finite values", pivot=int(bad[0]))
        return x

    def solve(self, b) -> np.ndarray:
        return self._solve(b, "N")

    def solve_transpose(self, b) -> np.ndarray:
        return self._solve(b, "T")


def factorise(A, ordering: str = "mmd") -> Factorisation:
    return Factorisation(A, ordering)


def solve(F: Factorisation, b) -> np.ndarray:
    return F.solve(b)


def solve_transpose(F: Factorisation, b) -> np.ndarray:
    return F.solve_transpose(b)
