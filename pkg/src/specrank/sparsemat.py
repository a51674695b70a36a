"""CSR-backed structurally symmetric matrices.

One type covers both graph adjacencies (nonnegative, zero diagonal) and the
signed operators derived from them (Laplacians). Symmetry is validated once at
construction; instances are treated as immutable afterwards and are safe to
share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SparseSymmetricMatrix:
    """Square sparse matrix with entry (i, j) equal to (j, i) within 1e-12."""

    csr: sp.csr_matrix

    def __post_init__(self):
        mat = self.csr
        if not sp.issparse(mat):
            raise ValueError("csr must be a scipy sparse matrix")
        if mat.shape[0] != mat.shape[1]:
            raise ValueError(f"matrix must be square, got shape {mat.shape}")
        if mat.nnz:
            asym = abs(mat - mat.T)
            if asym.nnz and asym.max() > SYMMETRY_TOL:
                raise ValueError(
                    f"matrix is not symmetric within {SYMMETRY_TOL:g} "
                    f"(max deviation {asym.max():.3g})"
                )

    @classmethod
    def from_scipy(cls, mat) -> "SparseSymmetricMatrix":
        csr = sp.csr_matrix(mat, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        return cls(csr)

    @classmethod
    def from_dense(cls, arr) -> "SparseSymmetricMatrix":
        return cls.from_scipy(np.asarray(arr, dtype=np.float64))

    @classmethod
    def identity(cls, n: int) -> "SparseSymmetricMatrix":
        return cls(sp.identity(n, dtype=np.float64, format="csr"))

    @property
    def n(self) -> int:
        return self.csr.shape[0]

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def __matmul__(self, other):
        return self.csr @ other

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ np.asarray(x)

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def require_adjacency(self) -> None:
        """Raise unless this is a valid adjacency: zero diagonal, values >= 0."""
        if np.any(self.diagonal() != 0.0):
            raise ValueError("adjacency must have a zero diagonal")
        if self.nnz and float(self.csr.data.min()) < 0.0:
            raise ValueError("adjacency must be nonnegative")

    def submatrix(self, index: np.ndarray) -> "SparseSymmetricMatrix":
        """Principal submatrix on the given (sorted) vertex indices."""
        index = np.asarray(index, dtype=np.int64)
        sub = self.csr[index][:, index]
        return SparseSymmetricMatrix(sp.csr_matrix(sub))
