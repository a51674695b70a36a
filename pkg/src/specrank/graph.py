"""Mutual k-NN similarity graph and its normalized operators.

Conventions used throughout:

* pairwise similarity         s(v, z) = max(v.z, 0) ** gamma
* adjacency                   w_ij = s(v_i, v_j) if i and j are mutual
                              k-nearest neighbors (self excluded), else 0
* degrees                     d = W 1
* normalized adjacency        S = D^{-1/2} W D^{-1/2}   (0/0 = 0)
* normalized Laplacian        L = I - S                 (eigenvalues in [0, 2])
* regularized Laplacian       L_a = (I - a S) / (1 - a) (positive-definite)

Neighborhoods are ranked on the raw clipped dot products; the exponent only
rescales edge weights and cannot change the ranking, so both give the same
graph. Ties at the k-th position keep the lower vertex index, and neighbors
with zero similarity are dropped outright.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .descriptors import DescriptorSet
from .sparsemat import SparseSymmetricMatrix

# Instrumentation: incremented on every graph construction so callers can
# assert that query-time code paths never rebuild the graph.
_build_calls = 0


def graph_build_count() -> int:
    return _build_calls


def similarity(v: np.ndarray, z: np.ndarray, gamma: float) -> float:
    """Clipped, exponentiated dot-product similarity of two vectors."""
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if v.shape != z.shape or v.ndim != 1:
        raise ValueError(f"vectors must share one dimension, got {v.shape} vs {z.shape}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return float(max(float(v @ z), 0.0) ** gamma)


def _top_k_rows(dots: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-row top-k column indices of a (clipped) similarity block.

    Ties are broken toward the lower column index (stable sort on the negated
    values); columns with nonpositive similarity are discarded. Returns flat
    (row, col) index arrays for the surviving directed edges.
    """
    rows, n = dots.shape
    k = min(k, n)
    order = np.argsort(-dots, axis=1, kind="stable")[:, :k]
    row_idx = np.repeat(np.arange(rows), k)
    col_idx = order.ravel()
    keep = dots[row_idx, col_idx] > 0.0
    return row_idx[keep], col_idx[keep]


def build_mutual_knn_graph(
    data: DescriptorSet,
    k: int,
    gamma: float,
    block_size: int = 1024,
) -> SparseSymmetricMatrix:
    """Build the symmetric mutual k-NN adjacency of a descriptor set.

    An edge i~j carries weight max(v_i . v_j, 0)**gamma and exists only when
    each endpoint ranks among the k nearest neighbors of the other (self
    excluded). The result has a zero diagonal, at most k nonzeros per row and
    is exactly symmetric.

    ``block_size`` only controls how many query rows are processed per dense
    similarity block; the output is independent of it.
    """
    global _build_calls
    n = data.n
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if k < 1:
        raise ValueError("k must be positive")
    if k >= n:
        raise ValueError(f"k must be smaller than the number of vectors ({k} >= {n})")

    vectors = data.vectors
    rows_all = []
    cols_all = []
    vals_all = []
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        dots = vectors[start:stop] @ vectors.T
        dots[np.arange(stop - start), np.arange(start, stop)] = -np.inf  # no self-loops
        np.maximum(dots, 0.0, out=dots)
        r, c = _top_k_rows(dots, k)
        rows_all.append(r + start)
        cols_all.append(c)
        vals_all.append(dots[r, c] ** gamma)

    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    vals = np.concatenate(vals_all)
    directed = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    # Mutuality: both directed edges must exist; their values agree, so the
    # elementwise minimum keeps the weight where mutual and zeroes one-sided
    # edges (missing entries count as 0 and weights are nonnegative).
    mutual = directed.minimum(directed.T.tocsr())
    mutual.eliminate_zeros()
    mutual.sort_indices()
    _build_calls += 1
    return SparseSymmetricMatrix(sp.csr_matrix(mutual))


def degrees(adjacency: SparseSymmetricMatrix) -> np.ndarray:
    """Row sums of the adjacency; entry i is 0 iff vertex i is isolated."""
    adjacency.require_adjacency()
    return np.asarray(adjacency.csr.sum(axis=1)).ravel()


def normalize_adjacency(
    adjacency: SparseSymmetricMatrix, degree: np.ndarray
) -> SparseSymmetricMatrix:
    """Symmetric normalization D^{-1/2} W D^{-1/2} with the 0/0 = 0 rule.

    Rows and columns of isolated vertices come out all-zero; the spectral
    radius of the result is at most 1.
    """
    degree = np.asarray(degree, dtype=np.float64)
    if degree.shape != (adjacency.n,):
        raise ValueError("degree vector shape does not match adjacency")
    inv_sqrt = np.zeros_like(degree)
    positive = degree > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(degree[positive])
    scaled = adjacency.csr.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :])
    return SparseSymmetricMatrix(sp.csr_matrix(scaled))


def normalized_laplacian(normalized: SparseSymmetricMatrix) -> SparseSymmetricMatrix:
    """I - S for a symmetrically normalized adjacency S."""
    lap = sp.identity(normalized.n, dtype=np.float64, format="csr") - normalized.csr
    return SparseSymmetricMatrix(sp.csr_matrix(lap))


def regularized_laplacian(
    normalized: SparseSymmetricMatrix, alpha: float
) -> SparseSymmetricMatrix:
    """(I - alpha S) / (1 - alpha); positive-definite for 0 <= alpha < 1."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    beta = 1.0 - alpha
    mat = sp.identity(normalized.n, dtype=np.float64, format="csr") - alpha * normalized.csr
    return SparseSymmetricMatrix(sp.csr_matrix(mat / beta))


def apply_regularized_laplacian(
    normalized: SparseSymmetricMatrix, alpha: float, x: np.ndarray
) -> np.ndarray:
    """Matrix-free product L_a x, never assembling L_a."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    return (x - alpha * (normalized.csr @ x)) / (1.0 - alpha)


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Connected components of a graph, ordered by decreasing size.

    Attributes:
        labels: (n,) component id per vertex; ids sorted by component size
            descending, ties by the smallest original vertex index.
        sizes: (c,) component sizes in label order.
        order: (n,) original vertex indices in block order, component by
            component with ascending original index inside each block;
            W[order][:, order] is block diagonal.
    """

    labels: np.ndarray
    sizes: np.ndarray
    order: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        sizes = np.asarray(self.sizes, dtype=np.int64)
        order = np.asarray(self.order, dtype=np.int64)
        n = labels.shape[0]
        if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
            raise ValueError("order must be a permutation of 0..n-1")
        if int(sizes.sum()) != n:
            raise ValueError("component sizes must sum to n")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "order", order)

    @classmethod
    def trivial(cls, n: int) -> "ComponentLabeling":
        return cls(np.zeros(n, dtype=np.int64), np.array([n], dtype=np.int64), np.arange(n))

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def count(self) -> int:
        return self.sizes.shape[0]

    def vertices_of(self, component: int) -> np.ndarray:
        """Original indices of one component, ascending."""
        return np.flatnonzero(self.labels == component)


def connected_components(adjacency: SparseSymmetricMatrix) -> ComponentLabeling:
    """Union-find labeling of the connected components of an adjacency.

    Isolated vertices become singleton components. Components are numbered by
    decreasing size; equal sizes are ordered by their smallest vertex index.
    """
    adjacency.require_adjacency()
    n = adjacency.n
    parent = np.arange(n, dtype=np.int64)

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:  # path compression
            parent[i], i = root, parent[i]
        return root

    coo = adjacency.csr.tocoo()
    for i, j in zip(coo.row.tolist(), coo.col.tolist()):
        if i < j:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

    roots = np.array([find(i) for i in range(n)], dtype=np.int64)
    unique_roots, counts = np.unique(roots, return_counts=True)
    # size descending, then smallest contained vertex (== root, the minimum).
    rank = np.lexsort((unique_roots, -counts))
    label_of_root = {int(unique_roots[r]): lab for lab, r in enumerate(rank)}
    labels = np.array([label_of_root[int(r)] for r in roots], dtype=np.int64)
    sizes = counts[rank]
    order = np.concatenate(
        [np.flatnonzero(labels == lab) for lab in range(len(unique_roots))]
    )
    return ComponentLabeling(labels, sizes, order)
