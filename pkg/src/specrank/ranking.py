"""Online ranking: observation vectors, spectral filtering and pooling.

Given an offline decomposition U diag(lam) U^T of the normalized adjacency, a
query is answered by (1) building a sparse observation vector y of clipped
query-to-dataset similarities, (2) filtering x = U h(lam) U^T y where h is a
nondecreasing transfer function evaluated on the eigenvalues only, and (3)
pooling region scores into image scores and sorting. No n-by-n matrix is ever
formed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .descriptors import NORM_TOL, DescriptorSet
from .spectral import NumericalError, SpectralDecomposition, Variant

MONOTONICITY_SAMPLES = 1024


@dataclass(frozen=True)
class TransferFunction:
    """Scalar spectrum reshaping function with declared properties.

    ``analytic`` marks functions whose monotonicity is known in closed form;
    anything else gets sample-checked on the spectrum interval before use.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    nondecreasing: bool
    positive: bool
    name: str
    alpha: float | None = None
    analytic: bool = False

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=np.float64)), dtype=np.float64)


def h_alpha(alpha: float) -> TransferFunction:
    """Low-pass transfer h(x) = (1 - alpha) / (1 - alpha x) on [-1, 1].

    Strictly increasing with h(1) = 1 for every alpha in [0, 1); alpha = 0 is
    the all-pass identity filter. Filtering with it reproduces the solution of
    the regularized-Laplacian linear system.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")

    def fn(x: np.ndarray) -> np.ndarray:
        return (1.0 - alpha) / (1.0 - alpha * x)

    return TransferFunction(
        fn=fn,
        nondecreasing=True,
        positive=True,
        name=f"h_alpha({alpha:g})",
        alpha=alpha,
        analytic=True,
    )


def custom_transfer(
    fn: Callable[[np.ndarray], np.ndarray],
    nondecreasing: bool,
    positive: bool = False,
    name: str = "custom",
) -> TransferFunction:
    return TransferFunction(fn=fn, nondecreasing=nondecreasing, positive=positive, name=name)


def _transfer_values(h: TransferFunction, eigenvalues: np.ndarray) -> np.ndarray:
    """Evaluate h on the retained spectrum, enforcing monotonicity.

    Functions not declared nondecreasing are rejected outright; declared ones
    without an analytic guarantee are verified on a grid spanning the spectrum.
    """
    if not h.nondecreasing:
        raise ValueError(
            f"transfer function {h.name!r} is not declared nondecreasing; "
            "truncated filtering would be unsound"
        )
    if not h.analytic and eigenvalues.size:
        lo = float(eigenvalues.min())
        hi = float(eigenvalues.max())
        if hi > lo:
            grid = np.linspace(lo, hi, MONOTONICITY_SAMPLES)
            samples = h(grid)
            if np.any(np.diff(samples) < -1e-12):
                raise ValueError(
                    f"transfer function {h.name!r} decreases on [{lo:g}, {hi:g}] "
                    "despite being declared nondecreasing"
                )
    values = h(eigenvalues)
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"transfer function {h.name!r} is not finite on the spectrum")
    return values


@dataclass(frozen=True, eq=False)
class ObservationVector:
    """Sparse nonnegative query signal y over the n dataset regions.

    ``indices`` are strictly increasing, ``values`` nonnegative, and at most
    ``cap`` entries are kept.
    """

    size: int
    indices: np.ndarray
    values: np.ndarray
    cap: int

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if indices.ndim != 1 or indices.shape != values.shape:
            raise ValueError("indices and values must be 1-D and equally long")
        if indices.size:
            if np.any(np.diff(indices) <= 0):
                raise ValueError("indices must be strictly increasing")
            if indices[0] < 0 or indices[-1] >= self.size:
                raise ValueError("indices out of range")
            if values.min() < 0.0:
                raise ValueError("values must be nonnegative")
        if indices.size > self.cap:
            raise ValueError(f"more than cap={self.cap} nonzeros")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dense(cls, y: np.ndarray, cap: int | None = None) -> "ObservationVector":
        y = np.asarray(y, dtype=np.float64)
        idx = np.flatnonzero(y)
        return cls(size=y.size, indices=idx, values=y[idx], cap=cap if cap is not None else max(idx.size, 1))

    @property
    def nnz(self) -> int:
        return self.indices.size

    @property
    def is_empty(self) -> bool:
        return self.indices.size == 0

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.indices] = self.values
        return out

    def dot(self, x: np.ndarray) -> float:
        return float(self.values @ x[self.indices]) if self.nnz else 0.0


def _check_query_regions(query_regions, d: int) -> np.ndarray:
    regions = np.atleast_2d(np.asarray(query_regions, dtype=np.float64))
    if regions.size == 0:
        raise ValueError("query must contain at least one region vector")
    if regions.shape[1] != d:
        raise ValueError(f"query dimension {regions.shape[1]} != dataset dimension {d}")
    norms = np.linalg.norm(regions, axis=1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise ValueError("query vectors must be unit-norm")
    return regions


def neighbor_similarities(
    z: np.ndarray, data: DescriptorSet, k: int, gamma: float
) -> np.ndarray:
    """Dense vector of s(v_i | z): similarity where v_i is a k-NN of z, else 0.

    Neighborhoods are ranked on the raw clipped dot products (ties toward the
    lower index) and zero-similarity neighbors are dropped.
    """
    if k < 1 or k > data.n:
        raise ValueError(f"k must lie in [1, n], got {k}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    clipped = np.maximum(data.vectors @ z, 0.0)
    order = np.argsort(-clipped, kind="stable")[:k]
    kept = order[clipped[order] > 0.0]
    out = np.zeros(data.n)
    out[kept] = clipped[kept] ** gamma
    return out


def observation_vector(
    query_regions,
    data: DescriptorSet,
    k: int,
    gamma: float,
    cap: int | None = None,
) -> ObservationVector:
    """Pool per-region neighbor similarities into one sparse query signal.

    Each region contributes s(v_i | q_j) over its k nearest dataset regions;
    the sums are then truncated to the ``cap`` largest entries (defaults to
    the same k). A query with no positive similarity yields the empty vector
    and a warning rather than an error.
    """
    regions = _check_query_regions(query_regions, data.d)
    cap = k if cap is None else cap
    if cap < 1:
        raise ValueError("cap must be positive")
    y = np.zeros(data.n)
    for region in regions:
        y += neighbor_similarities(region, data, k, gamma)
    order = np.argsort(-y, kind="stable")[:cap]
    kept = order[y[order] > 0.0]
    if kept.size == 0:
        warnings.warn("query has no positive similarity to the dataset; empty observation")
    kept.sort()
    return ObservationVector(size=data.n, indices=kept, values=y[kept], cap=cap)


def _project(U, y: ObservationVector) -> np.ndarray:
    """U^T y for sparse y without densifying anything."""
    if y.is_empty:
        return np.zeros(U.shape[1])
    rows = U[y.indices]
    if sp.issparse(rows):
        return np.asarray(rows.T @ y.values).ravel()
    return rows.T @ y.values


def filter(
    dec: SpectralDecomposition,
    h: TransferFunction,
    y: ObservationVector,
    copy_uncovered: bool | None = None,
) -> np.ndarray:
    """Spectral filtering x = U h(lam) U^T y as two thin products.

    ``copy_uncovered`` substitutes y_i for the score of any vertex whose row
    of U is entirely zero (vertices left out of the decomposition, e.g. small
    components). Defaults to on for the approximate/sparse variants and off
    for the exact ones.
    """
    if y.size != dec.n:
        raise ValueError(f"observation size {y.size} != decomposition size {dec.n}")
    weights = _transfer_values(h, dec.eigenvalues)
    z = _project(dec.U, y)
    x = dec.U @ (weights * z)
    x = np.asarray(x).ravel()
    if copy_uncovered is None:
        copy_uncovered = dec.variant in (Variant.APPROX, Variant.SPARSE)
    if copy_uncovered and not y.is_empty:
        uncovered = dec.eta == 0.0
        if np.any(uncovered[y.indices]):
            take = uncovered[y.indices]
            x[y.indices[take]] = y.values[take]
    return x


def fsrw_correct(
    x: np.ndarray,
    dec: SpectralDecomposition,
    data: DescriptorSet,
    query_regions,
) -> np.ndarray:
    """Blend filtered scores with Euclidean similarity where rank was lost.

    Row norms eta of U are 1 for an exact decomposition and shrink where the
    truncated basis represents a vertex poorly; each score gains
    (1 - eta_i) * v_i . q, summed over query regions. Exact decompositions are
    left untouched up to rounding.
    """
    regions = _check_query_regions(query_regions, data.d)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (data.n,) or dec.n != data.n:
        raise ValueError("score vector, dataset and decomposition sizes must agree")
    euclid = data.vectors @ regions.sum(axis=0)
    return x + (1.0 - dec.eta) * euclid


@dataclass(frozen=True, eq=False)
class PoolingMatrix:
    """Sparse (N, n) map from region scores to image scores.

    Every region column has exactly one owning image row; weights are finite
    and nonnegative.
    """

    csr: sp.csr_matrix

    def __post_init__(self):
        mat = sp.csr_matrix(self.csr, dtype=np.float64)
        counts = np.asarray((mat != 0).sum(axis=0)).ravel()
        if np.any(counts != 1):
            raise ValueError("each region must belong to exactly one image")
        if not np.all(np.isfinite(mat.data)) or (mat.nnz and mat.data.min() < 0.0):
            raise ValueError("pooling weights must be finite and nonnegative")
        object.__setattr__(self, "csr", mat)

    @classmethod
    def identity(cls, n: int) -> "PoolingMatrix":
        return cls(sp.identity(n, dtype=np.float64, format="csr"))

    @classmethod
    def from_region_map(
        cls,
        region_to_image: np.ndarray,
        n_images: int | None = None,
        weights: np.ndarray | None = None,
    ) -> "PoolingMatrix":
        """Sum pooling (or weighted pooling) from a region-to-image map."""
        r2i = np.asarray(region_to_image, dtype=np.int64)
        n = r2i.size
        n_images = int(r2i.max()) + 1 if n_images is None else n_images
        data = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        mat = sp.csr_matrix((data, (r2i, np.arange(n))), shape=(n_images, n))
        return cls(mat)

    @property
    def n_images(self) -> int:
        return self.csr.shape[0]

    @property
    def n_regions(self) -> int:
        return self.csr.shape[1]


def pool(pooling: PoolingMatrix, x: np.ndarray) -> np.ndarray:
    """Image scores from region scores: one sparse matrix-vector product."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (pooling.n_regions,):
        raise ValueError(f"score vector length {x.shape} != {pooling.n_regions} regions")
    return np.asarray(pooling.csr @ x).ravel()


def pooled_basis(pooling: PoolingMatrix, dec: SpectralDecomposition) -> np.ndarray:
    """Precompute the (N, r) pooled basis so online pooling is free."""
    if pooling.n_regions != dec.n:
        raise ValueError("pooling width does not match the decomposition")
    U_bar = pooling.csr @ dec.U
    return U_bar.toarray() if sp.issparse(U_bar) else np.asarray(U_bar)


def filter_pooled(
    dec: SpectralDecomposition,
    h: TransferFunction,
    y: ObservationVector,
    U_bar: np.ndarray,
) -> np.ndarray:
    """Image scores directly: U_bar h(lam) U^T y, skipping the region vector."""
    if y.size != dec.n:
        raise ValueError(f"observation size {y.size} != decomposition size {dec.n}")
    weights = _transfer_values(h, dec.eigenvalues)
    z = _project(dec.U, y)
    return U_bar @ (weights * z)


def embedding(dec: SpectralDecomposition, h: TransferFunction):
    """Explicit feature map Phi = h(lam)^{1/2} U^T with Phi^T Phi = U h(lam) U^T."""
    weights = _transfer_values(h, dec.eigenvalues)
    if np.any(weights < 0.0):
        raise ValueError("transfer values must be nonnegative to take a square root")
    scale = np.sqrt(weights)
    if dec.is_sparse:
        return sp.diags(scale) @ dec.U.T.tocsr()
    return scale[:, None] * dec.U.T


def out_of_sample_similarity(
    z1: np.ndarray,
    z2: np.ndarray,
    phi,
    data: DescriptorSet,
    k: int,
    gamma: float,
) -> float:
    """Kernel similarity between two unseen vectors through the embedding.

    Each vector is mapped to neighbor-similarity space (psi(z)_i = s(v_i | z))
    and embedded as phi_hat = Phi psi(z); the similarity is their dot product,
    symmetric in the two arguments.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    psi1 = neighbor_similarities(z1, data, k, gamma)
    psi2 = neighbor_similarities(z2, data, k, gamma)
    e1 = np.asarray(phi @ psi1).ravel()
    e2 = np.asarray(phi @ psi2).ravel()
    return float(e1 @ e2)


def rank(x_pooled: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score, ties broken by ascending index."""
    x_pooled = np.asarray(x_pooled, dtype=np.float64)
    if not np.all(np.isfinite(x_pooled)):
        raise NumericalError("scores contain NaN or infinity")
    return np.lexsort((np.arange(x_pooled.size), -x_pooled)).astype(np.int64)


@dataclass(frozen=True, eq=False)
class RankingResult:
    """Region scores, pooled image scores and the resulting image order."""

    x: np.ndarray
    x_pooled: np.ndarray
    order: np.ndarray

    @classmethod
    def from_scores(cls, x: np.ndarray, pooling: PoolingMatrix | None = None) -> "RankingResult":
        x = np.asarray(x, dtype=np.float64)
        x_pooled = pool(pooling, x) if pooling is not None else x
        return cls(x=x, x_pooled=x_pooled, order=rank(x_pooled))
