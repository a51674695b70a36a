"""Offline spectral decomposition of the normalized adjacency.

Stage 1 finds an approximate range basis Q of A by simultaneous iteration:
draw a Gaussian block, then alternate QR factorization and multiplication by
A. Stage 2 projects A onto that basis (C = Q^T A Q), eigendecomposes the small
matrix and lifts the leading eigenvectors back (U = QV). Stage 3 optionally
sparsifies U by keeping its globally largest entries. Disconnected graphs are
handled block by block, with a global selection of the leading eigenvalues
across blocks.

Everything here is deterministic for a fixed seed: Gaussian blocks come from a
counter-based generator through an explicit Box-Muller transform, eigenvector
signs are fixed so the largest-magnitude entry of each column is positive, and
all tie-breaks are index-ordered.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .graph import ComponentLabeling
from .sparsemat import SparseSymmetricMatrix

DEFAULT_OVERSAMPLING = 10
DEFAULT_POWER_ITERATIONS = 4
DENSE_GUARD = 4096

_MASK64 = (1 << 64) - 1


class NumericalError(RuntimeError):
    """A computation left its supported regime (guards, non-finite values)."""


class Variant(str, enum.Enum):
    EXACT = "exact"
    RANK_R = "rank_r"
    APPROX = "approx"
    SPARSE = "sparse"


def mix_seed(seed: int, salt: int) -> int:
    """Derive a decorrelated 64-bit stream seed (splitmix64 finalizer)."""
    z = (seed ^ ((salt + 1) * 0x9E3779B97F4A7C15)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def gaussian_matrix(rows: int, cols: int, seed: int) -> np.ndarray:
    """Standard Gaussian block from a counter-based stream via Box-Muller."""
    gen = np.random.Generator(np.random.Philox(seed & _MASK64))
    count = rows * cols
    half = (count + 1) // 2
    u1 = 1.0 - gen.random(half)  # in (0, 1], keeps the log finite
    u2 = gen.random(half)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:count]
    return z.reshape(rows, cols)


@dataclass(frozen=True)
class Provenance:
    """Parameters that produced a decomposition; None where not applicable."""

    r: int | None = None
    p: int | None = None
    q: int | None = None
    tau: int | None = None
    seed: int | None = None


@dataclass(frozen=True, eq=False)
class RangeBasis:
    """Approximate range basis of A: Q orthonormal, B = A Q."""

    Q: np.ndarray
    B: np.ndarray
    iterations_used: int
    seed: int | None = None

    @property
    def r_hat(self) -> int:
        return self.Q.shape[1]


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Rank-r eigenpair approximation U diag(eigenvalues) U^T of A.

    ``U`` is dense (n, r) or CSR sparse after sparsification; ``eigenvalues``
    are sorted descending; ``eta`` holds the Euclidean norm of each row of the
    stored U (all ones for an exact decomposition). ``components`` records the
    block structure the decomposition was computed over (trivial when it was
    computed monolithically).
    """

    U: np.ndarray | sp.csr_matrix
    eigenvalues: np.ndarray
    eta: np.ndarray
    components: ComponentLabeling
    variant: Variant
    provenance: Provenance

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def r(self) -> int:
        return self.U.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.U)

    def dense_u(self) -> np.ndarray:
        return self.U.toarray() if self.is_sparse else self.U


def row_norms(U) -> np.ndarray:
    if sp.issparse(U):
        return np.sqrt(np.asarray(U.multiply(U).sum(axis=1)).ravel())
    return np.linalg.norm(U, axis=1)


def _fix_column_signs(U: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive."""
    lead = np.abs(U).argmax(axis=0)
    signs = np.sign(U[lead, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def _descending(vals: np.ndarray, vecs: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep the r algebraically largest eigenpairs, sorted descending."""
    idx = np.argsort(-vals, kind="stable")[:r]
    return vals[idx], vecs[:, idx]


def range_finder(
    A: SparseSymmetricMatrix, r_hat: int, q: int, seed: int
) -> RangeBasis:
    """Simultaneous iteration for an orthonormal basis of the range of A.

    Starting from an (n, r_hat) Gaussian block, repeat q times: QR-factorize
    the block, multiply the Q factor by A. Returns the last Q together with
    B = A Q (one multiplication past the last factorization). The residual
    ||A - Q Q^T A|| decays with q at a rate set by the spectral gap.
    """
    n = A.n
    if r_hat < 1 or r_hat > n:
        raise ValueError(f"r_hat must lie in [1, n], got {r_hat} for n={n}")
    if q < 1:
        raise ValueError("q must be at least 1")
    block = gaussian_matrix(n, r_hat, seed)
    Q = None
    for _ in range(q):
        Q, _R = np.linalg.qr(block)
        # Householder QR is stable; re-orthogonalize only on pathological loss.
        gram_err = np.abs(Q.T @ Q - np.eye(r_hat)).max()
        if gram_err > 1e-8:
            Q, _R = np.linalg.qr(Q)
        block = A @ Q
    return RangeBasis(Q=Q, B=block, iterations_used=q, seed=seed)


def approx_eigendecomposition(
    A: SparseSymmetricMatrix, basis: RangeBasis, r: int
) -> SpectralDecomposition:
    """Rayleigh-Ritz step: eigendecompose C = Q^T A Q, keep the top r pairs.

    The lifted U = Q V has orthonormal columns and U diag(lam) U^T approximates
    A up to the range-finder residual plus the first dropped eigenvalue.
    """
    if r < 1 or r > basis.r_hat:
        raise ValueError(f"r must lie in [1, r_hat={basis.r_hat}], got {r}")
    if basis.Q.shape[0] != A.n:
        raise ValueError("basis dimension does not match A")
    C = basis.Q.T @ basis.B
    C = (C + C.T) / 2.0  # symmetrize away floating-point drift
    vals, vecs = np.linalg.eigh(C)
    vals, vecs = _descending(vals, vecs, r)
    U = _fix_column_signs(basis.Q @ vecs)
    return SpectralDecomposition(
        U=U,
        eigenvalues=vals,
        eta=row_norms(U),
        components=ComponentLabeling.trivial(A.n),
        variant=Variant.APPROX,
        provenance=Provenance(r=r, p=basis.r_hat - r, q=basis.iterations_used, seed=basis.seed),
    )


def exact_eigendecomposition(
    A: SparseSymmetricMatrix, max_n: int = DENSE_GUARD
) -> SpectralDecomposition:
    """Full dense symmetric eigendecomposition (also the rank-n reference)."""
    n = A.n
    if n > max_n:
        raise NumericalError(
            f"dense decomposition guarded at n <= {max_n} (got n={n}); "
            "use the randomized path instead"
        )
    vals, vecs = np.linalg.eigh(A.to_dense())
    vals, vecs = _descending(vals, vecs, n)
    U = _fix_column_signs(vecs)
    return SpectralDecomposition(
        U=U,
        eigenvalues=vals,
        eta=row_norms(U),
        components=ComponentLabeling.trivial(n),
        variant=Variant.EXACT,
        provenance=Provenance(r=n),
    )


def rank_r_decomposition(
    A: SparseSymmetricMatrix, r: int, max_n: int = DENSE_GUARD
) -> SpectralDecomposition:
    """Exact decomposition truncated to the r algebraically largest pairs."""
    n = A.n
    if r < 1 or r > n:
        raise ValueError(f"r must lie in [1, n], got {r} for n={n}")
    if n > max_n:
        raise NumericalError(
            f"dense decomposition guarded at n <= {max_n} (got n={n}); "
            "use the randomized path instead"
        )
    vals, vecs = np.linalg.eigh(A.to_dense())
    vals, vecs = _descending(vals, vecs, r)
    U = _fix_column_signs(vecs)
    return SpectralDecomposition(
        U=U,
        eigenvalues=vals,
        eta=row_norms(U),
        components=ComponentLabeling.trivial(n),
        variant=Variant.EXACT if r == n else Variant.RANK_R,
        provenance=Provenance(r=r),
    )


def truncate_rank(dec: SpectralDecomposition, r: int) -> SpectralDecomposition:
    """Drop trailing eigenpairs; columns are already sorted by eigenvalue."""
    if dec.variant is Variant.SPARSE:
        raise ValueError("cannot truncate a sparsified decomposition")
    if r < 1 or r > dec.r:
        raise ValueError(f"r must lie in [1, {dec.r}], got {r}")
    if r == dec.r:
        return dec
    U = dec.U[:, :r]
    variant = Variant.RANK_R if dec.variant is Variant.EXACT else dec.variant
    return SpectralDecomposition(
        U=U,
        eigenvalues=dec.eigenvalues[:r],
        eta=row_norms(U),
        components=dec.components,
        variant=variant,
        provenance=replace(dec.provenance, r=r),
    )


def sparsify(dec: SpectralDecomposition, tau: int) -> SpectralDecomposition:
    """Keep only the tau largest-magnitude entries of U, globally.

    Ties are resolved in (row, column) order so the result is deterministic.
    The row norms eta are recomputed from the sparsified U.
    """
    if dec.variant is Variant.SPARSE:
        raise ValueError("decomposition is already sparse")
    if tau < 1:
        raise ValueError("tau must be positive")
    coo = sp.coo_matrix(dec.U)
    keep = min(tau, coo.nnz)
    order = np.lexsort((coo.col, coo.row, -np.abs(coo.data)))[:keep]
    U = sp.csr_matrix(
        (coo.data[order], (coo.row[order], coo.col[order])),
        shape=(dec.n, dec.r),
    )
    U.sort_indices()
    return SpectralDecomposition(
        U=U,
        eigenvalues=dec.eigenvalues,
        eta=row_norms(U),
        components=dec.components,
        variant=Variant.SPARSE,
        provenance=replace(dec.provenance, tau=tau),
    )


def decompose(
    A: SparseSymmetricMatrix,
    r: int,
    p: int = DEFAULT_OVERSAMPLING,
    q: int = DEFAULT_POWER_ITERATIONS,
    seed: int = 0,
) -> SpectralDecomposition:
    """Stages 1-2 in one call: range finder then Rayleigh-Ritz on all of A."""
    r_hat = min(r + p, A.n)
    if r > r_hat:
        raise ValueError(f"r={r} exceeds n={A.n}")
    basis = range_finder(A, r_hat, q, seed)
    return approx_eigendecomposition(A, basis, r)


def decompose_blockwise(
    A: SparseSymmetricMatrix,
    labeling: ComponentLabeling,
    r: int,
    rho: int,
    p: int = DEFAULT_OVERSAMPLING,
    q: int = DEFAULT_POWER_ITERATIONS,
    seed: int = 0,
) -> SpectralDecomposition:
    """Per-component decomposition with a global top-r selection.

    Components no larger than rho are decomposed exactly; larger ones get the
    randomized treatment at rank max(rho, ceil(r * n_l / n)). Every component
    therefore contributes at least min(rho, n_l) candidate pairs, and the
    final decomposition keeps the r algebraically largest eigenvalues across
    all components. Rows of U stay supported on their own component's columns.

    Component 0 reuses ``seed`` unchanged so a single-component graph gives
    the same result as the monolithic path; later components get derived
    streams.
    """
    n = A.n
    if labeling.n != n:
        raise ValueError("labeling does not match the matrix dimension")
    if r < 1:
        raise ValueError("r must be positive")
    if rho < 1:
        raise ValueError("rho must be positive")
    if p < 0 or q < 1:
        raise ValueError("need p >= 0 and q >= 1")

    blocks = []
    all_exact = True
    for comp in range(labeling.count):
        vertices = labeling.vertices_of(comp)
        n_l = vertices.size
        sub = A.submatrix(vertices)
        if n_l <= rho:
            part = exact_eigendecomposition(sub, max_n=max(DENSE_GUARD, n_l))
        else:
            r_l = min(max(rho, math.ceil(r * n_l / n)), n_l)
            comp_seed = seed if comp == 0 else mix_seed(seed, comp)
            part = decompose(sub, r_l, p=p, q=q, seed=comp_seed)
            all_exact = False
        blocks.append((vertices, part))

    candidates = []  # (eigenvalue, component, column)
    for comp, (_, part) in enumerate(blocks):
        for col, lam in enumerate(part.eigenvalues):
            candidates.append((lam, comp, col))
    lams = np.array([c[0] for c in candidates])
    comps = np.array([c[1] for c in candidates])
    cols = np.array([c[2] for c in candidates])
    order = np.lexsort((cols, comps, -lams))
    keep = order[: min(r, len(candidates))]

    kept = keep.size
    U = np.zeros((n, kept))
    eigenvalues = np.empty(kept)
    for out_col, cand in enumerate(keep):
        comp = int(comps[cand])
        col = int(cols[cand])
        vertices, part = blocks[comp]
        U[vertices, out_col] = part.dense_u()[:, col]
        eigenvalues[out_col] = lams[cand]

    truncated = kept < len(candidates)
    if all_exact:
        variant = Variant.RANK_R if truncated else Variant.EXACT
    else:
        variant = Variant.APPROX
    return SpectralDecomposition(
        U=U,
        eigenvalues=eigenvalues,
        eta=row_norms(U),
        components=labeling,
        variant=variant,
        provenance=Provenance(r=r, p=p, q=q, seed=seed),
    )
