"""Unit-norm descriptor collections.

A descriptor set holds ``n`` row vectors of dimension ``d``, one per dataset
region, together with stable integer ids and the region-to-image map used for
pooling region scores into image scores. Global descriptors are the special
case where the map is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class DescriptorSet:
    """Immutable set of unit-norm descriptor vectors.

    Attributes:
        vectors: (n, d) float64 array, every row has Euclidean norm 1
            within ``NORM_TOL``.
        ids: (n,) unique integer identifiers.
        region_to_image: (n,) integer map from region index to owning image.
    """

    vectors: np.ndarray
    ids: np.ndarray = field(default=None)
    region_to_image: np.ndarray = field(default=None)

    def __post_init__(self):
        vectors = np.ascontiguousarray(np.asarray(self.vectors, dtype=np.float64))
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {vectors.shape}")
        n, d = vectors.shape
        if n < 1 or d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            worst = float(np.abs(norms - 1.0).max())
            raise ValueError(
                f"vectors must be unit-norm within {NORM_TOL:g} "
                f"(worst deviation {worst:.3g}); pass normalize=True to from_vectors"
            )
        ids = self.ids
        if ids is None:
            ids = np.arange(n, dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
            if ids.shape != (n,):
                raise ValueError("ids must be a length-n vector")
            if np.unique(ids).size != n:
                raise ValueError("ids must be unique")
        r2i = self.region_to_image
        if r2i is None:
            r2i = np.arange(n, dtype=np.int64)
        else:
            r2i = np.asarray(r2i, dtype=np.int64)
            if r2i.shape != (n,):
                raise ValueError("region_to_image must be a length-n vector")
            if r2i.min() < 0:
                raise ValueError("region_to_image entries must be nonnegative")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "region_to_image", r2i)

    @classmethod
    def from_vectors(cls, vectors, ids=None, region_to_image=None, normalize=False):
        """Build a descriptor set, optionally renormalizing rows first."""
        vectors = np.asarray(vectors, dtype=np.float64)
        if normalize:
            if vectors.ndim != 2:
                raise ValueError("vectors must be 2-D")
            norms = np.linalg.norm(vectors, axis=1, keepdims=True)
            if np.any(norms == 0.0):
                raise ValueError("cannot normalize zero vectors")
            vectors = vectors / norms
        return cls(vectors, ids, region_to_image)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_images(self) -> int:
        return int(self.region_to_image.max()) + 1

    @property
    def is_global(self) -> bool:
        """True when every image owns exactly one region (identity map)."""
        return bool(np.array_equal(self.region_to_image, np.arange(self.n)))
