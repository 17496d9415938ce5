"""Core embedding types, foreground feature averaging, and cosine similarity.

An instance embedding is a plain 1-D float64 numpy array of length C.
Embeddings are deliberately NOT L2-normalized at creation: the adapters
consume raw-scale features (their beta scaling would be meaningless on
pre-normalized inputs), and normalization happens implicitly inside
cosine_similarity.

All arithmetic runs in float64 even when files store float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimMismatch, EmptyForeground, NonFiniteError, ZeroVector

# Norms below this are treated as zero vectors; well below any realistic
# float32 feature magnitude.
ZERO_NORM_TOL = 1e-12


def ensure_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{what} contains NaN or Inf")


def as_embedding(values) -> np.ndarray:
    """Validate and convert ``values`` to a float64 embedding vector."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise DimMismatch(f"embedding must be a 1-D vector, got shape {arr.shape}")
    ensure_finite(arr, "embedding")
    return arr


@dataclass(frozen=True)
class PatchGrid:
    """A height x width grid of patch embeddings plus a foreground mask.

    ``patches`` has shape (height, width, dim); ``foreground`` is a boolean
    array of shape (height, width). Arrays are copied and frozen on
    construction so grids can be shared across threads.
    """

    patches: np.ndarray
    foreground: np.ndarray

    def __post_init__(self):
        patches = np.array(self.patches, dtype=np.float64, copy=True)
        foreground = np.array(self.foreground, dtype=bool, copy=True)
        if patches.ndim != 3 or min(patches.shape) < 1:
            raise DimMismatch(
                f"patches must have shape (H, W, C), got {patches.shape}"
            )
        if foreground.shape != patches.shape[:2]:
            raise DimMismatch(
                f"foreground mask {foreground.shape} does not match grid "
                f"{patches.shape[:2]}"
            )
        ensure_finite(patches, "patch grid")
        patches.flags.writeable = False
        foreground.flags.writeable = False
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "foreground", foreground)

    @property
    def height(self) -> int:
        return self.patches.shape[0]

    @property
    def width(self) -> int:
        return self.patches.shape[1]

    @property
    def dim(self) -> int:
        return self.patches.shape[2]

    def foreground_patches(self) -> np.ndarray:
        """Return the foreground patch embeddings as an (M, dim) array."""
        return self.patches[self.foreground]


@dataclass(frozen=True)
class TemplateSet:
    """Embeddings for N instances with K template views each.

    ``embeddings`` has shape (N, K, C); ``instance_ids`` holds N unique
    integer labels, row-aligned with the first axis.
    """

    embeddings: np.ndarray
    instance_ids: tuple = field(default=None)

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64, copy=True)
        if emb.ndim != 3 or min(emb.shape) < 1:
            raise DimMismatch(
                f"template embeddings must have shape (N, K, C), got {emb.shape}"
            )
        ensure_finite(emb, "template embeddings")
        ids = self.instance_ids
        if ids is None:
            ids = tuple(range(emb.shape[0]))
        else:
            ids = tuple(int(i) for i in ids)
        if len(ids) != emb.shape[0]:
            raise DimMismatch(
                f"{len(ids)} instance ids for {emb.shape[0]} instances"
            )
        if len(set(ids)) != len(ids):
            raise ValueError("instance_ids must be unique")
        emb.flags.writeable = False
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "instance_ids", ids)

    @property
    def num_instances(self) -> int:
        return self.embeddings.shape[0]

    @property
    def templates_per_instance(self) -> int:
        return self.embeddings.shape[1]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[2]


def ffa_pool(grid: PatchGrid) -> np.ndarray:
    """Average the foreground patch embeddings of ``grid`` into one vector.

    Raises EmptyForeground when no patch is marked foreground, which signals
    a degenerate mask from upstream.
    """
    fg = grid.foreground_patches()
    if fg.shape[0] == 0:
        raise EmptyForeground("patch grid has no foreground patch")
    return fg.mean(axis=0)


def build_template_set(
    grids: Sequence[Sequence[PatchGrid]], instance_ids: Sequence[int] | None = None
) -> TemplateSet:
    """Pool an N x K collection of patch grids into a TemplateSet.

    Entry (n, k) of the result is ffa_pool(grids[n][k]). EmptyForeground is
    re-raised with the offending (n, k) index attached.
    """
    if len(grids) < 1 or any(len(row) < 1 for row in grids):
        raise DimMismatch("need at least one instance with one template grid")
    views = len(grids[0])
    if any(len(row) != views for row in grids):
        raise DimMismatch("every instance needs the same number of template grids")
    pooled = []
    for n, row in enumerate(grids):
        pooled_row = []
        for k, grid in enumerate(row):
            try:
                pooled_row.append(ffa_pool(grid))
            except EmptyForeground:
                raise EmptyForeground(
                    f"template grid ({n}, {k}) has no foreground patch",
                    index=(n, k),
                ) from None
        pooled.append(pooled_row)
    return TemplateSet(np.asarray(pooled), instance_ids)


def cosine_similarity(q, k) -> float:
    """Cosine similarity q.k / (|q| |k|), clamped to [-1, 1].

    Raises ZeroVector when either norm falls below ZERO_NORM_TOL, which
    signals an all-zero embedding upstream.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != k.shape or q.ndim != 1:
        raise DimMismatch(f"cosine operands differ in shape: {q.shape} vs {k.shape}")
    nq = float(np.linalg.norm(q))
    nk = float(np.linalg.norm(k))
    if nq < ZERO_NORM_TOL:
        raise ZeroVector("first argument has (near-)zero norm")
    if nk < ZERO_NORM_TOL:
        raise ZeroVector("second argument has (near-)zero norm")
    return float(np.clip(np.dot(q, k) / (nq * nk), -1.0, 1.0))


def normalize_rows(matrix: np.ndarray, what: str = "embedding") -> np.ndarray:
    """Row-normalize a 2-D array, raising ZeroVector with the row index."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=-1)
    bad = np.nonzero(norms < ZERO_NORM_TOL)[0]
    if bad.size:
        raise ZeroVector(
            f"{what} {int(bad[0])} has (near-)zero norm", index=(int(bad[0]),)
        )
    return matrix / norms[:, None]
