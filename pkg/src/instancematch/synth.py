"""Synthetic desk-scale scenes for exercising the full pipeline.

Instance prototypes live on the unit sphere. Views model a multi-view
template shoot: each instance owns a low-rank view subspace, and a view is
the prototype plus a length-sigma perturbation drawn inside that subspace,
so a handful of templates actually covers the view distribution.

A configurable fraction of instances comes in confusable near-duplicate
pairs: the partner prototype keeps cosine >= 0.95 with its mate, differs
along a sparse set of channels (a localized attribute), and shares its
mate's view subspace, the same poses of two almost identical objects.
That makes the confusion systematic rather than noise-driven, which is the
regime channel reweighting can actually fix.

Views double as the foreground mean of synthetic patch grids (per-patch
jitter is centered, so pooling a grid recovers its view exactly).
Distractor proposals are sampled orthogonal-ish to every prototype. Boxes
and masks are axis-aligned rectangles laid out on a grid inside a square
image, which is all mask IoU needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import PatchGrid, TemplateSet
from .evaluation import GroundTruth, GroundTruthSet

CONFUSABLE_COS_RANGE = (0.995, 0.997)
VIEW_RANK = 3


@dataclass(frozen=True)
class SynthConfig:
    num_instances: int
    templates_per_instance: int
    dim: int
    sigma: float = 0.1
    distractors: int = 0
    confusable_fraction: float = 0.0
    seed: int = 0
    grid_size: int = 4
    image_size: int = 64

    def __post_init__(self):
        if self.num_instances < 2:
            raise ValueError("need at least two instances")
        if self.templates_per_instance < 1:
            raise ValueError("need at least one template per instance")
        if self.dim < 4 or self.dim % 4 != 0:
            raise ValueError("dim must be a positive multiple of 4")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.distractors < 0:
            raise ValueError("distractor count must be nonnegative")
        if not 0.0 <= self.confusable_fraction <= 1.0:
            raise ValueError("confusable_fraction must lie in [0, 1]")
        if self.grid_size < 1:
            raise ValueError("grid_size must be positive")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")


@dataclass(frozen=True)
class SynthScene:
    """One generated image worth of data plus the templates that go with it."""

    templates: TemplateSet
    template_grids: list  # N lists of K PatchGrid
    prototypes: np.ndarray  # (N, C) unit vectors
    view_bases: list  # N arrays (VIEW_RANK, C), pairs share theirs
    query_embeddings: np.ndarray  # (Q, C)
    query_grids: list  # Q PatchGrid
    boxes: np.ndarray  # (Q, 4) pixel boxes
    masks: np.ndarray  # (Q, S, S) uint8 rasters
    true_ids: np.ndarray  # (Q,) instance id, -1 for distractors
    image_id: str
    ground_truth: GroundTruthSet


def unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def make_view(
    prototype: np.ndarray,
    sigma: float,
    rng: np.random.Generator,
    basis: np.ndarray | None = None,
) -> np.ndarray:
    """One noisy view: prototype plus a length-sigma perturbation.

    With a basis the perturbation direction is drawn inside that view
    subspace (Gaussian coefficients, normalized); without one it is a
    uniform direction on the full sphere.
    """
    prototype = np.asarray(prototype, dtype=np.float64)
    if sigma == 0.0:
        return prototype.copy()
    if basis is None:
        direction = unit_vector(rng, prototype.shape[0])
    else:
        direction = rng.standard_normal(basis.shape[0]) @ basis
        direction /= np.linalg.norm(direction)
    return prototype + sigma * direction


def sample_query_view(
    scene: SynthScene, instance: int, rng: np.random.Generator, sigma: float
) -> np.ndarray:
    """A fresh query view of one of the scene's instances."""
    return make_view(
        scene.prototypes[instance], sigma, rng, scene.view_bases[instance]
    )


def _difference_support(dim: int) -> int:
    return max(2, min(16, dim // 4))


def sample_instances(
    cfg: SynthConfig, rng: np.random.Generator
) -> tuple[np.ndarray, list]:
    """Prototypes and per-instance view bases.

    floor(N * fraction / 2) confusable pairs are laid out first: partner
    prototypes differ along a sparse channel subset and share a view basis.
    """
    n, dim = cfg.num_instances, cfg.dim
    protos = np.zeros((n, dim))
    bases: list = [None] * n

    def fresh_basis():
        return np.stack([unit_vector(rng, dim) for _ in range(min(VIEW_RANK, dim))])

    pairs = int(cfg.confusable_fraction * n) // 2
    lo, hi = CONFUSABLE_COS_RANGE
    i = 0
    for _ in range(pairs):
        u = unit_vector(rng, dim)
        channels = rng.choice(dim, size=_difference_support(dim), replace=False)
        w = np.zeros(dim)
        w[channels] = rng.standard_normal(channels.size)
        w -= (w @ u) * u
        w /= np.linalg.norm(w)
        c = rng.uniform(lo, hi)
        protos[i] = u
        protos[i + 1] = c * u + np.sqrt(1.0 - c * c) * w
        shared = fresh_basis()
        bases[i] = shared
        bases[i + 1] = shared
        i += 2
    while i < n:
        protos[i] = unit_vector(rng, dim)
        bases[i] = fresh_basis()
        i += 1
    return protos, bases


def grid_for_view(
    view: np.ndarray, cfg: SynthConfig, rng: np.random.Generator
) -> PatchGrid:
    """A patch grid whose foreground patches average exactly to ``view``."""
    side = cfg.grid_size
    fg = rng.random((side, side)) < 0.6
    if not fg.any():
        fg[rng.integers(side), rng.integers(side)] = True
    count = int(fg.sum())
    jitter_scale = 0.01 + 0.1 * cfg.sigma
    jitter = jitter_scale * rng.standard_normal((count, cfg.dim))
    jitter -= jitter.mean(axis=0)
    patches = np.empty((side, side, cfg.dim))
    bg_count = side * side - count
    if bg_count:
        bg = rng.standard_normal((bg_count, cfg.dim))
        patches[~fg] = bg / np.linalg.norm(bg, axis=1)[:, None]
    patches[fg] = view + jitter
    return PatchGrid(patches, fg)


def _distractor_direction(
    prototypes: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    dim = prototypes.shape[1]
    v = rng.standard_normal(dim)
    if prototypes.shape[0] < dim:
        # Project out the prototype span so distractors score near zero.
        q, _ = np.linalg.qr(prototypes.T)
        v -= q @ (q.T @ v)
    norm = np.linalg.norm(v)
    if norm < 1e-9:
        return unit_vector(rng, dim)
    return v / norm


def _layout_boxes(count: int, image_size: int) -> np.ndarray:
    side = int(np.ceil(np.sqrt(count)))
    cell = image_size // side
    if cell < 4:
        raise ValueError(f"{count} proposals do not fit an image of {image_size} px")
    margin = max(1, cell // 8)
    boxes = np.zeros((count, 4))
    for i in range(count):
        r, c = divmod(i, side)
        boxes[i] = (
            c * cell + margin,
            r * cell + margin,
            (c + 1) * cell - margin,
            (r + 1) * cell - margin,
        )
    return boxes


def gen_synth(cfg: SynthConfig) -> SynthScene:
    """Generate one deterministic scene: templates, queries, ground truth."""
    rng = np.random.default_rng(cfg.seed)
    protos, bases = sample_instances(cfg, rng)

    n, k = cfg.num_instances, cfg.templates_per_instance
    template_embeddings = np.zeros((n, k, cfg.dim))
    template_grids = []
    for ni in range(n):
        row = []
        for ki in range(k):
            view = make_view(protos[ni], cfg.sigma, rng, bases[ni])
            template_embeddings[ni, ki] = view
            row.append(grid_for_view(view, cfg, rng))
        template_grids.append(row)
    templates = TemplateSet(template_embeddings, range(n))

    q_count = n + cfg.distractors
    query_embeddings = np.zeros((q_count, cfg.dim))
    query_grids = []
    true_ids = np.full(q_count, -1, dtype=np.int64)
    for ni in range(n):
        view = make_view(protos[ni], cfg.sigma, rng, bases[ni])
        query_embeddings[ni] = view
        query_grids.append(grid_for_view(view, cfg, rng))
        true_ids[ni] = ni
    for d in range(cfg.distractors):
        base = _distractor_direction(protos, rng)
        view = make_view(base, cfg.sigma, rng)
        query_embeddings[n + d] = view
        query_grids.append(grid_for_view(view, cfg, rng))

    order = rng.permutation(q_count)
    query_embeddings = query_embeddings[order]
    query_grids = [query_grids[i] for i in order]
    true_ids = true_ids[order]

    boxes = _layout_boxes(q_count, cfg.image_size)
    masks = np.zeros((q_count, cfg.image_size, cfg.image_size), dtype=np.uint8)
    for i, (x0, y0, x1, y1) in enumerate(boxes):
        masks[i, int(y0) : int(y1), int(x0) : int(x1)] = 1

    image_id = f"scene-{cfg.seed}"
    annotations = [
        GroundTruth(int(true_ids[i]), tuple(boxes[i]), masks[i])
        for i in range(q_count)
        if true_ids[i] >= 0
    ]
    gt = GroundTruthSet({image_id: annotations})

    return SynthScene(
        templates=templates,
        template_grids=template_grids,
        prototypes=protos,
        view_bases=bases,
        query_embeddings=query_embeddings,
        query_grids=query_grids,
        boxes=boxes,
        masks=masks,
        true_ids=true_ids,
        image_id=image_id,
        ground_truth=gt,
    )
