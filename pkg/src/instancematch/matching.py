"""Proposal-to-instance matching over cosine score tensors.

Q proposal embeddings are scored against N*K template embeddings, the K
per-instance scores are aggregated (max, or mean of the top k), an optional
appearance bonus is averaged in, and instance IDs are assigned either
one-to-one via stable matching (when instances are unique in the image) or
independently via per-row argmax.

Score ties everywhere break toward the lowest instance index, then the
lowest proposal index, so assignment is deterministic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import (
    PatchGrid,
    TemplateSet,
    ensure_finite,
    normalize_rows,
)
from .errors import DimMismatch, EmptyForeground, InvalidBox, ZeroVector

SCORE_SLACK = 1e-9  # tolerated float drift outside [-1, 1]


@dataclass(frozen=True)
class ScoreTensor:
    """Q x N x K template scores plus their Q x N instance-score reduction.

    ``instance_scores`` is all-zero until ``aggregate`` fills it.
    """

    template_scores: np.ndarray
    instance_scores: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.template_scores, dtype=np.float64)
        inst = np.asarray(self.instance_scores, dtype=np.float64)
        if ts.ndim != 3 or min(ts.shape) < 1:
            raise DimMismatch(f"template scores must be (Q, N, K), got {ts.shape}")
        if inst.shape != ts.shape[:2]:
            raise DimMismatch(
                f"instance scores {inst.shape} do not match template scores "
                f"{ts.shape[:2]}"
            )
        ensure_finite(ts, "template scores")
        ensure_finite(inst, "instance scores")
        if ts.min() < -1.0 - SCORE_SLACK or ts.max() > 1.0 + SCORE_SLACK:
            raise ValueError("template scores outside [-1, 1]")
        object.__setattr__(self, "template_scores", ts)
        object.__setattr__(self, "instance_scores", inst)

    @property
    def num_proposals(self) -> int:
        return self.template_scores.shape[0]

    @property
    def num_instances(self) -> int:
        return self.template_scores.shape[1]

    @property
    def templates_per_instance(self) -> int:
        return self.template_scores.shape[2]


@dataclass(frozen=True)
class MatcherConfig:
    aggregation: str = "max"  # "max" | "avg_k"
    avg_k: int = 5  # top-k size for avg_k, clamped to K at use
    assignment: str = "stable"  # "stable" | "argmax"
    delta: float = 0.0  # confidence threshold, inclusive
    use_appearance_bonus: bool = False

    def __post_init__(self):
        if self.aggregation not in ("max", "avg_k"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.assignment not in ("stable", "argmax"):
            raise ValueError(f"unknown assignment {self.assignment!r}")
        if self.aggregation == "avg_k" and self.avg_k < 1:
            raise ValueError("avg_k must be at least 1")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")


@dataclass(frozen=True)
class LabeledProposal:
    """Final per-proposal output: box, mask, assigned instance id, score.

    ``box`` is (x_min, y_min, x_max, y_max) in pixels; ``mask`` is an
    optional full-image binary raster whose support must stay inside the
    box extent (1 px slack); ``instance_id`` is None for proposals the
    assignment left unmatched.
    """

    box: tuple[float, float, float, float]
    mask: np.ndarray | None
    instance_id: int | None
    score: float

    def __post_init__(self):
        box = tuple(float(v) for v in self.box)
        validate_box(box)
        if self.mask is not None:
            mask = np.asarray(self.mask).astype(bool)
            ys, xs = np.nonzero(mask)
            if ys.size:
                x_min, y_min, x_max, y_max = box
                if (
                    xs.min() < np.floor(x_min) - 1
                    or xs.max() > np.ceil(x_max)
                    or ys.min() < np.floor(y_min) - 1
                    or ys.max() > np.ceil(y_max)
                ):
                    raise InvalidBox("mask support extends outside the box extent")
            object.__setattr__(self, "mask", mask)
        if not np.isfinite(self.score):
            raise ValueError("proposal score must be finite")
        object.__setattr__(self, "box", box)
        if self.instance_id is not None:
            object.__setattr__(self, "instance_id", int(self.instance_id))


def validate_box(box) -> tuple[float, float, float, float]:
    x_min, y_min, x_max, y_max = (float(v) for v in box)
    if not all(np.isfinite(v) for v in (x_min, y_min, x_max, y_max)):
        raise InvalidBox(f"box has non-finite coordinates: {box}")
    if not (x_min < x_max and y_min < y_max):
        raise InvalidBox(f"box must satisfy x_min < x_max and y_min < y_max: {box}")
    return x_min, y_min, x_max, y_max


def score_templates(proposals, templates: TemplateSet) -> ScoreTensor:
    """Cosine-score Q proposal embeddings against every template.

    template_scores[q, n, k] = cos(proposal_q, template_{n,k}); the
    instance_scores plane is left zeroed for ``aggregate`` to fill.
    """
    props = np.asarray(proposals, dtype=np.float64)
    if props.ndim != 2:
        raise DimMismatch(f"proposal embeddings must be (Q, C), got {props.shape}")
    if props.shape[1] != templates.dim:
        raise DimMismatch(
            f"proposal dim {props.shape[1]} != template dim {templates.dim}"
        )
    n, k, c = templates.embeddings.shape
    try:
        p_hat = normalize_rows(props, "proposal")
    except ZeroVector as exc:
        raise ZeroVector(f"proposal {exc.index[0]} has zero norm", exc.index) from None
    flat = templates.embeddings.reshape(n * k, c)
    norms = np.linalg.norm(flat, axis=1)
    bad = np.nonzero(norms < 1e-12)[0]
    if bad.size:
        idx = (int(bad[0]) // k, int(bad[0]) % k)
        raise ZeroVector(f"template {idx} has zero norm", index=idx)
    t_hat = flat / norms[:, None]
    scores = np.clip(p_hat @ t_hat.T, -1.0, 1.0).reshape(props.shape[0], n, k)
    return ScoreTensor(scores, np.zeros((props.shape[0], n)))


def aggregate(scores: ScoreTensor, cfg: MatcherConfig) -> ScoreTensor:
    """Reduce the K template scores per (proposal, instance) to one score."""
    ts = scores.template_scores
    if cfg.aggregation == "max":
        inst = ts.max(axis=2)
    else:
        k = min(cfg.avg_k, scores.templates_per_instance)
        top = np.sort(ts, axis=2)[:, :, ts.shape[2] - k :]
        inst = top.mean(axis=2)
    return ScoreTensor(ts, inst)


def appearance_score(proposal_grid: PatchGrid, template_grid: PatchGrid) -> float:
    """Mean over proposal foreground patches of their best template-patch
    cosine: a local-feature similarity between a proposal and one template.
    """
    p = proposal_grid.foreground_patches()
    t = template_grid.foreground_patches()
    if p.shape[0] == 0:
        raise EmptyForeground("proposal grid has no foreground patch")
    if t.shape[0] == 0:
        raise EmptyForeground("template grid has no foreground patch")
    if p.shape[1] != t.shape[1]:
        raise DimMismatch(
            f"patch dims differ: proposal {p.shape[1]} vs template {t.shape[1]}"
        )
    p_hat = normalize_rows(p, "proposal patch")
    t_hat = normalize_rows(t, "template patch")
    best = (p_hat @ t_hat.T).max(axis=1)
    return float(np.clip(best.mean(), -1.0, 1.0))


def appearance_matrix(
    proposal_grids: Sequence[PatchGrid],
    template_grids: Sequence[Sequence[PatchGrid]],
    scores: ScoreTensor,
) -> np.ndarray:
    """Per-(proposal, instance) appearance scores against the best template.

    The best template of instance n for proposal q is the k maximizing
    template_scores[q, n, k]. Raw patch embeddings are compared; adapter
    refinement never touches patch grids.
    """
    q_count, n_count = scores.num_proposals, scores.num_instances
    if len(proposal_grids) != q_count or len(template_grids) != n_count:
        raise DimMismatch("grid counts do not match the score tensor")
    best_k = scores.template_scores.argmax(axis=2)
    out = np.zeros((q_count, n_count))
    for q in range(q_count):
        for n in range(n_count):
            out[q, n] = appearance_score(
                proposal_grids[q], template_grids[n][best_k[q, n]]
            )
    return out


def apply_bonus(scores: ScoreTensor, s_appe: np.ndarray) -> ScoreTensor:
    """Average the appearance scores into the instance scores."""
    s_appe = np.asarray(s_appe, dtype=np.float64)
    if s_appe.shape != scores.instance_scores.shape:
        raise DimMismatch(
            f"appearance scores {s_appe.shape} do not match instance scores "
            f"{scores.instance_scores.shape}"
        )
    return ScoreTensor(
        scores.template_scores, (scores.instance_scores + s_appe) / 2.0
    )


def assign_argmax(instance_scores) -> list[tuple[int, float]]:
    """Label each proposal with its best-scoring instance (ties: lowest
    index); several proposals may share an instance.
    """
    scores = _as_score_matrix(instance_scores)
    picks = scores.argmax(axis=1)
    return [(int(n), float(scores[q, n])) for q, n in enumerate(picks)]


def assign_stable(instance_scores) -> list[tuple[int | None, float]]:
    """One-to-one proposal/instance assignment with no blocking pair.

    Proposal-proposing deferred acceptance where both sides rank by the
    same score matrix (descending). With Q > N the surplus proposals end
    unmatched (id None, score 0); with Q < N some instances stay unused.
    """
    scores = _as_score_matrix(instance_scores)
    q_count, n_count = scores.shape

    # Preference orders under (score desc, index asc); ranks for the
    # instance side so acceptance tests are O(1).
    proposal_prefs = np.argsort(-scores, axis=1, kind="stable")
    instance_rank = np.empty((n_count, q_count), dtype=np.int64)
    for n in range(n_count):
        order = np.argsort(-scores[:, n], kind="stable")
        instance_rank[n, order] = np.arange(q_count)

    holder = [-1] * n_count
    next_choice = [0] * q_count
    free = deque(range(q_count))
    while free:
        q = free.popleft()
        if next_choice[q] == n_count:
            continue  # exhausted every instance; permanently unmatched
        n = int(proposal_prefs[q, next_choice[q]])
        next_choice[q] += 1
        if holder[n] == -1:
            holder[n] = q
        elif instance_rank[n, q] < instance_rank[n, holder[n]]:
            free.append(holder[n])
            holder[n] = q
        else:
            free.append(q)

    result: list[tuple[int | None, float]] = [(None, 0.0)] * q_count
    for n, q in enumerate(holder):
        if q != -1:
            result[q] = (n, float(scores[q, n]))
    return result


def threshold_filter(
    proposals: Sequence[LabeledProposal], delta: float
) -> list[LabeledProposal]:
    """Keep labeled proposals whose confidence clears delta (inclusive)."""
    return [
        p for p in proposals if p.instance_id is not None and p.score >= delta
    ]


def _as_score_matrix(instance_scores) -> np.ndarray:
    scores = np.asarray(instance_scores, dtype=np.float64)
    if scores.ndim != 2 or min(scores.shape) < 1:
        raise DimMismatch(f"instance scores must be (Q, N), got {scores.shape}")
    ensure_finite(scores, "instance scores")
    return scores
