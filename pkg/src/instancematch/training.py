"""Few-shot contrastive training of the adapters on template embeddings only.

The trainer owns everything differentiable: an InfoNCE loss over cosine
similarities, exact backpropagation through either adapter, Adam, and a
central-finite-difference harness that verifies the analytic gradients.

Batching convention: for each anchor view (n, k) the positive is one
uniformly sampled other view (n, k' != k) of the same instance, and the
negatives are all in-batch embeddings of other instances. When the template
set fits in one batch (N*K <= batch_size) every epoch is a single batch over
the full set.

Adapted embeddings are recomputed from the raw inputs every step, so the
input template embeddings are never mutated. relu'(0) is defined as 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .adapter import (
    AdapterConfig,
    ClipAdapterConfig,
    GATE_MAX,
    MlpParams,
    PARAM_NAMES,
    WeightAdapterConfig,
    sigmoid,
)
from .embeddings import TemplateSet, ZERO_NORM_TOL
from .errors import DegenerateBatch, DimMismatch, ZeroVector


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for adapter training.

    learning_rate defaults to 1e-3 for the weight adapter and 1e-4 for the
    residual adapter when left as None. dropout_rate applies to the residual
    adapter only.
    """

    learning_rate: float | None = None
    batch_size: int = 1024
    epochs: int = 40
    temperature: float = 0.07
    dropout_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def resolved_lr(self, kind: str) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-3 if kind == "weight" else 1e-4


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators shaped like MlpParams."""

    m: MlpParams
    v: MlpParams
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, dim: int) -> "AdamState":
        return cls(m=MlpParams.zeros(dim), v=MlpParams.zeros(dim))


def adam_step(
    state: AdamState, params: MlpParams, grads: MlpParams, lr: float
) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    for name in PARAM_NAMES:
        g = getattr(grads, name)
        p = getattr(params, name)
        if g.shape != p.shape:
            raise DimMismatch(f"gradient shape mismatch on {name}")
        m = state.beta1 * getattr(state.m, name) + (1 - state.beta1) * g
        v = state.beta2 * getattr(state.v, name) + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        new_p[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return (
        MlpParams.from_dict(new_p),
        replace(state, m=MlpParams.from_dict(new_m), v=MlpParams.from_dict(new_v), t=t),
    )


def infonce_loss(
    anchors, candidates, positive_index, tau: float
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """InfoNCE over cosine similarities with analytic input gradients.

    anchors: (A, C); candidates: (A, M, C), one candidate set per anchor;
    positive_index: (A,) index of each anchor's positive among its M
    candidates. Returns (loss, (grad_anchors, grad_candidates)) where

        loss = mean_a -log( exp(cos(a, c+)/tau) / sum_j exp(cos(a, c_j)/tau) )

    and the gradients are exact derivatives through the cosine.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    positive_index = np.asarray(positive_index, dtype=np.int64)
    if anchors.ndim != 2 or candidates.ndim != 3:
        raise DimMismatch("anchors must be (A, C) and candidates (A, M, C)")
    num_anchors, dim = anchors.shape
    if candidates.shape[0] != num_anchors or candidates.shape[2] != dim:
        raise DimMismatch(
            f"candidates {candidates.shape} incompatible with anchors {anchors.shape}"
        )
    m = candidates.shape[1]
    if m < 2:
        raise DegenerateBatch(f"candidate sets of size {m} cannot form a contrast")
    if positive_index.shape != (num_anchors,):
        raise DimMismatch("positive_index must have one entry per anchor")
    if np.any(positive_index < 0) or np.any(positive_index >= m):
        raise ValueError("positive_index out of range")
    if tau <= 0:
        raise ValueError("temperature must be positive")

    a_norm = np.linalg.norm(anchors, axis=1)
    c_norm = np.linalg.norm(candidates, axis=2)
    if np.any(a_norm < ZERO_NORM_TOL):
        raise ZeroVector("anchor with (near-)zero norm")
    if np.any(c_norm < ZERO_NORM_TOL):
        raise ZeroVector("candidate with (near-)zero norm")
    a_hat = anchors / a_norm[:, None]
    c_hat = candidates / c_norm[:, :, None]

    cos = np.einsum("ac,amc->am", a_hat, c_hat)
    logits = cos / tau
    lse = _logsumexp(logits)
    rows = np.arange(num_anchors)
    loss = float(np.mean(lse - logits[rows, positive_index]))

    p = np.exp(logits - lse[:, None])
    gamma = p.copy()
    gamma[rows, positive_index] -= 1.0
    gamma /= tau * num_anchors

    grad_anchors = (
        np.einsum("am,amc->ac", gamma, c_hat)
        - np.sum(gamma * cos, axis=1)[:, None] * a_hat
    ) / a_norm[:, None]
    grad_candidates = (
        gamma[:, :, None] * (a_hat[:, None, :] - cos[:, :, None] * c_hat)
    ) / c_norm[:, :, None]
    return loss, (grad_anchors, grad_candidates)


def _logsumexp(logits: np.ndarray) -> np.ndarray:
    peak = logits.max(axis=-1)
    return peak + np.log(np.sum(np.exp(logits - peak[..., None]), axis=-1))


# ---------------------------------------------------------------------------
# Batched adapter forward/backward with cached activations.


def _adapter_forward(
    cfg: AdapterConfig,
    params: MlpParams,
    raw: np.ndarray,
    dropout_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """Adapt a (B, C) batch; the cache carries everything backward needs."""
    if cfg.kind == "weight":
        x = cfg.beta * raw
        h_pre = x @ params.w1.T + params.b1
        h = np.maximum(h_pre, 0.0)
        m_pre = h @ params.w2.T + params.b2
        gate = np.minimum(sigmoid(np.maximum(m_pre, 0.0)), GATE_MAX)
        out = gate * x
        cache = {"x": x, "h_pre": h_pre, "h": h, "m_pre": m_pre, "gate": gate}
        return out, cache
    x = raw
    h_pre = x @ params.w1.T + params.b1
    h = np.maximum(h_pre, 0.0)
    if dropout_mask is not None:
        h_used = h * dropout_mask
    else:
        h_used = h
    m_out = h_used @ params.w2.T + params.b2
    out = cfg.alpha * m_out + (1.0 - cfg.alpha) * x
    cache = {"x": x, "h_pre": h_pre, "h_used": h_used, "dropout_mask": dropout_mask}
    return out, cache


def _adapter_backward(
    cfg: AdapterConfig, params: MlpParams, cache: dict, d_out: np.ndarray
) -> MlpParams:
    """Exact parameter gradients given dLoss/dAdapted for the cached batch."""
    if cfg.kind == "weight":
        x, gate = cache["x"], cache["gate"]
        d_gate = d_out * x
        d_r = d_gate * gate * (1.0 - gate)
        d_m = d_r * (cache["m_pre"] > 0.0)
        db2 = d_m.sum(axis=0)
        dw2 = d_m.T @ cache["h"]
        d_h = d_m @ params.w2
        d_h_pre = d_h * (cache["h_pre"] > 0.0)
        db1 = d_h_pre.sum(axis=0)
        dw1 = d_h_pre.T @ x
        return MlpParams(dw1, db1, dw2, db2)
    d_m = cfg.alpha * d_out
    db2 = d_m.sum(axis=0)
    dw2 = d_m.T @ cache["h_used"]
    d_h = d_m @ params.w2
    if cache["dropout_mask"] is not None:
        d_h = d_h * cache["dropout_mask"]
    d_h_pre = d_h * (cache["h_pre"] > 0.0)
    db1 = d_h_pre.sum(axis=0)
    dw1 = d_h_pre.T @ cache["x"]
    return MlpParams(dw1, db1, dw2, db2)


# ---------------------------------------------------------------------------
# Contrastive batch construction and the shared-embedding InfoNCE gradient.


def sample_positive_pairs(
    labels: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Pick each anchor's positive: a uniformly random other view of its
    instance. Rows whose instance has a single in-batch view are skipped.
    """
    labels = np.asarray(labels)
    anchors, positives = [], []
    for i, lab in enumerate(labels):
        peers = np.nonzero(labels == lab)[0]
        peers = peers[peers != i]
        if peers.size == 0:
            continue
        anchors.append(i)
        positives.append(int(rng.choice(peers)))
    if not anchors:
        raise DegenerateBatch("no instance has two views in this batch")
    return np.asarray(anchors, dtype=np.int64), np.asarray(positives, dtype=np.int64)


def _contrastive_grad(
    adapted: np.ndarray,
    labels: np.ndarray,
    anchor_idx: np.ndarray,
    positive_idx: np.ndarray,
    tau: float,
) -> tuple[float, np.ndarray]:
    """Loss and dLoss/dAdapted with candidates drawn from the shared batch.

    Each anchor's candidate set is its sampled positive plus every in-batch
    embedding of a different instance; one embedding therefore appears in
    many candidate sets, and the gradient accumulates over all roles.
    """
    batch, _ = adapted.shape
    norms = np.linalg.norm(adapted, axis=1)
    if np.any(norms < ZERO_NORM_TOL):
        raise ZeroVector("adapted embedding with (near-)zero norm")
    unit = adapted / norms[:, None]
    cos = unit @ unit.T

    num_anchors = anchor_idx.size
    allowed = labels[anchor_idx][:, None] != labels[None, :]
    allowed[np.arange(num_anchors), positive_idx] = True
    if np.any(allowed.sum(axis=1) < 2):
        raise DegenerateBatch("an anchor has fewer than two candidates")

    logits = cos[anchor_idx] / tau
    logits[~allowed] = -np.inf
    lse = _logsumexp(logits)
    loss = float(np.mean(lse - logits[np.arange(num_anchors), positive_idx]))

    p = np.exp(logits - lse[:, None])
    p[~allowed] = 0.0
    gamma_rows = p
    gamma_rows[np.arange(num_anchors), positive_idx] -= 1.0
    gamma_rows /= tau * num_anchors

    gamma = np.zeros((batch, batch))
    np.add.at(gamma, anchor_idx, gamma_rows)

    # d cos(u, v)/du = (v_hat - cos * u_hat) / |u|, accumulated over every
    # (anchor, candidate) pair in which each embedding participates.
    weight = np.sum(gamma * cos, axis=1) + np.sum(gamma * cos, axis=0)
    d_adapted = ((gamma + gamma.T) @ unit - weight[:, None] * unit) / norms[:, None]
    return loss, d_adapted


def backprop_adapter(
    cfg: AdapterConfig,
    params: MlpParams,
    embeddings,
    labels,
    train_cfg: TrainConfig,
    *,
    pairing: tuple[np.ndarray, np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
    dropout_mask: np.ndarray | None = None,
) -> tuple[float, MlpParams]:
    """Loss and exact parameter gradients for one contrastive batch.

    ``embeddings`` is the (B, C) batch of raw template embeddings with one
    instance label per row. ``pairing`` fixes the anchor/positive choice
    (used by the finite-difference harness); otherwise it is sampled from
    ``rng``. Dropout is applied only when a mask is supplied.
    """
    raw = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if raw.ndim != 2 or labels.shape != (raw.shape[0],):
        raise DimMismatch("need (B, C) embeddings and (B,) labels")
    if np.unique(labels).size < 2:
        raise DegenerateBatch("a contrastive batch needs at least two instances")
    if pairing is None:
        if rng is None:
            rng = np.random.default_rng(train_cfg.seed)
        pairing = sample_positive_pairs(labels, rng)
    anchor_idx, positive_idx = pairing

    adapted, cache = _adapter_forward(cfg, params, raw, dropout_mask)
    loss, d_adapted = _contrastive_grad(
        adapted, labels, anchor_idx, positive_idx, train_cfg.temperature
    )
    return loss, _adapter_backward(cfg, params, cache, d_adapted)


def batch_loss(
    cfg: AdapterConfig,
    params: MlpParams,
    embeddings,
    labels,
    train_cfg: TrainConfig,
    pairing: tuple[np.ndarray, np.ndarray],
    dropout_mask: np.ndarray | None = None,
) -> float:
    """Loss only, at fixed pairing; the quantity finite differences probe."""
    raw = np.asarray(embeddings, dtype=np.float64)
    adapted, _ = _adapter_forward(cfg, params, raw, dropout_mask)
    loss, _ = _contrastive_grad(
        adapted, np.asarray(labels), pairing[0], pairing[1], train_cfg.temperature
    )
    return loss


def train_adapter(
    templates: TemplateSet, cfg: AdapterConfig, train_cfg: TrainConfig
) -> tuple[MlpParams, np.ndarray]:
    """Train an adapter on the template embeddings alone.

    Returns the trained parameters and the per-epoch loss history (length
    ``train_cfg.epochs``). Deterministic given the seed: initialization,
    batch order, positive sampling, and dropout all draw from one stream.
    """
    if templates.num_instances < 2 or templates.templates_per_instance < 2:
        raise DegenerateBatch("training needs N >= 2 instances and K >= 2 views")
    if templates.dim != cfg.dim:
        raise DimMismatch(
            f"template dim {templates.dim} != adapter dim {cfg.dim}"
        )
    n, k, dim = templates.embeddings.shape
    raw = templates.embeddings.reshape(n * k, dim)
    labels = np.repeat(np.arange(n), k)

    rng = np.random.default_rng(train_cfg.seed)
    params = MlpParams.init(dim, rng)
    state = AdamState.init(dim)
    lr = train_cfg.resolved_lr(cfg.kind)
    use_dropout = cfg.kind == "clip" and train_cfg.dropout_rate > 0.0
    keep = 1.0 - train_cfg.dropout_rate

    history = []
    total = raw.shape[0]
    for _ in range(train_cfg.epochs):
        if total <= train_cfg.batch_size:
            batches = [np.arange(total)]
        else:
            order = rng.permutation(total)
            batches = [
                order[i : i + train_cfg.batch_size]
                for i in range(0, total, train_cfg.batch_size)
            ]
        epoch_losses = []
        for idx in batches:
            batch_labels = labels[idx]
            if np.unique(batch_labels).size < 2:
                continue
            counts = np.bincount(batch_labels, minlength=n)
            if not np.any(counts[np.unique(batch_labels)] >= 2):
                continue
            dropout_mask = None
            if use_dropout:
                dropout_mask = (
                    rng.random((idx.size, params.hidden_dim)) < keep
                ) / keep
            loss, grads = backprop_adapter(
                cfg,
                params,
                raw[idx],
                batch_labels,
                train_cfg,
                rng=rng,
                dropout_mask=dropout_mask,
            )
            params, state = adam_step(state, params, grads, lr)
            epoch_losses.append(loss)
        if not epoch_losses:
            raise DegenerateBatch("every batch of this epoch was degenerate")
        history.append(float(np.mean(epoch_losses)))
    return params, np.asarray(history)


# ---------------------------------------------------------------------------
# Finite-difference verification.


def grad_check(
    kind: str,
    dim: int = 8,
    num_instances: int = 3,
    views: int = 2,
    h: float = 1e-5,
    seed: int = 0,
    params: MlpParams | None = None,
) -> float:
    """Max relative error of backprop vs central finite differences.

    Builds a random labeled batch, fixes the anchor/positive pairing, and
    compares every parameter's analytic gradient against
    (loss(p+h) - loss(p-h)) / 2h. Dropout is disabled. Biases are nudged
    off relu kinks first so the central differences stay two-sided; this is
    what makes the check meaningful at all-zero parameters too.
    """
    if dim > 32:
        raise ValueError("grad_check is meant for dim <= 32")
    if kind == "weight":
        cfg: AdapterConfig = WeightAdapterConfig(dim=dim)
    elif kind == "clip":
        cfg = ClipAdapterConfig(dim=dim)
    else:
        raise ValueError(f"unknown adapter kind: {kind!r}")

    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((num_instances * views, dim))
    labels = np.repeat(np.arange(num_instances), views)
    if params is None:
        params = MlpParams.init(dim, rng)
    params = _nudge_off_kinks(cfg, params, raw, rng, margin=100 * h)
    train_cfg = TrainConfig(seed=seed)
    pairing = sample_positive_pairs(labels, rng)

    _, analytic = backprop_adapter(
        cfg, params, raw, labels, train_cfg, pairing=pairing
    )

    worst = 0.0
    arrays = {name: np.array(arr) for name, arr in params.items()}
    for name in PARAM_NAMES:
        base = arrays[name]
        grad = getattr(analytic, name)
        for index in np.ndindex(base.shape):
            saved = base[index]
            base[index] = saved + h
            up = batch_loss(
                cfg, MlpParams.from_dict(arrays), raw, labels, train_cfg, pairing
            )
            base[index] = saved - h
            down = batch_loss(
                cfg, MlpParams.from_dict(arrays), raw, labels, train_cfg, pairing
            )
            base[index] = saved
            fd = (up - down) / (2 * h)
            err = abs(grad[index] - fd) / max(abs(fd), 1e-8)
            worst = max(worst, err)
    return worst


def _nudge_off_kinks(
    cfg: AdapterConfig,
    params: MlpParams,
    raw: np.ndarray,
    rng: np.random.Generator,
    margin: float,
    max_tries: int = 100,
) -> MlpParams:
    """Shift biases until no relu pre-activation sits within ``margin`` of 0."""
    for _ in range(max_tries):
        x = cfg.beta * raw if cfg.kind == "weight" else raw
        h_pre = x @ params.w1.T + params.b1
        kinky = np.any(np.abs(h_pre) < margin)
        if cfg.kind == "weight":
            m_pre = np.maximum(h_pre, 0.0) @ params.w2.T + params.b2
            kinky = kinky or np.any(np.abs(m_pre) < margin)
        if not kinky:
            return params
        params = MlpParams(
            params.w1,
            params.b1 + rng.uniform(-0.05, 0.05, params.b1.shape),
            params.w2,
            params.b2 + rng.uniform(-0.05, 0.05, params.b2.shape),
        )
    raise RuntimeError("could not move relu pre-activations off their kinks")


def smoothed(history: np.ndarray, window: int = 5) -> np.ndarray:
    """Trailing moving average used when eyeballing loss curves."""
    history = np.asarray(history, dtype=np.float64)
    if history.size == 0 or window <= 1:
        return history.copy()
    out = np.empty_like(history)
    csum = np.cumsum(history)
    for i in range(history.size):
        lo = max(0, i - window + 1)
        out[i] = (csum[i] - (csum[lo - 1] if lo > 0 else 0.0)) / (i - lo + 1)
    return out


def loss_history_csv(history: np.ndarray) -> str:
    """Render a loss history as ``epoch,loss`` CSV text."""
    lines = ["epoch,loss"]
    lines += [f"{i},{loss:.10g}" for i, loss in enumerate(np.asarray(history))]
    return "\n".join(lines) + "\n"
