"""Embedding adapters: a gating "weight" adapter and a residual adapter.

Both share a two-layer bottleneck MLP that maps C -> C/4 -> C with a ReLU
on the hidden layer. The weight adapter turns the MLP output into
per-channel gates,

    w   = sigmoid(relu(MLP(beta * f)))
    f_w = w * (beta * f)

so every gate lies in [0.5, 1): relu keeps the sigmoid input nonnegative,
which keeps each adapted embedding close to its original value. The
residual ("clip") adapter instead mixes the MLP output back into the input,

    f_c = alpha * MLP(f) + (1 - alpha) * f

with no activation on the MLP output. Dropout (training only, handled by
the trainer) sits after the hidden ReLU of the residual adapter.

Forward passes are pure given frozen params and accept a single vector
(C,) or a batch (B, C).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import ZERO_NORM_TOL, ensure_finite
from .errors import DimMismatch, ZeroVector

PARAM_NAMES = ("w1", "b1", "w2", "b2")

# sigmoid(x) rounds to exactly 1.0 in float64 once x > ~36.7; the gate
# contract is [0.5, 1), so saturated gates pin to the largest double < 1.
GATE_MAX = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class MlpParams:
    """Parameters of the C -> C/4 -> C bottleneck MLP.

    Shapes: w1 (C/4, C), b1 (C/4,), w2 (C, C/4), b2 (C,). C must be
    divisible by 4.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=np.float64)
        b1 = np.asarray(self.b1, dtype=np.float64)
        w2 = np.asarray(self.w2, dtype=np.float64)
        b2 = np.asarray(self.b2, dtype=np.float64)
        if w1.ndim != 2:
            raise DimMismatch(f"w1 must be 2-D, got shape {w1.shape}")
        hidden, dim = w1.shape
        if dim % 4 != 0 or hidden != dim // 4:
            raise DimMismatch(
                f"w1 shape {w1.shape} is not (C/4, C) with C divisible by 4"
            )
        if b1.shape != (hidden,) or w2.shape != (dim, hidden) or b2.shape != (dim,):
            raise DimMismatch(
                f"inconsistent MLP shapes: w1 {w1.shape}, b1 {b1.shape}, "
                f"w2 {w2.shape}, b2 {b2.shape}"
            )
        for name, arr in zip(PARAM_NAMES, (w1, b1, w2, b2)):
            ensure_finite(arr, f"MLP parameter {name}")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "b2", b2)

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    def items(self):
        return [(name, getattr(self, name)) for name in PARAM_NAMES]

    @classmethod
    def from_dict(cls, arrays) -> "MlpParams":
        return cls(*(arrays[name] for name in PARAM_NAMES))

    @classmethod
    def zeros(cls, dim: int) -> "MlpParams":
        if dim % 4 != 0:
            raise DimMismatch(f"embedding dim {dim} is not divisible by 4")
        hidden = dim // 4
        return cls(
            np.zeros((hidden, dim)),
            np.zeros(hidden),
            np.zeros((dim, hidden)),
            np.zeros(dim),
        )

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "MlpParams":
        """Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] weights, zero biases.

        Zero biases preserve argmax neutrality of the weight adapter at
        initialization.
        """
        if dim % 4 != 0:
            raise DimMismatch(f"embedding dim {dim} is not divisible by 4")
        hidden = dim // 4
        s1 = 1.0 / np.sqrt(dim)
        s2 = 1.0 / np.sqrt(hidden)
        return cls(
            rng.uniform(-s1, s1, size=(hidden, dim)),
            np.zeros(hidden),
            rng.uniform(-s2, s2, size=(dim, hidden)),
            np.zeros(dim),
        )


@dataclass(frozen=True)
class WeightAdapterConfig:
    dim: int
    beta: float = 10.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    @property
    def kind(self) -> str:
        return "weight"


@dataclass(frozen=True)
class ClipAdapterConfig:
    dim: int
    alpha: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def kind(self) -> str:
        return "clip"


AdapterConfig = WeightAdapterConfig | ClipAdapterConfig


def _check_dim(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.dim:
        raise DimMismatch(
            f"input shape {x.shape} does not match adapter dim {params.dim}"
        )
    return x


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Run the bottleneck MLP, returning (hidden, out).

    hidden = relu(w1 x + b1), out = w2 hidden + b2. Both are returned so
    the trainer can cache activations. Accepts (C,) or (B, C) input.
    """
    x = _check_dim(params, x)
    hidden = np.maximum(x @ params.w1.T + params.b1, 0.0)
    out = hidden @ params.w2.T + params.b2
    return hidden, out


def weight_adapter_forward(
    cfg: WeightAdapterConfig, params: MlpParams, f
) -> tuple[np.ndarray, np.ndarray]:
    """Gate a raw embedding: returns (w, f_w) with f_w = w * beta * f."""
    f = _check_dim(params, f)
    if params.dim != cfg.dim:
        raise DimMismatch(f"params dim {params.dim} != config dim {cfg.dim}")
    scaled = cfg.beta * f
    _, out = mlp_forward(params, scaled)
    w = np.minimum(sigmoid(np.maximum(out, 0.0)), GATE_MAX)
    return w, w * scaled


def clip_adapter_forward(cfg: ClipAdapterConfig, params: MlpParams, f) -> np.ndarray:
    """Residual-mix an embedding: alpha * MLP(f) + (1 - alpha) * f."""
    f = _check_dim(params, f)
    if params.dim != cfg.dim:
        raise DimMismatch(f"params dim {params.dim} != config dim {cfg.dim}")
    _, out = mlp_forward(params, f)
    return cfg.alpha * out + (1.0 - cfg.alpha) * f


def refine_embeddings(cfg: AdapterConfig, params: MlpParams, embeddings) -> np.ndarray:
    """Apply the configured adapter to one embedding or a batch of them."""
    if cfg.kind == "weight":
        return weight_adapter_forward(cfg, params, embeddings)[1]
    return clip_adapter_forward(cfg, params, embeddings)


def weighted_cosine(q, k, w1, w2, beta: float) -> float:
    """Cosine similarity of the gated embeddings w1*(beta q) and w2*(beta k).

        sum_i w1_i w2_i q_i k_i
        -----------------------------------------------
        sqrt(sum_i w1_i^2 q_i^2) sqrt(sum_i w2_i^2 k_i^2)

    beta cancels between numerator and denominator; it is accepted only so
    callers can state the full forward convention.
    """
    q, k, w1, w2 = (np.asarray(v, dtype=np.float64) for v in (q, k, w1, w2))
    if not (q.shape == k.shape == w1.shape == w2.shape) or q.ndim != 1:
        raise DimMismatch("weighted cosine operands must share one 1-D shape")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    wq = w1 * q
    wk = w2 * k
    nq = float(np.linalg.norm(wq))
    nk = float(np.linalg.norm(wk))
    if nq < ZERO_NORM_TOL or nk < ZERO_NORM_TOL:
        raise ZeroVector("weighted embedding has (near-)zero norm")
    return float(np.clip(np.dot(wq, wk) / (nq * nk), -1.0, 1.0))
