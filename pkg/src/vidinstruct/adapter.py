"""Spatiotemporal feature adapter.

Pools frame-level patch embeddings into temporal and spatial summaries,
concatenates them into video-level features, and projects those through a
trainable affine layer into the language-embedding space. Also owns the
chat-prompt layout that positions the projected video tokens, analytic
gradients for every step, and a small mini-batch trainer for the projection
(the only trainable piece; everything upstream and downstream stays fixed).
"""

import re
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError, ValidationError

VIDEO_TOKEN_RE = re.compile(r"<video:(\d+)>")


def _as_float64(a, name):
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class FrameEmbeddingTensor:
    """Per-frame patch-token embeddings, shape (T, N, D), finite float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeError(f"expected (T, N, D) tensor, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all dimensions must be >= 1, got {arr.shape}")
        object.__setattr__(self, "data", _as_float64(arr, "frame embeddings"))

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    @property
    def token_count(self) -> int:
        return self.data.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class VideoFeatures:
    """Temporal (N, D) and spatial (T, D) summaries plus their concatenation.

    `combined` stacks temporal rows first, then spatial rows: shape (T+N, D).
    """

    temporal: np.ndarray
    spatial: np.ndarray
    combined: np.ndarray

    def __post_init__(self):
        n = self.temporal.shape[0]
        t = self.spatial.shape[0]
        if self.combined.shape[0] != t + n:
            raise ShapeError("combined row count must equal T + N")
        if not np.array_equal(self.combined[:n], self.temporal):
            raise ShapeError("combined rows [0, N) must equal the temporal part")
        if not np.array_equal(self.combined[n:], self.spatial):
            raise ShapeError("combined rows [N, N+T) must equal the spatial part")

    @property
    def embed_dim(self) -> int:
        return self.combined.shape[1]


@dataclass(frozen=True)
class LinearProjection:
    """Affine map into the language-embedding space: (D,) rows -> (K,) rows."""

    weights: np.ndarray
    bias: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        w = _as_float64(self.weights, "projection weights")
        b = _as_float64(self.bias, "projection bias")
        if w.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {w.shape}")
        if b.ndim != 1 or b.shape[0] != w.shape[1]:
            raise ShapeError(
                f"bias shape {b.shape} does not match weights {w.shape}")
        if w.shape[1] < 1:
            raise ShapeError("output dimension K must be >= 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def input_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights.shape[1]


def init_projection(embed_dim: int, output_dim: int, seed: int = 0) -> LinearProjection:
    """Random projection init: N(0, 1/sqrt(D)) weights, zero bias."""
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=1.0 / np.sqrt(embed_dim), size=(embed_dim, output_dim))
    return LinearProjection(weights=w, bias=np.zeros(output_dim), seed=seed)


@dataclass(frozen=True)
class PromptLayout:
    """Rendered chat prompt with a single video-token placeholder span."""

    rendered_text: str
    instruction: str
    video_token_count: int

    @classmethod
    def parse(cls, rendered: str) -> "PromptLayout":
        """Recover instruction and token count from a rendered prompt."""
        if not rendered.startswith("USER: ") or not rendered.endswith(" Assistant:"):
            raise ValidationError("text is not a rendered prompt")
        body = rendered[len("USER: "):-len(" Assistant:")]
        m = VIDEO_TOKEN_RE.search(body)
        if m is None or not body.endswith(m.group(0)):
            raise ValidationError("rendered prompt has no trailing video-token span")
        instruction = body[:m.start()].rstrip()
        return cls(rendered, instruction, int(m.group(1)))


def build_prompt(instruction: str, video_token_count: int) -> PromptLayout:
    """Render 'USER: <instruction> <video:COUNT> Assistant:'.

    The instruction goes first, the video-token placeholder second. A count of
    zero and an instruction that already contains the placeholder sentinel are
    both rejected.
    """
    if not instruction or not instruction.strip():
        raise ValidationError("instruction must be non-empty")
    if video_token_count < 1:
        raise ValidationError("video_token_count must be >= 1")
    if VIDEO_TOKEN_RE.search(instruction):
        raise ValidationError("instruction must not contain a <video:N> sentinel")
    rendered = f"USER: {instruction} <video:{video_token_count}> Assistant:"
    return PromptLayout(rendered, instruction, video_token_count)


# ---------------------------------------------------------------------------
# forward path
# ---------------------------------------------------------------------------

def temporal_pool(x: FrameEmbeddingTensor) -> np.ndarray:
    """Mean over frames: (T, N, D) -> (N, D)."""
    return kernels.temporal_mean(x.data)


def spatial_pool(x: FrameEmbeddingTensor) -> np.ndarray:
    """Mean over tokens: (T, N, D) -> (T, D)."""
    return kernels.spatial_mean(x.data)


def concat_features(temporal: np.ndarray, spatial: np.ndarray) -> VideoFeatures:
    """Stack temporal rows above spatial rows into (T+N, D) video features."""
    t_arr = np.asarray(temporal, dtype=np.float64)
    z_arr = np.asarray(spatial, dtype=np.float64)
    if t_arr.ndim != 2 or z_arr.ndim != 2:
        raise ShapeError("temporal and spatial parts must be 2-D")
    if t_arr.shape[1] != z_arr.shape[1]:
        raise ShapeError(
            f"embed dim mismatch: temporal D={t_arr.shape[1]}, "
            f"spatial D={z_arr.shape[1]}")
    combined = np.concatenate([t_arr, z_arr], axis=0)
    return VideoFeatures(temporal=t_arr, spatial=z_arr, combined=combined)


def project(v: VideoFeatures, p: LinearProjection) -> np.ndarray:
    """Apply the affine projection row-wise: (T+N, D) -> (T+N, K)."""
    if p.input_dim != v.embed_dim:
        raise ShapeError(
            f"projection expects D={p.input_dim}, features have D={v.embed_dim}")
    return kernels.affine(np.ascontiguousarray(v.combined), p.weights, p.bias)


def adapter_forward(x: FrameEmbeddingTensor, p: LinearProjection) -> np.ndarray:
    """Pool, concatenate, and project in one pass: (T, N, D) -> (T+N, K)."""
    return project(concat_features(temporal_pool(x), spatial_pool(x)), p)


# ---------------------------------------------------------------------------
# backward path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdapterGradients:
    grad_weights: np.ndarray  # (D, K)
    grad_bias: np.ndarray     # (K,)
    grad_x: np.ndarray        # (T, N, D)


def adapter_backward(x: FrameEmbeddingTensor, p: LinearProjection,
                     upstream: np.ndarray) -> AdapterGradients:
    """Gradients of L = sum(upstream * adapter_forward(x, p)).

    grad_bias is the column sum of upstream; grad_x spreads the pooled
    gradients back with factors 1/T (temporal rows) and 1/N (spatial rows).
    """
    up = np.ascontiguousarray(upstream, dtype=np.float64)
    t, n = x.frame_count, x.token_count
    if up.shape != (t + n, p.output_dim):
        raise ShapeError(
            f"upstream shape {up.shape} does not match ({t + n}, {p.output_dim})")
    if p.input_dim != x.embed_dim:
        raise ShapeError(
            f"projection expects D={p.input_dim}, tensor has D={x.embed_dim}")

    v = concat_features(temporal_pool(x), spatial_pool(x))
    grad_combined, grad_w, grad_b = kernels.affine_backward(
        np.ascontiguousarray(v.combined), p.weights, up)
    grad_x = kernels.pool_grad_scatter(
        np.ascontiguousarray(grad_combined[:n]),
        np.ascontiguousarray(grad_combined[n:]))
    return AdapterGradients(grad_weights=grad_w, grad_bias=grad_b, grad_x=grad_x)


# ---------------------------------------------------------------------------
# training (projection parameters only; inputs and targets never change)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-5
    batch_size: int = 32
    epochs: int = 3
    seed: int = 0


@dataclass(frozen=True)
class TrainResult:
    projection: LinearProjection
    initial_loss: float
    epoch_losses: tuple  # full-set MSE after each epoch


def mse_loss(samples, p: LinearProjection) -> float:
    """Mean over samples of the per-sample mean squared error."""
    total = 0.0
    for x, target in samples:
        diff = adapter_forward(x, p) - target
        total += float((diff * diff).mean())
    return total / len(samples)


def train_adapter(samples, config: TrainConfig,
                  init: LinearProjection | None = None) -> TrainResult:
    """Mini-batch gradient descent on MSE(adapter_forward(x), target).

    Only the projection's weights and bias move. Deterministic for a given
    seed: the sample order is reshuffled each epoch from one seeded generator.
    """
    samples = list(samples)
    if not samples:
        raise ConfigError("train_adapter needs at least one sample")
    if config.batch_size < 1 or config.epochs < 0:
        raise ConfigError("batch_size must be >= 1 and epochs >= 0")

    d = samples[0][0].embed_dim
    k = np.asarray(samples[0][1]).shape[1]
    for x, target in samples:
        tgt = np.asarray(target)
        if x.embed_dim != d or tgt.shape != (x.frame_count + x.token_count, k):
            raise ShapeError(
                f"sample dims inconsistent: D={x.embed_dim} target {tgt.shape}, "
                f"expected D={d}, ({x.frame_count + x.token_count}, {k})")

    p = init if init is not None else init_projection(d, k, seed=config.seed)
    if p.input_dim != d:
        raise ShapeError(f"init projection D={p.input_dim} does not match samples D={d}")

    rng = np.random.default_rng(config.seed)
    weights = p.weights.copy()
    bias = p.bias.copy()
    initial = mse_loss(samples, LinearProjection(weights, bias))
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(samples), config.batch_size):
            batch = [samples[i] for i in order[start:start + config.batch_size]]
            grad_w = np.zeros_like(weights)
            grad_b = np.zeros_like(bias)
            current = LinearProjection(weights, bias)
            for x, target in batch:
                pred = adapter_forward(x, current)
                upstream = 2.0 * (pred - np.asarray(target, dtype=np.float64))
                upstream /= len(batch) * pred.size
                g = adapter_backward(x, current, upstream)
                grad_w += g.grad_weights
                grad_b += g.grad_bias
            weights = weights - config.learning_rate * grad_w
            bias = bias - config.learning_rate * grad_b
        losses.append(mse_loss(samples, LinearProjection(weights, bias)))

    final = LinearProjection(weights, bias, seed=p.seed)
    return TrainResult(projection=final, initial_loss=initial,
                       epoch_losses=tuple(losses))


# ---------------------------------------------------------------------------
# fixture and checkpoint I/O (format documented in the README)
# ---------------------------------------------------------------------------

def save_embeddings(path, x: FrameEmbeddingTensor):
    """Write a tensor fixture as an .npy file (self-describing shape header)."""
    np.save(path, x.data)


def load_embeddings(path) -> FrameEmbeddingTensor:
    return FrameEmbeddingTensor(np.load(path))


def save_projection(path, p: LinearProjection):
    np.savez(path, weights=p.weights, bias=p.bias,
             dims=np.array([p.input_dim, p.output_dim]),
             seed=np.array(-1 if p.seed is None else p.seed))


def load_projection(path) -> LinearProjection:
    with np.load(path) as data:
        seed = int(data["seed"])
        return LinearProjection(weights=data["weights"], bias=data["bias"],
                                seed=None if seed < 0 else seed)
