"""
Conditional x0-predicting diffusion over session representations.

One schedule is shared by the retrieval-conditioned denoiser and the
modality-conditioned denoiser. Generation corrupts the session embedding for
T' steps and walks the deterministic posterior mean back to step 0.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from model.losses import info_nce
from model.retriever import RetrievedNeighbors
from shared import tensor as T
from shared.errors import ShapeError
from shared.tensor import Parameter, Tensor, no_grad

logger = logging.getLogger(__name__)

DenoiseFn = Callable[[Tensor, Tensor, np.ndarray], Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays indexed by step 0..T; index 0 holds beta=0 and alpha_bar=1."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    def check_step(self, t) -> None:
        t = np.asarray(t)
        if t.size and (t.min() < 1 or t.max() > self.T):
            raise ValueError(f"diffusion step must lie in 1..{self.T}, got {t.min()}..{t.max()}")

    def posterior_coefficients(self, t: int) -> tuple[float, float]:
        """Weights on f(x_t) and on x_t of the deterministic step t -> t-1."""
        ab, ab_prev = self.alpha_bars[t], self.alpha_bars[t - 1]
        on_x0 = np.sqrt(ab_prev) * self.betas[t] / (1.0 - ab)
        on_xt = np.sqrt(self.alphas[t]) * (1.0 - ab_prev) / (1.0 - ab)
        return float(on_x0), float(on_xt)


def build_schedule(T: int = 32, beta_min: float = 1e-4, beta_max: float = 0.1) -> NoiseSchedule:
    """Linear betas from beta_min to beta_max, truncated at beta_max."""
    if T < 1:
        raise ValueError(f"schedule needs at least one step, got T={T}")
    if not 0.0 < beta_min < beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}")
    betas = np.minimum(np.linspace(beta_min, beta_max, T), beta_max)
    betas = np.concatenate([[0.0], betas])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(betas, alphas, alpha_bars)


def q_sample(x0: Tensor, t, eps: np.ndarray, schedule: NoiseSchedule) -> Tensor:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, t scalar or one per row."""
    schedule.check_step(t)
    x0 = T.as_tensor(x0)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ShapeError("q_sample", x0.shape, eps.shape)
    ab = schedule.alpha_bars[np.asarray(t)]
    if np.ndim(ab) == 1 and x0.ndim == 2:
        ab = ab[:, None]
    return T.mul(x0, Tensor(np.broadcast_to(np.sqrt(ab), x0.shape))) + Tensor(np.sqrt(1.0 - ab) * eps)


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding, (B, dim). Odd ``dim`` gets a zero last column."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    angles = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


class Denoiser:
    """MLP on [x_t || condition || time embedding]: 3d -> SiLU 2d -> d."""

    def __init__(self, dim: int, rng: np.random.Generator, name: str):
        self.dim = dim
        b1 = 1.0 / np.sqrt(3 * dim)
        b2 = 1.0 / np.sqrt(2 * dim)
        self.w1 = Parameter(rng.uniform(-b1, b1, size=(3 * dim, 2 * dim)), name=f"{name}.w1")
        self.b1 = Parameter(np.zeros(2 * dim), name=f"{name}.b1")
        self.w2 = Parameter(rng.uniform(-b2, b2, size=(2 * dim, dim)), name=f"{name}.w2")
        self.b2 = Parameter(np.zeros(dim), name=f"{name}.b2")

    def parameters(self) -> dict:
        return {p.name: p for p in (self.w1, self.b1, self.w2, self.b2)}

    def __call__(self, x_t: Tensor, condition: Tensor, t: np.ndarray) -> Tensor:
        t = np.broadcast_to(np.asarray(t), (x_t.shape[0],))
        inputs = T.concat([x_t, condition, Tensor(timestep_embedding(t, self.dim))])
        hidden = T.silu(T.matmul(inputs, self.w1) + self.b1)
        return T.matmul(hidden, self.w2) + self.b2


@dataclass(frozen=True)
class NoiseDraw:
    """One (t, eps) per batch row, shared by every loss that needs a corruption."""

    t: np.ndarray
    eps: np.ndarray


def draw_noise(batch: int, dim: int, schedule: NoiseSchedule, rng: np.random.Generator) -> NoiseDraw:
    return NoiseDraw(
        t=rng.integers(1, schedule.T + 1, size=batch),
        eps=rng.standard_normal((batch, dim)),
    )


def make_condition(neighbors: RetrievedNeighbors) -> Tensor:
    """Score-weighted sum of neighbour rows, detached from every gradient."""
    omega = neighbors.weights.data
    return Tensor(np.einsum("bk,bkd->bd", omega, neighbors.rows))


@dataclass
class DiffusionOutput:
    loss: Tensor
    prediction: Tensor
    x_t: Tensor


def diffusion_loss(
    denoiser: DenoiseFn,
    x0: Tensor,
    condition: Tensor,
    schedule: NoiseSchedule,
    draw: NoiseDraw,
) -> DiffusionOutput:
    """Mean over the batch of ||x0 - f(x_t, condition, t)||^2, with x0 as a fixed target."""
    target = x0.detach()
    x_t = q_sample(target, draw.t, draw.eps, schedule)
    prediction = denoiser(x_t, condition, draw.t)
    return DiffusionOutput(T.mse(prediction, target), prediction, x_t)


def per_neighbor_losses(
    denoiser: DenoiseFn,
    x0: Tensor,
    neighbors: RetrievedNeighbors,
    schedule: NoiseSchedule,
    draw: NoiseDraw,
) -> np.ndarray:
    """
    (B, k) diffusion losses with each retrieved neighbour alone as the
    condition. All k neighbours of a session share that session's (t, eps).
    """
    B, k, d = neighbors.rows.shape
    with no_grad():
        target = np.repeat(x0.data, k, axis=0)
        t = np.repeat(draw.t, k)
        x_t = q_sample(Tensor(target), t, np.repeat(draw.eps, k, axis=0), schedule)
        prediction = denoiser(x_t, Tensor(neighbors.rows.reshape(B * k, d)), t)
        errors = ((prediction.data - target) ** 2).sum(axis=1)
    return errors.reshape(B, k)


@dataclass
class LatentNeighbor:
    x0: Tensor
    trajectory: List[Tensor] = field(default_factory=list)


def reverse_generate(
    denoiser: DenoiseFn,
    s_id: Tensor,
    condition: Tensor,
    schedule: NoiseSchedule,
    steps: int,
    rng: Optional[np.random.Generator] = None,
) -> LatentNeighbor:
    """
    Corrupt ``s_id`` for ``steps`` steps (noise from ``rng``, or none when it
    is omitted) and denoise back to step 0 with the posterior mean.
    """
    if not 1 <= steps <= schedule.T:
        raise ValueError(f"reverse steps must lie in 1..{schedule.T}, got {steps}")
    eps = rng.standard_normal(s_id.shape) if rng is not None else np.zeros(s_id.shape)
    x = q_sample(s_id, steps, eps, schedule)
    trajectory = [x]
    batch = s_id.shape[0] if s_id.ndim == 2 else 1
    for t in range(steps, 0, -1):
        on_x0, on_xt = schedule.posterior_coefficients(t)
        x = denoiser(x, condition, np.full(batch, t)) * on_x0 + x * on_xt
        trajectory.append(x)
    return LatentNeighbor(x, trajectory)


def contrastive_loss(s_n: Tensor, s_m: Tensor, tau: float = 0.3) -> Tensor:
    """InfoNCE between the two denoised views; matching rows are the positives."""
    return info_nce(s_n, s_m, tau)
