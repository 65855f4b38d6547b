"""
Deterministic desk-scale generation loop.

A tiny stub denoiser predicts noise for a (positions x channels) latent. Its
single injection layer is a dual cross-attention layer whose adapter path is
gated by the object-token mask; the layer before it sees text only. The
latent is advanced with the deterministic (eta = 0) DDIM update::

    z[t-1] = sqrt(a[t-1] / a[t]) * z[t]
             + sqrt(a[t-1]) * (sqrt(1/a[t-1] - 1) - sqrt(1/a[t] - 1)) * eps

where ``a`` is the cumulative signal schedule, decreasing in t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from . import rng
from .attention import (
    DEFAULT_LAMBDA,
    AttentionLayer,
    ObjectAttentionMap,
    cross_attention,
    object_attention_map,
    spatial_prior_combine,
)

__all__ = [
    "DiffusionSchedule",
    "LatentState",
    "Conditioning",
    "StubDenoiser",
    "GenerationResult",
    "make_schedule",
    "ddim_coefficients",
    "ddim_step",
    "initial_latent",
    "generate",
]


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """``alpha[t-1]`` holds the schedule value for timestep t (1-based)."""

    alpha: NDArray[np.float64]

    def __post_init__(self) -> None:
        a = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        if a.size < 2:
            raise ValueError("schedule needs at least two steps")
        if not np.all(np.isfinite(a)) or np.any(a <= 0) or np.any(a > 1):
            raise ValueError("schedule values must lie in (0, 1]")
        if np.any(np.diff(a) >= 0):
            raise ValueError("schedule must be strictly decreasing in t")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def steps(self) -> int:
        return self.alpha.size

    def at(self, t: int) -> float:
        if not 1 <= t <= self.steps:
            raise ValueError(f"timestep {t} outside [1, {self.steps}]")
        return float(self.alpha[t - 1])


def make_schedule(steps: int, alpha_start: float, alpha_end: float) -> DiffusionSchedule:
    """Log-linear interpolation from ``alpha_start`` (t=1) to ``alpha_end`` (t=T)."""
    if steps < 2:
        raise ValueError(f"need at least 2 steps, got {steps}")
    if not 0.0 < alpha_end < alpha_start <= 1.0:
        raise ValueError(f"need 0 < alpha_end < alpha_start <= 1, got {alpha_start}, {alpha_end}")
    frac = np.arange(steps, dtype=np.float64) / (steps - 1)
    alpha = np.exp(math.log(alpha_start) + frac * (math.log(alpha_end) - math.log(alpha_start)))
    alpha[0] = alpha_start
    alpha[-1] = alpha_end
    return DiffusionSchedule(alpha)


@dataclass(frozen=True, eq=False)
class LatentState:
    z: NDArray[np.float64]  # (positions, channels)
    t: int

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 2:
            raise ValueError(f"latent must be 2-D, got shape {z.shape}")
        if not np.all(np.isfinite(z)):
            raise ValueError("latent has non-finite entries")
        if self.t < 1:
            raise ValueError("timestep must be >= 1")
        object.__setattr__(self, "z", z)


def ddim_coefficients(a_prev: float, a_t: float) -> tuple[float, float]:
    """(latent, eps) coefficients of the deterministic DDIM update from t to t-1."""
    z_coef = math.sqrt(a_prev / a_t)
    eps_coef = math.sqrt(a_prev) * (math.sqrt(1.0 / a_prev - 1.0) - math.sqrt(1.0 / a_t - 1.0))
    return z_coef, eps_coef


def ddim_step(state: LatentState, eps: NDArray[np.float64], sched: DiffusionSchedule) -> LatentState:
    t = state.t
    if not 2 <= t <= sched.steps:
        raise ValueError(f"DDIM step needs 2 <= t <= {sched.steps}, got {t}")
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != state.z.shape:
        raise ValueError(f"eps shape {eps.shape} != latent shape {state.z.shape}")
    if not np.all(np.isfinite(eps)):
        raise ValueError("eps has non-finite entries")
    z_coef, eps_coef = ddim_coefficients(sched.at(t - 1), sched.at(t))
    return LatentState(z_coef * state.z + eps_coef * eps, t - 1)


@dataclass(frozen=True, eq=False)
class Conditioning:
    text: NDArray[np.float64]  # (tokens, text_dim)
    img: NDArray[np.float64] | None  # (adapter tokens, img_dim); None runs text-only
    object_token_index: int

    def __post_init__(self) -> None:
        text = np.asarray(self.text, dtype=np.float64)
        if text.ndim != 2 or text.shape[0] < 1:
            raise ValueError("text conditioning must be a non-empty 2-D array")
        if not 0 <= self.object_token_index < text.shape[0]:
            raise IndexError(f"object token index {self.object_token_index} outside prompt of {text.shape[0]} tokens")
        object.__setattr__(self, "text", text)
        if self.img is not None:
            img = np.asarray(self.img, dtype=np.float64)
            if img.ndim != 2 or img.shape[0] < 1:
                raise ValueError("image conditioning must be a non-empty 2-D array")
            object.__setattr__(self, "img", img)

    def text_only(self) -> Conditioning:
        return Conditioning(self.text, None, self.object_token_index)


def _time_embedding(t: int, dim: int) -> NDArray[np.float64]:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / max(half, 1))
    emb = np.concatenate([np.sin(t * freqs), np.cos(t * freqs)])
    return np.pad(emb, (0, dim - emb.size))


@dataclass(frozen=True, eq=False)
class StubDenoiser:
    """Seeded noise predictor: input map, a text-only layer, the injection layer, output map."""

    grid: tuple[int, int]
    channels: int
    w_in: NDArray[np.float64]  # (channels, model_dim)
    pos: NDArray[np.float64]  # (positions, model_dim)
    text_layer: AttentionLayer
    injection_layer: AttentionLayer
    w_eps: NDArray[np.float64]  # (model_dim, channels)

    @classmethod
    def seeded(
        cls,
        seed: int,
        text_dim: int,
        img_dim: int,
        grid: tuple[int, int] = (8, 8),
        channels: int = 4,
        model_dim: int = 16,
        heads: int = 2,
    ) -> StubDenoiser:
        if model_dim % heads:
            raise ValueError("model_dim must be divisible by heads")
        positions = grid[0] * grid[1]
        head_dim = model_dim // heads

        def normal(label: str, shape: tuple[int, ...], fan_in: int) -> NDArray[np.float64]:
            return rng.standard_normal(rng.derive_seed(seed, label), shape) / math.sqrt(fan_in)

        return cls(
            grid=tuple(grid),  # type: ignore[arg-type]
            channels=channels,
            w_in=normal("w_in", (channels, model_dim), channels),
            pos=normal("pos", (positions, model_dim), 1),
            text_layer=AttentionLayer.random(rng.derive_seed(seed, "text-layer"), model_dim, text_dim, img_dim, heads, head_dim),
            injection_layer=AttentionLayer.random(
                rng.derive_seed(seed, "injection-layer"), model_dim, text_dim, img_dim, heads, head_dim
            ),
            w_eps=normal("w_eps", (model_dim, channels), model_dim),
        )

    @property
    def positions(self) -> int:
        return self.grid[0] * self.grid[1]

    def predict(
        self, z: NDArray[np.float64], t: int, cond: Conditioning, lam: float = DEFAULT_LAMBDA
    ) -> tuple[NDArray[np.float64], ObjectAttentionMap]:
        """Noise estimate for latent ``z`` at step ``t`` plus the object map used for gating."""
        if z.shape != (self.positions, self.channels):
            raise ValueError(f"latent shape {z.shape} != {(self.positions, self.channels)}")
        h = np.tanh(z @ self.w_in + self.pos + _time_embedding(t, self.w_in.shape[1]))
        h = h + cross_attention(self.text_layer, h, cond.text).output
        res = cross_attention(self.injection_layer, h, cond.text, cond.img)
        obj = object_attention_map(res.text_attn, cond.object_token_index, self.grid, lam)
        x = spatial_prior_combine(res.text_out, res.img_out, obj.mask, self.injection_layer.w_out)
        return (h + x) @ self.w_eps, obj


@dataclass
class GenerationResult:
    final: LatentState
    mask_log: list[NDArray[np.uint8]] = field(default_factory=list)
    """One mask per denoising step, in order t = T, T-1, ..., 2."""
    trajectory: list[NDArray[np.float64]] = field(default_factory=list)
    """Latents z_T, ..., z_1."""

    def mask_timesteps(self) -> list[int]:
        top = self.final.t + len(self.mask_log)
        return list(range(top, top - len(self.mask_log), -1))


def initial_latent(seed: int, positions: int, channels: int) -> NDArray[np.float64]:
    return rng.standard_normal(rng.derive_seed(seed, "z_T"), (positions, channels))


def generate(
    sched: DiffusionSchedule,
    cond: Conditioning,
    denoiser: StubDenoiser,
    lam: float = DEFAULT_LAMBDA,
    seed: int = 0,
    z_init: NDArray[np.float64] | None = None,
) -> GenerationResult:
    """Run DDIM from z_T down to z_1, logging the object mask at every step."""
    z = initial_latent(seed, denoiser.positions, denoiser.channels) if z_init is None else np.array(z_init, dtype=np.float64)
    state = LatentState(z, sched.steps)
    result = GenerationResult(state, [], [state.z.copy()])
    while state.t > 1:
        eps, obj = denoiser.predict(state.z, state.t, cond, lam)
        result.mask_log.append(obj.mask)
        state = ddim_step(state, eps, sched)
        result.trajectory.append(state.z.copy())
    result.final = state
    return result


def downsample_log(masks: Sequence[NDArray[np.uint8]], timesteps: Sequence[int], every: int) -> list[tuple[int, NDArray[np.uint8]]]:
    """Keep every ``every``-th logged mask, starting with the first denoising step."""
    if every < 1:
        raise ValueError("every must be >= 1")
    return [(t, m) for i, (t, m) in enumerate(zip(timesteps, masks)) if i % every == 0]
