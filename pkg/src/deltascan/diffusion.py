"""Few-step DDPM over compact prior vectors.

The sampler predicts noise (epsilon) and uses the fixed posterior variance
``beta_tilde_t = beta_t (1 - abar_{t-1}) / (1 - abar_t)`` with ``abar_0 = 1``.
Steps are 1-indexed: ``t = 1..T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .errors import ContractViolation, require

DenoiserFn = Callable[[np.ndarray, int, Any], np.ndarray]

GENERATOR = "numpy.random.Generator(PCG64)"


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def abar(self, t: int) -> float:
        """``abar_t`` with the convention ``abar_0 = 1``."""
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ContractViolation(f"step {t} outside 1..{self.T}")


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear betas from ``beta_start`` to ``beta_end`` inclusive."""
    require(T >= 1, f"T must be >= 1, got {T}")
    require(0 < beta_start <= beta_end < 1, f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T)
    alphas = 1.0 - betas
    alpha_bars = np.empty(T)
    acc = 1.0
    for i, a in enumerate(alphas):
        acc = acc * a
        alpha_bars[i] = acc
    return NoiseSchedule(betas, alphas, alpha_bars)


def few_step_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02, reference_T: int = 1000) -> NoiseSchedule:
    """Linear schedule stretched from ``reference_T`` steps down to ``T``.

    Both endpoints are multiplied by ``reference_T / T`` and capped (start at
    0.1, end at 0.999) so betas stay inside (0, 1).
    """
    scale = reference_T / T
    start = min(beta_start * scale, 0.1)
    return make_schedule(T, start, max(start, min(beta_end * scale, 0.999)))


def forward_step(x_prev, t: int, eps, s: NoiseSchedule) -> np.ndarray:
    """One transition of the forward chain: ``sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps``."""
    s.check_step(t)
    return np.sqrt(s.alphas[t - 1]) * np.asarray(x_prev) + np.sqrt(s.betas[t - 1]) * np.asarray(eps)


def forward_diffuse(x0, t: int, eps, s: NoiseSchedule) -> np.ndarray:
    """Closed-form marginal ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``."""
    s.check_step(t)
    ab = s.abar(t)
    return np.sqrt(ab) * np.asarray(x0) + np.sqrt(1.0 - ab) * np.asarray(eps)


def posterior_variance(t: int, s: NoiseSchedule) -> float:
    s.check_step(t)
    return float(s.betas[t - 1] * (1.0 - s.abar(t - 1)) / (1.0 - s.abar(t)))


def reverse_step(x_t, t: int, eps_hat, s: NoiseSchedule, noise=None) -> np.ndarray:
    s.check_step(t)
    x_t, eps_hat = np.asarray(x_t), np.asarray(eps_hat)
    if noise is None:
        noise = np.zeros_like(x_t)
    noise = np.asarray(noise)
    if t == 1 and np.any(noise != 0):
        raise ContractViolation("sampler noise must be zero at t = 1")
    beta, alpha = s.betas[t - 1], s.alphas[t - 1]
    mu = (x_t - beta / np.sqrt(1.0 - s.abar(t)) * eps_hat) / np.sqrt(alpha)
    return mu + np.sqrt(posterior_variance(t, s)) * noise


def from_x0_predictor(predict_x0: Callable[[np.ndarray, int, Any], np.ndarray], s: NoiseSchedule) -> DenoiserFn:
    """Wrap a clean-vector predictor so the sampler can consume it as a noise predictor."""

    def denoiser(z_t, t, condition):
        ab = s.abar(t)
        return (z_t - np.sqrt(ab) * predict_x0(z_t, t, condition)) / np.sqrt(1.0 - ab)

    return denoiser


def sample_prior(denoiser: DenoiserFn, condition, s: NoiseSchedule, seed: int, dim: int = 32) -> np.ndarray:
    """Ancestral sampling from ``x_T ~ N(0, I)`` down to ``x_0``; calls ``denoiser`` exactly T times."""
    require(1 <= s.T <= 1000, f"schedule length {s.T} outside 1..1000")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(dim)
    for t in range(s.T, 0, -1):
        eps_hat = np.asarray(denoiser(x, t, condition))
        require(eps_hat.shape == x.shape, f"denoiser returned shape {eps_hat.shape}, expected {x.shape}")
        noise = rng.standard_normal(dim) if t > 1 else None
        x = reverse_step(x, t, eps_hat, s, noise)
    return x
