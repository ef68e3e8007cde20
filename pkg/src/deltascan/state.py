"""Sequential delta-rule state evolution.

The state ``S`` is a ``d_k x d_v`` matrix mapping keys to values. One token
(q, k, v, beta) updates it as

    S' = omega * S - beta * k (k^T S) + beta * k v^T

and reads out ``o = S'^T q`` from the *updated* state. With ``omega = 1`` this
is exactly one gradient step of ``1/2 ||v - S^T k||^2`` with learning rate
``beta``, see :func:`loss_gradient`.

Everything here is a plain per-token loop; it is the reference the chunked
kernel is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, require, require_finite

DTYPES = {"fp32": np.float32, "fp64": np.float64}


def resolve_dtype(precision: str) -> type:
    try:
        return DTYPES[precision]
    except KeyError:
        raise ContractViolation(f"precision must be one of {sorted(DTYPES)}, got {precision!r}") from None


@dataclass(frozen=True, eq=False)
class SequenceBatch:
    """Per-token queries, keys, values and learning rates for one sequence."""

    Q: np.ndarray  # L x d_k
    K: np.ndarray  # L x d_k
    V: np.ndarray  # L x d_v
    beta: np.ndarray  # L

    def __post_init__(self):
        Q, K, V, beta = (np.asarray(a) for a in (self.Q, self.K, self.V, self.beta))
        require(Q.ndim == 2 and K.ndim == 2 and V.ndim == 2, "Q, K, V must be 2-D")
        require(beta.ndim == 1, "beta must be 1-D")
        L = Q.shape[0]
        require(K.shape[0] == L and V.shape[0] == L and beta.shape[0] == L,
                f"sequence lengths differ: Q={Q.shape[0]} K={K.shape[0]} V={V.shape[0]} beta={beta.shape[0]}")
        require(Q.shape[1] == K.shape[1], f"Q and K key dims differ: {Q.shape[1]} vs {K.shape[1]}")
        require(Q.shape[1] >= 1 and V.shape[1] >= 1, "d_k and d_v must be positive")
        require_finite("SequenceBatch", Q, K, V, beta)
        require(bool(np.all((beta >= 0) & (beta <= 1))), "beta must lie in [0, 1]")
        for name, a in zip("QKV", (Q, K, V)):
            object.__setattr__(self, name, a)
        object.__setattr__(self, "beta", beta)

    @property
    def length(self) -> int:
        return self.Q.shape[0]

    @property
    def d_k(self) -> int:
        return self.Q.shape[1]

    @property
    def d_v(self) -> int:
        return self.V.shape[1]

    def astype(self, dtype) -> "SequenceBatch":
        return SequenceBatch(*(a.astype(dtype) for a in (self.Q, self.K, self.V, self.beta)))


@dataclass(frozen=True)
class EvolutionConfig:
    omega: float = 1.0
    precision: str = "fp64"

    def __post_init__(self):
        require(0.0 < self.omega <= 1.0, f"omega must be in (0, 1], got {self.omega}")
        resolve_dtype(self.precision)

    @property
    def dtype(self):
        return resolve_dtype(self.precision)


def check_state(S: np.ndarray, d_k: int | None = None, d_v: int | None = None) -> np.ndarray:
    S = np.asarray(S)
    require(S.ndim == 2 and S.shape[0] >= 1 and S.shape[1] >= 1, f"state must be a non-empty matrix, got shape {S.shape}")
    if d_k is not None:
        require(S.shape[0] == d_k, f"state has {S.shape[0]} key rows, expected {d_k}")
    if d_v is not None:
        require(S.shape[1] == d_v, f"state has {S.shape[1]} value columns, expected {d_v}")
    require_finite("state", S)
    return S


def _step(S, k, v, q, beta, omega):
    # Unchecked kernel shared by delta_step and sequential_scan so both agree bit-for-bit.
    S = omega * S - beta * np.outer(k, k @ S) + beta * np.outer(k, v)
    return S, q @ S


def delta_step(S, k, v, q, beta: float, omega: float = 1.0):
    """One delta-rule write followed by a readout. Returns ``(S', o)``."""
    S = check_state(S)
    k, v, q = (np.asarray(a) for a in (k, v, q))
    require(k.shape == (S.shape[0],) and q.shape == (S.shape[0],), "k and q must have length d_k")
    require(v.shape == (S.shape[1],), "v must have length d_v")
    require(0.0 <= beta <= 1.0, f"beta must be in [0, 1], got {beta}")
    require(0.0 < omega <= 1.0, f"omega must be in (0, 1], got {omega}")
    require_finite("delta_step", k, v, q, beta)
    return _step(S, k, v, q, beta, omega)


def sequential_scan(batch: SequenceBatch, S0, cfg: EvolutionConfig | None = None):
    """Fold :func:`delta_step` over the sequence. Returns ``(O, S_final)``."""
    cfg = cfg or EvolutionConfig()
    S = check_state(S0, batch.d_k, batch.d_v).astype(cfg.dtype)
    b = batch.astype(cfg.dtype)
    omega = cfg.dtype(cfg.omega)
    O = np.empty((b.length, b.d_v), dtype=cfg.dtype)
    for t in range(b.length):
        S, O[t] = _step(S, b.K[t], b.V[t], b.Q[t], b.beta[t], omega)
    return O, S


def loss_gradient(S, x, y) -> np.ndarray:
    """Gradient of ``1/2 ||y - S^T x||^2`` with respect to ``S``: ``x (S^T x - y)^T``."""
    S = check_state(S)
    x, y = np.asarray(x), np.asarray(y)
    require(x.shape == (S.shape[0],), "x must have length d_k")
    require(y.shape == (S.shape[1],), "y must have length d_v")
    return np.outer(x, x @ S - y)


def reconstruction_loss(S, x, y) -> float:
    r = np.asarray(y) - np.asarray(x) @ np.asarray(S)
    return 0.5 * float(r @ r)
