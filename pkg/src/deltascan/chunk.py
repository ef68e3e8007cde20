"""Chunk-parallel delta rule.

The sequence is cut into ``N = ceil(L / C)`` contiguous chunks. Inside a chunk
the C sequential rank-1 writes collapse, through the UT transform, into a
triangular solve plus dense matrix products:

    A  = I + strict_lower(diag(beta) K K^T)
    T  = A^{-1} diag(beta)            (forward substitution, A is unit lower triangular)
    W  = T K,   U = T V
    U' = U - W S                      (pseudo-values adjusted for the incoming state)
    O  = Q S + (Q K^T * M) U'         (M: causal mask, diagonal included)
    S' = S + K^T U'

Only the hand-off of ``S`` between chunks is serial. Decay is not modelled
here (omega = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ContractViolation, require, require_finite
from .state import SequenceBatch, check_state


class UTFactors(NamedTuple):
    T: np.ndarray  # C x C lower triangular, diag(T) = beta
    W: np.ndarray  # C x d_k
    U: np.ndarray | None = None  # C x d_v, filled in when V is known


@dataclass
class ChunkRecord:
    start: int
    size: int
    ut_residual: float


def causal_mask(C: int, diagonal: int = 0, dtype=np.float64) -> np.ndarray:
    """Lower-triangular 0/1 mask; ``diagonal=0`` keeps the diagonal."""
    return np.tri(C, C, diagonal, dtype=dtype)


def ut_system(K_c, beta_c) -> np.ndarray:
    """The unit lower-triangular matrix ``I + strict_lower(diag(beta) K K^T)``."""
    C = K_c.shape[0]
    A = np.tril(beta_c[:, None] * (K_c @ K_c.T), -1)
    A[np.diag_indices(C)] = 1
    return A


def ut_transform(K_c, beta_c, V_c=None) -> UTFactors:
    K_c, beta_c = np.asarray(K_c), np.asarray(beta_c)
    require(K_c.ndim == 2 and K_c.shape[0] >= 1, "K_c must be a non-empty C x d_k matrix")
    require(beta_c.shape == (K_c.shape[0],), "beta_c must have one entry per chunk row")
    require(bool(np.all((beta_c >= 0) & (beta_c <= 1))), "beta must lie in [0, 1]")
    require_finite("ut_transform", K_c, beta_c)
    return _ut(K_c, beta_c, V_c)


def _ut(K_c, beta_c, V_c=None) -> UTFactors:
    A = ut_system(K_c, beta_c)
    T = solve_triangular(A, np.diag(beta_c), lower=True, unit_diagonal=True, check_finite=False)
    W = T @ K_c
    U = None if V_c is None else T @ V_c
    return UTFactors(T, W, U)


def ut_residual(K_c, beta_c, T) -> float:
    """Max-norm residual of the defining equation ``A T = diag(beta)``."""
    return float(np.max(np.abs(ut_system(K_c, beta_c) @ T - np.diag(beta_c))))


def chunk_advance(S, Q_c, K_c, V_c, beta_c, *, mask_diagonal: int = 0):
    """Process one chunk. Returns ``(S', O_c)``.

    ``mask_diagonal=-1`` switches to a diagonal-exclusive mask; it exists only to
    check that the equivalence suite notices the mistake.
    """
    S = check_state(S)
    Q_c, K_c, V_c, beta_c = (np.asarray(a) for a in (Q_c, K_c, V_c, beta_c))
    C = K_c.shape[0]
    require(C >= 1, "empty chunk")
    require(Q_c.shape == (C, S.shape[0]) and K_c.shape == (C, S.shape[0]),
            f"Q_c and K_c must be {C} x {S.shape[0]}")
    require(V_c.shape == (C, S.shape[1]), f"V_c must be {C} x {S.shape[1]}")
    require(beta_c.shape == (C,), "beta_c must have length C")
    require(bool(np.all((beta_c >= 0) & (beta_c <= 1))), "beta must lie in [0, 1]")
    require_finite("chunk_advance", Q_c, K_c, V_c, beta_c)
    S_next, O_c, _ = _advance(S, Q_c, K_c, V_c, beta_c, mask_diagonal)
    require_finite("chunk_advance intermediate", S_next, O_c)
    return S_next, O_c


def _advance(S, Q_c, K_c, V_c, beta_c, mask_diagonal=0):
    T, W, U = _ut(K_c, beta_c, V_c)
    U_adj = U - W @ S
    attn = np.tril(Q_c @ K_c.T, mask_diagonal)
    O_c = Q_c @ S + attn @ U_adj
    S_next = S + K_c.T @ U_adj
    return S_next, O_c, T


def chunk_bounds(L: int, C: int) -> list[tuple[int, int]]:
    """``[start, stop)`` pairs of the ``ceil(L / C)`` chunks; the last may be short."""
    if C < 1:
        raise ContractViolation(f"chunk size must be >= 1, got {C}")
    return [(s, min(s + C, L)) for s in range(0, L, C)]


def chunked_scan(batch: SequenceBatch, S0, chunk_size: int, *, trace: list | None = None,
                 mask_diagonal: int = 0):
    """Chunk-parallel equivalent of ``sequential_scan`` with omega = 1.

    Works in the dtype of ``batch``. When ``trace`` is a list, one
    :class:`ChunkRecord` is appended per chunk (each is one state hand-off).
    """
    bounds = chunk_bounds(batch.length, chunk_size)
    dtype = batch.Q.dtype
    S = check_state(S0, batch.d_k, batch.d_v).astype(dtype)
    O = np.empty((batch.length, batch.d_v), dtype=dtype)
    for start, stop in bounds:
        sl = slice(start, stop)
        K_c, beta_c = batch.K[sl], batch.beta[sl]
        S, O[sl], T = _advance(S, batch.Q[sl], K_c, batch.V[sl], beta_c, mask_diagonal)
        if trace is not None:
            trace.append(ChunkRecord(start, stop - start, ut_residual(K_c, beta_c, T)))
    require_finite("chunked_scan", O, S)
    return O, S


def flops_estimate(L: int, C: int, d_k: int, d_v: int) -> float:
    """Dominant multiply-add count of :func:`chunked_scan`.

    Per chunk: ``K K^T`` and ``Q K^T`` (C^2 d_k), the masked product (C^2 d_v),
    ``W S`` and ``K^T U'`` (2 C d_k d_v), and the triangular solve (C^3 / 3).
    """
    for name, x in (("L", L), ("C", C), ("d_k", d_k), ("d_v", d_v)):
        require(x >= 1, f"{name} must be positive")
    n_chunks = math.ceil(L / C)
    return n_chunks * (C * C * d_k + C * C * d_v + 2 * C * d_k * d_v + C * C * C / 3)
