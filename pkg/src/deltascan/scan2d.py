"""2-D scanning: grid flattening in four directions, token shifts, and the
multi-directional chunked scan over an ``H x W x C`` feature grid."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .chunk import chunked_scan
from .errors import ContractViolation, require, require_finite
from .state import SequenceBatch, check_state


class ScanDirection(Enum):
    RIGHT = "right"  # row-major
    LEFT = "left"  # reverse row-major
    DOWN = "down"  # column-major
    UP = "up"  # reverse column-major


ALL_DIRECTIONS = tuple(ScanDirection)


def check_grid(g) -> np.ndarray:
    g = np.asarray(g)
    require(g.ndim == 3 and min(g.shape) >= 1, f"feature grid must be H x W x C with positive extents, got {g.shape}")
    require_finite("feature grid", g)
    return g


def flatten_grid(g, direction: ScanDirection) -> np.ndarray:
    g = check_grid(g)
    H, W, C = g.shape
    if direction in (ScanDirection.RIGHT, ScanDirection.LEFT):
        seq = g.reshape(H * W, C)
    else:
        seq = g.transpose(1, 0, 2).reshape(H * W, C)
    if direction in (ScanDirection.LEFT, ScanDirection.UP):
        seq = seq[::-1]
    return np.ascontiguousarray(seq)


def unflatten_grid(seq, direction: ScanDirection, H: int, W: int) -> np.ndarray:
    seq = np.asarray(seq)
    require(seq.ndim == 2, "sequence must be L x C")
    if seq.shape[0] != H * W:
        raise ContractViolation(f"sequence length {seq.shape[0]} != H*W = {H * W}")
    if direction in (ScanDirection.LEFT, ScanDirection.UP):
        seq = seq[::-1]
    C = seq.shape[1]
    if direction in (ScanDirection.RIGHT, ScanDirection.LEFT):
        return np.ascontiguousarray(seq.reshape(H, W, C))
    return np.ascontiguousarray(seq.reshape(W, H, C).transpose(1, 0, 2))


# --- token shifts ----------------------------------------------------------

class ShiftKind(Enum):
    UNI = "uni"
    QUAD = "quad"
    OMNI = "omni"


@dataclass(frozen=True, eq=False)
class ShiftSpec:
    """Per-channel parameters of a token shift.

    UNI uses ``mu`` (C,). QUAD uses ``quad`` (5, C) with rows
    (identity, north, south, east, west), each column summing to 1. OMNI uses
    ``identity`` (C,), ``k1`` (C,), ``k3`` (3, 3, C) and ``k5`` (5, 5, C).
    """

    kind: ShiftKind
    mu: np.ndarray | None = None
    quad: np.ndarray | None = None
    identity: np.ndarray | None = None
    k1: np.ndarray | None = None
    k3: np.ndarray | None = None
    k5: np.ndarray | None = None

    def __post_init__(self):
        if self.kind is ShiftKind.UNI:
            require(self.mu is not None and np.ndim(self.mu) == 1, "UNI shift needs a 1-D mu")
            require(bool(np.all((self.mu >= 0) & (self.mu <= 1))), "mu must lie in [0, 1]")
        elif self.kind is ShiftKind.QUAD:
            q = self.quad
            require(q is not None and np.ndim(q) == 2 and q.shape[0] == 5, "QUAD shift needs a 5 x C weight table")
            require(bool(np.all((q >= 0) & (q <= 1))), "QUAD weights must lie in [0, 1]")
            require(np.allclose(q.sum(axis=0), 1.0, rtol=0, atol=1e-12), "QUAD weights must sum to 1 per channel")
        else:
            require(all(a is not None for a in (self.identity, self.k1, self.k3, self.k5)),
                    "OMNI shift needs identity, k1, k3 and k5")
            C = len(self.identity)
            require(np.shape(self.k1) == (C,) and np.shape(self.k3) == (3, 3, C) and np.shape(self.k5) == (5, 5, C),
                    "OMNI kernel shapes must be (C,), (3,3,C), (5,5,C)")

    @property
    def channels(self) -> int:
        if self.kind is ShiftKind.UNI:
            return len(self.mu)
        if self.kind is ShiftKind.QUAD:
            return self.quad.shape[1]
        return len(self.identity)

    @classmethod
    def identity_for(cls, kind: ShiftKind, channels: int) -> "ShiftSpec":
        z = np.zeros(channels)
        if kind is ShiftKind.UNI:
            return cls(kind, mu=z)
        if kind is ShiftKind.QUAD:
            q = np.zeros((5, channels))
            q[0] = 1
            return cls(kind, quad=q)
        return cls(kind, identity=np.ones(channels), k1=z, k3=np.zeros((3, 3, channels)),
                   k5=np.zeros((5, 5, channels)))

    @classmethod
    def random(cls, kind: ShiftKind, channels: int, rng: np.random.Generator, scale: float = 0.1) -> "ShiftSpec":
        if kind is ShiftKind.UNI:
            return cls(kind, mu=rng.uniform(0, 1, channels))
        if kind is ShiftKind.QUAD:
            q = rng.uniform(0, 1, (5, channels))
            return cls(kind, quad=q / q.sum(axis=0))
        return cls(kind, identity=np.ones(channels),
                   k1=scale * rng.standard_normal(channels),
                   k3=scale * rng.standard_normal((3, 3, channels)),
                   k5=scale * rng.standard_normal((5, 5, channels)))


def depthwise_conv(g, kernel) -> np.ndarray:
    """Per-channel 2-D cross-correlation, zero 'same' padding, odd square kernel (k, k, C)."""
    k = kernel.shape[0]
    r = k // 2
    H, W, _ = g.shape
    padded = np.pad(g, ((r, r), (r, r), (0, 0)))
    out = np.zeros_like(g, dtype=np.result_type(g, kernel))
    for i in range(k):
        for j in range(k):
            out += kernel[i, j] * padded[i:i + H, j:j + W]
    return out


def _neighbor(g, di: int, dj: int) -> np.ndarray:
    # out[i, j] = g[i + di, j + dj], zero outside the grid
    H, W, _ = g.shape
    out = np.zeros_like(g)
    out[max(0, -di):H - max(0, di), max(0, -dj):W - max(0, dj)] = \
        g[max(0, di):H - max(0, -di), max(0, dj):W - max(0, -dj)]
    return out


def token_shift(g, spec: ShiftSpec) -> np.ndarray:
    g = check_grid(g)
    if spec.channels != g.shape[2]:
        raise ContractViolation(f"shift has {spec.channels} channels, grid has {g.shape[2]}")
    if spec.kind is ShiftKind.UNI:
        H, W, C = g.shape
        flat = g.reshape(H * W, C)
        prev = np.zeros_like(flat)
        prev[1:] = flat[:-1]
        return ((1 - spec.mu) * flat + spec.mu * prev).reshape(H, W, C)
    if spec.kind is ShiftKind.QUAD:
        w = spec.quad
        return (w[0] * g + w[1] * _neighbor(g, -1, 0) + w[2] * _neighbor(g, 1, 0)
                + w[3] * _neighbor(g, 0, 1) + w[4] * _neighbor(g, 0, -1))
    return (spec.identity * g + spec.k1 * g
            + depthwise_conv(g, spec.k3) + depthwise_conv(g, spec.k5))


def reparameterize_omni(spec: ShiftSpec) -> np.ndarray:
    """Fold the OMNI branches into one ``(5, 5, C)`` depthwise kernel."""
    if spec.kind is not ShiftKind.OMNI:
        raise ContractViolation(f"only OMNI shifts can be merged, got {spec.kind.name}")
    merged = np.array(spec.k5, dtype=float, copy=True)
    merged[1:4, 1:4] += spec.k3
    merged[2, 2] += spec.k1 + spec.identity
    return merged


# --- multi-directional scan ------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScanProjections:
    """Per-token maps from ``C_ch`` features to (q, k, v, beta).

    Keys are L2-normalised after projection. ``beta = beta_gain * sigmoid(x . w_beta + b_beta)``;
    ``beta_gain = 0`` freezes the state.
    """

    Wq: np.ndarray  # C_ch x d_k
    Wk: np.ndarray  # C_ch x d_k
    Wv: np.ndarray  # C_ch x C_ch
    w_beta: np.ndarray  # C_ch
    b_beta: float = 0.0
    beta_gain: float = 1.0

    def __post_init__(self):
        c = self.Wq.shape[0]
        require(self.Wk.shape == self.Wq.shape, "Wq and Wk must have the same shape")
        require(self.Wv.shape == (c, c), "Wv must be C_ch x C_ch so the scan preserves channel count")
        require(self.w_beta.shape == (c,), "w_beta must have length C_ch")
        require(0.0 <= self.beta_gain <= 1.0, "beta_gain must be in [0, 1]")

    @property
    def channels(self) -> int:
        return self.Wq.shape[0]

    @property
    def d_k(self) -> int:
        return self.Wq.shape[1]

    @classmethod
    def random(cls, channels: int, d_k: int, rng: np.random.Generator) -> "ScanProjections":
        s = channels ** -0.5
        return cls(s * rng.standard_normal((channels, d_k)), s * rng.standard_normal((channels, d_k)),
                   s * rng.standard_normal((channels, channels)), s * rng.standard_normal(channels))

    def project(self, x) -> SequenceBatch:
        k = x @ self.Wk
        norm = np.linalg.norm(k, axis=1, keepdims=True)
        k = np.divide(k, norm, out=np.zeros_like(k), where=norm > 0)
        beta = self.beta_gain / (1 + np.exp(-(x @ self.w_beta + self.b_beta)))
        return SequenceBatch(x @ self.Wq, k, x @ self.Wv, beta)


def directional_scan(g, proj: ScanProjections, S0, chunk_size: int, direction: ScanDirection) -> np.ndarray:
    g = check_grid(g)
    H, W, _ = g.shape
    out, _ = chunked_scan(proj.project(flatten_grid(g, direction)), S0, chunk_size)
    return unflatten_grid(out, direction, H, W)


def multi_directional_scan(g, proj: ScanProjections, S0, chunk_size: int,
                           directions=ALL_DIRECTIONS) -> np.ndarray:
    """Scan the grid along each direction and average the results."""
    g = check_grid(g)
    if proj.channels != g.shape[2]:
        raise ContractViolation(f"projections expect {proj.channels} channels, grid has {g.shape[2]}")
    require(len(directions) >= 1, "need at least one scan direction")
    S0 = check_state(S0, proj.d_k, proj.channels)
    outs = [directional_scan(g, proj, S0, chunk_size, d) for d in directions]
    return sum(outs) / len(outs)
