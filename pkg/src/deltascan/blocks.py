"""Stage-1/Stage-2 building blocks at desk scale.

Grids are ``H x W x C`` arrays. Linear layers act on the channel axis
(row-vector convention, ``x @ W``), so they behave like 1x1 convolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation, require
from .scan2d import (ALL_DIRECTIONS, ScanDirection, ScanProjections, ShiftKind, ShiftSpec, check_grid,
                     multi_directional_scan, token_shift)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def layer_norm(x, gamma, betav, eps: float = 1e-5):
    """Normalise over the last axis, then scale and shift."""
    require(eps > 0, "eps must be positive")
    x = np.asarray(x)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + betav


# --- channel attention -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class CABParams:
    W1: np.ndarray  # d x ceil(d/r)
    W2: np.ndarray  # ceil(d/r) x d
    r: int = 4

    def __post_init__(self):
        require(self.r >= 1, "reduction ratio must be >= 1")
        d, h = self.W1.shape
        require(h >= 1 and self.W2.shape == (h, d), f"W2 must be {h} x {d}")

    @classmethod
    def random(cls, d: int, rng: np.random.Generator, r: int = 4) -> "CABParams":
        h = math.ceil(d / r)
        return cls(rng.standard_normal((d, h)) / math.sqrt(d), rng.standard_normal((h, d)) / math.sqrt(h), r)

    @classmethod
    def zeros(cls, d: int, r: int = 4) -> "CABParams":
        h = math.ceil(d / r)
        return cls(np.zeros((d, h)), np.zeros((h, d)), r)


def channel_gate(F, p: CABParams) -> np.ndarray:
    pooled = F.mean(axis=(0, 1))
    return sigmoid(np.maximum(pooled @ p.W1, 0) @ p.W2)


def channel_attention(F, p: CABParams) -> np.ndarray:
    F = check_grid(F)
    if p.W1.shape[0] != F.shape[2]:
        raise ContractViolation(f"CAB expects {p.W1.shape[0]} channels, grid has {F.shape[2]}")
    return F * channel_gate(F, p)


# --- space/depth rearrangement ---------------------------------------------

def pixel_unshuffle(g, s: int) -> np.ndarray:
    """``H x W x C -> H/s x W/s x C*s*s``; channel index is ``c*s*s + i*s + j`` for phase (i, j)."""
    g = check_grid(g)
    H, W, C = g.shape
    if s < 1 or H % s or W % s:
        raise ContractViolation(f"extents {H}x{W} not divisible by factor {s}")
    x = g.reshape(H // s, s, W // s, s, C).transpose(0, 2, 4, 1, 3)
    return np.ascontiguousarray(x.reshape(H // s, W // s, C * s * s))


def pixel_shuffle(g, s: int) -> np.ndarray:
    g = check_grid(g)
    h, w, Cs = g.shape
    if s < 1 or Cs % (s * s):
        raise ContractViolation(f"channel count {Cs} not divisible by {s * s}")
    C = Cs // (s * s)
    x = g.reshape(h, w, C, s, s).transpose(0, 3, 1, 4, 2)
    return np.ascontiguousarray(x.reshape(h * s, w * s, C))


# --- dynamic state evolution block -----------------------------------------

@dataclass(frozen=True, eq=False)
class DSEBParams:
    norm1: tuple[np.ndarray, np.ndarray]
    norm2: tuple[np.ndarray, np.ndarray]
    shift: ShiftSpec
    scan: ScanProjections
    W_out: np.ndarray
    b_out: np.ndarray
    cab: CABParams | None
    directions: tuple[ScanDirection, ...] = ALL_DIRECTIONS

    def __post_init__(self):
        c = self.W_out.shape[0]
        require(self.W_out.shape == (c, c) and self.b_out.shape == (c,), "output projection must be C x C")
        require(self.shift.channels == c and self.scan.channels == c, "shift/scan width must match the block")
        require(all(np.shape(a) == (c,) for a in (*self.norm1, *self.norm2)), "norm parameters must have length C")
        if self.cab is not None:
            require(self.cab.W1.shape[0] == c, "CAB width must match the block")

    @property
    def width(self) -> int:
        return self.W_out.shape[0]

    @classmethod
    def random(cls, width: int, rng: np.random.Generator, *, d_k: int = 8, shift: ShiftKind = ShiftKind.OMNI,
               directions=ALL_DIRECTIONS, r: int = 4) -> "DSEBParams":
        norm = (np.ones(width), np.zeros(width))
        return cls(norm, norm, ShiftSpec.random(shift, width, rng), ScanProjections.random(width, d_k, rng),
                   rng.standard_normal((width, width)) / math.sqrt(width), np.zeros(width),
                   CABParams.random(width, rng, r), tuple(directions))


def dseb_forward(g, p: DSEBParams, chunk_size: int = 16) -> np.ndarray:
    """norm -> shift -> 2-D scan -> project -> residual, then norm -> CAB -> residual."""
    g = check_grid(g)
    if g.shape[2] != p.width:
        raise ContractViolation(f"block width {p.width} != grid channels {g.shape[2]}")
    x = token_shift(layer_norm(g, *p.norm1), p.shift)
    S0 = np.zeros((p.scan.d_k, p.width))
    g1 = g + multi_directional_scan(x, p.scan, S0, chunk_size, p.directions) @ p.W_out + p.b_out
    if p.cab is None:
        return g1
    return g1 + channel_attention(layer_norm(g1, *p.norm2), p.cab)


# --- prior extraction and restoration --------------------------------------

@dataclass(frozen=True, eq=False)
class CPENParams:
    W_in: np.ndarray  # in_channels*16 x width
    b_in: np.ndarray
    blocks: list[DSEBParams]
    W_head: np.ndarray  # width x d_z
    b_head: np.ndarray

    @property
    def d_z(self) -> int:
        return self.W_head.shape[1]


def init_cpen(in_channels: int, rng: np.random.Generator, *, width: int = 16, n_blocks: int = 2, d_z: int = 32,
              d_k: int = 8, shift: ShiftKind = ShiftKind.OMNI, directions=ALL_DIRECTIONS) -> CPENParams:
    """Seeded desk-scale prior extractor (the full-size model uses 4 groups of 6 blocks)."""
    c_in = in_channels * 16
    return CPENParams(
        rng.standard_normal((c_in, width)) / math.sqrt(c_in), np.zeros(width),
        [DSEBParams.random(width, rng, d_k=d_k, shift=shift, directions=directions) for _ in range(n_blocks)],
        rng.standard_normal((width, d_z)) / math.sqrt(width), np.zeros(d_z))


def cpen_extract_ipr(lq, gt, params: CPENParams, chunk_size: int = 16) -> np.ndarray:
    """Compress ``lq`` (optionally with ``gt``) into a prior vector of length ``d_z``."""
    lq = check_grid(lq)
    x = lq
    if gt is not None:
        gt = check_grid(gt)
        if gt.shape[:2] != lq.shape[:2]:
            raise ContractViolation(f"lq {lq.shape[:2]} and gt {gt.shape[:2]} extents differ")
        x = np.concatenate([lq, gt], axis=2)
    x = pixel_unshuffle(x, 4)
    if x.shape[2] != params.W_in.shape[0]:
        raise ContractViolation(f"CPEN expects {params.W_in.shape[0] // 16} input channels, got {x.shape[2] // 16}")
    h = x @ params.W_in + params.b_in
    for blk in params.blocks:
        h = dseb_forward(h, blk, chunk_size)
    return h.mean(axis=(0, 1)) @ params.W_head + params.b_head


@dataclass(frozen=True, eq=False)
class RestoreParams:
    W_in: np.ndarray  # channels x width
    b_in: np.ndarray
    blocks: list[DSEBParams]
    mod_scale: list[np.ndarray]  # per block, d_z x width
    mod_bias: list[np.ndarray]
    W_out: np.ndarray  # width x channels
    b_out: np.ndarray

    def __post_init__(self):
        require(len(self.mod_scale) == len(self.blocks) == len(self.mod_bias), "one modulation head per block")

    @property
    def d_z(self) -> int:
        return self.mod_scale[0].shape[0] if self.mod_scale else 0

    def without_modulation(self) -> "RestoreParams":
        return replace(self, mod_scale=[np.zeros_like(m) for m in self.mod_scale],
                       mod_bias=[np.zeros_like(m) for m in self.mod_bias])


def init_restorer(channels: int, rng: np.random.Generator, *, width: int = 16, n_blocks: int = 2, d_z: int = 32,
                  d_k: int = 8, shift: ShiftKind = ShiftKind.OMNI) -> RestoreParams:
    return RestoreParams(
        rng.standard_normal((channels, width)) / math.sqrt(channels), np.zeros(width),
        [DSEBParams.random(width, rng, d_k=d_k, shift=shift) for _ in range(n_blocks)],
        [0.1 * rng.standard_normal((d_z, width)) for _ in range(n_blocks)],
        [0.1 * rng.standard_normal((d_z, width)) for _ in range(n_blocks)],
        rng.standard_normal((width, channels)) / math.sqrt(width), np.zeros(channels))


def restore_forward(lq, Z, params: RestoreParams, chunk_size: int = 16) -> np.ndarray:
    """Prior-modulated DSEB stack with a global skip. ``Z=None`` runs unconditioned."""
    lq = check_grid(lq)
    if Z is not None:
        Z = np.asarray(Z)
        if Z.shape != (params.d_z,):
            raise ContractViolation(f"prior has shape {Z.shape}, expected ({params.d_z},)")
    h = lq @ params.W_in + params.b_in
    for blk, ms, mb in zip(params.blocks, params.mod_scale, params.mod_bias):
        if Z is not None:
            h = h * (1 + Z @ ms) + Z @ mb
        h = dseb_forward(h, blk, chunk_size)
    return lq + h @ params.W_out + params.b_out
