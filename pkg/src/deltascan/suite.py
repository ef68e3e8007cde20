"""Equivalence suite, benchmark and ablation runner behind the CLI."""

from __future__ import annotations

import csv
import gc
import hashlib
import io
import math
import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import diffusion
from .blocks import cpen_extract_ipr, init_cpen
from .chunk import chunked_scan, flops_estimate
from .config import FULL, RunConfig
from .scan2d import ALL_DIRECTIONS, ScanDirection, ShiftKind, ShiftSpec, flatten_grid, reparameterize_omni, \
    token_shift, unflatten_grid, depthwise_conv
from .state import SequenceBatch, EvolutionConfig, loss_gradient, reconstruction_loss, resolve_dtype, \
    sequential_scan

TOLERANCE = {"fp64": 1e-9, "fp32": 1e-4}
UT_TOLERANCE = {"fp64": 1e-10, "fp32": 1e-4}
TIMING_METHOD = "time.perf_counter_ns (monotonic); warmup runs, then median of repeats, cells of each mode interleaved round-robin; gc disabled while timing"


def random_instance(rng: np.random.Generator, L: int, d_k: int, d_v: int):
    """Random batch with unit-norm keys and beta in [0, 1], plus a random initial state (fp64)."""
    K = rng.standard_normal((L, d_k))
    K /= np.linalg.norm(K, axis=1, keepdims=True)
    batch = SequenceBatch(rng.standard_normal((L, d_k)), K, rng.standard_normal((L, d_v)), rng.uniform(0, 1, L))
    return batch, rng.standard_normal((d_k, d_v))


def resolve_chunk(C, L: int) -> int:
    return L if C == FULL else C


def max_diff(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64)), initial=0.0))


@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.measured)) and self.measured <= self.tolerance

    def to_dict(self) -> dict:
        return {"name": self.name, "status": "pass" if self.passed else "fail",
                "measured": self.measured, "tolerance": self.tolerance, **self.detail}


# --- individual checks -----------------------------------------------------

def check_chunk_equivalence(cfg: RunConfig, *, mutate_mask: bool = False) -> list[Check]:
    dtype = resolve_dtype(cfg.precision)
    rng = np.random.default_rng([cfg.seed, 1])
    worst = worst_ut = 0.0
    handoffs_ok = True
    mask_diagonal = -1 if mutate_mask else 0
    for _ in range(cfg.equiv_instances):
        L = int(rng.integers(1, cfg.equiv_max_len + 1))
        d_k, d_v = (int(x) for x in rng.integers(1, cfg.equiv_max_dim + 1, 2))
        C = resolve_chunk(cfg.chunk_sizes[int(rng.integers(len(cfg.chunk_sizes)))], L)
        batch, S0 = random_instance(rng, L, d_k, d_v)
        batch, S0 = batch.astype(dtype), S0.astype(dtype)
        O_ref, S_ref = sequential_scan(batch, S0, EvolutionConfig(1.0, cfg.precision))
        trace = []
        O, S = chunked_scan(batch, S0, C, trace=trace, mask_diagonal=mask_diagonal)
        worst = max(worst, max_diff(O, O_ref), max_diff(S, S_ref))
        worst_ut = max(worst_ut, max(r.ut_residual for r in trace))
        handoffs_ok &= len(trace) == math.ceil(L / C)
    n = {"instances": cfg.equiv_instances, "chunk_sizes": list(cfg.chunk_sizes), "precision": cfg.precision}
    return [
        Check("chunked_vs_sequential", worst, TOLERANCE[cfg.precision], n),
        Check("ut_residual", worst_ut, UT_TOLERANCE[cfg.precision], n),
        Check("chunk_handoffs", 0.0 if handoffs_ok else 1.0, 0.0),
    ]


def check_chunk_size_independence(cfg: RunConfig, n: int = 10) -> Check:
    rng = np.random.default_rng([cfg.seed, 2])
    worst = 0.0
    for _ in range(n):
        L = int(rng.integers(1, 129))
        batch, S0 = random_instance(rng, L, int(rng.integers(1, 17)), int(rng.integers(1, 17)))
        O0, S_0 = chunked_scan(batch, S0, 1)
        for C in (3, 4, 16, 64, L):
            O, S = chunked_scan(batch, S0, C)
            worst = max(worst, max_diff(O, O0), max_diff(S, S_0))
    return Check("chunk_size_independence", worst, 1e-9)


def check_causality(cfg: RunConfig, n: int = 10) -> Check:
    rng = np.random.default_rng([cfg.seed, 3])
    worst = 0.0
    for _ in range(n):
        L = int(rng.integers(2, 100))
        p = int(rng.integers(0, L - 1))
        batch, S0 = random_instance(rng, L, 8, 6)
        beta = batch.beta.copy()
        beta[p + 1:] = 0
        a = SequenceBatch(batch.Q, batch.K, batch.V, beta)
        K2 = batch.K.copy()
        K2[p + 1:] = np.roll(K2[p + 1:], 1, axis=1)
        Q2, V2 = batch.Q.copy(), batch.V.copy()
        Q2[p + 1:] += 1.0
        V2[p + 1:] *= -3.0
        b = SequenceBatch(Q2, K2, V2, beta)
        C = int(rng.choice([1, 4, 16, L]))
        worst = max(worst, max_diff(chunked_scan(a, S0, C)[0][:p + 1], chunked_scan(b, S0, C)[0][:p + 1]))
    return Check("causality", worst, 1e-12)


def check_gradient(cfg: RunConfig, n: int = 100, h: float = 1e-5) -> Check:
    rng = np.random.default_rng([cfg.seed, 4])
    worst = 0.0
    for _ in range(n):
        d_k, d_v = (int(x) for x in rng.integers(1, 9, 2))
        S, x, y = rng.standard_normal((d_k, d_v)), rng.standard_normal(d_k), rng.standard_normal(d_v)
        fd = finite_difference_gradient(S, x, y, h)
        g = loss_gradient(S, x, y)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-300)))
    return Check("gradient_finite_difference", worst, 1e-6, {"instances": n})


def finite_difference_gradient(S, x, y, h: float = 1e-5) -> np.ndarray:
    fd = np.empty_like(S)
    for idx in np.ndindex(S.shape):
        Sp, Sm = S.copy(), S.copy()
        Sp[idx] += h
        Sm[idx] -= h
        fd[idx] = (reconstruction_loss(Sp, x, y) - reconstruction_loss(Sm, x, y)) / (2 * h)
    return fd


def check_scan_roundtrip(cfg: RunConfig, n: int = 100) -> Check:
    rng = np.random.default_rng([cfg.seed, 5])
    mismatches = 0
    for _ in range(n):
        H, W = (int(x) for x in rng.integers(1, 33, 2))
        g = rng.standard_normal((H, W, int(rng.integers(1, 9))))
        for d in ScanDirection:
            mismatches += not np.array_equal(unflatten_grid(flatten_grid(g, d), d, H, W), g)
    return Check("scan_roundtrip", float(mismatches), 0.0, {"grids": n})


def check_omni_merge(cfg: RunConfig, n: int = 20) -> Check:
    rng = np.random.default_rng([cfg.seed, 6])
    worst = 0.0
    for _ in range(n):
        H, W, C = int(rng.integers(5, 17)), int(rng.integers(5, 17)), int(rng.integers(1, 9))
        g = rng.standard_normal((H, W, C))
        spec = ShiftSpec.random(ShiftKind.OMNI, C, rng, scale=1.0)
        spec = replace(spec, identity=rng.standard_normal(C))
        merged = depthwise_conv(g, reparameterize_omni(spec))
        worst = max(worst, max_diff(merged[2:-2, 2:-2], token_shift(g, spec)[2:-2, 2:-2]))
    return Check("omni_merge", worst, 1e-12)


def oracle_reverse_chain(x0, s: diffusion.NoiseSchedule, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Noise ``x0`` step by step, then invert with exact noise predictions. Returns ``(x_T, x0_hat)``."""
    x = x0
    for t in range(1, s.T + 1):
        x = diffusion.forward_step(x, t, rng.standard_normal(x0.shape), s)
    x_T = x
    for t in range(s.T, 0, -1):
        eps_hat = (x - np.sqrt(s.abar(t)) * x0) / np.sqrt(1 - s.abar(t))
        x = diffusion.reverse_step(x, t, eps_hat, s)
    return x_T, x


def check_diffusion_inversion(cfg: RunConfig, n: int = 20) -> Check:
    rng = np.random.default_rng([cfg.seed, 7])
    worst = 0.0
    for T in (1, 5, 10, 20):
        for s in (diffusion.make_schedule(T), diffusion.few_step_schedule(T)):
            for _ in range(n):
                x0 = rng.standard_normal(8)
                worst = max(worst, max_diff(oracle_reverse_chain(x0, s, rng)[1], x0))
    return Check("diffusion_inversion", worst, 1e-6)


def check_forward_marginal(cfg: RunConfig, samples: int = 10_000, dim: int = 8, t: int = 7) -> Check:
    """Compose ``t`` single forward steps and compare mean/variance with the closed form, in standard errors."""
    rng = np.random.default_rng([cfg.seed, 8])
    s = diffusion.few_step_schedule(10)
    x0 = rng.standard_normal(dim)
    x = np.broadcast_to(x0, (samples, dim))
    for step in range(1, t + 1):
        x = diffusion.forward_step(x, step, rng.standard_normal((samples, dim)), s)
    z_mean, z_var = marginal_z_scores(x, np.sqrt(s.abar(t)) * x0, 1 - s.abar(t))
    return Check("forward_marginal", max(abs(z_mean), abs(z_var)), 3.0,
                 {"unit": "standard errors", "samples": samples, "dim": dim})


def marginal_z_scores(x, mean_ref, var_ref: float) -> tuple[float, float]:
    """Pooled z-scores of the sample mean and variance of ``x`` (n x d, iid columns) against the closed form.

    Pooling over the d columns gives one test per moment, so a 3-sigma bound
    is a single 3-sigma test rather than 2d of them.
    """
    n, d = x.shape
    z_mean = float(np.sum((x.mean(axis=0) - mean_ref) / np.sqrt(var_ref / n)) / np.sqrt(d))
    pooled_var = float(np.sum((x - x.mean(axis=0)) ** 2) / (d * (n - 1)))
    z_var = (pooled_var - var_ref) / (var_ref * np.sqrt(2 / (d * (n - 1))))
    return z_mean, z_var


def run_equivalence_suite(cfg: RunConfig, *, mutate_mask: bool = False) -> dict:
    checks = [
        *check_chunk_equivalence(cfg, mutate_mask=mutate_mask),
        check_chunk_size_independence(cfg),
        check_causality(cfg),
        check_gradient(cfg),
        check_scan_roundtrip(cfg),
        check_omni_merge(cfg),
        check_diffusion_inversion(cfg),
        check_forward_marginal(cfg),
    ]
    return {
        "suite": "equivalence",
        "config": cfg.to_dict(),
        "generator": diffusion.GENERATOR,
        "properties": [c.to_dict() for c in checks],
        "passed": all(c.passed for c in checks),
    }


# --- benchmark -------------------------------------------------------------

CSV_COLUMNS = ["L", "C", "d_k", "d_v", "mode", "wall_ns", "flops", "max_abs_diff"]


@dataclass
class BenchReport:
    rows: list[dict]
    meta: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: r[k] for k in CSV_COLUMNS})
        return buf.getvalue()

    def speedups(self) -> list[dict]:
        seq = {(r["L"], r["C"]): r["wall_ns"] for r in self.rows if r["mode"] == "sequential"}
        return [{"L": r["L"], "C": r["C"], "speedup": seq[r["L"], r["C"]] / r["wall_ns"]}
                for r in self.rows if r["mode"] == "chunked"]


def interleaved_medians(fns: list, warmup: int, repeats: int) -> list[int]:
    """Median wall time (ns) of each callable.

    Runs are interleaved round-robin, so a slow stretch of the host lands on
    every cell instead of skewing whichever one happened to be running.
    """
    for _ in range(warmup):
        for fn in fns:
            fn()
    times = [[] for _ in fns]
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            for fn, bucket in zip(fns, times):
                t0 = time.perf_counter_ns()
                fn()
                bucket.append(time.perf_counter_ns() - t0)
    finally:
        if gc_was_enabled:
            gc.enable()
    return [int(statistics.median(t)) for t in times]


def sequential_flops(L: int, d_k: int, d_v: int) -> float:
    # per token: k^T S, two outer products, q^T S
    return float(L * 4 * d_k * d_v)


def run_benchmark(cfg: RunConfig) -> BenchReport:
    dtype = resolve_dtype(cfg.precision)
    evo = EvolutionConfig(1.0, cfg.precision)
    rows, fns = [], []
    with threadpool_limits(limits=cfg.workers):
        for L in cfg.seq_lengths:
            rng = np.random.default_rng([cfg.seed, L])
            batch, S0 = random_instance(rng, L, cfg.d_k, cfg.d_v)
            batch, S0 = batch.astype(dtype), S0.astype(dtype)
            O_ref, S_ref = sequential_scan(batch, S0, evo)
            for C in cfg.chunk_sizes:
                C = resolve_chunk(C, L)
                O, S = chunked_scan(batch, S0, C)
                diff = max(max_diff(O, O_ref), max_diff(S, S_ref))
                base = {"L": L, "C": C, "d_k": cfg.d_k, "d_v": cfg.d_v}
                rows.append({**base, "mode": "sequential", "flops": sequential_flops(L, cfg.d_k, cfg.d_v),
                             "max_abs_diff": 0.0})
                fns.append(lambda b=batch, s=S0: sequential_scan(b, s, evo))
                rows.append({**base, "mode": "chunked", "flops": flops_estimate(L, C, cfg.d_k, cfg.d_v),
                             "max_abs_diff": diff})
                fns.append(lambda b=batch, s=S0, c=C: chunked_scan(b, s, c))
        # one interleaved group per mode keeps each round short relative to host hiccups
        for mode in ("chunked", "sequential"):
            idx = [i for i, r in enumerate(rows) if r["mode"] == mode]
            for i, ns in zip(idx, interleaved_medians([fns[i] for i in idx], cfg.warmup, cfg.repeats)):
                rows[i]["wall_ns"] = ns
    rows = [{k: r[k] for k in CSV_COLUMNS} for r in rows]
    meta = {"timing": TIMING_METHOD, "warmup": cfg.warmup, "repeats": cfg.repeats, "workers": cfg.workers,
            "precision": cfg.precision, "seed": cfg.seed, "generator": diffusion.GENERATOR}
    return BenchReport(rows, meta)


# --- ablation --------------------------------------------------------------

def checksum(a) -> str:
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<f8").tobytes()).hexdigest()[:16]


def ablation_variants():
    for kind in ShiftKind:
        for mode, dirs in (("1d", (ScanDirection.RIGHT,)), ("2d", ALL_DIRECTIONS)):
            yield kind, mode, dirs


def run_ablation(cfg: RunConfig) -> dict:
    n = cfg.image_size
    lq = np.random.default_rng([cfg.seed, 9]).uniform(0, 1, (n, n, 1))
    base = init_cpen(1, np.random.default_rng([cfg.seed, 10]))
    rows = []
    for kind, mode, dirs in ablation_variants():
        shift_rng = np.random.default_rng([cfg.seed, 11])
        params = replace(base, blocks=[
            replace(b, shift=ShiftSpec.random(kind, b.width, shift_rng), directions=dirs) for b in base.blocks])
        t0 = time.perf_counter_ns()
        Z = cpen_extract_ipr(lq, None, params)
        rows.append({"shift": kind.value, "scan": mode, "checksum": checksum(Z),
                     "z_norm": float(np.linalg.norm(Z)), "wall_ns": time.perf_counter_ns() - t0})
    return {"suite": "ablation", "config": cfg.to_dict(), "variants": rows}
