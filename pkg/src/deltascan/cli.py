"""Command-line entry point: ``deltascan {equiv,bench,ablate,scan-demo,diffuse-demo}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diffusion
from .blocks import DSEBParams, cpen_extract_ipr, dseb_forward, init_cpen
from .config import FULL, ConfigError, RunConfig, parse_config
from .pgm import PGMError, pgm_read, pgm_write
from .scan2d import ALL_DIRECTIONS, ScanDirection
from .suite import run_ablation, run_benchmark, run_equivalence_suite


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def cmd_equiv(cfg: RunConfig, args) -> int:
    report = run_equivalence_suite(cfg, mutate_mask=args.mutate_mask)
    _emit(_dump(report), cfg.out)
    for p in report["properties"]:
        print(f"{p['status'].upper():4} {p['name']}: {p['measured']:.3e} (tol {p['tolerance']:.1e})", file=sys.stderr)
    return 0 if report["passed"] else 1


def cmd_bench(cfg: RunConfig, args) -> int:
    report = run_benchmark(cfg)
    _emit(report.to_csv(), cfg.out)
    print(_dump({"meta": report.meta, "speedups": report.speedups()}), end="", file=sys.stderr)
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    _emit(_dump(run_ablation(cfg)), cfg.out)
    return 0


def cmd_scan_demo(cfg: RunConfig, args) -> int:
    g = pgm_read(args.input)
    rng = np.random.default_rng(cfg.seed)
    width = 8
    lift = rng.standard_normal((1, width))
    dirs = ALL_DIRECTIONS if cfg.scan_2d else (ScanDirection.RIGHT,)
    block = DSEBParams.random(width, rng, shift=cfg.shift, directions=dirs)
    chunk = next((c for c in cfg.chunk_sizes if c != FULL), 16)
    h = dseb_forward(g @ lift, block, chunk)
    out = np.clip(g + 0.1 * h @ lift.T / width, 0.0, 1.0)
    pgm_write(out, args.output)
    print(_dump({"input": str(args.input), "output": str(args.output), "shape": list(g.shape),
                 "shift": cfg.shift_kind, "directions": [d.value for d in dirs], "chunk_size": chunk}), end="")
    return 0


def cmd_diffuse_demo(cfg: RunConfig, args) -> int:
    rng = np.random.default_rng(cfg.seed)
    image = rng.uniform(0, 1, (cfg.image_size, cfg.image_size, 1))
    target = cpen_extract_ipr(image, None, init_cpen(1, rng))
    s = diffusion.few_step_schedule(args.steps)
    calls = []

    def predict_x0(z_t, t, condition):
        calls.append(t)
        return condition

    z = diffusion.sample_prior(diffusion.from_x0_predictor(predict_x0, s), target, s, cfg.seed, dim=len(target))
    _emit(_dump({"steps": s.T, "denoiser_calls": len(calls), "seed": cfg.seed, "generator": diffusion.GENERATOR,
                 "target": target.tolist(), "sample": z.tolist(),
                 "max_abs_error": float(np.max(np.abs(z - target)))}), cfg.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="strict JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--precision", choices=["fp32", "fp64"])
    common.add_argument("--out", help="report path (default: stdout)")
    common.add_argument("--workers", type=int, help="BLAS threads inside timed regions")

    parser = argparse.ArgumentParser(prog="deltascan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("equiv", parents=[common], help="chunked-vs-sequential oracle suite (JSON)")
    p.add_argument("--mutate-mask", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_equiv)
    sub.add_parser("bench", parents=[common], help="scaling benchmark (CSV)").set_defaults(func=cmd_bench)
    sub.add_parser("ablate", parents=[common], help="shift x scan variants (JSON)").set_defaults(func=cmd_ablate)
    p = sub.add_parser("scan-demo", parents=[common], help="run one block over a P5 PGM image")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_scan_demo)
    p = sub.add_parser("diffuse-demo", parents=[common], help="few-step prior sampling")
    p.add_argument("--steps", type=int, default=10)
    p.set_defaults(func=cmd_diffuse_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        cfg = cfg.with_overrides(seed=args.seed, precision=args.precision, out=args.out, workers=args.workers)
        return args.func(cfg, args)
    except (ConfigError, PGMError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
