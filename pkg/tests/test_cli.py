import csv
import io
import json
import math

import numpy as np
import pytest

from deltascan.cli import main
from deltascan.config import RunConfig
from deltascan.suite import CSV_COLUMNS, run_ablation, run_benchmark, run_equivalence_suite

SMALL = {"equiv_instances": 20, "equiv_max_len": 64, "equiv_max_dim": 8}


def write_cfg(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(kw))
    return str(p)


def test_equiv_exit_zero(tmp_path):
    out = tmp_path / "r.json"
    assert main(["equiv", "--config", write_cfg(tmp_path, **SMALL), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] and len(report["properties"]) >= 5
    assert all(p["status"] == "pass" for p in report["properties"])


def test_equiv_mutation_fails(tmp_path):
    out = tmp_path / "r.json"
    assert main(["equiv", "--config", write_cfg(tmp_path, **SMALL), "--out", str(out), "--mutate-mask"]) == 1
    entry = json.loads(out.read_text())["properties"][0]
    assert entry["name"] == "chunked_vs_sequential" and entry["status"] == "fail" and entry["measured"] > 0


def test_equiv_chunk_one_is_tight():
    report = run_equivalence_suite(RunConfig(chunk_sizes=(1,), **SMALL))
    entry = next(p for p in report["properties"] if p["name"] == "chunked_vs_sequential")
    assert entry["measured"] <= 1e-12


def test_equiv_fp32():
    report = run_equivalence_suite(RunConfig(precision="fp32", chunk_sizes=(1, 3, 16, "L"), **SMALL))
    assert report["passed"]


def test_equiv_report_deterministic():
    cfg = RunConfig(**SMALL)
    assert json.dumps(run_equivalence_suite(cfg)) == json.dumps(run_equivalence_suite(cfg))


def test_bad_config_exit_code(tmp_path, capsys):
    assert main(["equiv", "--config", write_cfg(tmp_path, seeed=1)]) == 2
    assert "seeed" in capsys.readouterr().err


def test_bench_csv(tmp_path):
    out = tmp_path / "b.csv"
    cfg = write_cfg(tmp_path, seq_lengths=[100, 64], chunk_sizes=[16, "L"], d_k=8, d_v=8, warmup=1, repeats=5)
    assert main(["bench", "--config", cfg, "--precision", "fp32", "--out", str(out)]) == 0
    text = out.read_text()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 8
    for r in rows:
        if r["mode"] == "chunked":
            assert math.isfinite(float(r["max_abs_diff"])) and float(r["max_abs_diff"]) <= 1e-4
    r100 = next(r for r in rows if r["L"] == "100" and r["C"] == "16" and r["mode"] == "chunked")
    per_chunk = 16 * 16 * 8 * 2 + 2 * 16 * 64 + 16 ** 3 / 3
    assert float(r100["flops"]) == 7 * per_chunk


def test_bench_report_fields():
    rep = run_benchmark(RunConfig(seq_lengths=(32,), chunk_sizes=(8,), d_k=4, d_v=4, warmup=0, repeats=1))
    assert {r["mode"] for r in rep.rows} == {"sequential", "chunked"}
    assert rep.meta["workers"] == 1 and "median" in rep.meta["timing"]
    assert rep.speedups()[0]["speedup"] > 0


def _strip_timing(report):
    return [{k: v for k, v in row.items() if k != "wall_ns"} for row in report["variants"]]


def test_ablation_variants(tmp_path):
    out = tmp_path / "a.json"
    assert main(["ablate", "--out", str(out)]) == 0
    rows = json.loads(out.read_text())["variants"]
    assert len(rows) == 6
    assert {(r["shift"], r["scan"]) for r in rows} == {(s, m) for s in ("uni", "quad", "omni") for m in ("1d", "2d")}
    assert len({r["checksum"] for r in rows}) == 6
    assert _strip_timing(run_ablation(RunConfig())) == _strip_timing(json.loads(out.read_text()))


def test_scan_demo(tmp_path):
    src = tmp_path / "in.pgm"
    src.write_bytes(b"P5\n8 6\n255\n" + np.random.default_rng(0).integers(0, 256, 48, dtype=np.uint8).tobytes())
    dst = tmp_path / "out.pgm"
    assert main(["scan-demo", str(src), str(dst)]) == 0
    data = dst.read_bytes()
    assert data.startswith(b"P5\n8 6\n255\n") and len(data) == len(b"P5\n8 6\n255\n") + 48


def test_scan_demo_bad_input(tmp_path):
    src = tmp_path / "in.pgm"
    src.write_bytes(b"P6\n1 1\n255\n\0\0\0")
    assert main(["scan-demo", str(src), str(tmp_path / "o.pgm")]) == 2


def test_diffuse_demo(tmp_path):
    out = tmp_path / "d.json"
    assert main(["diffuse-demo", "--steps", "5", "--seed", "3", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["steps"] == 5 and rep["denoiser_calls"] == 5 and len(rep["sample"]) == 32
    assert rep["max_abs_error"] < 1e-9


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "deltascan", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "equiv" in r.stdout


@pytest.mark.parametrize("flag", ["--workers", "--seed"])
def test_flag_validation(tmp_path, flag):
    assert main(["ablate", flag, "0" if flag == "--workers" else "-1", "--out", str(tmp_path / "x.json")]) == 2
