"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (visible under ``pytest -v``) before
asserting, so a failing criterion still reports its measured numbers.
"""
import json
import subprocess
import sys
import textwrap
import time

import numpy as np
import pytest

from lessvit import bench, cli, verify
from lessvit.hypermae import HCSRange
from lessvit.spectral import make_config, make_reference_grid


@pytest.fixture
def report(capsys):
    def emit(n: int, passed: bool, detail: str) -> bool:
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} criterion {n}: {detail}")
        return passed

    return emit


def test_criterion_01_rank1_factorization(report):
    t0 = time.perf_counter()
    res = verify.check_rank1_equivalence(n_configs=50, tol=1e-10)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 10.0
    assert report(1, ok, f"50 configs max_abs={res.max_error:.2e} (tol 1e-10) in {elapsed:.2f}s (limit 10s)")


def test_criterion_02_dense_oracle(report):
    r64 = verify.check_dense_oracle(tol=1e-12, dtype=np.float64)
    r32 = verify.check_dense_oracle(tol=1e-6, dtype=np.float32)
    ok = r64.passed and r32.passed
    assert report(2, ok, f"f64 max_abs={r64.max_error:.2e} (tol 1e-12), f32 max_abs={r32.max_error:.2e} (tol 1e-6)")


def test_criterion_03_flop_closed_forms(report):
    closed, compose, dense = verify.check_flops()
    # literal C -> 2C ratios for transparency; the asserted quantity doubles the token count C+1
    lit = [
        bench.count_flops(bench.ShapeConfig(N=4, C=2 * C, dim=8, heads=2), "dense").counted["dense"]
        / bench.count_flops(bench.ShapeConfig(N=4, C=C, dim=8, heads=2), "dense").counted["dense"]
        for C in (8, 64)
    ]
    ok = closed.passed and compose.passed and dense.passed
    assert report(3, ok, (
        f"{len(verify.FLOP_GRID)} configs mismatches={int(closed.max_error)}; compose ratio err={compose.max_error:.1e}; "
        f"dense ratio dev from 4x={dense.max_error:.3f} (tol 0.10); literal C->2C dense ratios={lit[0]:.3f},{lit[1]:.3f}"
    ))


def test_criterion_04_scaling_study(report):
    t0 = time.perf_counter()
    less = bench.measure_latency("less", bench.DEFAULT_C_LIST, reps=5)
    dense = bench.measure_latency("dense", bench.DEFAULT_C_LIST, reps=5)
    elapsed = time.perf_counter() - t0
    e_less = bench.fit_scaling_exponent(less)
    e_dense = bench.fit_scaling_exponent(dense)
    capped = [r.C for r in dense if r.status == "capacity-exceeded"]
    ok = e_less <= 1.3 and e_dense - e_less >= 0.5 and capped == [200] and elapsed < 300
    assert report(4, ok, (
        f"exponent less={e_less:.3f} (<=1.3) dense={e_dense:.3f} gap={e_dense - e_less:.3f} (>=0.5); "
        f"dense capacity-exceeded at C={capped}; {elapsed:.1f}s"
    ))


def test_criterion_05_ssrope(report):
    res = verify.check_ssrope(draws=100, norm_tol=1e-6, shift_tol=1e-5)
    ok = all(r.passed for r in res)
    assert report(5, ok, "; ".join(f"{r.name}={r.max_error:.1e}" for r in res))


def test_criterion_06_masking_and_hcs(report):
    mask = verify.check_mask_ratios()
    hcs = [r for C in (8, 120, 202) for r in verify.check_hcs_ranges(C=C, draws=10_000)]
    bounds = {C: [verify.hcs_bounds(C, HCSRange(*r)) for r in ((0.2, 0.3), (0.4, 0.5))] for C in (120, 202)}
    ok = mask.passed and all(r.passed for r in hcs)
    assert report(6, ok, (
        f"12+6 masked with shared spatial set over {mask.detail}: violations={int(mask.max_error)}; "
        f"HCS violations over 10000 draws for C in (8,120,202)={[int(r.max_error) for r in hcs]} bounds={bounds}"
    ))


def test_criterion_07_channel_configs(report):
    grid = make_reference_grid()
    cfgs = {k: make_config(grid, k) for k in ("C120_VNIR+", "C120_SWIR+", "C82_disjoint", "C202_full")}
    sizes = [len(c) for c in cfgs.values()]
    split = [(int(np.sum(c.indices < grid.vnir_count)), int(np.sum(c.indices >= grid.vnir_count))) for c in cfgs.values()]
    vnir, disj = set(cfgs["C120_VNIR+"].indices), set(cfgs["C82_disjoint"].indices)
    disjoint, union = not (vnir & disj), vnir | disj == set(range(len(grid)))
    ok = sizes == [120, 120, 82, 202] and split[:3] == [(80, 40), (40, 80), (20, 62)] and disjoint and union
    assert report(7, ok, f"sizes={sizes} vnir/swir={split} disjoint={disjoint} union_is_full={union}")


def test_criterion_08_gradients(report):
    from dataclasses import replace

    from lessvit.hypermae import get_preset

    t0 = time.perf_counter()
    err = verify.model_grad_check(replace(get_preset("toy"), enc_depth=1), n_coords=24, batch=2)
    elapsed = time.perf_counter() - t0
    ok = err < 1e-4 and elapsed < 120
    assert report(8, ok, f"toy 1-block f64 max_rel_err={err:.2e} over 24 coords (tol 1e-4) in {elapsed:.1f}s")


def test_criterion_09_toy_pretraining(report, tmp_path):
    t0 = time.perf_counter()
    codes = [cli.main(["pretrain", "--preset", "toy", "--steps", "200", "--seed", "0", "--quiet",
                       "--out", str(tmp_path / run)]) for run in ("a", "b")]
    elapsed = time.perf_counter() - t0
    text = [(tmp_path / run / "losses.csv").read_bytes() for run in ("a", "b")]
    losses = np.loadtxt(tmp_path / "a" / "losses.csv", delimiter=",", skiprows=1)[:, 1]
    ratio = losses[-1] / losses[0]
    ok = codes == [0, 0] and ratio <= 0.5 and text[0] == text[1] and elapsed < 600
    assert report(9, ok, (
        f"step1={losses[0]:.4f} step200={losses[-1]:.4f} ratio={ratio:.3f} (<=0.5); "
        f"identical CSVs={text[0] == text[1]}; two runs in {elapsed:.1f}s"
    ))


REFERENCE_SCRIPT = textwrap.dedent("""
    import json
    import numpy as np
    from lessvit.hypermae import get_preset, init_model, make_batch, step_plan, forward_loss
    cfg = get_preset("reference-shape-only")
    model = init_model(cfg, seed=0, dtype=np.float32)
    cubes = make_batch(cfg, 0, 1)
    plan = step_plan(cfg, cubes.shape[-3], 0)
    loss = forward_loss(model, cubes, cfg.wavelengths(), plan)
    loss.backward()
    blocks = model.encoder + model.decoder.blocks
    print(json.dumps({
        "enc": [(b.dim, b.heads, b.rank, b.d1, b.d2) for b in model.encoder],
        "dec": [(b.dim, b.heads, b.rank, b.d1, b.d2) for b in model.decoder.blocks],
        "params": model.n_parameters,
        "loss": float(loss.data),
        "grads_finite": all(t.grad is not None and bool(np.all(np.isfinite(t.grad))) for _, t in model.parameters()),
    }))
""")


def _block_params(D, H, d1, d2, r):
    pools = 2 * 3 * D * D + D * H * d1 + D * H * d2
    branches = 3 * r * H * (d1 * d1 + d2 * d2)
    return pools + branches + (D * D + D) + 4 * D + (8 * D * D + 5 * D)


def _expected_reference_params():
    P2, De, Dd = 16 * 16, 768, 512
    enc = P2 * De + De + 3 * De + 12 * _block_params(De, 12, 32, 2, 1) + 2 * De
    dec = De * Dd + Dd + Dd + 8 * _block_params(Dd, 8, 32, 2, 1) + 2 * Dd + Dd * P2 + P2
    return enc + dec


def test_criterion_10_reference_structure(report):
    # separate process so the ~3.5 GB peak is released before other tests run
    proc = subprocess.run([sys.executable, "-c", REFERENCE_SCRIPT], capture_output=True, text=True, timeout=900)
    if proc.returncode != 0:
        report(10, False, f"reference step crashed: {proc.stderr.strip().splitlines()[-1:]}")
        pytest.fail(proc.stderr)
    out = json.loads(proc.stdout.strip().splitlines()[-1])
    enc, dec = out["enc"], out["dec"]
    structure = (
        len(enc) == 12 and len(dec) == 8
        and all(b == [768, 12, 1, 32, 2] for b in enc)
        and all(b[0] == 512 and b[2:] == [1, 32, 2] for b in dec)
        and enc[0][3] // enc[0][4] == 16
    )
    expected = _expected_reference_params()
    ok = structure and out["params"] == expected and out["grads_finite"] and np.isfinite(out["loss"])
    assert report(10, ok, (
        f"blocks={len(enc)}+{len(dec)} widths={enc[0][0]}/{dec[0][0]} enc heads={enc[0][1]} r={enc[0][2]} "
        f"(d1,d2)=({enc[0][3]},{enc[0][4]}) ratio={enc[0][3] // enc[0][4]}; params={out['params']:,} "
        f"(shape-derived {expected:,}); loss={out['loss']:.4f} grads finite={out['grads_finite']}"
    ))
