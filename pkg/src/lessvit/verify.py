"""Oracle and property checks run by ``lessvit verify``.

Every check returns a ``CheckResult`` with the largest observed error so a
report shows how close each oracle came to its tolerance, not just pass/fail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .attention import (
    dense_flops,
    full_ss_attention,
    init_dense,
    init_less_block,
    kron_compose,
    less_attention,
)
from .bench import ShapeConfig, count_flops
from .embed import TokenGrid, patch_coords
from .hypermae import (
    HCSRange,
    forward_loss,
    get_preset,
    hcs_sample,
    init_model,
    make_batch,
    make_mask_plan,
    step_plan,
)
from .ssrope import RopeConfig, rotate_pairs, spatial_phases, spectral_phases
from .tensor import Tensor, grad_check, kron
from .tree import map_tensors, named_tensors


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max_error={self.max_error:.3e} tol={self.tolerance:.0e} {self.detail}".rstrip()


def _result(name, err, tol, detail="") -> CheckResult:
    return CheckResult(name, bool(err <= tol), float(err), tol, detail)


# -- Kronecker algebra --------------------------------------------------------------

def check_kron_mixed_product(trials: int = 20, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    """(A kron B)(C kron D) == (AC) kron (BD) on random conformable matrices."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        m, n, p, q, k, l = rng.integers(1, 5, size=6)
        A, C = rng.standard_normal((m, n)), rng.standard_normal((n, k))
        B, D = rng.standard_normal((p, q)), rng.standard_normal((q, l))
        lhs = (kron(Tensor(A), Tensor(B)) @ kron(Tensor(C), Tensor(D))).numpy()
        rhs = np.kron(A @ C, B @ D)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return _result("kron_mixed_product", worst, tol, f"trials={trials}")


# -- rank-1 LESS vs materialized Kronecker attention --------------------------------

def materialized_rank1(a_c, a_s, v_c, v_s) -> np.ndarray:
    """(A_C kron A_S)(V_C kron V_S) for one head, as an (N+1, C+1, d1*d2) grid.

    Rows of the materialized matrix run channel-major over (c, n) tokens and
    its columns over (j, i) features; the grid uses feature index i*d2 + j.
    """
    a_c, a_s, v_c, v_s = (np.asarray(x, dtype=np.float64) for x in (a_c, a_s, v_c, v_s))
    C1, N1 = a_c.shape[0], a_s.shape[0]
    d2, d1 = v_c.shape[1], v_s.shape[1]
    m = np.kron(a_c, a_s) @ np.kron(v_c, v_s)
    return m.reshape(C1, N1, d2, d1).transpose(1, 0, 3, 2).reshape(N1, C1, d1 * d2)


def _random_less_case(rng, dtype=np.float64):
    N1 = int(rng.integers(2, 9))
    C1 = int(rng.integers(2, 7))
    d1 = int(rng.integers(1, 5))
    d2 = int(rng.integers(1, 3))
    heads = int(rng.integers(1, 3))
    dim = heads * d1 * d2
    batch = int(rng.integers(1, 3))
    params = init_less_block(dim, heads, d1, d2, 1, rng, dtype)
    side = int(math.ceil(math.sqrt(N1 - 1)))
    coords = patch_coords(side, side)[: N1 - 1]
    wl = np.sort(rng.uniform(400, 2500, C1 - 1))
    x = rng.standard_normal((batch, N1, C1, dim)).astype(dtype)
    return TokenGrid(Tensor(x), coords, wl), params


def check_rank1_equivalence(
    n_configs: int = 50,
    seed: int = 0,
    tol: float = 1e-10,
    compose: Callable = kron_compose,
    dtype=np.float64,
) -> CheckResult:
    """Factorized output (before the output projection) against the materialized product."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        grid, params = _random_less_case(rng, dtype)
        _, f = less_attention(grid, params, rope=None, compose=compose, return_factors=True)
        H, d = params.heads, params.d1 * params.d2
        got = f.composed.numpy()
        for b in range(got.shape[0]):
            for h in range(H):
                want = materialized_rank1(f.a_c.data[b, 0, h], f.a_s.data[b, 0, h], f.v_c.data[b, 0, h], f.v_s.data[b, 0, h])
                worst = max(worst, float(np.max(np.abs(got[b, :, :, h * d:(h + 1) * d] - want))))
    return _result("rank1_equivalence", worst, tol, f"configs={n_configs}")


# -- dense attention vs explicit loops ---------------------------------------------------

def dense_loop_oracle(x: np.ndarray, params) -> np.ndarray:
    """Multi-head attention over flattened grid tokens with per-pair Python loops."""
    x = np.asarray(x, dtype=np.float64)
    B, N1, C1, D = x.shape
    H = params.heads
    dh = D // H
    wq, wk, wv, wo, bo = (np.asarray(t.data, dtype=np.float64) for t in (params.w_q, params.w_k, params.w_v, params.w_o, params.b_o))
    out = np.zeros_like(x)
    for b in range(B):
        tok = x[b].reshape(N1 * C1, D)
        T = tok.shape[0]
        q, k, v = tok @ wq, tok @ wk, tok @ wv
        y = np.zeros((T, D))
        for h in range(H):
            sl = slice(h * dh, (h + 1) * dh)
            for i in range(T):
                scores = [sum(q[i, sl][t] * k[j, sl][t] for t in range(dh)) / math.sqrt(dh) for j in range(T)]
                top = max(scores)
                w = [math.exp(s - top) for s in scores]
                z = sum(w)
                for j in range(T):
                    y[i, sl] += (w[j] / z) * v[j, sl]
        out[b] = (y @ wo + bo).reshape(N1, C1, D)
    return out


def check_dense_oracle(n_grids: int = 8, seed: int = 0, tol: float = 1e-12, dtype=np.float64) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_grids):
        while True:
            N1, C1 = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            if N1 * C1 <= 30:
                break
        heads = int(rng.choice([1, 2, 4]))
        dim = heads * int(rng.integers(1, 4))
        params = init_dense(dim, heads, rng, dtype)
        x = rng.standard_normal((1, N1, C1, dim)).astype(dtype)
        got = full_ss_attention(Tensor(x), params).numpy()
        worst = max(worst, float(np.max(np.abs(got - dense_loop_oracle(x, params)))))
    return _result(f"dense_oracle_{np.dtype(dtype).name}", worst, tol, f"grids={n_grids}")


# -- SSRoPE ------------------------------------------------------------------------------

def _rot(vec, angles):
    return rotate_pairs(Tensor(vec), angles).numpy()


def check_ssrope(draws: int = 100, seed: int = 0, norm_tol: float = 1e-6, shift_tol: float = 1e-5) -> list[CheckResult]:
    """Norm preservation, joint-translation invariance per axis, and untouched CLS slots."""
    rng = np.random.default_rng(seed)
    cfg = RopeConfig(d_s=8, d_c=2)
    norm_err = shift_s = shift_c = 0.0
    for _ in range(draws):
        q, k = rng.standard_normal(8), rng.standard_normal(8)
        p1, p2, s = rng.integers(-20, 21, size=(3, 2)).astype(np.float64)
        rot = lambda p, v: _rot(v, spatial_phases(p[None], cfg, with_cls=False)[0])
        norm_err = max(norm_err, abs(np.linalg.norm(rot(p1, q)) - np.linalg.norm(q)) / np.linalg.norm(q))
        base = rot(p1, q) @ rot(p2, k)
        moved = rot(p1 + s, q) @ rot(p2 + s, k)
        shift_s = max(shift_s, abs(base - moved))

        qc, kc = rng.standard_normal(2), rng.standard_normal(2)
        l1, l2 = rng.uniform(400, 2500, 2)
        ds = rng.uniform(-300, 300)
        rotc = lambda lam, v: _rot(v, spectral_phases([lam], cfg, with_cls=False)[0])
        norm_err = max(norm_err, abs(np.linalg.norm(rotc(l1, qc)) - np.linalg.norm(qc)) / np.linalg.norm(qc))
        basec = rotc(l1, qc) @ rotc(l2, kc)
        movedc = rotc(l1 + ds, qc) @ rotc(l2 + ds, kc)
        shift_c = max(shift_c, abs(basec - movedc))

    coords = patch_coords(3, 3)
    x = rng.standard_normal((10, 8))
    cls_err = float(np.max(np.abs(_rot(x, spatial_phases(coords, cfg))[0] - x[0])))
    xc = rng.standard_normal((6, 2))
    cls_err = max(cls_err, float(np.max(np.abs(_rot(xc, spectral_phases(np.linspace(450, 2400, 5), cfg))[0] - xc[0]))))
    return [
        _result("ssrope_norm", norm_err, norm_tol, f"draws={draws}"),
        _result("ssrope_spatial_shift", shift_s, shift_tol, f"draws={draws}"),
        _result("ssrope_spectral_shift", shift_c, shift_tol, f"draws={draws}"),
        _result("ssrope_cls_untouched", cls_err, 0.0),
    ]


# -- masking and channel sampling -------------------------------------------------------

def check_mask_ratios(seeds: int = 200) -> CheckResult:
    """N=16, C_hcs=8: exactly 12 spatial and 6 spectral masked, one spatial set for all channels."""
    worst = 0
    spatial = np.zeros(16, dtype=bool)
    for s in range(seeds):
        plan = make_mask_plan(16, np.arange(8), (0.75, 0.75), seed=s)
        worst = max(worst, abs(len(plan.spatial_masked) - 12), abs(len(plan.spectral_masked) - 6))
        spatial[:] = False
        spatial[plan.spatial_visible] = True
        vis = plan.visible_mask()[:, plan.spectral_visible_pos]
        if not np.all(vis == spatial[:, None]):
            worst = max(worst, 1)
        if len({tuple(plan.spatial_mask_for_channel(c)) for c in plan.hcs_channels}) != 1:
            worst = max(worst, 1)
    return _result("mask_ratios", float(worst), 0.0, f"seeds={seeds}")


def hcs_bounds(C: int, r: HCSRange) -> tuple[int, int]:
    lo = max(1, int(math.floor(r.r_l * C + 0.5)))
    hi = max(1, int(math.floor(r.r_h * C + 0.5)))
    return lo, hi


def check_hcs_ranges(C: int = 202, draws: int = 10_000, ranges=((0.2, 0.3), (0.4, 0.5))) -> list[CheckResult]:
    out = []
    for r_l, r_h in ranges:
        r = HCSRange(r_l, r_h)
        lo, hi = hcs_bounds(C, r)
        violations = 0
        for s in range(draws):
            chosen = hcs_sample(C, r, s)
            k = len(chosen)
            distinct = len(np.unique(chosen)) == k
            if not (lo <= k <= hi and distinct and chosen.min() >= 0 and chosen.max() < C):
                violations += 1
        out.append(_result(f"hcs_range_{r_l}_{r_h}", float(violations), 0.0, f"C={C} draws={draws} bounds=[{lo},{hi}]"))
    return out


# -- FLOP accounting ------------------------------------------------------------------------

FLOP_GRID = [
    ShapeConfig(N=N, C=C, dim=dim, heads=heads, d1=d1, d2=d2, rank=rank)
    for (N, C) in ((4, 3), (9, 8))
    for (dim, heads, d1, d2, rank) in ((16, 2, 4, 2, 1), (32, 4, 4, 2, 1), (24, 3, 4, 2, 2))
] + [
    ShapeConfig(N=N, C=C, dim=16, heads=2, d1=4, d2=2, rank=1, batch=2)
    for (N, C) in ((1, 1), (2, 5), (16, 8), (6, 10), (12, 4), (3, 16))
]


def check_flops(shapes=FLOP_GRID) -> list[CheckResult]:
    mismatches = 0
    for shape in shapes:
        for mech, labels in (("less", ("spatial", "spectral", "compose")), ("dense", ("dense",))):
            report = count_flops(shape, mech)
            mismatches += sum(report.counted.get(l, 0) != report.predicted[l] for l in labels)
            mismatches += 0 if report.matches else 1

    # compose term is linear in the spectral token count (C+1)
    base = ShapeConfig(N=16, C=7)
    doubled = ShapeConfig(N=16, C=15)
    c0 = count_flops(base, "less").counted["compose"]
    c1 = count_flops(doubled, "less").counted["compose"]
    compose_err = abs(c1 / c0 - 2.0)

    # dense attention term, doubling the spectral token count C+1 at fixed N
    dense_err = 0.0
    for C in (8, 16, 32, 64):
        r = count_flops(ShapeConfig(N=4, C=2 * C + 1, dim=8, heads=2), "dense").counted["dense"]
        r /= count_flops(ShapeConfig(N=4, C=C, dim=8, heads=2), "dense").counted["dense"]
        dense_err = max(dense_err, abs(r / 4.0 - 1.0))
    return [
        _result("flops_closed_form", float(mismatches), 0.0, f"configs={len(shapes)}"),
        _result("flops_compose_doubles", compose_err, 0.0, "C+1: 8 -> 16"),
        _result("flops_dense_quadruples", dense_err, 0.10, "C+1 doubled from C in {8,16,32,64}"),
    ]


# -- gradients -------------------------------------------------------------------------------

def model_grad_check(config, n_coords: int = 24, seed: int = 0, batch: int | None = None) -> float:
    """Finite-difference check of the pretraining loss w.r.t. sampled parameter entries (64-bit)."""
    if batch is not None:
        config = replace(config, batch_size=batch)
    model = init_model(config, seed, dtype=np.float64)
    cubes = make_batch(config, seed, 1).astype(np.float64)
    wl = config.wavelengths()
    plan = step_plan(config, cubes.shape[-3], seed)
    loss = forward_loss(model, cubes, wl, plan)
    loss.backward()
    params = dict(named_tensors(model))
    grads = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for k, t in params.items()}
    for t in params.values():
        t.grad = None

    rng = np.random.default_rng(seed + 1)
    names = sorted(params)
    picks: dict[str, list] = {}
    for _ in range(n_coords):
        name = names[rng.integers(len(names))]
        idx = tuple(int(rng.integers(s)) for s in params[name].shape)
        picks.setdefault(name, []).append(idx)

    worst = 0.0
    for name, idxs in picks.items():
        def f(x, name=name):
            m = map_tensors(model, lambda n, t: x if n == name else t)
            return forward_loss(m, cubes, wl, plan)
        worst = max(worst, grad_check(f, params[name], grads[name], eps=1e-6, indices=idxs))
    return worst


def check_gradients(n_coords: int = 24, tol: float = 1e-4) -> list[CheckResult]:
    tiny = get_preset("tiny")
    toy1 = replace(get_preset("toy"), enc_depth=1)
    return [
        _result("grad_tiny_model", model_grad_check(tiny, n_coords), tol, f"coords={n_coords}"),
        _result("grad_toy_1block", model_grad_check(toy1, n_coords, batch=2), tol, f"coords={n_coords}"),
    ]


PROFILES = {
    "f64": {"rank1": 1e-10, "dense": 1e-12, "dtype": np.float64},
    "f32": {"rank1": 1e-5, "dense": 1e-6, "dtype": np.float32},
}


def run_all(profile: str = "f64", seed: int = 0, compose: Callable = kron_compose) -> list[CheckResult]:
    if profile not in PROFILES:
        raise ValueError(f"unknown tolerance profile {profile!r}; choose from {sorted(PROFILES)}")
    p = PROFILES[profile]
    results = [
        check_kron_mixed_product(seed=seed),
        check_rank1_equivalence(seed=seed, tol=p["rank1"], compose=compose, dtype=p["dtype"]),
        check_dense_oracle(seed=seed, tol=p["dense"], dtype=p["dtype"]),
    ]
    results += check_ssrope(seed=seed)
    results.append(check_mask_ratios())
    results += check_hcs_ranges()
    results += check_flops()
    results += check_gradients()
    return results
