"""FLOP accounting against closed forms and latency scaling with channel count."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import (
    DEFAULT_TOKEN_CAP,
    dense_flops,
    full_ss_attention,
    init_dense,
    init_less_block,
    less_attention,
    less_flops,
)
from .embed import TokenGrid, patch_coords
from .errors import CapacityError, ConfigError, InsufficientDataError
from .spectral import atomic_write_text, even_indices, make_reference_grid
from .ssrope import RopeConfig
from .tensor import FlopCounter, Tensor

MATMUL_LABELS = {
    "less": ("pool", "spatial_proj", "spectral_proj", "spatial", "spectral", "compose", "out_proj"),
    "dense": ("dense", "dense_proj"),
}
DEFAULT_C_LIST = (10, 50, 100, 200)
# desk-scale memory budget: the dense path runs out at C=200 for the toy shape,
# while C=100 still fits
BENCH_TOKEN_CAP = 3000


@dataclass(frozen=True)
class ShapeConfig:
    N: int
    C: int
    dim: int = 64
    heads: int = 4
    rank: int = 1
    d1: int = 8
    d2: int = 2
    batch: int = 1

    def __post_init__(self):
        if self.N < 1 or self.C < 1:
            raise ConfigError(f"need N >= 1 and C >= 1 spatial/spectral tokens, got N={self.N}, C={self.C}")

    def with_channels(self, C: int) -> "ShapeConfig":
        return ShapeConfig(self.N, C, self.dim, self.heads, self.rank, self.d1, self.d2, self.batch)


TOY_SHAPE = ShapeConfig(N=16, C=8)


def _random_grid(shape: ShapeConfig, rng, dtype=np.float32) -> TokenGrid:
    side = int(np.ceil(np.sqrt(shape.N)))
    coords = patch_coords(side, side)[: shape.N]
    grid = make_reference_grid()
    if shape.C <= len(grid):
        wl = grid.wavelengths[even_indices(len(grid), shape.C)]
    else:
        wl = np.linspace(420.0, 2445.0, shape.C)
    x = rng.standard_normal((shape.batch, shape.N + 1, shape.C + 1, shape.dim)).astype(dtype)
    return TokenGrid(Tensor(x), coords, wl)


def _mechanism(mechanism: str, shape: ShapeConfig, seed: int, token_cap: int, dtype=np.float32):
    rng = np.random.default_rng(seed)
    if mechanism == "less":
        params = init_less_block(shape.dim, shape.heads, shape.d1, shape.d2, shape.rank, rng, dtype)
        rope = RopeConfig(d_s=shape.d1, d_c=shape.d2) if shape.d1 % 4 == 0 and shape.d2 % 2 == 0 else None
        return lambda grid: less_attention(grid, params, rope)
    if mechanism == "dense":
        params = init_dense(shape.dim, shape.heads, rng, dtype)
        return lambda grid: full_ss_attention(grid, params, token_cap=token_cap)
    raise ConfigError(f"unknown mechanism {mechanism!r}; expected 'less' or 'dense'")


def predicted_flops(shape: ShapeConfig, mechanism: str) -> dict[str, int]:
    N1, C1 = shape.N + 1, shape.C + 1
    if mechanism == "less":
        return less_flops(N1, C1, shape, batch=shape.batch)
    if mechanism == "dense":
        return dense_flops(N1, C1, shape.dim, batch=shape.batch)
    raise ConfigError(f"unknown mechanism {mechanism!r}")


@dataclass
class FlopReport:
    mechanism: str
    shape: ShapeConfig
    counted: dict[str, int]
    predicted: dict[str, int]

    @property
    def matches(self) -> bool:
        return all(self.counted.get(k, 0) == v for k, v in self.predicted.items())

    def rows(self):
        for label, pred in self.predicted.items():
            got = self.counted.get(label, 0)
            yield label, got, pred, got == pred

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "counted", "predicted", "match"])
        for label, got, pred, ok in self.rows():
            w.writerow([label, got, pred, str(ok).lower()])
        return buf.getvalue()


def count_flops(shape: ShapeConfig, mechanism: str, seed: int = 0, token_cap: int = DEFAULT_TOKEN_CAP) -> FlopReport:
    """One instrumented forward pass on random tokens, compared to the closed forms."""
    fn = _mechanism(mechanism, shape, seed, token_cap)
    grid = _random_grid(shape, np.random.default_rng(seed + 1))
    with FlopCounter() as counter:
        fn(grid)
    counted = {k: v for k, v in counter.by_label.items() if k in MATMUL_LABELS[mechanism]}
    return FlopReport(mechanism, shape, counted, predicted_flops(shape, mechanism))


@dataclass
class LatencyRow:
    mechanism: str
    C: int
    reps: int
    median_s: float
    normalized: float
    status: str  # "ok" | "capacity-exceeded"
    min_s: float = float("nan")
    max_s: float = float("nan")
    times: list = field(default_factory=list, repr=False)


def measure_latency(
    mechanism: str,
    c_list=DEFAULT_C_LIST,
    reps: int = 5,
    shape: ShapeConfig = TOY_SHAPE,
    warmup: int = 3,
    token_cap: int = BENCH_TOKEN_CAP,
    seed: int = 0,
) -> list[LatencyRow]:
    """Median forward wall time per channel count, batch size 1, sequential."""
    if reps < 5:
        raise ConfigError("latency rows need at least 5 measured repetitions")
    c_list = list(c_list)
    if c_list != sorted(c_list):
        raise ConfigError("channel counts must be ascending")
    rows = []
    for C in c_list:
        sc = shape.with_channels(C)
        fn = _mechanism(mechanism, sc, seed, token_cap)
        grid = _random_grid(sc, np.random.default_rng(seed + C))
        try:
            for _ in range(warmup):
                fn(grid)
        except CapacityError:
            rows.append(LatencyRow(mechanism, C, reps, float("nan"), float("nan"), "capacity-exceeded"))
            continue
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            fn(grid)
            times.append(time.perf_counter() - t0)
        rows.append(LatencyRow(mechanism, C, reps, float(np.median(times)), float("nan"), "ok",
                               min(times), max(times), times))
    ref = rows[0].median_s if rows and rows[0].status == "ok" else float("nan")
    for row in rows:
        if row.status == "ok":
            row.normalized = row.median_s / ref
    return rows


def fit_scaling_exponent(rows) -> float:
    """Least-squares slope of log(median time) against log(C) over ok rows."""
    ok = [r for r in rows if r.status == "ok"]
    if len(ok) < 3:
        raise InsufficientDataError(f"need at least 3 ok rows to fit an exponent, got {len(ok)}")
    x = np.log([r.C for r in ok])
    y = np.log([r.median_s for r in ok])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


LATENCY_HEADER = ["mechanism", "C", "reps", "median_s", "normalized", "status"]


def latency_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LATENCY_HEADER)
    for r in rows:
        w.writerow([r.mechanism, r.C, r.reps, repr(r.median_s), repr(r.normalized), r.status])
    return buf.getvalue()


def write_latency_csv(rows, path) -> None:
    atomic_write_text(path, latency_csv(rows))


def write_flop_csv(report: FlopReport, path) -> None:
    atomic_write_text(path, report.to_csv())


def shape_dict(shape: ShapeConfig) -> dict:
    return asdict(shape)
