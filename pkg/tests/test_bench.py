import csv
import io

import numpy as np
import pytest

from lessvit.bench import (
    LATENCY_HEADER,
    LatencyRow,
    ShapeConfig,
    count_flops,
    fit_scaling_exponent,
    latency_csv,
    measure_latency,
    write_flop_csv,
    write_latency_csv,
)
from lessvit.errors import ConfigError, InsufficientDataError


def rows_with(power):
    return [LatencyRow("x", C, 5, 1e-3 * C**power, 0.0, "ok") for C in (10, 50, 100, 200)]


def test_fit_exponent_on_constructed_rows():
    assert fit_scaling_exponent(rows_with(1.0)) == pytest.approx(1.0, abs=0.01)
    assert fit_scaling_exponent(rows_with(2.0)) == pytest.approx(2.0, abs=0.01)


def test_fit_needs_three_ok_rows():
    rows = rows_with(1.0)
    rows[2].status = rows[3].status = "capacity-exceeded"
    with pytest.raises(InsufficientDataError):
        fit_scaling_exponent(rows)


def test_shape_rejects_empty_axes():
    with pytest.raises(ConfigError):
        ShapeConfig(N=0, C=4)


@pytest.mark.parametrize("mech", ["less", "dense"])
@pytest.mark.parametrize("N,C", [(1, 1), (4, 9), (16, 10)])
def test_counted_equals_predicted(mech, N, C):
    report = count_flops(ShapeConfig(N=N, C=C, rank=2 if mech == "less" else 1), mech)
    assert report.matches
    for _, got, pred, ok in report.rows():
        assert ok and got == pred


def test_compose_doubles_with_spectral_tokens():
    a = count_flops(ShapeConfig(N=16, C=9), "less").counted["compose"]
    b = count_flops(ShapeConfig(N=16, C=19), "less").counted["compose"]
    assert b == 2 * a


def test_unknown_mechanism():
    with pytest.raises(ConfigError):
        count_flops(ShapeConfig(N=2, C=2), "sparse")


def test_latency_rows_and_capacity():
    less = measure_latency("less", [4, 8, 16], reps=5, warmup=1)
    assert [r.status for r in less] == ["ok"] * 3
    assert less[0].normalized == 1.0
    assert all(r.min_s <= r.median_s <= r.max_s for r in less)
    dense = measure_latency("dense", [4, 8, 200], reps=5, warmup=1, token_cap=500)
    assert [r.status for r in dense] == ["ok", "ok", "capacity-exceeded"]
    assert np.isnan(dense[2].median_s)


def test_latency_preconditions():
    with pytest.raises(ConfigError):
        measure_latency("less", [10, 50], reps=4)
    with pytest.raises(ConfigError):
        measure_latency("less", [50, 10])


def test_csv_formats(tmp_path):
    rows = rows_with(1.0) + [LatencyRow("dense", 200, 5, float("nan"), float("nan"), "capacity-exceeded")]
    path = tmp_path / "lat.csv"
    write_latency_csv(rows, path)
    parsed = list(csv.reader(io.StringIO(path.read_text())))
    assert parsed[0] == LATENCY_HEADER
    assert all(len(r) == 6 for r in parsed)
    assert parsed[-1][-1] == "capacity-exceeded"
    assert float(parsed[1][3]) == rows[0].median_s
    fpath = tmp_path / "flops.csv"
    write_flop_csv(count_flops(ShapeConfig(N=4, C=3), "less"), fpath)
    lines = fpath.read_text().splitlines()
    assert lines[0] == "label,counted,predicted,match"
    assert all(l.endswith(",true") for l in lines[1:])
    assert latency_csv([]) == ",".join(LATENCY_HEADER) + "\n"
