"""Latency of LESS versus dense attention as the channel count grows."""
from lessvit import bench

rows = bench.measure_latency("less", bench.DEFAULT_C_LIST) + bench.measure_latency("dense", bench.DEFAULT_C_LIST)
print(bench.latency_csv(rows), end="")
less = [r for r in rows if r.mechanism == "less"]
dense = [r for r in rows if r.mechanism == "dense"]
print(f"log-log exponent: less={bench.fit_scaling_exponent(less):.2f} dense={bench.fit_scaling_exponent(dense):.2f}")

for C in (10, 100):
    shape = bench.TOY_SHAPE.with_channels(C)
    less_f = sum(bench.count_flops(shape, "less").counted.values())
    dense_f = sum(bench.count_flops(shape, "dense").counted.values())
    print(f"C={C:3d}: attention FLOPs less={less_f:,} dense={dense_f:,}")
