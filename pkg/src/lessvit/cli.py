"""Command-line entry point: gen-config, pretrain, verify, bench.

Exit codes: 0 success, 1 verification failure, 2 usage error,
3 numeric or capacity error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bench, verify
from .errors import CapacityError, ConfigError, DegenerateInputError, InsufficientDataError, NumericError
from .hypermae import get_preset, init_model, make_batch, make_optimizer, save_checkpoint, train_step
from .spectral import atomic_write_text, make_config, make_reference_grid, save_config
from .tensor import resolve_dtype

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

KIND_ALIASES = {
    "vnir-plus": "C120_VNIR+",
    "swir-plus": "C120_SWIR+",
    "disjoint": "C82_disjoint",
    "full": "C202_full",
}


@dataclass
class RunManifest:
    command: str
    preset: str | None
    seed: int
    precision: str
    timestamp: str
    outputs: dict = field(default_factory=dict)
    parameter_counts: dict = field(default_factory=dict)
    arguments: dict = field(default_factory=dict)

    def write(self, path) -> None:
        atomic_write_text(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _manifest(args, outputs: dict, parameter_counts=None) -> RunManifest:
    return RunManifest(
        command=args.command,
        preset=getattr(args, "preset", None),
        seed=args.seed,
        precision=args.precision,
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        outputs=outputs,
        parameter_counts=parameter_counts or {},
        arguments={k: v for k, v in vars(args).items() if k != "func"},
    )


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# -- gen-config ----------------------------------------------------------------------

def cmd_gen_config(args) -> int:
    cfg = make_config(make_reference_grid(), KIND_ALIASES[args.kind])
    out = args.out or f"{cfg.name}.txt"
    save_config(cfg, out)
    vnir = int(np.sum(cfg.wavelengths < 1000.0))
    print(f"{cfg.name}: {len(cfg)} channels ({vnir} VNIR, {len(cfg) - vnir} SWIR) -> {out}")
    return EXIT_OK


# -- pretrain --------------------------------------------------------------------------

def cmd_pretrain(args) -> int:
    config = get_preset(args.preset)
    dtype = resolve_dtype(args.precision)
    out = _ensure_dir(args.out or f"run-{args.preset}-seed{args.seed}")
    loss_path = os.path.join(out, "losses.csv")
    ckpt_path = os.path.join(out, "checkpoint.npz")
    shape_only = args.preset == "reference-shape-only"
    steps = 1 if shape_only else args.steps
    if steps < 1:
        raise ConfigError("--steps must be at least 1")

    model = init_model(config, args.seed, dtype=dtype)
    counts = {
        "total": model.n_parameters,
        "encoder_blocks": len(model.encoder),
        "decoder_blocks": len(model.decoder.blocks),
    }
    outputs = {"losses": loss_path} if shape_only else {"losses": loss_path, "checkpoint": ckpt_path}
    _manifest(args, outputs, counts).write(os.path.join(out, "manifest.json"))
    print(f"{config.name}: {counts['total']} parameters, "
          f"{counts['encoder_blocks']} encoder / {counts['decoder_blocks']} decoder blocks")

    wl = config.wavelengths()
    opt = make_optimizer(config)
    losses = []
    for step in range(1, steps + 1):
        cubes = make_batch(config, args.seed, step)
        try:
            model, loss = train_step(model, cubes, wl, seed=args.seed * 1_000_003 + step, optimizer=opt)
        except NumericError as e:
            raise NumericError(f"step {step}: {e}") from e
        losses.append(loss)
        if not args.quiet and (step == 1 or step % 20 == 0 or step == steps):
            print(f"step {step:4d} loss {loss:.6f}")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss"])
    for i, loss in enumerate(losses, 1):
        w.writerow([i, repr(loss)])
    atomic_write_text(loss_path, buf.getvalue())
    if shape_only:
        print("shape check passed: one forward and backward step completed")
    else:
        save_checkpoint(ckpt_path, model, seed=args.seed, steps=steps)
        print(f"loss {losses[0]:.4f} -> {losses[-1]:.4f} (ratio {losses[-1] / losses[0]:.3f})")
    return EXIT_OK


# -- verify ------------------------------------------------------------------------------

def cmd_verify(args) -> int:
    results = verify.run_all(args.precision, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


# -- bench ---------------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_bench(args) -> int:
    mechanisms = [m.strip() for m in args.mechanisms.split(",") if m.strip()]
    bad = set(mechanisms) - {"less", "dense"}
    if bad or not mechanisms:
        raise ConfigError(f"mechanisms must be drawn from less,dense; got {args.mechanisms!r}")
    out = _ensure_dir(args.out or "bench")
    lat_path = os.path.join(out, "latency.csv")
    flop_paths = {m: os.path.join(out, f"flops_{m}.csv") for m in mechanisms}
    _manifest(args, {"latency": lat_path, **{f"flops_{m}": p for m, p in flop_paths.items()}}).write(
        os.path.join(out, "manifest.json"))

    shape = bench.TOY_SHAPE
    rows, exponents = [], {}
    for m in mechanisms:
        report = bench.count_flops(shape.with_channels(args.channels[0]), m, seed=args.seed)
        bench.write_flop_csv(report, flop_paths[m])
        mrows = bench.measure_latency(m, args.channels, reps=args.reps, shape=shape,
                                      token_cap=args.token_cap, seed=args.seed)
        rows += mrows
        try:
            exponents[m] = bench.fit_scaling_exponent(mrows)
        except InsufficientDataError:
            exponents[m] = float("nan")
    bench.write_latency_csv(rows, lat_path)
    print(bench.latency_csv(rows), end="")
    print("exponents: " + " ".join(f"{m}={e:.3f}" for m, e in exponents.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--precision", choices=["f32", "f64"], default="f32")
    common.add_argument("--out", default=None, help="output file (gen-config) or directory")

    p = argparse.ArgumentParser(prog="lessvit", description="LESS attention and HyperMAE toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-config", parents=[common], help="write a channel configuration")
    g.add_argument("--kind", choices=sorted(KIND_ALIASES), required=True)
    g.set_defaults(func=cmd_gen_config)

    t = sub.add_parser("pretrain", parents=[common], help="masked-autoencoder pretraining on synthetic cubes")
    t.add_argument("--preset", choices=["toy", "reference-shape-only"], default="toy")
    t.add_argument("--steps", type=int, default=200)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_pretrain)

    v = sub.add_parser("verify", parents=[common], help="run oracle and property checks")
    v.set_defaults(func=cmd_verify, precision="f64")

    b = sub.add_parser("bench", parents=[common], help="FLOP accounting and latency scaling")
    b.add_argument("--mechanisms", default="less,dense")
    b.add_argument("--channels", type=_int_list, default=list(bench.DEFAULT_C_LIST))
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--token-cap", type=int, default=bench.BENCH_TOKEN_CAP)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (NumericError, CapacityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DegenerateInputError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
