"""Command-line surface: convert, eval, bench, selftest, make-synth-model.

Datasets are addressed by spec strings:

  synth:seed=1,n=512[,noise=0.25,scale=1.0]   class-conditional Gaussians,
                                              dims/classes taken from the model
  npz:path/to/file.npz                        arrays "x" and "labels"
  cifar10:path/to/batch.bin                   CIFAR-10 binary batches (file or dir)

All randomness flows from --seed; reports are line-delimited JSON with a
stable field order, reproducible across runs except for *_time fields.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import selftest as selftest_mod
from .convert import CONVERSION_CASES, CalibrationConfig, ConvertedNetwork, convert_pipeline
from .graph import LayerGraph
from .modelio import DatasetHandle, load_cifar10, load_model, save_model
from .runtime import bench, emit_records, evaluate
from .synth import make_synth_convnet, make_synth_mlp, synth_dataset


def _parse_kv(spec: str, defaults: dict) -> dict:
    out = dict(defaults)
    if spec:
        for part in spec.split(","):
            if not part:
                continue
            key, _, value = part.partition("=")
            if key not in out:
                raise ValueError(f"unknown dataset option {key!r}")
            out[key] = type(out[key])(value) if out[key] is not None else value
    return out


def load_dataset(spec: str, model=None, split: str = "evaluation") -> DatasetHandle:
    """Resolve a dataset spec string; synth dims/classes come from the model."""
    kind, _, rest = spec.partition(":")
    if kind == "synth":
        opts = _parse_kv(rest, {"seed": 0, "n": 256, "noise": 0.25, "scale": 1.0})
        if model is None:
            raise ValueError("synth datasets need a model to derive dims/classes")
        graph = model.graph if isinstance(model, ConvertedNetwork) else model
        return synth_dataset(
            seed=int(opts["seed"]),
            dims=graph.input_shape,
            classes=int(graph.output_shape[0]),
            n=int(opts["n"]),
            noise=float(opts["noise"]),
            mean_scale=float(opts["scale"]),
            split=split,
        )
    if kind == "npz":
        with np.load(rest) as z:
            return DatasetHandle(
                x=np.asarray(z["x"], dtype=np.float32),
                labels=np.asarray(z["labels"], dtype=np.int64),
                source={"kind": "npz", "path": rest},
                split=split,
            )
    if kind == "cifar10":
        return load_cifar10(rest, split=split)
    raise ValueError(f"unknown dataset spec {spec!r} (expected synth:/npz:/cifar10:)")


def _cmd_convert(args) -> int:
    model = load_model(args.model)
    if not isinstance(model, LayerGraph):
        raise ValueError("convert expects an unconverted model manifest")
    config = CalibrationConfig(
        alpha=args.alpha,
        epochs=args.epochs,
        batch_size=args.batch_size,
        conversion_case=args.case,
    )
    data = load_dataset(args.calib_data, model, split="calibration")
    batches = list(data.batches(config.batch_size))
    net = convert_pipeline(model, batches, args.T, config)
    save_model(net, args.out)
    emit_records([{
        "command": "convert",
        "case": args.case,
        "T": args.T,
        "layers": len(net.graph.layers),
        "out": args.out,
    }], args.report)
    return 0


def _cmd_eval(args) -> int:
    if not args.model and not args.snn:
        raise ValueError("eval needs --model and/or --snn")
    ann = load_model(args.model) if args.model else None
    snn = load_model(args.snn) if args.snn else None
    if ann is not None and not isinstance(ann, LayerGraph):
        raise ValueError("--model must name an unconverted model")
    if snn is not None and not isinstance(snn, ConvertedNetwork):
        raise ValueError("--snn must name a converted model")
    primary = snn if snn is not None else ann
    other = ann if snn is not None and ann is not None else None
    data = load_dataset(args.data, primary)
    if args.T and snn is not None and args.T != snn.steps:
        raise ValueError(f"--T {args.T} != converted network steps {snn.steps}")
    result = evaluate(primary, data.x, data.labels, other=other, backend=args.backend)
    record = {"command": "eval", "backend": args.backend}
    record.update(result)
    emit_records([record], args.report)
    return 0


def _cmd_bench(args) -> int:
    model = load_model(args.model)
    if not isinstance(model, LayerGraph):
        raise ValueError("bench expects an unconverted model manifest")
    steps_list = [int(t) for t in args.T_list.split(",") if t]
    if not steps_list:
        raise ValueError("--T-list must name at least one step count")
    rng = np.random.default_rng(args.seed)
    x = rng.normal(0.0, 1.0, size=(args.batch,) + model.input_shape).astype(np.float32)
    rows = bench(model, x, steps_list, repeats=args.repeats, warmup=args.warmup,
                 threads=args.threads)
    for row in rows:
        row["command"] = "bench"
    emit_records(rows, args.report)
    return 0


def _cmd_selftest(args) -> int:
    return selftest_mod.run(args.seed)


def _cmd_make_synth_model(args) -> int:
    if args.kind == "mlp":
        graph = make_synth_mlp(
            seed=args.seed, depth=args.depth, width=args.width, in_dim=args.in_dim,
            classes=args.classes, activation=args.activation, levels=args.levels,
        )
    else:
        graph = make_synth_convnet(
            seed=args.seed, conv_layers=args.depth, channels=args.width,
            in_shape=tuple(int(d) for d in args.in_shape.split(",")),
            classes=args.classes, activation=args.activation, levels=args.levels,
        )
    save_model(graph, args.out)
    emit_records([{
        "command": "make-synth-model",
        "kind": args.kind,
        "layers": len(graph.layers),
        "out": args.out,
    }], args.report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parasnn",
        description="ANN-to-SNN conversion with parallel spiking neurons",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    default_threads = int(os.environ.get("PARASNN_THREADS", "1"))

    p = sub.add_parser("convert", help="convert a model to a spiking network")
    p.add_argument("--case", choices=CONVERSION_CASES, required=True)
    p.add_argument("--model", required=True, help="model manifest path")
    p.add_argument("--calib-data", default="synth:seed=0,n=512",
                   help="calibration dataset spec")
    p.add_argument("--T", type=int, required=True, help="inference time-steps")
    p.add_argument("--alpha", type=float, default=0.99, help="calibration momentum")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", required=True, help="output manifest path")
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("eval", help="evaluate a model or a converted network")
    p.add_argument("--model", default=None, help="unconverted model manifest")
    p.add_argument("--snn", default=None, help="converted model manifest")
    p.add_argument("--data", required=True, help="dataset spec")
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--backend", default="parallel-fast",
                   choices=("serial", "parallel-full", "parallel-fast"))
    p.add_argument("--report", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="serial vs parallel wall-time comparison")
    p.add_argument("--model", required=True)
    p.add_argument("--T-list", dest="T_list", default="1,4,8,16,32")
    p.add_argument("--repeats", type=int, default=7)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--threads", type=int, default=default_threads)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--report", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("selftest", help="run the built-in invariant battery")
    p.add_argument("--seed", type=int, required=True,
                   help="generator seed (required for determinism)")
    p.set_defaults(func=_cmd_selftest)

    p = sub.add_parser("make-synth-model", help="emit a random-weight test model")
    p.add_argument("--kind", choices=("mlp", "conv"), default="mlp")
    p.add_argument("--depth", type=int, default=4,
                   help="affine layers (mlp) or conv layers (conv)")
    p.add_argument("--width", type=int, default=32,
                   help="hidden width (mlp) or base channels (conv)")
    p.add_argument("--in-dim", type=int, default=16, help="mlp input features")
    p.add_argument("--in-shape", default="3,8,8", help="conv input C,H,W")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--activation", choices=("qcfs", "relu"), default="qcfs")
    p.add_argument("--levels", type=int, default=8, help="staircase resolution")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_make_synth_model)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
