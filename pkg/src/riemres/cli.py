"""Command-line entry points: train, evaluate, gen-data, diagnose."""

from __future__ import annotations

import argparse
import json
import sys

import yaml

from . import data as datamod
from . import train as trainmod
from .errors import RiemresError


def _cmd_train(args) -> int:
    with open(args.config) as fh:
        config = yaml.safe_load(fh) or {}
    if args.output_dir:
        config["output_dir"] = args.output_dir
    if args.seed is not None:
        config["seed"] = args.seed
    report = trainmod.train(config)
    print(f"config hash: {report.config_hash}")
    for name, value in sorted(report.final.items()):
        print(f"final {name}: {value}")
    print(f"wrote {report.metrics_csv}")
    print(f"wrote {report.checkpoint}")
    return 0


def _cmd_evaluate(args) -> int:
    dataset = datamod.load_dataset(args.data)
    metrics = trainmod.evaluate(args.checkpoint, dataset, split=args.split)
    for name, value in sorted(metrics.items()):
        print(f"{name}: {value}")
    return 0


def _cmd_gen_data(args) -> int:
    if args.kind == "sir":
        ds = datamod.generate_sir_tree(args.nodes, args.branching,
                                       args.infection_prob, seed=args.seed)
        datamod.save_graph_dataset(ds, args.out)
        counts = {int(k): int((ds.labels == k).sum()) for k in (0, 1)}
        print(f"wrote {args.out}: {ds.num_nodes} nodes, "
              f"{ds.edges.shape[0]} edges, labels {counts}")
    else:
        ds = datamod.generate_spd_classes(args.samples, args.dim, args.frames,
                                          args.classes, args.separation,
                                          seed=args.seed)
        datamod.save_spd_dataset(ds, args.out)
        print(f"wrote {args.out}: {ds.num_samples} matrices "
              f"({ds.dropped} dropped by the Cholesky filter)")
    return 0


def _cmd_diagnose(args) -> int:
    dataset = datamod.load_graph_dataset(args.data)
    delta = datamod.gromov_delta(dataset)
    print(f"gromov delta: {delta}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riemres",
        description="Riemannian residual networks: train, evaluate, generate data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a YAML config")
    p_train.add_argument("--config", required=True, help="YAML config file")
    p_train.add_argument("--output-dir", help="override output_dir from the config")
    p_train.add_argument("--seed", type=int, help="override seed from the config")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True, help="dataset directory")
    p_eval.add_argument("--split", default="test",
                        choices=("train", "val", "test"))
    p_eval.set_defaults(func=_cmd_evaluate)

    p_gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p_gen.add_argument("kind", choices=("sir", "spd"))
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--nodes", type=int, default=300, help="sir: tree size")
    p_gen.add_argument("--branching", type=int, default=2, help="sir: children per node")
    p_gen.add_argument("--infection-prob", type=float, default=0.5,
                       help="sir: base transmission probability")
    p_gen.add_argument("--samples", type=int, default=200, help="spd: matrix count")
    p_gen.add_argument("--dim", type=int, default=10, help="spd: matrix size")
    p_gen.add_argument("--frames", type=int, default=40,
                       help="spd: frames per covariance")
    p_gen.add_argument("--classes", type=int, default=2, help="spd: class count")
    p_gen.add_argument("--separation", type=float, default=1.0,
                       help="spd: class gap in log-eigenvalue space")
    p_gen.set_defaults(func=_cmd_gen_data)

    p_diag = sub.add_parser("diagnose", help="dataset diagnostics")
    diag_sub = p_diag.add_subparsers(dest="diagnostic", required=True)
    p_delta = diag_sub.add_parser("delta", help="brute-force Gromov hyperbolicity")
    p_delta.add_argument("--data", required=True, help="graph dataset directory")
    p_delta.set_defaults(func=_cmd_diagnose)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RiemresError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
