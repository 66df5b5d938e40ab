"""Command-line pipeline: generate, learn, evaluate, benchmark.

Exit codes: 0 success, 1 input/validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import bench as bench_mod
from .datagen import generate_data, load_params, parametrize, random_rcm, save_params
from .rcm import (
    RCM,
    default_oracle_skeletons,
    deserialize_prcm,
    deserialize_rcm,
    ground_graph,
    serialize_prcm,
    serialize_rcm,
    true_cprcm,
)
from .rpcd import LearnerConfig, rpcd_run, write_report
from .schema import load_schema, random_schema, save_schema, validate_schema
from .skeleton import (
    load_attr_data,
    load_skeleton,
    random_skeleton,
    save_attr_data,
    save_skeleton,
)


class CliError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("RELCD_SEED")
    return int(env) if env else 0


def _load_schema(path: str):
    schema = load_schema(path)
    problems = validate_schema(schema)
    if problems:
        raise CliError(f"invalid schema {path}: {problems[0]}")
    return schema


def cmd_generate_schema(args) -> int:
    schema = random_schema(_seed(args))
    save_schema(schema, args.output)
    print(f"wrote {args.output}")
    return 0


def cmd_generate_model(args) -> int:
    schema = _load_schema(args.schema)
    model, h = random_rcm(schema, _seed(args))
    payload = serialize_rcm(model)
    payload["h"] = h
    Path(args.output).write_text(json.dumps(payload, indent=2, sort_keys=True))
    print(f"wrote {args.output} (hop threshold {h})")
    return 0


def cmd_generate_data(args) -> int:
    schema = _load_schema(args.schema)
    model = deserialize_rcm(schema, json.loads(Path(args.model).read_text()))
    seed = _seed(args)
    sk = random_skeleton(schema, args.size, seed)
    params = parametrize(model, seed)
    data = generate_data(model, params, sk, seed)
    save_skeleton(sk, args.skeleton_out)
    save_attr_data(data, args.data_out)
    if args.params_out:
        save_params(params, args.params_out)
    print(f"wrote {args.skeleton_out}, {args.data_out}")
    return 0


def cmd_learn(args) -> int:
    schema = _load_schema(args.schema)
    sk = load_skeleton(schema, args.skeleton)
    data = load_attr_data(args.data)
    cfg = LearnerConfig(
        h=args.h,
        alpha=args.alpha,
        mode=args.mode,
        order_independent=not args.no_order_independent,
        aggregation=not args.no_aggregation,
        detection=not args.no_detection,
        n_perm=args.n_perm,
        max_cond_size=args.max_cond_size,
        rng_seed=_seed(args),
    )
    result = rpcd_run(schema, sk, data, cfg)
    Path(args.output).write_text(
        json.dumps(serialize_prcm(result.prcm), indent=2, sort_keys=True)
    )
    if args.report:
        write_report(result, args.report)
    print(f"wrote {args.output}")
    return 0


def cmd_oracle_learn(args) -> int:
    schema = _load_schema(args.schema)
    model = deserialize_rcm(schema, json.loads(Path(args.model).read_text()))
    skeletons = default_oracle_skeletons(
        schema, count=args.oracle_skeletons, base_size=args.oracle_base
    )
    prcm = true_cprcm(model, skeletons=skeletons, h=args.h or None)
    Path(args.output).write_text(
        json.dumps(serialize_prcm(prcm), indent=2, sort_keys=True)
    )
    print(f"wrote {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    schema = _load_schema(args.schema)
    learned = deserialize_prcm(schema, json.loads(Path(args.learned).read_text()))
    truth = deserialize_rcm(schema, json.loads(Path(args.truth).read_text()))
    cprcm = deserialize_prcm(schema, json.loads(Path(args.cprcm).read_text()))
    metrics = bench_mod.evaluate(learned, truth, cprcm)
    if args.format == "json":
        payload = {
            name: {
                "precision": m.precision,
                "recall": m.recall,
                "f": m.f_measure,
                "target": m.target,
            }
            for name, m in metrics.items()
        }
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print("phase,precision,recall,f")
        for name, m in sorted(metrics.items()):
            print(f"{name},{m.precision:.6f},{m.recall:.6f},{m.f_measure:.6f}")
    return 0


def cmd_bench(args) -> int:
    if args.config:
        cfg = bench_mod.BenchConfig.load(args.config)
    else:
        cfg = bench_mod.BenchConfig()
    if args.models is not None:
        cfg.n_models = args.models
    if args.sizes:
        cfg.sizes = tuple(int(s) for s in args.sizes.split(","))
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.seed is not None:
        cfg.master_seed = args.seed
    cfg.out_dir = args.out_dir
    path = bench_mod.run_benchmark(cfg)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relcd",
        description="Relational causal discovery: generation, learning, evaluation.",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="global seed (falls back to RELCD_SEED, then 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-schema", help="random schema to JSON")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_generate_schema)

    p = sub.add_parser("generate-model", help="random model for a schema")
    p.add_argument("--schema", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_generate_model)

    p = sub.add_parser("generate-data", help="skeleton + attribute data")
    p.add_argument("--schema", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--size", type=int, default=200)
    p.add_argument("--skeleton-out", default="skeleton.json")
    p.add_argument("--data-out", default="data.csv")
    p.add_argument("--params-out", default=None)
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("learn", help="run the statistical learner")
    p.add_argument("--schema", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--h", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mode", choices=["robust", "baseline_cut"], default="robust")
    p.add_argument("--n-perm", type=int, default=500)
    p.add_argument("--max-cond-size", type=int, default=3)
    p.add_argument("--no-order-independent", action="store_true")
    p.add_argument("--no-aggregation", action="store_true")
    p.add_argument("--no-detection", action="store_true")
    p.add_argument("--report", default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_learn)

    p = sub.add_parser("oracle-learn", help="ground-truth orientation by oracle")
    p.add_argument("--schema", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--h", type=int, default=0)
    p.add_argument("--oracle-skeletons", type=int, default=3)
    p.add_argument("--oracle-base", type=int, default=50)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_oracle_learn)

    p = sub.add_parser("evaluate", help="score a learned model against truth")
    p.add_argument("--schema", required=True)
    p.add_argument("--learned", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--cprcm", required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("bench", help="run the benchmark batch")
    p.add_argument("--config", default=None)
    p.add_argument("--models", type=int, default=None)
    p.add_argument("--sizes", default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out-dir", default="bench_out")
    p.set_defaults(fn=cmd_bench)
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.fn(args)
    except (CliError, FileNotFoundError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
