"""Command-line entry point: generate / ingest / run / certify / plotdata."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (ExperimentSpec, GeneratorSpec, certify_instance,
                      emit_plotdata, experiment_spec_from_json,
                      generate_instance, ingest_trace, run_experiment,
                      ResultBundle, SWEEP_AXES)
from .model import load_instance, save_instance
from .policy import POLICY_NAMES


def _add_generator_flags(p):
    p.add_argument("--aps", type=int, default=15)
    p.add_argument("--servers", type=int, default=10)
    p.add_argument("--types", type=int, default=10)
    p.add_argument("--interval", type=int, default=25,
                   help="broadcast interval length in slots")
    p.add_argument("--attachment", type=int, default=2,
                   help="scale-free graph attachment parameter")
    p.add_argument("--arrival-scale", type=float, default=1.0)
    p.add_argument("--proc-scale", type=float, default=1.0)


def _generator_spec(args) -> GeneratorSpec:
    return GeneratorSpec(num_aps=args.aps, num_servers=args.servers,
                         num_job_types=args.types, ba_attachment=args.attachment,
                         seed=args.seed, arrival_scale=args.arrival_scale,
                         proc_time_scale=args.proc_scale,
                         slots_per_interval=args.interval)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dispatchsim",
        description="Edge job-dispatching simulator and policy benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic instance file")
    _add_generator_flags(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    i = sub.add_parser("ingest", help="replace arrivals/service from trace CSVs")
    i.add_argument("--instance", required=True)
    i.add_argument("--arrivals", required=True,
                   help="CSV with rows slot,ap,job_type[,count]")
    i.add_argument("--services", default=None,
                   help="CSV with rows job_type,server,mean_proc_slots")
    i.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run a policy-comparison experiment")
    r.add_argument("--config", default=None,
                   help="JSON ExperimentSpec file; flags override its fields")
    r.add_argument("--instance", default=None)
    _add_generator_flags(r)
    r.add_argument("--policy", action="append", default=None,
                   help=f"repeatable; one of {POLICY_NAMES}")
    r.add_argument("--intervals", type=int, default=None)
    r.add_argument("--replications", type=int, default=None)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--sweep", default=None, choices=SWEEP_AXES)
    r.add_argument("--sweep-values", default=None,
                   help="comma-separated numbers")
    r.add_argument("--out", default=None)
    r.add_argument("--jobs", type=int, default=None)

    c = sub.add_parser("certify", help="oracle cross-checks on an instance")
    c.add_argument("--instance", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--replications", type=int, default=2000)

    p = sub.add_parser("plotdata", help="re-emit per-figure CSVs from results")
    p.add_argument("--out", required=True, help="experiment output directory")
    return parser


def _run_command(args) -> int:
    if args.config:
        with open(args.config) as fh:
            spec = experiment_spec_from_json(json.load(fh))
    else:
        spec = ExperimentSpec(instance_path=args.instance,
                              generator=None if args.instance else _generator_spec(args))
    overrides = {}
    if args.instance:
        overrides["instance_path"] = args.instance
        overrides["generator"] = None
    if args.policy:
        overrides["policies"] = tuple(p for arg in args.policy
                                      for p in arg.split(","))
    if args.intervals is not None:
        overrides["num_intervals"] = args.intervals
    if args.replications is not None:
        overrides["replications"] = args.replications
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.sweep is not None:
        overrides["sweep_axis"] = args.sweep
    if args.sweep_values is not None:
        overrides["sweep_values"] = tuple(float(v) for v in
                                          args.sweep_values.split(","))
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    from dataclasses import replace
    spec = replace(spec, **overrides)
    bundle = run_experiment(spec)
    paths = emit_plotdata(bundle)
    print(f"wrote {spec.out_dir}/aggregate.json and {len(paths)} plot files")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "generate":
        instance = generate_instance(_generator_spec(args))
        save_instance(instance, args.out)
        print(f"wrote {args.out}")
        return 0
    if args.command == "ingest":
        instance = load_instance(args.instance)
        instance = ingest_trace(instance, args.arrivals, args.services)
        save_instance(instance, args.out)
        print(f"wrote {args.out}")
        return 0
    if args.command == "run":
        return _run_command(args)
    if args.command == "certify":
        instance = load_instance(args.instance)
        results = certify_instance(instance, seed=args.seed,
                                   replications=args.replications)
        failed = 0
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
            failed += not ok
        return 1 if failed else 0
    if args.command == "plotdata":
        with open(f"{args.out}/aggregate.json") as fh:
            aggregate = json.load(fh)["aggregate"]
        with open(f"{args.out}/manifest.json") as fh:
            manifest = json.load(fh)
        paths = emit_plotdata(ResultBundle(args.out, manifest, aggregate))
        print(f"wrote {len(paths)} plot files")
        return 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
