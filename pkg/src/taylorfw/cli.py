"""Command line entry point: ``taylorfw {run,reference,check,summarize}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .dataset import load_libsvm, synth_problem
from .geometry import FeasibleSet
from .rules import RuleKind


def _synth(text: str) -> tuple[int, int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("--synth expects n,p,seed")
    return tuple(parts)


def _add_problem_args(p: argparse.ArgumentParser):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="LIBSVM file")
    src.add_argument("--synth", type=_synth, metavar="N,P,SEED", help="synthetic instance")
    p.add_argument("--loss", choices=["quadratic", "logistic", "sigmoid-sq"], default="logistic")
    p.add_argument("--norm", choices=["l1", "l2"], default="l1", help="primal norm for the constants")
    p.add_argument("--dims", type=int, help="force the feature dimension p")
    p.add_argument("--set", choices=["l1", "simplex"], default="l1")
    p.add_argument("--lambda", dest="radius", type=float, default=10.0, help="radius of the feasible set")


def _problem(args):
    if args.data:
        return load_libsvm(args.data, args.loss, args.dims, args.norm)
    n, p, seed = args.synth
    return synth_problem(n, p, args.loss, seed, args.norm)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taylorfw", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment matrix and write traces")
    _add_problem_args(run)
    run.add_argument("--solver", nargs="+", choices=["tufw", "fw", "fw-ada"], default=["tufw"])
    run.add_argument("--rule", nargs="+", choices=[k.value for k in RuleKind], default=["dbd-sqrt"])
    run.add_argument("--steps", nargs="+", choices=["harmonic", "fixed", "adaptive", "adaptive-fixed"],
                     default=["adaptive"])
    run.add_argument("--iters", "-K", type=int, default=1000)
    run.add_argument("--K", dest="iters", type=int, help="alias of --iters (also the rule horizon)")
    run.add_argument("--trials", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--sampling", choices=["cyclic", "uniform"], default="cyclic")
    run.add_argument("--hmode", choices=["dense", "factored"], default="dense")
    run.add_argument("--gap-every", type=int, default=None)
    run.add_argument("--eps", type=float, nargs="+", default=[1e-1, 1e-3])
    run.add_argument("--return", dest="return_mode", choices=["last", "best-gap", "uniform-random"],
                     default="last")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", help=f"output directory (default ${harness.OUTPUT_ENV} or ./taylorfw-out)")
    run.add_argument("--check", choices=[b.value for b in harness.Bound],
                     help="also check every cell against this envelope")
    run.add_argument("--reference", help="reference JSON for --check on convex envelopes")

    ref = sub.add_parser("reference", help="compute a reference optimal value")
    _add_problem_args(ref)
    ref.add_argument("--ref-iters", type=int, default=10 ** 6)
    ref.add_argument("--output", "-o", required=True)

    chk = sub.add_parser("check", help="check trace files against a convergence envelope")
    _add_problem_args(chk)
    chk.add_argument("traces", nargs="+", help="trace files (trials of one cell)")
    chk.add_argument("--bound", required=True, choices=[b.value for b in harness.Bound])
    chk.add_argument("--reference", help="reference JSON (convex envelopes)")
    chk.add_argument("--f-star", type=float, help="reference optimal value given directly")
    chk.add_argument("--slack", type=float)

    summ = sub.add_parser("summarize", help="recompute summary.json from trace files")
    summ.add_argument("outdir")
    summ.add_argument("--eps", type=float, nargs="+")
    return parser


def _check(traces, problem, fset, bound, reference=None, f_star=None, slack=None):
    bound = harness.Bound(bound)
    if f_star is None and reference is not None:
        ref = harness.ReferenceSolution.load(reference)
        if ref.fingerprint != problem.fingerprint():
            raise SystemExit(f"reference {reference} belongs to a different problem")
        f_star = ref.absorb(traces).f_star
    if f_star is None:
        if bound.convex:
            raise SystemExit("convex envelopes need --reference or --f-star")
        f_star = min(float(np.nanmin(t.objectives)) for t in traces)
    erm = bound in (harness.Bound.ERM_CONVEX_STOCHASTIC, harness.Bound.ERM_NONCONVEX_AVERAGE)
    consts = harness.ProblemConstants.of(problem, fset, range_diameters=erm)
    return harness.bound_check(traces, consts, bound, f_star=f_star, slack=slack)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        cfg = harness.ExperimentConfig(
            data=args.data, synth=args.synth, loss=args.loss, norm=args.norm, dims=args.dims, set=args.set,
            radius=args.radius, solvers=args.solver, rules=args.rule, steps=args.steps, iters=args.iters,
            trials=args.trials, seed=args.seed, sampling=args.sampling, hmode=args.hmode,
            gap_every=args.gap_every, eps=args.eps, out=args.out, workers=args.workers,
            return_mode=args.return_mode)
        summary = harness.run_experiment(cfg)
        status = 1 if summary["failed"] else 0
        if args.check:
            problem, fset = cfg.load_problem(), cfg.feasible_set()
            reports = {}
            for name, traces in harness._load_traces(cfg.output_dir() / "traces").items():
                rep = _check(traces, problem, fset, args.check, reference=args.reference)
                reports[name] = rep.as_dict()
                status |= 0 if rep.ok else 1
            (cfg.output_dir() / "bounds.json").write_text(json.dumps(reports, indent=1, sort_keys=True) + "\n")
        print(json.dumps(summary, indent=1, sort_keys=True))
        return status
    if args.command == "reference":
        problem = _problem(args)
        ref = harness.compute_reference(problem, FeasibleSet(args.set, args.radius), args.ref_iters)
        ref.save(args.output)
        print(json.dumps(dict(fingerprint=ref.fingerprint, f_star=ref.f_star, iterations=ref.iterations)))
        return 0
    if args.command == "check":
        problem = _problem(args)
        traces = [harness.read_trace(p) for p in args.traces]
        rep = _check(traces, problem, FeasibleSet(args.set, args.radius), args.bound, args.reference,
                     args.f_star, args.slack)
        print(json.dumps(rep.as_dict(), indent=1))
        for k, lhs, rhs in rep.violations[:20]:
            print(f"violation at k={k}: {lhs:.6g} > {rhs:.6g}", file=sys.stderr)
        return 0 if rep.ok else 1
    if args.command == "summarize":
        out = Path(args.outdir)
        summary = harness.summarize(out / "traces", args.eps)
        previous = out / "summary.json"
        if previous.exists():
            summary["failed"] = json.loads(previous.read_text()).get("failed", [])
        (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        print(json.dumps(summary, indent=1, sort_keys=True))
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
