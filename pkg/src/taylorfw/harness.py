"""Benchmark runner: experiment matrices, trace files, references, bound checks."""
from __future__ import annotations

import enum
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__, geometry, losses
from .dataset import Problem, load_libsvm, synth_problem
from .geometry import FeasibleSet
from .rules import RuleKind, RuleSpec
from .solvers import (IterationRecord, StepKind, StepSizeRule, Trace, fw_ada_run, standard_fw_run,
                      tufw_run, default_x0)

logger = logging.getLogger(__name__)

OUTPUT_ENV = "TAYLORFW_OUT"
RECORD_FIELDS = ("k", "F", "gap", "gamma", "batch", "flops", "lmo_calls", "wall_ms")


# trace persistence ------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def trace_to_lines(trace: Trace) -> list[str]:
    header = dict(trace.header)
    header.setdefault("version", __version__)
    header["counters"] = dict(trace.counters)
    header["x"] = None if trace.x is None else [float(v) for v in trace.x]
    lines = [_dumps({"type": "header", **header})]
    for r in trace.records:
        lines.append(_dumps({f: getattr(r, f) for f in RECORD_FIELDS}))
    return lines


def write_trace(trace: Trace, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(trace_to_lines(trace)) + "\n")
    return path


def read_trace(path: str | os.PathLike) -> Trace:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty trace file")
    header = json.loads(lines[0])
    if header.pop("type", None) != "header":
        raise ValueError(f"{path}: first line is not a trace header")
    counters = header.pop("counters", {})
    x = header.pop("x", None)
    records = []
    for ln in lines[1:]:
        d = json.loads(ln)
        records.append(IterationRecord(**{f: d[f] for f in RECORD_FIELDS}))
    return Trace(header=header, records=records, x=None if x is None else np.asarray(x, float),
                 counters=counters)


# references ---------------------------------------------------------------------

@dataclass
class ReferenceSolution:
    fingerprint: str
    f_star: float
    x_star: list
    iterations: int
    provenance: str = "fw-harmonic"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "ReferenceSolution":
        return cls(**json.loads(Path(path).read_text()))

    def absorb(self, traces: Iterable[Trace]) -> "ReferenceSolution":
        """Lower ``f_star`` to the best objective seen in ``traces``."""
        for tr in traces:
            obj = tr.objectives
            obj = obj[np.isfinite(obj)]
            if obj.size and obj.min() < self.f_star:
                self.f_star = float(obj.min())
                self.provenance += "+trace"
        return self


def compute_reference(problem: Problem, fset: FeasibleSet, iterations: int = 10 ** 6, x0=None) -> ReferenceSolution:
    """Long standard-FW run (harmonic steps) keeping the best objective seen.

    Objective and gradient share one margin computation per iteration.
    """
    if not problem.family.convex:
        raise ValueError("reference optimal values are only defined for convex losses")
    fam, y, n = problem.family, problem.y, problem.n
    x = default_x0(problem, fset) if x0 is None else np.asarray(x0, float).copy()
    best_f, best_x = math.inf, x.copy()
    value, d1 = losses._value, losses._d1
    if problem.dense:
        # plain array products skip the sparse dispatch in this hot loop
        W = np.ascontiguousarray(problem.W.toarray())
        WT = np.ascontiguousarray(W.T)
        margins, combine = WT.__matmul__, W.__matmul__
    else:
        margins, combine = problem.margins, problem.combine
    for k in range(int(iterations) + 1):
        m = margins(x)
        f = float(value(fam, y, m).sum()) / n
        if f < best_f:
            best_f, best_x = f, x.copy()
        if k == iterations:
            break
        g = combine(d1(fam, y, m))
        j, val = geometry.lmo_index(fset, g)
        gamma = 2.0 / (k + 2.0)
        x *= 1.0 - gamma
        x[j] += gamma * val
    return ReferenceSolution(problem.fingerprint(), best_f, [float(v) for v in best_x], int(iterations))


# bound checks -----------------------------------------------------------------

class Bound(str, enum.Enum):
    """Convergence envelopes that traces can be checked against."""

    CONVEX_STOCHASTIC = "convex-stochastic"          # SBD sqrt(k), harmonic steps
    CONVEX_DETERMINISTIC = "convex-deterministic"    # DBD sqrt(k), harmonic steps
    NONCONVEX_AVERAGE = "nonconvex-average"          # SBD K^(1/4), fixed steps
    ERM_CONVEX_STOCHASTIC = "erm-convex-stochastic"  # range-diameter constants
    ERM_NONCONVEX_AVERAGE = "erm-nonconvex-average"

    @property
    def convex(self) -> bool:
        return self in (Bound.CONVEX_STOCHASTIC, Bound.CONVEX_DETERMINISTIC, Bound.ERM_CONVEX_STOCHASTIC)

    @property
    def default_slack(self) -> float:
        return 1.0 if self is Bound.CONVEX_DETERMINISTIC else 2.0


@dataclass
class ProblemConstants:
    L: float
    Lhat: float
    L_eff: float
    Lhat_eff: float
    D: float
    D1: float
    D2: float
    Dinf: float
    n: int

    @classmethod
    def of(cls, problem: Problem, fset: FeasibleSet, range_diameters: bool = True) -> "ProblemConstants":
        D = geometry.diameter(fset, problem.norm, problem.p)
        if range_diameters:
            D1, D2, Dinf = (geometry.range_diameter(fset, problem.W, q) for q in ("l1", "l2", "linf"))
        else:
            D1 = D2 = Dinf = math.nan
        return cls(problem.L, problem.Lhat, problem.L_eff, problem.Lhat_eff, D, D1, D2, Dinf, problem.n)


def bound_rhs(bound: Bound, c: ProblemConstants, k: int, K: int | None = None, f0_gap: float = 0.0) -> float:
    """Right-hand side of the envelope at iteration ``k`` (or horizon ``K``)."""
    bound = Bound(bound)
    if bound is Bound.CONVEX_DETERMINISTIC:
        return (2 * c.L_eff * c.D ** 2 + 144 * c.Lhat_eff * c.D ** 3) / (k + 1)
    if bound is Bound.CONVEX_STOCHASTIC:
        return (2 * c.L_eff * c.D ** 2 + 134 * c.Lhat_eff * c.D ** 3) / (k + 1)
    if bound is Bound.ERM_CONVEX_STOCHASTIC:
        return (2 * c.L * c.D2 ** 2 + 134 * c.Lhat * c.D1 * c.Dinf ** 2) / (c.n * (k + 1))
    root = math.sqrt(K + 1)
    if bound is Bound.NONCONVEX_AVERAGE:
        return f0_gap / root + (3 * c.Lhat_eff * c.D ** 3 + c.L_eff * c.D ** 2) / (2 * root)
    return f0_gap / root + (3 * c.Lhat * c.D1 * c.Dinf ** 2 + c.L * c.D2 ** 2) / (2 * c.n * root)


@dataclass
class BoundReport:
    bound: str
    slack: float
    rows: list = field(default_factory=list)  # (k, observed, allowed)

    @property
    def violations(self) -> list:
        return [r for r in self.rows if not r[1] <= r[2]]

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return dict(bound=self.bound, slack=self.slack, checked=len(self.rows), violations=len(self.violations),
                    worst_ratio=max((r[1] / r[2] for r in self.rows if r[2] > 0), default=0.0))


def bound_check(traces: Sequence[Trace] | Trace, constants: ProblemConstants, bound: Bound | str,
                f_star: float | None = None, slack: float | None = None,
                ks: Iterable[int] | None = None) -> BoundReport:
    """Compare trial-averaged traces with an envelope.

    Convex envelopes compare the trial mean of ``F(x^k) - f_star`` at each
    ``k >= 1`` (or the given ``ks``). Average-gap envelopes compare the trial
    mean of the recorded gaps' average with the horizon-``K`` bound, using
    ``F(x^0) - f_star`` from the traces.
    """
    bound = Bound(bound)
    if isinstance(traces, Trace):
        traces = [traces]
    if not traces:
        raise ValueError("no traces to check")
    if f_star is None:
        raise ValueError(f"{bound.value} needs a reference optimal value")
    slack = bound.default_slack if slack is None else float(slack)
    report = BoundReport(bound.value, slack)
    if bound.convex:
        length = min(len(t.records) for t in traces)
        F = np.mean([t.objectives[:length] for t in traces], axis=0)
        kk = [r.k for r in traces[0].records[:length]]
        wanted = set(int(k) for k in ks) if ks is not None else None
        for i, k in enumerate(kk):
            if k < 1 or (wanted is not None and k not in wanted):
                continue
            report.rows.append((int(k), float(F[i] - f_star), slack * bound_rhs(bound, constants, int(k))))
        return report
    avgs, f0s = [], []
    for t in traces:
        gaps = t.gaps
        gaps = gaps[np.isfinite(gaps)]
        if gaps.size == 0:
            raise ValueError("average-gap envelopes need recorded gaps")
        avgs.append(gaps.mean())
        f0s.append(t.records[0].F)
    K = int(traces[0].header.get("K", traces[0].records[-1].k))
    rhs = bound_rhs(bound, constants, K, K=K, f0_gap=float(np.mean(f0s)) - f_star)
    report.rows.append((K, float(np.mean(avgs)), slack * rhs))
    return report


# experiments --------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    data: str | None = None
    synth: tuple | None = None  # (n, p, seed)
    loss: str = "logistic"
    norm: str = "l1"
    dims: int | None = None
    set: str = "l1"
    radius: float = 10.0
    solvers: list = field(default_factory=lambda: ["tufw"])
    rules: list = field(default_factory=lambda: ["dbd-sqrt"])
    steps: list = field(default_factory=lambda: ["adaptive"])
    iters: int = 1000
    trials: int = 1
    seed: int = 0
    sampling: str = "cyclic"
    hmode: str = "dense"
    gap_every: int | None = None
    eps: list = field(default_factory=lambda: [1e-1, 1e-3])
    out: str | None = None
    workers: int = 1
    return_mode: str = "last"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if (self.data is None) == (self.synth is None):
            raise ValueError("give exactly one of data= or synth=")
        if self.data is not None and not Path(self.data).exists():
            raise FileNotFoundError(self.data)
        if self.synth is not None:
            self.synth = tuple(int(v) for v in self.synth)

    def output_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUTPUT_ENV) or "taylorfw-out")

    def load_problem(self) -> Problem:
        if self.data is not None:
            return load_libsvm(self.data, self.loss, self.dims, self.norm)
        n, p, seed = self.synth
        return synth_problem(n, p, self.loss, seed, self.norm)

    def feasible_set(self) -> FeasibleSet:
        return FeasibleSet(self.set, self.radius)

    def cells(self) -> list[tuple[str, str, str]]:
        out = []
        for solver in self.solvers:
            if solver == "tufw":
                out += [(solver, r, s) for r in self.rules for s in self.steps]
            elif solver == "fw":
                out += [(solver, "-", s) for s in self.steps if s != "adaptive"] or [(solver, "-", "harmonic")]
            elif solver == "fw-ada":
                out.append((solver, "-", "fw-ada"))
            else:
                raise ValueError(f"unknown solver {solver!r}")
        return out


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(trial)]).generate_state(1, np.uint64)[0] >> 1)


def _step_rule(name: str) -> StepSizeRule:
    if name == "adaptive":
        return StepSizeRule(StepKind.ADAPTIVE, StepKind.HARMONIC)
    if name == "adaptive-fixed":
        return StepSizeRule(StepKind.ADAPTIVE, StepKind.FIXED)
    return StepSizeRule(StepKind(name))


def run_cell(problem: Problem, fset: FeasibleSet, cfg: ExperimentConfig, solver: str, rule: str, steps: str,
             trial: int) -> Trace:
    K = cfg.iters
    common = dict(K=K, gap_every=cfg.gap_every, return_mode=cfg.return_mode)
    if solver == "tufw":
        kind = RuleKind(rule)
        horizon = K if kind in (RuleKind.SBD_FOURTH_K, RuleKind.DBD_FOURTH_K) else None
        spec = RuleSpec(kind, horizon, cfg.sampling, trial_seed(cfg.seed, trial))
        tr = tufw_run(problem, fset, spec, _step_rule(steps), hmode=cfg.hmode, **common)
    elif solver == "fw":
        tr = standard_fw_run(problem, fset, _step_rule(steps), **common)
    else:
        tr = fw_ada_run(problem, fset, **common)
    tr.header.update(trial=trial, cell=cell_name(solver, rule, steps))
    return tr


def cell_name(solver: str, rule: str, steps: str) -> str:
    return f"{solver}_{rule}_{steps}"


def _run_job(args):
    cfg, solver, rule, steps, trial = args
    problem = cfg.load_problem()
    try:
        return (solver, rule, steps, trial), run_cell(problem, cfg.feasible_set(), cfg, solver, rule, steps, trial), None
    except Exception as exc:  # a failed cell must not stop the matrix
        logger.exception("cell %s trial %d failed", cell_name(solver, rule, steps), trial)
        return (solver, rule, steps, trial), None, f"{type(exc).__name__}: {exc}"


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every (cell, trial), write one trace file each plus the summary."""
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, s, r, st, t) for (s, r, st) in cfg.cells() for t in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    failures = []
    for (solver, rule, steps, trial), tr, err in results:
        name = f"{cell_name(solver, rule, steps)}_t{trial}.ndjson"
        if tr is None:
            failures.append(dict(cell=cell_name(solver, rule, steps), trial=trial, error=err))
            continue
        tr.header["config"] = _config_dict(cfg)
        write_trace(tr, out / "traces" / name)
    summary = summarize(out / "traces", cfg.eps)
    summary["failed"] = failures
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps(timing_summary(out / "traces", cfg.eps), indent=1,
                                                sort_keys=True) + "\n")
    return summary


def _config_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["synth"] = list(cfg.synth) if cfg.synth else None
    return d


def _load_traces(trace_dir) -> dict[str, list[Trace]]:
    cells: dict[str, list[Trace]] = {}
    for path in sorted(Path(trace_dir).glob("*.ndjson")):
        tr = read_trace(path)
        cells.setdefault(tr.header.get("cell", path.stem.rsplit("_t", 1)[0]), []).append(tr)
    return cells


def summarize(trace_dir, eps: Sequence[float] | None = None) -> dict:
    """Per-cell first-hit iterations/flops for each target (deterministic fields only)."""
    cells = _load_traces(trace_dir)
    rows = []
    for name, traces in sorted(cells.items()):
        targets = eps
        if targets is None:
            targets = traces[0].header.get("config", {}).get("eps", [])
        tgt_rows = []
        for e in targets:
            hits = [t.first_hit(e) for t in traces]
            got = [h for h in hits if h is not None]
            tgt_rows.append(dict(
                eps=e, hits=len(got),
                mean_iterations=float(np.mean([h.k for h in got])) if got else None,
                mean_flops=float(np.mean([h.flops for h in got])) if got else None,
                mean_lmo_calls=float(np.mean([h.lmo_calls for h in got])) if got else None,
            ))
        counters = {}
        for key in sorted({k for t in traces for k in t.counters}):
            counters[key] = float(np.mean([t.counters.get(key, 0) for t in traces]))
        finals = [t.records[-1] for t in traces]
        rows.append(dict(
            cell=name, trials=len(traces),
            final_F=float(np.mean([r.F for r in finals if r.F is not None])) if finals[0].F is not None else None,
            final_gap=_mean_or_none([r.gap for r in finals]),
            targets=tgt_rows, counters=counters,
        ))
    return dict(cells=rows)


def timing_summary(trace_dir, eps: Sequence[float]) -> dict:
    """Wall-clock seconds to first hit (machine dependent, kept out of the summary)."""
    out = {}
    for name, traces in sorted(_load_traces(trace_dir).items()):
        out[name] = {}
        for e in eps:
            hits = [h for h in (t.first_hit(e) for t in traces) if h is not None]
            out[name][str(e)] = float(np.mean([h.wall_ms for h in hits])) / 1e3 if hits else None
    return out


def _mean_or_none(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None
