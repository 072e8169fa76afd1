"""Frank-Wolfe drivers: Taylor-point updating (TUFW), standard FW and FW-ada."""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import geometry, rules
from .dataset import Problem
from .geometry import FeasibleSet
from .rules import RuleSpec
from .taylor_state import TaylorModel, exact_gradient, exact_gradient_cost, objective

logger = logging.getLogger(__name__)


class SolverDivergence(RuntimeError):
    """Objective became NaN or infinite."""


class StepKind(str, enum.Enum):
    HARMONIC = "harmonic"
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class StepSizeRule:
    """Step schedule. ``FIXED`` is ``1/sqrt(K+1)``; ``ADAPTIVE`` caps ``base``
    by the minimizer of the local quadratic model along the FW direction."""

    kind: StepKind = StepKind.HARMONIC
    base: StepKind = StepKind.HARMONIC

    def __post_init__(self):
        object.__setattr__(self, "kind", StepKind(self.kind))
        object.__setattr__(self, "base", StepKind(self.base))
        if self.base is StepKind.ADAPTIVE:
            raise ValueError("adaptive steps need a harmonic or fixed base schedule")


def base_step(kind: StepKind, k: int, K: int | None = None) -> float:
    kind = StepKind(kind)
    if kind is StepKind.HARMONIC:
        return 2.0 / (k + 2.0)
    if kind is StepKind.FIXED:
        if K is None:
            raise rules.RuleConfigError("fixed 1/sqrt(K+1) steps need the horizon K")
        return 1.0 / math.sqrt(K + 1.0)
    raise ValueError(f"{kind} is not a base schedule")


def step_size(rule: StepSizeRule, k: int, K: int | None = None, gk_dot_xs: float | None = None,
              curvature: float | None = None) -> float:
    """Step for iteration ``k``.

    For adaptive rules ``gk_dot_xs = g^T (x - s)`` and ``curvature = (s - x)^T H (s - x)``.
    """
    if rule.kind is not StepKind.ADAPTIVE:
        return base_step(rule.kind, k, K)
    gamma = base_step(rule.base, k, K)
    if curvature is not None and curvature > 0:
        gamma = min(gamma, gk_dot_xs / curvature)
    # safety net: feasibility needs gamma in [0, 1]
    return float(min(max(gamma, 0.0), 1.0))


@dataclass
class IterationRecord:
    k: int
    F: float | None
    gap: float | None
    gamma: float
    batch: int
    flops: int
    lmo_calls: int
    wall_ms: float


@dataclass
class Trace:
    """Per-iteration records plus run metadata.

    ``x`` is the returned solution; ``iterates`` is filled only when the run
    was asked to store them. ``counters`` separates algorithm flops (Taylor
    updates vs. gradient estimates), LMO calls and offline metrics flops.
    """

    header: dict = field(default_factory=dict)
    records: list[IterationRecord] = field(default_factory=list)
    x: np.ndarray | None = None
    iterates: list[np.ndarray] | None = None
    counters: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def objectives(self) -> np.ndarray:
        return self.column("F")

    @property
    def gaps(self) -> np.ndarray:
        return np.array([np.nan if r.gap is None else r.gap for r in self.records])

    def first_hit(self, eps: float) -> IterationRecord | None:
        for r in self.records:
            if r.gap is not None and r.gap <= eps:
                return r
        return None


@dataclass
class _Counters:
    metrics_flops: int = 0
    lmo_calls: int = 0
    lmo_flops: int = 0


def fw_gap(problem: Problem, fset: FeasibleSet, x, counter=None) -> float:
    """``max_s <x - s, grad F(x)>`` with the exact gradient (metrics cost)."""
    x = np.asarray(x, dtype=float).ravel()
    g = exact_gradient(problem, x, counter)
    return _gap_from(fset, g, x)


def _gap_from(fset: FeasibleSet, g: np.ndarray, x: np.ndarray) -> float:
    j, val = geometry.lmo_index(fset, g)
    return float(g @ x - val * g[j])


def default_x0(problem: Problem, fset: FeasibleSet) -> np.ndarray:
    """The LMO vertex for a zero gradient (lowest-index tie-break)."""
    return geometry.lmo(fset, np.zeros(problem.p))


def _check_x0(problem, fset, x0):
    if x0 is None:
        return default_x0(problem, fset)
    x0 = np.asarray(x0, dtype=float).ravel().copy()
    if x0.size != problem.p:
        raise ValueError(f"x0 has dimension {x0.size}, expected {problem.p}")
    if not fset.contains(x0, tol=1e-9):
        raise ValueError("x0 is not feasible")
    return x0


def _default_gap_every(problem: Problem, K: int) -> int:
    if not problem.family.convex and K >= 100 * problem.n:
        return 200
    return 1


class _Run:
    """Bookkeeping shared by the three drivers."""

    def __init__(self, problem, fset, K, gap_every, record_objective, tol, store_iterates,
                 return_mode, seed, callbacks, header):
        self.problem, self.fset, self.K = problem, fset, int(K)
        if self.K < 0:
            raise ValueError("K must be >= 0")
        self.gap_every = _default_gap_every(problem, self.K) if gap_every is None else int(gap_every)
        self.record_objective = record_objective
        self.tol = tol
        self.counters = _Counters()
        self.trace = Trace(header=header, iterates=[] if store_iterates else None)
        self.callbacks = list(callbacks or ())
        self.return_mode = return_mode
        if return_mode not in ("last", "best-gap", "uniform-random"):
            raise ValueError(f"unknown return mode {return_mode!r}")
        self.pick_k = int(np.random.default_rng([int(seed) & (2 ** 63 - 1), 2 ** 32]).integers(self.K + 1))
        self.picked = None
        self.best_gap = math.inf
        self.best_x = None
        self.t0 = time.perf_counter()

    def lmo(self, g):
        self.counters.lmo_calls += 1
        self.counters.lmo_flops += g.size
        return geometry.lmo_index(self.fset, g)

    def record(self, k, x, gamma, batch, algo_flops, exact_grad=None):
        pb = self.problem
        F = objective(pb, x, self.counters) if self.record_objective else None
        if F is not None and not math.isfinite(F):
            raise SolverDivergence(f"objective is {F} at iteration {k}")
        gap = None
        if self.gap_every > 0 and (k % self.gap_every == 0 or k == self.K):
            if exact_grad is None:
                gap = fw_gap(pb, self.fset, x, self.counters)
            else:
                gap = _gap_from(self.fset, exact_grad, x)
                self.counters.metrics_flops += 2 * pb.p
            if gap < self.best_gap:
                self.best_gap, self.best_x = gap, x.copy()
        if k == self.pick_k:
            self.picked = x.copy()
        rec = IterationRecord(k=k, F=F, gap=gap, gamma=float(gamma), batch=int(batch), flops=int(algo_flops),
                              lmo_calls=self.counters.lmo_calls,
                              wall_ms=(time.perf_counter() - self.t0) * 1e3)
        self.trace.records.append(rec)
        if self.trace.iterates is not None:
            self.trace.iterates.append(x.copy())
        return rec

    def done(self, rec) -> bool:
        return self.tol is not None and rec.gap is not None and rec.gap <= self.tol

    def finish(self, x_last, extra_counters):
        tr = self.trace
        if self.return_mode == "best-gap" and self.best_x is not None:
            tr.x = self.best_x
        elif self.return_mode == "uniform-random" and self.picked is not None:
            tr.x = self.picked
        else:
            tr.x = x_last
        tr.counters = dict(extra_counters, lmo_calls=self.counters.lmo_calls,
                           lmo_flops=self.counters.lmo_flops, metrics_flops=self.counters.metrics_flops)
        return tr


def _header(solver, problem, fset, K, **extra):
    return dict(solver=solver, problem=problem.name, fingerprint=problem.fingerprint(),
                family=problem.family.value, n=problem.n, p=problem.p, set=fset.kind.value,
                radius=fset.radius, K=int(K), **extra)


def tufw_run(problem: Problem, fset: FeasibleSet, rule: RuleSpec | None = None, steps: StepSizeRule | None = None,
             K: int = 100, x0=None, callbacks: Iterable[Callable] = (), gap_every: int | None = None,
             hmode: str = "dense", record_objective: bool = True, tol: float | None = None,
             store_iterates: bool = False, return_mode: str = "last", rebuild_every: int | None = None) -> Trace:
    """Frank-Wolfe with Taylor-point updating for iterations ``k = 0..K``.

    Each callback receives a dict with ``k, x, g, s, gamma, batch, model``
    (``x`` is ``x^k``, before the step) and may return ``True`` to stop early.
    """
    rule = rule or RuleSpec()
    steps = steps or StepSizeRule()
    if rule.kind in (rules.RuleKind.SBD_FOURTH_K, rules.RuleKind.DBD_FOURTH_K) and rule.K != K:
        logger.debug("rule horizon %s differs from run length %s", rule.K, K)
    x = _check_x0(problem, fset, x0)
    header = _header("tufw", problem, fset, K, rule=rule.kind.value, sampling=rule.sampling.value,
                     seed=rule.seed, rule_K=rule.K, steps=steps.kind.value, step_base=steps.base.value,
                     hmode=hmode)
    run = _Run(problem, fset, K, gap_every, record_objective, tol, store_iterates, return_mode, rule.seed,
               callbacks, header)
    model = TaylorModel(problem, x, k0=0, hmode=hmode, rebuild_every=rebuild_every)
    n, p = problem.n, problem.p
    step_flops = 0
    for k in range(run.K + 1):
        batch = n
        if k > 0:
            B = rules.batch_indices(rule, k, n)
            batch = B.size
            model.update_batch(B, x, k)
        g = model.gradient_estimate(x)
        j, val = run.lmo(g)
        curv = gdx = None
        if steps.kind is StepKind.ADAPTIVE:
            d = -x.copy()
            d[j] += val
            gdx = float(-(g @ d))
            curv = model.curvature(d)
            step_flops += 2 * p
        gamma = step_size(steps, k, K, gdx, curv)
        step_flops += 3 * p
        rec = run.record(k, x, gamma, batch, model.flops + step_flops)
        stop = run.done(rec)
        if run.callbacks:
            s = np.zeros(p)
            s[j] = val
            state = dict(k=k, x=x, g=g, s=s, gamma=gamma, batch=batch, model=model)
            stop = any([bool(cb(state)) for cb in run.callbacks]) or stop
        x = x * (1.0 - gamma)
        x[j] += gamma * val
        if stop:
            break
    return run.finish(x, dict(update_flops=model.update_flops, estimate_flops=model.estimate_flops,
                              step_flops=step_flops))


def _exact_fw(problem, fset, K, x0, callbacks, gap_every, record_objective, tol, store_iterates,
              return_mode, step_fn, header):
    x = _check_x0(problem, fset, x0)
    run = _Run(problem, fset, K, gap_every, record_objective, tol, store_iterates, return_mode, 0,
               callbacks, header)
    p = problem.p
    grad_flops = step_flops = 0
    cost = exact_gradient_cost(problem)
    for k in range(run.K + 1):
        g = exact_gradient(problem, x)
        grad_flops += cost
        j, val = run.lmo(g)
        gamma, extra = step_fn(k, x, g, j, val)
        step_flops += extra + 3 * p
        rec = run.record(k, x, gamma, problem.n, grad_flops + step_flops, exact_grad=g)
        stop = run.done(rec)
        if run.callbacks:
            s = np.zeros(p)
            s[j] = val
            state = dict(k=k, x=x, g=g, s=s, gamma=gamma, batch=problem.n, model=None)
            stop = any([bool(cb(state)) for cb in run.callbacks]) or stop
        x = x * (1.0 - gamma)
        x[j] += gamma * val
        if stop:
            break
    return run.finish(x, dict(gradient_flops=grad_flops, step_flops=step_flops))


def standard_fw_run(problem: Problem, fset: FeasibleSet, steps: StepSizeRule | None = None, K: int = 100,
                    x0=None, callbacks=(), gap_every: int | None = None, record_objective: bool = True,
                    tol: float | None = None, store_iterates: bool = False, return_mode: str = "last") -> Trace:
    """Frank-Wolfe with the exact gradient at every iteration."""
    steps = steps or StepSizeRule()
    if steps.kind is StepKind.ADAPTIVE:
        raise ValueError("standard FW takes harmonic or fixed steps; use fw_ada_run for adaptive steps")

    def step_fn(k, x, g, j, val):
        return base_step(steps.kind, k, K), 0

    header = _header("fw", problem, fset, K, steps=steps.kind.value)
    return _exact_fw(problem, fset, K, x0, callbacks, gap_every, record_objective, tol, store_iterates,
                     return_mode, step_fn, header)


def fw_ada_run(problem: Problem, fset: FeasibleSet, K: int = 100, x0=None, callbacks=(),
               gap_every: int | None = None, record_objective: bool = True, tol: float | None = None,
               store_iterates: bool = False, return_mode: str = "last", L: float | None = None) -> Trace:
    """Frank-Wolfe with ``gamma = min(1, G(x) / (L ||x - s||^2))``, ``L = L_eff``.

    ``||.||`` is the problem's primal norm.
    """
    L = problem.L_eff if L is None else float(L)
    ord_ = 1 if str(problem.norm).lower() in ("l1", "1") else 2

    def step_fn(k, x, g, j, val):
        d = -x.copy()
        d[j] += val
        gap = float(-(g @ d))
        dist = float(np.linalg.norm(d, ord=ord_))
        if L <= 0 or dist == 0.0:
            return 1.0, 3 * x.size
        return float(min(1.0, max(gap, 0.0) / (L * dist * dist))), 5 * x.size

    header = _header("fw-ada", problem, fset, K, steps="fw-ada", L=L)
    return _exact_fw(problem, fset, K, x0, callbacks, gap_every, record_objective, tol, store_iterates,
                     return_mode, step_fn, header)


def record_as_dict(rec: IterationRecord) -> dict:
    return asdict(rec)
