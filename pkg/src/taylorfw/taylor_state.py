"""Aggregated second-order Taylor model of the ERM gradient.

Under linear prediction the Taylor point ``b_i`` of observation ``i`` enters
only through its margin ``theta_i = w_i^T b_i``, so the gradient estimate

    g(x) = (1/n) sum_i [l_i'(theta_i) w_i + l_i''(theta_i) w_i (w_i^T x - theta_i)]

collapses to an affine map ``q + H x`` that is maintained by rank-one
corrections whenever a Taylor point moves.
"""
from __future__ import annotations

import numpy as np
from scipy import sparse

from . import losses
from .dataset import Problem

# Flop cost model. A "scalar evaluation" of l, l' or l'' counts as one flop.
# A symmetric rank-one update touches the upper triangle: s(s+1) flops.


def update_cost(nnz: np.ndarray, dense_h: bool = True) -> int:
    """Flops to move the Taylor points of observations with ``nnz`` nonzeros.

    Without a dense ``H`` only the curvature coefficient is stored, so the
    rank-one term drops out.
    """
    nnz = np.asarray(nnz, dtype=np.int64)
    # margin 2s, two evaluations, two differences, q axpy 2s, H update s(s+1)
    rank_one = nnz * (nnz + 1) if dense_h else 0
    return int(np.sum(rank_one + 4 * nnz + 4))


def build_cost(nnz: np.ndarray, dense_h: bool = True) -> int:
    """Flops to assemble ``q`` (and a dense ``H``) from scratch."""
    nnz = np.asarray(nnz, dtype=np.int64)
    rank_one = nnz * (nnz + 1) if dense_h else 0
    return int(np.sum(rank_one + 4 * nnz + 2))


def exact_gradient_cost(problem: Problem) -> int:
    # margins 2 nnz, n evaluations, W c 2 nnz, scaling
    return 4 * problem.nnz + problem.n + problem.p


def objective_cost(problem: Problem) -> int:
    return 2 * problem.nnz + 2 * problem.n


class TaylorModel:
    """Per-observation Taylor margins plus the affine model ``g(x) = q + H x``.

    ``hmode='dense'`` stores ``H`` as a ``p x p`` array. ``hmode='factored'``
    keeps only the curvature coefficients and applies ``H`` as
    ``W diag(c) W^T / n``, which pays off when ``p^2`` dwarfs ``n s``.

    A rebuild of ``q`` and ``H`` from the stored margins runs on every
    ``rebuild_every``-th full-batch update (default: ``n``) to stop roundoff
    drift from long chains of rank-one corrections.
    """

    def __init__(self, problem: Problem, x0, k0: int = 0, hmode: str = "dense",
                 rebuild_every: int | None = None):
        if hmode not in ("dense", "factored"):
            raise ValueError(f"hmode must be 'dense' or 'factored', got {hmode!r}")
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.size != problem.p:
            raise ValueError(f"x0 has dimension {x0.size}, problem has p={problem.p}")
        self.problem = problem
        self.hmode = hmode
        self.rebuild_every = problem.n if rebuild_every is None else int(rebuild_every)
        self.update_flops = 0
        self.estimate_flops = 0
        self._full_updates = 0
        n = problem.n
        self.theta = np.asarray(problem.margins(x0), dtype=float).copy()
        self.last_update = np.full(n, int(k0), dtype=np.int64)
        self._assemble()
        self.update_flops += build_cost(problem.column_nnz, hmode == "dense")

    # construction --------------------------------------------------------

    def _assemble(self):
        pb = self.problem
        fam = pb.family
        self.coef_q = losses._intercept(fam, pb.y, self.theta)
        self.coef_h = losses._d2(fam, pb.y, self.theta)
        self.q = np.asarray(pb.combine(self.coef_q), dtype=float) / pb.n
        if self.hmode == "dense":
            self.H = _weighted_gram(pb.columns(slice(None)), self.coef_h / pb.n, pb.p)
        else:
            self.H = None

    @property
    def flops(self) -> int:
        return self.update_flops + self.estimate_flops

    # updates ---------------------------------------------------------------

    def update_batch(self, batch, x, k: int):
        """Move the Taylor points of ``batch`` to ``x`` (iteration ``k``)."""
        pb = self.problem
        n = pb.n
        idx = np.asarray(batch, dtype=np.int64).ravel()
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= n:
            raise IndexError(f"batch index out of range [0, {n})")
        full = idx.size == n
        if full and np.array_equal(idx, np.arange(n)):
            idx = slice(None)
        elif np.unique(idx).size != idx.size:
            raise ValueError("batch contains duplicate indices")
        x = np.asarray(x, dtype=float).ravel()
        cols = pb.columns(idx)
        theta_new = np.asarray(cols.T @ x).ravel()
        fam, y = pb.family, pb.y[idx]
        a_new = losses._intercept(fam, y, theta_new)
        h_new = losses._d2(fam, y, theta_new)
        da = a_new - self.coef_q[idx]
        dh = h_new - self.coef_h[idx]
        self.q += np.asarray(cols @ da).ravel() / n
        if self.H is not None:
            self.H += _weighted_gram(cols, dh / n, pb.p)
        self.theta[idx] = theta_new
        self.coef_q[idx] = a_new
        self.coef_h[idx] = h_new
        self.last_update[idx] = k
        self.update_flops += update_cost(pb.column_nnz[idx], self.H is not None)
        if full:
            self._full_updates += 1
            if self.rebuild_every > 0 and self._full_updates % self.rebuild_every == 0:
                self._assemble()

    # queries -----------------------------------------------------------------

    def gradient_estimate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        pb = self.problem
        if self.H is not None:
            self.estimate_flops += 2 * pb.p * pb.p + pb.p
            return self.q + self.H @ x
        self.estimate_flops += 4 * pb.nnz + pb.n + pb.p
        return self.q + np.asarray(pb.combine(self.coef_h * pb.margins(x))).ravel() / pb.n

    def hessian(self) -> np.ndarray:
        """Dense ``H`` (assembled on demand in factored mode)."""
        if self.H is not None:
            return self.H
        pb = self.problem
        return _weighted_gram(pb.columns(slice(None)), self.coef_h / pb.n, pb.p)

    def curvature(self, d) -> float:
        """``d^T H d`` (negative values are possible for nonconvex losses)."""
        d = np.asarray(d, dtype=float).ravel()
        pb = self.problem
        if self.H is not None:
            self.estimate_flops += 2 * pb.p * pb.p + 2 * pb.p
            return float(d @ (self.H @ d))
        self.estimate_flops += 2 * pb.nnz + 3 * pb.n
        m = np.asarray(pb.margins(d)).ravel()
        return float(np.sum(self.coef_h * m * m) / pb.n)

    def error_bound_diag(self, step_history, D: float, k: int | None = None) -> float:
        """Upper bound on ``(grad F(x^k) - g^k)^T (u - v)`` over ``u, v`` in the set.

        ``step_history[j]`` is the step used at iteration ``j``; ``k`` defaults
        to ``len(step_history)``. Uses the feature-scaled constant ``Lhat_eff``.
        """
        gammas = np.asarray(step_history, dtype=float)
        k = gammas.size if k is None else int(k)
        prefix = np.concatenate(([0.0], np.cumsum(gammas[:k])))
        tau = np.minimum(self.last_update, k)
        inner = prefix[k] - prefix[tau]
        pb = self.problem
        return float(pb.Lhat_eff * D ** 3 / (2.0 * pb.n) * np.sum(inner * inner))


def _weighted_gram(cols, weights: np.ndarray, p: int) -> np.ndarray:
    """``cols @ diag(weights) @ cols.T`` as a dense ``p x p`` array."""
    if sparse.issparse(cols):
        return np.asarray((cols.multiply(weights[None, :]) @ cols.T).toarray())
    return (cols * weights) @ cols.T


def exact_gradient(problem: Problem, x, counter=None) -> np.ndarray:
    """``grad F(x) = (1/n) sum_i l_i'(w_i^T x) w_i``.

    ``counter`` is any object with an integer ``metrics_flops`` attribute; the
    cost is charged there, never to an algorithm counter.
    """
    x = np.asarray(x, dtype=float).ravel()
    m = problem.margins(x)
    d1 = losses._d1(problem.family, problem.y, m)
    if counter is not None:
        counter.metrics_flops += exact_gradient_cost(problem)
    return np.asarray(problem.combine(d1)).ravel() / problem.n


def objective(problem: Problem, x, counter=None) -> float:
    x = np.asarray(x, dtype=float).ravel()
    m = problem.margins(x)
    if counter is not None:
        counter.metrics_flops += objective_cost(problem)
    return float(np.mean(losses._value(problem.family, problem.y, m)))
