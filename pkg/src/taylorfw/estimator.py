"""scikit-learn estimators wrapping the Frank-Wolfe solvers.

``X`` follows the scikit-learn convention (one row per sample); internally
the feature matrix is stored column-per-observation.
"""
from __future__ import annotations

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets, type_of_target
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y
from scipy.special import expit

from .dataset import Problem
from .geometry import FeasibleSet
from .losses import LossFamily
from .rules import RuleKind, RuleSpec
from .solvers import StepKind, StepSizeRule, fw_ada_run, standard_fw_run, tufw_run


def _problem_from(X, y, loss, norm) -> Problem:
    W = sparse.csc_matrix(X.T) if sparse.issparse(X) else sparse.csc_matrix(np.asarray(X, float).T)
    return Problem(W, y, loss, norm=norm)


class _BaseTaylorFW(BaseEstimator):
    """Shared fitting logic; subclasses fix the loss family and label coding."""

    def __init__(self, *, loss="logistic", constraint="l1", radius=10.0, solver="tufw", rule="dbd-sqrt",
                 steps="adaptive", max_iter=1000, tol=None, sampling="cyclic", hmode="dense", norm="l1",
                 gap_every=None, random_state=0):
        self.loss = loss
        self.constraint = constraint
        self.radius = radius
        self.solver = solver
        self.rule = rule
        self.steps = steps
        self.max_iter = max_iter
        self.tol = tol
        self.sampling = sampling
        self.hmode = hmode
        self.norm = norm
        self.gap_every = gap_every
        self.random_state = random_state

    def _step_rule(self) -> StepSizeRule:
        if self.steps == "adaptive":
            return StepSizeRule(StepKind.ADAPTIVE, StepKind.HARMONIC)
        if self.steps == "adaptive-fixed":
            return StepSizeRule(StepKind.ADAPTIVE, StepKind.FIXED)
        return StepSizeRule(StepKind(self.steps))

    def _solve(self, problem: Problem):
        if not (isinstance(self.max_iter, (int, np.integer)) and self.max_iter >= 0):
            raise ValueError(f"max_iter must be a non-negative integer, got {self.max_iter!r}")
        fset = FeasibleSet(self.constraint, self.radius)
        K = int(self.max_iter)
        gap_every = self.gap_every
        if gap_every is None:
            gap_every = 1 if self.tol is not None else 0
        common = dict(K=K, gap_every=gap_every, tol=self.tol)
        if self.solver == "tufw":
            kind = RuleKind(self.rule)
            horizon = K if kind in (RuleKind.SBD_FOURTH_K, RuleKind.DBD_FOURTH_K) else None
            seed = 0 if self.random_state is None else int(np.random.RandomState(self.random_state).randint(2 ** 31))
            spec = RuleSpec(kind, horizon, self.sampling, seed)
            trace = tufw_run(problem, fset, spec, self._step_rule(), hmode=self.hmode, **common)
        elif self.solver == "fw":
            trace = standard_fw_run(problem, fset, self._step_rule(), **common)
        elif self.solver == "fw-ada":
            trace = fw_ada_run(problem, fset, **common)
        else:
            raise ValueError(f"unknown solver {self.solver!r}")
        self.coef_ = trace.x
        self.trace_ = trace
        self.n_iter_ = trace.records[-1].k + 1
        self.objective_ = trace.records[-1].F
        return self

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.sparse = True
        return tags

    def _linear(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, accept_sparse=("csr", "csc"))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but {type(self).__name__} "
                             f"is expecting {self.n_features_in_} features as input")
        return np.asarray(X @ self.coef_).ravel()


class TaylorFWClassifier(ClassifierMixin, _BaseTaylorFW):
    """Binary linear classifier trained by constrained Frank-Wolfe.

    ``loss`` is ``'logistic'`` or ``'sigmoid-sq'``. Any two class labels are
    accepted; ``classes_[1]`` is the positive class.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, accept_sparse=("csr", "csc"))
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise ValueError(f"Only binary classification is supported. The type of the target is "
                             f"{type_of_target(y)} with {self.classes_.size} class(es).")
        family = LossFamily.parse(self.loss)
        if family is LossFamily.QUADRATIC:
            raise ValueError("use TaylorFWRegressor for the quadratic loss")
        pos = y == self.classes_[1]
        coded = np.where(pos, 1.0, -1.0 if family is LossFamily.LOGISTIC else 0.0)
        self.n_features_in_ = X.shape[1]
        return self._solve(_problem_from(X, coded, family, self.norm))

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.classifier_tags.multi_class = False
        return tags

    def decision_function(self, X):
        return self._linear(X)

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]


class TaylorFWRegressor(RegressorMixin, _BaseTaylorFW):
    """Least-squares regression over an l1 ball (LASSO in constrained form)."""

    def __init__(self, *, constraint="l1", radius=10.0, solver="tufw", rule="empty", steps="adaptive",
                 max_iter=1000, tol=None, sampling="cyclic", hmode="dense", norm="l1", gap_every=None,
                 random_state=0):
        super().__init__(loss="quadratic", constraint=constraint, radius=radius, solver=solver, rule=rule,
                         steps=steps, max_iter=max_iter, tol=tol, sampling=sampling, hmode=hmode, norm=norm,
                         gap_every=gap_every, random_state=random_state)

    def fit(self, X, y):
        X, y = check_X_y(X, y, accept_sparse=("csr", "csc"), y_numeric=True)
        self.n_features_in_ = X.shape[1]
        return self._solve(_problem_from(X, np.asarray(y, float), LossFamily.QUADRATIC, self.norm))

    def predict(self, X):
        return self._linear(X)
