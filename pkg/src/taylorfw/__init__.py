"""Projection-free ERM solvers with Taylor-point updated gradient models."""
from .dataset import Problem, load_libsvm, parse_libsvm, synth_problem
from .estimator import TaylorFWClassifier, TaylorFWRegressor
from .geometry import FeasibleSet
from .losses import LossFamily
from .rules import RuleSpec
from .solvers import StepSizeRule, fw_ada_run, fw_gap, standard_fw_run, tufw_run

__version__ = "0.1.0"
