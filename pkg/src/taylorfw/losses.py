"""Univariate loss families for linear-prediction ERM.

Every loss is written in margin form ``l(v)`` with ``v = w_i^T x``; the label
enters as a per-observation parameter. All functions broadcast over numpy
arrays of labels and margins.
"""
from __future__ import annotations

import enum
import math

import numpy as np
from scipy.special import expit


class DomainError(ValueError):
    """A label is not valid for the requested loss family."""


class LossFamily(str, enum.Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"
    SIGMOID_SQUARED = "sigmoid-sq"

    @classmethod
    def parse(cls, value: "LossFamily | str") -> "LossFamily":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {"sigmoid_squared": cls.SIGMOID_SQUARED, "sigmoid": cls.SIGMOID_SQUARED,
                   "squared": cls.QUADRATIC, "log": cls.LOGISTIC}
        try:
            return aliases.get(key) or cls(key)
        except ValueError:
            raise ValueError(f"unknown loss family {value!r}") from None

    @property
    def convex(self) -> bool:
        return self is not LossFamily.SIGMOID_SQUARED


def check_labels(family, y) -> np.ndarray:
    """Return ``y`` as a float array, raising DomainError on invalid labels."""
    family = LossFamily.parse(family)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("labels must be finite")
    if family is LossFamily.LOGISTIC:
        bad = (y != 1.0) & (y != -1.0)
        if np.any(bad):
            raise DomainError(f"logistic labels must be in {{-1, +1}}, got {np.unique(y[bad])[:5]}")
    elif family is LossFamily.SIGMOID_SQUARED:
        bad = (y != 0.0) & (y != 1.0)
        if np.any(bad):
            raise DomainError(f"sigmoid-squared labels must be in {{0, 1}}, got {np.unique(y[bad])[:5]}")
    return y


def _prepare(family, y, v):
    family = LossFamily.parse(family)
    y = check_labels(family, y)
    v = np.asarray(v, dtype=float)
    return family, y, v


def _scalar_or_array(out):
    return out.item() if np.ndim(out) == 0 else out


# Unvalidated kernels: callers pass a LossFamily and float arrays.

def _value(family, y, v):
    if family is LossFamily.QUADRATIC:
        return 0.5 * (y - v) ** 2
    if family is LossFamily.LOGISTIC:
        # logaddexp(0, t) == t + log1p(exp(-t)) for t > 0: no overflow
        return np.logaddexp(0.0, -y * v)
    return (y - expit(v)) ** 2


def _d1(family, y, v):
    if family is LossFamily.QUADRATIC:
        return v - y
    if family is LossFamily.LOGISTIC:
        return -y * expit(-y * v)
    s = expit(v)
    return -2.0 * s * (1.0 - s) * (y - s)


def _d2(family, y, v):
    if family is LossFamily.QUADRATIC:
        return np.ones(np.broadcast(y, v).shape)
    if family is LossFamily.LOGISTIC:
        t = y * v
        # the product of the two rounded factors can land one ulp above 1/4
        return y * y * np.minimum(expit(t) * expit(-t), 0.25)
    s = expit(v)
    ds = s * (1.0 - s)
    d2s = ds * (1.0 - 2.0 * s)
    return 2.0 * ds * ds - 2.0 * d2s * (y - s)


def _d3(family, y, v):
    if family is LossFamily.QUADRATIC:
        return np.zeros(np.broadcast(y, v).shape)
    if family is LossFamily.LOGISTIC:
        t = y * v
        a, b = expit(t), expit(-t)
        return y ** 3 * a * b * (b - a)
    s = expit(v)
    ds = s * (1.0 - s)
    d2s = ds * (1.0 - 2.0 * s)
    d3s = ds * (1.0 - 6.0 * s + 6.0 * s * s)
    return 6.0 * ds * d2s - 2.0 * d3s * (y - s)


def _intercept(family, y, v):
    if family is LossFamily.QUADRATIC:
        return -y * np.ones(np.broadcast(y, v).shape)
    return _d1(family, y, v) - _d2(family, y, v) * v


def loss_value(family, y, v):
    """Loss ``l(v)`` for label ``y``."""
    return _scalar_or_array(_value(*_prepare(family, y, v)))


def loss_d1(family, y, v):
    """First derivative ``l'(v)``."""
    return _scalar_or_array(_d1(*_prepare(family, y, v)))


def loss_d2(family, y, v):
    """Second derivative ``l''(v)``."""
    return _scalar_or_array(_d2(*_prepare(family, y, v)))


def loss_d3(family, y, v):
    """Third derivative ``l'''(v)``; only used to check the smoothness constants."""
    return _scalar_or_array(_d3(*_prepare(family, y, v)))


def taylor_intercept(family, y, v):
    """Per-observation intercept coefficient ``l'(v) - l''(v) * v``.

    For the quadratic family this equals ``-y`` for every margin and is
    returned in that closed form, so that refreshing a quadratic Taylor point
    leaves the aggregated model bit-for-bit unchanged.
    """
    return _scalar_or_array(_intercept(*_prepare(family, y, v)))


_SQRT3 = math.sqrt(3.0)

_CONSTANTS = {
    LossFamily.QUADRATIC: (1.0, 0.0),
    LossFamily.LOGISTIC: (0.25, 1.0 / (6.0 * _SQRT3)),
    LossFamily.SIGMOID_SQUARED: (1.0 / 8.0 + 1.0 / (3.0 * _SQRT3), 1.0 / (4.0 * _SQRT3) + 1.0 / 12.0),
}


def lipschitz_constants(family) -> tuple[float, float]:
    """Worst-case ``(sup |l''|, Lipschitz constant of l'')`` over the real line.

    These are the univariate constants; scaling by powers of the feature bound
    happens in :class:`taylorfw.dataset.Problem`.
    """
    return _CONSTANTS[LossFamily.parse(family)]
