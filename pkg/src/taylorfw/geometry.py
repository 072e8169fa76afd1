"""Feasible sets with a linear minimization oracle.

Only polytopes with an explicit vertex list are supported (the l1 ball and the
scaled simplex), so diameters and range diameters are computed exactly by
enumerating vertex pairs.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import sparse


class SetKind(str, enum.Enum):
    L1_BALL = "l1"
    SIMPLEX = "simplex"


class Norm(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"


_ORD = {Norm.L1: 1, Norm.L2: 2, Norm.LINF: np.inf}


def _parse_norm(norm) -> Norm:
    if isinstance(norm, Norm):
        return norm
    key = str(norm).lower()
    return {"1": Norm.L1, "2": Norm.L2, "inf": Norm.LINF, "infinity": Norm.LINF}.get(key) or Norm(key)


@dataclass(frozen=True)
class FeasibleSet:
    """``{x : ||x||_1 <= radius}`` or ``{x >= 0 : sum(x) = radius}``."""

    kind: SetKind = SetKind.L1_BALL
    radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SetKind(self.kind))
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"radius must be positive and finite, got {self.radius!r}")
        object.__setattr__(self, "radius", float(self.radius))

    def vertices(self, p: int) -> np.ndarray:
        """Vertex list as rows of an array (``2p x p`` or ``p x p``)."""
        eye = self.radius * np.eye(p)
        if self.kind is SetKind.L1_BALL:
            return np.vstack([eye, -eye])
        return eye

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        lam = self.radius
        if self.kind is SetKind.L1_BALL:
            return bool(np.abs(x).sum() <= lam * (1.0 + tol))
        return bool(np.all(x >= -tol * lam) and abs(x.sum() - lam) <= tol * lam * max(1, x.size))

    def lmo(self, g) -> np.ndarray:
        return lmo(self, g)


def lmo_index(fset: FeasibleSet, g: np.ndarray) -> tuple[int, float]:
    """Return ``(j, value)`` with the minimizing vertex ``value * e_j``."""
    if g.size == 0:
        raise ValueError("LMO needs a vector of dimension >= 1")
    if fset.kind is SetKind.L1_BALL:
        j = int(np.argmax(np.abs(g)))  # argmax returns the first maximum
        return j, (fset.radius if g[j] < 0 else -fset.radius)
    j = int(np.argmin(g))
    return j, fset.radius


def lmo(fset: FeasibleSet, g) -> np.ndarray:
    """Vertex of ``fset`` minimizing ``<g, s>``; ties go to the lowest index."""
    g = np.asarray(g, dtype=float).ravel()
    j, val = lmo_index(fset, g)
    s = np.zeros(g.size)
    s[j] = val
    return s


def diameter(fset: FeasibleSet, norm="l1", p: int | None = None) -> float:
    """Exact diameter ``max ||u - v||`` over the set.

    ``p`` only matters for the simplex when ``p == 1`` (a single point).
    """
    norm = _parse_norm(norm)
    lam = fset.radius
    if fset.kind is SetKind.L1_BALL:
        # antipodal vertices +-lam e_j
        return 2.0 * lam
    if p == 1:
        return 0.0
    return {Norm.L1: 2.0 * lam, Norm.L2: np.sqrt(2.0) * lam, Norm.LINF: lam}[norm]


def _dense_rows(W) -> np.ndarray:
    return W.toarray() if sparse.issparse(W) else np.asarray(W, dtype=float)


def range_diameter(fset: FeasibleSet, W, q="inf") -> float:
    """``max_{x,y in C} ||W^T (x - y)||_q`` by enumeration of vertex pairs.

    ``W`` is ``p x n`` (one column per observation). The objective is convex in
    ``(x, y)`` so the maximum over the polytope is attained at a vertex pair.
    """
    norm = _parse_norm(q)
    W = _dense_rows(W)
    p = W.shape[0]
    Z = fset.vertices(p) @ W  # row a holds W^T v_a
    ord_ = _ORD[norm]
    m, n = Z.shape
    chunk = max(1, int(2e7 // max(1, m * n)))  # bounds the pairwise block to ~160 MB
    best = 0.0
    for start in range(0, Z.shape[0], chunk):
        diff = Z[start:start + chunk, None, :] - Z[None, :, :]
        best = max(best, float(np.linalg.norm(diff, ord=ord_, axis=2).max()))
    return best
