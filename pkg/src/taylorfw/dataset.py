"""Problem data: LIBSVM ingestion, synthetic instances, problem constants."""
from __future__ import annotations

import hashlib
import io
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
from scipy import sparse
from scipy.special import expit

from .losses import LossFamily, check_labels, lipschitz_constants

logger = logging.getLogger(__name__)

# Problems up to this many entries keep a dense copy of W for the hot loops.
DENSE_LIMIT = 4_000_000


class LibsvmParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _dual_norm_columns(W: sparse.csc_matrix, norm: str) -> np.ndarray:
    norm = str(norm).lower()
    if norm in ("l1", "1"):
        return np.asarray(abs(W).max(axis=0).toarray()).ravel()
    if norm in ("l2", "2"):
        return np.sqrt(np.asarray(W.multiply(W).sum(axis=0))).ravel()
    raise ValueError(f"unsupported primal norm {norm!r}; use 'l1' or 'l2'")


@dataclass(eq=False)
class Problem:
    """``F(x) = (1/n) sum_i l_i(w_i^T x)`` with ``W`` stored as ``p x n`` CSC.

    ``norm`` names the primal norm on ``x``; ``M`` is the largest dual norm of
    a feature column. Treat instances as immutable once built.
    """

    W: sparse.csc_matrix
    y: np.ndarray
    family: LossFamily
    norm: str = "l1"
    name: str = ""
    _dense: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.family = LossFamily.parse(self.family)
        W = sparse.csc_matrix(self.W, dtype=float)
        W.sum_duplicates()
        W.sort_indices()
        self.W = W
        p, n = W.shape
        if n < 1 or p < 1:
            raise ValueError(f"need n >= 1 and p >= 1, got p={p}, n={n}")
        if not np.all(np.isfinite(W.data)):
            raise ValueError("feature matrix contains non-finite entries")
        self.y = check_labels(self.family, np.asarray(self.y, dtype=float).ravel())
        if self.y.size != n:
            raise ValueError(f"{self.y.size} labels for {n} feature columns")
        self.y.setflags(write=False)
        if p * n <= DENSE_LIMIT:
            self._dense = W.toarray()
            self._dense.setflags(write=False)

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def p(self) -> int:
        return self.W.shape[0]

    @cached_property
    def column_nnz(self) -> np.ndarray:
        return np.diff(self.W.indptr)

    @property
    def nnz(self) -> int:
        return int(self.W.nnz)

    @property
    def sparsity(self) -> int:
        """Largest number of nonzeros in a feature column (``s``)."""
        return int(self.column_nnz.max())

    @cached_property
    def M(self) -> float:
        return feature_bound(self, self.norm)

    @property
    def L(self) -> float:
        return lipschitz_constants(self.family)[0]

    @property
    def Lhat(self) -> float:
        return lipschitz_constants(self.family)[1]

    @property
    def L_eff(self) -> float:
        return self.L * self.M ** 2

    @property
    def Lhat_eff(self) -> float:
        return self.Lhat * self.M ** 3

    @property
    def dense(self) -> bool:
        return self._dense is not None

    # linear algebra used by the solvers -------------------------------------

    def margins(self, x: np.ndarray) -> np.ndarray:
        """``W^T x``."""
        if self._dense is not None:
            return x @ self._dense
        return self.W.T @ x

    def combine(self, c: np.ndarray) -> np.ndarray:
        """``W c`` (weighted sum of feature columns)."""
        if self._dense is not None:
            return self._dense @ c
        return self.W @ c

    def columns(self, idx):
        """Feature columns ``W[:, idx]`` (dense array or CSC)."""
        if self._dense is not None:
            return self._dense[:, idx]
        return self.W[:, idx]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.family.value}|{self.norm}|{self.p}|{self.n}|".encode())
        for arr in (self.W.indptr, self.W.indices, self.W.data, self.y):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def scaled(self, c: float) -> "Problem":
        return Problem(self.W * c, self.y.copy(), self.family, self.norm, self.name)


def feature_bound(problem: Problem, norm: str = "l1") -> float:
    """Largest dual norm of a feature column (dual of l1 is linf, l2 is self-dual)."""
    if problem.nnz == 0:
        return 0.0
    return float(_dual_norm_columns(problem.W, norm).max())


# LIBSVM format --------------------------------------------------------------

def _remap_labels(y: np.ndarray, family) -> np.ndarray:
    if family is None:
        return y
    family = LossFamily.parse(family)
    values = set(np.unique(y).tolist())
    if family is LossFamily.LOGISTIC and values <= {0.0, 1.0} and 0.0 in values:
        logger.warning("remapping labels {0, 1} -> {-1, +1} for logistic loss")
        return np.where(y > 0, 1.0, -1.0)
    if family is LossFamily.SIGMOID_SQUARED and values <= {-1.0, 1.0} and -1.0 in values:
        logger.warning("remapping labels {-1, +1} -> {0, 1} for sigmoid-squared loss")
        return np.where(y > 0, 1.0, 0.0)
    return y


def parse_libsvm(lines: Iterable[str] | str | io.TextIOBase, family=None, dims: int | None = None):
    """Parse LIBSVM text into ``(W, y)`` with ``W`` a ``p x n`` CSC matrix.

    Indices are 1-based and must be strictly increasing within a line. ``dims``
    forces ``p`` (it must be at least the largest index seen). When ``family``
    is given, labels are remapped to that family's convention.
    """
    if isinstance(lines, str):
        lines = io.StringIO(lines)
    labels, indptr, indices, data = [], [0], [], []
    max_index = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise LibsvmParseError(lineno, f"bad label {tokens[0]!r}") from None
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise LibsvmParseError(lineno, f"malformed token {tok!r}") from None
            if idx < 1:
                raise LibsvmParseError(lineno, f"index {idx} is not 1-based")
            if idx <= prev:
                raise LibsvmParseError(lineno, f"index {idx} does not increase (previous {prev})")
            if not np.isfinite(val):
                raise LibsvmParseError(lineno, f"non-finite value in {tok!r}")
            prev = idx
            indices.append(idx - 1)
            data.append(val)
        max_index = max(max_index, prev)
        indptr.append(len(indices))
    if not labels:
        raise LibsvmParseError(0, "no observations found")
    p = max_index if dims is None else int(dims)
    if p < max_index:
        raise ValueError(f"dims={p} is smaller than the largest feature index {max_index}")
    p = max(p, 1)
    W = sparse.csc_matrix((np.asarray(data, float), np.asarray(indices, np.int64), np.asarray(indptr, np.int64)),
                          shape=(p, len(labels)))
    y = _remap_labels(np.asarray(labels, float), family)
    return W, y


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 2 ** 53 else repr(float(v))


def dump_libsvm(W, y) -> str:
    """Inverse of :func:`parse_libsvm` (explicit zeros are kept)."""
    W = sparse.csc_matrix(W)
    W.sort_indices()
    out = []
    for i in range(W.shape[1]):
        lo, hi = W.indptr[i], W.indptr[i + 1]
        parts = [_fmt(y[i])]
        parts += [f"{j + 1}:{_fmt(v)}" for j, v in zip(W.indices[lo:hi], W.data[lo:hi])]
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def load_libsvm(path: str | os.PathLike, family="logistic", dims: int | None = None, norm: str = "l1") -> Problem:
    with open(path) as fh:
        W, y = parse_libsvm(fh, family=family, dims=dims)
    return Problem(W, y, family, norm=norm, name=os.path.basename(str(path)))


# synthetic instances --------------------------------------------------------

def synth_problem(n: int, p: int, family="logistic", seed: int = 0, norm: str = "l1") -> Problem:
    """Deterministic random instance.

    Features are standard normal, then each column is divided by
    ``max(1, ||w_i||_2)`` so every ``||w_i||_2 <= 1``. A planted parameter with
    ``||x||_1 = 2`` generates labels: Bernoulli(sigmoid(margin)) for the
    classification families (coded per family), and ``margin + 0.1 * noise``
    for the quadratic family.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    family = LossFamily.parse(family)
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((p, n))
    W /= np.maximum(1.0, np.linalg.norm(W, axis=0))
    planted = rng.standard_normal(p)
    planted *= 2.0 / max(np.abs(planted).sum(), 1e-300)
    m = planted @ W
    if family is LossFamily.QUADRATIC:
        y = m + 0.1 * rng.standard_normal(n)
    else:
        hit = rng.random(n) < expit(m)
        y = np.where(hit, 1.0, -1.0 if family is LossFamily.LOGISTIC else 0.0)
    return Problem(sparse.csc_matrix(W), y, family, norm=norm, name=f"synth-{n}x{p}-s{seed}")
