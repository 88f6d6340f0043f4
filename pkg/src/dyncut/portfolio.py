"""Weight rules: cut-tree allocations and the classical baselines."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .graph import CutTree


class AllocationError(ValueError):
    pass


class AllocationScheme(enum.Enum):
    DEPTH_HALVING = "depth_halving"  # h_i = 2^-K_i
    UNIFORM_CLUSTERS = "uniform_clusters"  # h_i = 1/(K+1)

    @classmethod
    def parse(cls, value) -> "AllocationScheme":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"1": cls.DEPTH_HALVING, "2": cls.UNIFORM_CLUSTERS}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise AllocationError(f"unknown allocation scheme {value!r}") from None

    @property
    def label(self) -> str:
        return "1/2^K_i" if self is AllocationScheme.DEPTH_HALVING else "1/(K+1)"


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    date: np.datetime64 | None = None
    fallback: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    def __len__(self) -> int:
        return len(self.weights)


def allocate_from_cuts(tree: CutTree, scheme, n_assets: int) -> WeightVector:
    """Cluster capital ``h_i`` per ``scheme``, split equally inside each cluster."""
    scheme = AllocationScheme.parse(scheme)
    leaves = tree.leaves
    if len(leaves) < 2:
        raise AllocationError("a cut tree with a single cluster cannot be allocated")
    covered = np.zeros(n_assets, dtype=int)
    w = np.zeros(n_assets)
    for leaf in leaves:
        if not leaf.vertices:
            raise AllocationError("empty cluster in cut tree")
        if scheme is AllocationScheme.DEPTH_HALVING:
            h = 2.0 ** (-leaf.depth)
        else:
            h = 1.0 / len(leaves)
        idx = list(leaf.vertices)
        covered[idx] += 1
        w[idx] = h / len(idx)
    if np.any(covered != 1):
        raise AllocationError(f"cut tree leaves do not partition {n_assets} assets")
    return WeightVector(w)


def equal_weight(n_assets: int) -> WeightVector:
    if n_assets < 1:
        raise AllocationError("need at least one asset")
    return WeightVector(np.full(n_assets, 1.0 / n_assets))


def default_ridge(R: np.ndarray) -> float:
    return 1e-6 * float(np.trace(R)) / R.shape[0]


def mean_variance(R, m, target: float | None = None, ridge: float | None = None) -> WeightVector:
    """Equality-constrained minimum variance, ``w^T m = target`` and ``w^T 1 = 1``.

    Solved in closed form on the ridge-shifted covariance; weights may be
    negative. When ``m`` is (numerically) parallel to ``1`` the return
    constraint is dropped and the budget-only minimum-variance portfolio is
    returned with ``fallback=True``.
    """
    R = np.asarray(R, dtype=float)
    m = np.asarray(m, dtype=float)
    n = R.shape[0]
    if R.shape != (n, n) or m.shape != (n,):
        raise AllocationError("covariance and expected returns have inconsistent shapes")
    if np.abs(R - R.T).max() > 1e-9 * max(np.abs(R).max(), 1e-300):
        raise AllocationError("covariance must be symmetric")
    if target is None:
        target = float(m.mean())
    if ridge is None:
        ridge = default_ridge(R)
    if ridge < 0:
        raise AllocationError("ridge must be non-negative")
    Rr = R + ridge * np.eye(n)
    ones = np.ones(n)
    A = np.column_stack([m, ones])
    try:
        X = linalg.solve(Rr, A, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise AllocationError(f"ridge-shifted covariance is singular: {exc}") from exc
    G = A.T @ X
    det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
    if abs(det) <= 1e-12 * abs(G[0, 0] * G[1, 1]) or not np.isfinite(det):
        x = X[:, 1]
        if np.all(x == x[0]):
            # x / x.sum() can miss 1/N by an ulp
            return WeightVector(np.full(n, 1.0 / n), fallback=True)
        return WeightVector(x / x.sum(), fallback=True)
    lam = np.linalg.solve(G, np.array([target, 1.0]))
    return WeightVector(X @ lam)
