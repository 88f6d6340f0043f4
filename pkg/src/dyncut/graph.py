"""Market graphs, normalized-cut bisection and recursive cut trees."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

SYMMETRY_TOL = 1e-9
ZERO_TOL = 1e-12
RESIDUAL_TOL = 1e-8
# sweep replaces the sign split only if it lowers CutN by more than this fraction
SWEEP_MARGIN = 0.2


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class MarketGraph:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GraphError("weight matrix must be square")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @cached_property
    def degree(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @cached_property
    def laplacian(self) -> np.ndarray:
        return np.diag(self.degree) - self.weights

    def restrict(self, vertices) -> "MarketGraph":
        idx = np.asarray(vertices, dtype=int)
        return MarketGraph(self.weights[np.ix_(idx, idx)])


def build_market_graph(R: np.ndarray, variance_floor: float = 0.0) -> MarketGraph:
    """Absolute-correlation graph ``W_mn = |R_mn| / sqrt(R_nn R_mm)``.

    Works unchanged for a static sample covariance and for a reconstructed
    ``R(t)``. ``variance_floor`` lifts tiny diagonal entries before the
    normalisation; anything still non-positive is rejected.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise GraphError("covariance must be square")
    scale = max(np.abs(R).max(), np.finfo(float).tiny)
    if np.abs(R - R.T).max() > SYMMETRY_TOL * scale:
        raise GraphError("covariance is not symmetric")
    var = np.diag(R).copy()
    if variance_floor > 0:
        var = np.maximum(var, variance_floor)
    if np.any(var <= 0):
        raise GraphError("covariance has non-positive diagonal entries")
    inv_sd = 1.0 / np.sqrt(var)
    W = np.abs(R) * inv_sd[:, None] * inv_sd[None, :]
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 1.0)
    return MarketGraph(W)


def _check_partition(n: int, E, H) -> tuple[np.ndarray, np.ndarray]:
    E = np.asarray(sorted(E), dtype=int)
    H = np.asarray(sorted(H), dtype=int)
    if len(E) == 0 or len(H) == 0:
        raise GraphError("both sides of a partition must be non-empty")
    both = np.concatenate([E, H])
    if len(np.unique(both)) != len(both) or len(both) != n or both.min() < 0 or both.max() >= n:
        raise GraphError(f"(E, H) is not a partition of {n} vertices")
    return E, H


def cut_value(g: MarketGraph, partition) -> float:
    E, H = _check_partition(g.n, *partition)
    return float(g.weights[np.ix_(E, H)].sum())


def cutn_value(g: MarketGraph, partition) -> float:
    E, H = _check_partition(g.n, *partition)
    return (1.0 / len(E) + 1.0 / len(H)) * float(g.weights[np.ix_(E, H)].sum())


def indicator_vector(n: int, E) -> np.ndarray:
    """Sub-graph-wise constant indicator: ``1/N_E`` on E and ``-1/N_H`` elsewhere."""
    x = np.empty(n)
    mask = np.zeros(n, dtype=bool)
    mask[list(E)] = True
    x[mask] = 1.0 / mask.sum()
    x[~mask] = -1.0 / (~mask).sum()
    return x


@dataclass(frozen=True)
class Bisection:
    E: tuple[int, ...]
    H: tuple[int, ...]
    fiedler_value: float
    fiedler_vector: np.ndarray
    fallback: bool = False


def _constant_complement(n: int) -> np.ndarray:
    # orthonormal basis of the subspace orthogonal to the all-ones vector
    return linalg.null_space(np.ones((1, n)))


def _sweep_cutn(W: np.ndarray, order: np.ndarray) -> np.ndarray:
    # CutN of every prefix split (order[:k], order[k:]) for k = 1..n-1
    n = len(order)
    Ws = W[np.ix_(order, order)]
    inner = np.cumsum(np.cumsum(Ws, axis=0), axis=1)
    k = np.arange(1, n)
    rows = np.cumsum(Ws.sum(axis=1))[:-1]
    cut = rows - inner[k - 1, k - 1]
    return (1.0 / k + 1.0 / (n - k)) * cut


def fiedler_bisect(g: MarketGraph, split: str = "sweep") -> Bisection:
    """Split a graph using its Fiedler vector.

    The eigenproblem is solved on the complement of the constant vector, so
    the returned vector is orthogonal to ``1`` even when the Laplacian
    nullspace is degenerate (disconnected graphs). The sign is fixed so the
    first non-zero entry is positive; zero entries go to ``H``.

    ``split="sign"`` cuts at zero. ``split="sweep"`` (default) also scores
    every threshold along the sorted vector and keeps the sign split unless
    some threshold beats it by more than ``SWEEP_MARGIN`` in CutN. A one-signed vector under the
    sign rule is flagged ``fallback=True`` (median split for ``"sign"``).
    """
    if split not in ("sign", "sweep"):
        raise GraphError(f"unknown split rule {split!r}")
    n = g.n
    if n < 2:
        raise GraphError("bisection needs at least two vertices")
    L = g.laplacian
    Q = _constant_complement(n)
    try:
        vals, vecs = linalg.eigh(Q.T @ L @ Q, subset_by_index=[0, 0])
    except linalg.LinAlgError as exc:
        raise GraphError(f"eigensolver failed: {exc}") from exc
    lam = float(vals[0])
    u = Q @ vecs[:, 0]
    u /= np.linalg.norm(u)
    lnorm = np.linalg.norm(L, 2) if n <= 64 else np.linalg.norm(L)
    if np.linalg.norm(L @ u - lam * u) > RESIDUAL_TOL * max(lnorm, 1.0):
        raise GraphError("eigensolver did not converge to residual tolerance")

    nz = np.flatnonzero(np.abs(u) > ZERO_TOL)
    if len(nz) and u[nz[0]] < 0:
        u = -u
    pos = u > ZERO_TOL
    n_pos = int(pos.sum())
    fallback = n_pos in (0, n)
    # positives first, then zeros, then negatives: the sign split is the n_pos prefix
    order = np.lexsort((np.arange(n), np.where(pos, 0, 1), -u))
    if split == "sweep":
        scores = _sweep_cutn(g.weights, order)
        k = int(np.argmin(scores)) + 1
        if not fallback and scores[n_pos - 1] <= scores[k - 1] * (1 + SWEEP_MARGIN):
            k = n_pos
    else:
        k = n // 2 if fallback else n_pos
    pos = np.zeros(n, dtype=bool)
    pos[order[:k]] = True
    E = tuple(int(i) for i in np.flatnonzero(pos))
    H = tuple(int(i) for i in np.flatnonzero(~pos))
    return Bisection(E, H, lam, u, fallback)


@dataclass
class CutNode:
    vertices: tuple[int, ...]
    depth: int = 0
    children: list["CutNode"] = field(default_factory=list)
    split_order: int | None = None
    fiedler_value: float | None = None
    fallback: bool = False

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list["CutNode"]:
        if self.is_leaf:
            return [self]
        return [leaf for c in self.children for leaf in c.leaves()]

    def to_dict(self) -> dict:
        d = {"vertices": list(self.vertices), "depth": self.depth}
        if self.children:
            d["split_order"] = self.split_order
            d["fiedler_value"] = self.fiedler_value
            d["fallback"] = self.fallback
        d["children"] = [c.to_dict() for c in self.children]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CutNode":
        return cls(
            vertices=tuple(d["vertices"]), depth=int(d["depth"]),
            children=[cls.from_dict(c) for c in d.get("children", [])],
            split_order=d.get("split_order"), fiedler_value=d.get("fiedler_value"),
            fallback=bool(d.get("fallback", False)),
        )


@dataclass
class CutTree:
    root: CutNode
    n_cuts: int

    @property
    def n_vertices(self) -> int:
        return len(self.root.vertices)

    @property
    def leaves(self) -> list[CutNode]:
        return self.root.leaves()

    @property
    def depths(self) -> list[int]:
        return [leaf.depth for leaf in self.leaves]

    def labels(self) -> np.ndarray:
        out = np.empty(self.n_vertices, dtype=int)
        for k, leaf in enumerate(self.leaves):
            out[list(leaf.vertices)] = k
        return out

    def truncate(self, k: int) -> "CutTree":
        """Tree made of the first ``k`` cuts only."""

        def copy(node: CutNode) -> CutNode:
            keep = node.children and node.split_order is not None and node.split_order < k
            return CutNode(
                node.vertices, node.depth,
                [copy(c) for c in node.children] if keep else [],
                node.split_order if keep else None,
                node.fiedler_value if keep else None,
                node.fallback if keep else False,
            )

        return CutTree(copy(self.root), min(k, self.n_cuts))

    def to_dict(self) -> dict:
        return {
            "n_vertices": self.n_vertices,
            "n_cuts": self.n_cuts,
            "leaf_depths": self.depths,
            "root": self.root.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CutTree":
        return cls(CutNode.from_dict(d["root"]), int(d["n_cuts"]))


def _next_cluster(leaves: list[CutNode]) -> CutNode | None:
    candidates = [leaf for leaf in leaves if len(leaf.vertices) > 1]
    if not candidates:
        return None
    return min(candidates, key=lambda c: (-len(c.vertices), min(c.vertices)))


def recursive_cuts(g: MarketGraph, n_cuts: int, split: str = "sweep") -> CutTree:
    """Apply ``n_cuts`` Fiedler bisections, always cutting the largest cluster.

    Ties go to the cluster holding the smallest vertex index. Each bisection
    sees only the weight submatrix of its own cluster. Stops early when every
    cluster is a singleton.
    """
    if n_cuts < 1:
        raise GraphError("number of cuts must be at least 1")
    if g.n < 2:
        raise GraphError("need at least two vertices to cut")
    root = CutNode(tuple(range(g.n)), 0)
    leaves = [root]
    done = 0
    while done < n_cuts:
        node = _next_cluster(leaves)
        if node is None:
            break
        idx = np.asarray(node.vertices)
        b = fiedler_bisect(g.restrict(idx), split)
        left = CutNode(tuple(int(v) for v in idx[list(b.E)]), node.depth + 1)
        right = CutNode(tuple(int(v) for v in idx[list(b.H)]), node.depth + 1)
        node.children = [left, right]
        node.split_order = done
        node.fiedler_value = b.fiedler_value
        node.fallback = b.fallback
        pos = leaves.index(node)
        leaves[pos:pos + 1] = [left, right]
        done += 1
    return CutTree(root, done)


@dataclass(frozen=True)
class GraphSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def graph_spectrum(g: MarketGraph) -> GraphSpectrum:
    """Eigendecomposition of ``W`` with eigenvalues in descending order."""
    try:
        vals, vecs = linalg.eigh(g.weights)
    except linalg.LinAlgError as exc:
        raise GraphError(f"eigensolver failed: {exc}") from exc
    return GraphSpectrum(vals[::-1].copy(), vecs[:, ::-1].copy())
