"""Walk-forward evaluation of cut-based and baseline strategies."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import CutNode, CutTree, MarketGraph, build_market_graph, graph_spectrum, recursive_cuts
from .ingest import ReturnsTable
from .portfolio import AllocationScheme, WeightVector, allocate_from_cuts, equal_weight, mean_variance
from .spectral import AugmentedSpectralMoments, FrequencyGrid, fit_moments, reconstruct, sample_moments

ANNUALIZATION = 252
VARIANCE_FLOOR = 1e-12
_SUM_TOL = 1e-9


class BacktestError(RuntimeError):
    pass


def sharpe_ratio(daily, annualization: float = ANNUALIZATION) -> float:
    """Annualised Sharpe ratio with zero risk-free rate and ``ddof=1`` volatility."""
    x = np.asarray(daily, dtype=float)
    if x.size < 2:
        raise ValueError("undefined Sharpe: need at least two returns")
    mu = x.mean()
    sd = math.sqrt(((x - mu) ** 2).sum() / (x.size - 1))
    # constant series leave a rounding-level residual in the mean
    if not sd > 8 * np.finfo(float).eps * abs(mu):
        raise ValueError("undefined Sharpe: zero variance")
    return mu / sd * math.sqrt(annualization)


def _cut_tree(g: MarketGraph, n_cuts: int) -> CutTree:
    # a one-asset universe has nothing to cut
    if g.n == 1:
        return CutTree(CutNode((0,), 0), 0)
    return recursive_cuts(g, n_cuts)


def _tree_weights(tree: CutTree, scheme: AllocationScheme) -> WeightVector:
    if tree.n_vertices == 1:
        return WeightVector(np.ones(1))
    return allocate_from_cuts(tree, scheme, tree.n_vertices)


class DynamicCutter:
    """Per-date ``R(t) -> W(t) -> cut tree`` with memoisation.

    Trees are computed once at ``max_cuts`` and truncated on request, which is
    exact because the greedy cut order does not depend on the final count.
    With ``refit_every`` set, the moments are re-estimated every that many
    test rows on training rows plus all test rows strictly before ``t``.
    """

    def __init__(
        self,
        moments: AugmentedSpectralMoments,
        max_cuts: int,
        psd_repair: bool = True,
        variance_floor: float = VARIANCE_FLOOR,
        refit_every: int | None = None,
        train_returns: np.ndarray | None = None,
    ):
        if refit_every is not None and train_returns is None:
            raise ValueError("rolling refit needs the training returns")
        self.moments = moments
        self.max_cuts = max_cuts
        self.psd_repair = psd_repair
        self.variance_floor = variance_floor
        self.refit_every = refit_every
        self.train_returns = None if train_returns is None else np.asarray(train_returns, float)
        self._trees: dict[int, CutTree] = {}
        self._spectra: dict[int, np.ndarray] = {}
        self._fit_at: int | None = None

    def _moments_for(self, t: int, past_test: np.ndarray) -> AugmentedSpectralMoments:
        if self.refit_every is None:
            return self.moments
        n_train = len(self.train_returns)
        stamp = n_train + (len(past_test) // self.refit_every) * self.refit_every
        if stamp != self._fit_at:
            data = np.vstack([self.train_returns, past_test[: stamp - n_train]])
            self.moments = fit_moments(
                data, self.moments.grid, cross_frequency=self.moments.cross_frequency
            )
            self._fit_at = stamp
        return self.moments

    def tree(self, t: int, past_test: np.ndarray | None = None) -> CutTree:
        if t not in self._trees:
            past = np.empty((0, self.moments.n_assets)) if past_test is None else past_test
            moments = self._moments_for(t, past)
            _, R = reconstruct(moments, t, psd_repair=self.psd_repair)
            g = build_market_graph(R, variance_floor=self.variance_floor)
            self._trees[t] = _cut_tree(g, self.max_cuts)
            self._spectra[t] = graph_spectrum(g).eigenvalues
        return self._trees[t]

    def spectra(self) -> dict[int, np.ndarray]:
        return dict(sorted(self._spectra.items()))


class Strategy:
    """Weight rule evaluated on test dates.

    ``weights_at(t, past_test)`` must only use training information and
    ``past_test`` (test returns strictly before global index ``t``).
    ``rebalance`` is the interval in rows; ``None`` means hold the first
    weights for the whole test window.
    """

    kind = "?"
    rebalance: int | None = None

    def __init__(self, name: str):
        self.name = name

    def weights_at(self, t: int, past_test: np.ndarray) -> WeightVector:
        raise NotImplementedError

    def params(self) -> dict:
        return {"kind": self.kind, "rebalance": self.rebalance}


class EqualWeightStrategy(Strategy):
    kind = "EW"

    def __init__(self, n_assets: int, name: str = "EW"):
        super().__init__(name)
        self._w = equal_weight(n_assets)

    def weights_at(self, t, past_test):
        return self._w


class MeanVarianceStrategy(Strategy):
    kind = "MVO"

    def __init__(self, cov, mean, target=None, ridge=None, name: str = "MVO"):
        super().__init__(name)
        self._w = mean_variance(cov, mean, target=target, ridge=ridge)

    def weights_at(self, t, past_test):
        return self._w

    def params(self):
        return {**super().params(), "fallback": self._w.fallback}


class StaticCutStrategy(Strategy):
    kind = "CutN"

    def __init__(self, tree: CutTree, n_cuts: int, scheme, name: str | None = None):
        self.scheme = AllocationScheme.parse(scheme)
        self.n_cuts = n_cuts
        super().__init__(name or f"CutN_K{n_cuts}_{self.scheme.value}")
        self.tree = tree.truncate(n_cuts)
        self._w = _tree_weights(self.tree, self.scheme)

    def weights_at(self, t, past_test):
        return self._w

    def params(self):
        return {**super().params(), "K": self.n_cuts, "scheme": self.scheme.value}


class SpectralCutStrategy(Strategy):
    kind = "SpectralCutN"

    def __init__(self, cutter: DynamicCutter, n_cuts: int, scheme, rebalance: int | None = 1,
                 name: str | None = None):
        if n_cuts > cutter.max_cuts:
            raise ValueError("cutter was built for fewer cuts than requested")
        if rebalance is not None and rebalance < 1:
            raise ValueError("rebalance interval must be >= 1 or None")
        self.scheme = AllocationScheme.parse(scheme)
        self.n_cuts = n_cuts
        self.rebalance = rebalance
        self.cutter = cutter
        super().__init__(name or f"SpectralCutN_K{n_cuts}_{self.scheme.value}")

    def weights_at(self, t, past_test):
        return _tree_weights(self.cutter.tree(t, past_test).truncate(self.n_cuts), self.scheme)

    def params(self):
        return {**super().params(), "K": self.n_cuts, "scheme": self.scheme.value}


@dataclass
class StrategyResult:
    name: str
    returns: np.ndarray
    cumulative: np.ndarray
    weights: np.ndarray
    sharpe: float
    params: dict


@dataclass
class BacktestReport:
    dates: np.ndarray
    tickers: tuple[str, ...]
    results: dict[str, StrategyResult]
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> StrategyResult:
        return self.results[name]


def run_backtest(
    returns_test: ReturnsTable | np.ndarray,
    strategies: list[Strategy],
    t0: int,
    annualization: float = ANNUALIZATION,
    dates=None,
    tickers=(),
) -> BacktestReport:
    """Portfolio return at test row ``i`` is ``w(t-)^T r(t)`` for ``t = t0 + i``.

    ``w(t-)`` is the most recent rebalance weight; the first test row is
    always a rebalance date.
    """
    if isinstance(returns_test, ReturnsTable):
        dates, tickers = returns_test.dates, returns_test.tickers
        r = returns_test.returns
    else:
        r = np.asarray(returns_test, dtype=float)
    if len(r) == 0:
        raise BacktestError("empty test window")
    n_rows, n = r.shape
    if dates is None:
        dates = np.arange(n_rows)
    results = {}
    for strat in strategies:
        if strat.name in results:
            raise BacktestError(f"duplicate strategy name {strat.name!r}")
        W = np.empty((n_rows, n))
        current = None
        for i in range(n_rows):
            due = current is None or (strat.rebalance is not None and i % strat.rebalance == 0)
            if due:
                wv = strat.weights_at(t0 + i, r[:i])
                current = np.asarray(wv.weights, dtype=float)
                if current.shape != (n,) or not np.all(np.isfinite(current)) or abs(current.sum() - 1) > _SUM_TOL:
                    raise BacktestError(
                        f"strategy {strat.name}: invalid weights at {dates[i]} (sum={current.sum():.6g})"
                    )
            W[i] = current
        port = np.einsum("ti,ti->t", W, r)
        cumulative = np.cumprod(1.0 + port)
        try:
            sr = sharpe_ratio(port, annualization)
        except ValueError:
            sr = float("nan")
        results[strat.name] = StrategyResult(strat.name, port, cumulative, W, sr, strat.params())
    meta = {
        "annualization": annualization,
        "risk_free": 0.0,
        "transaction_costs": 0.0,
        "test_rows": n_rows,
        "n_assets": n,
        "t0": t0,
        "first_date": str(dates[0]),
        "last_date": str(dates[-1]),
    }
    return BacktestReport(np.asarray(dates), tuple(tickers), results, meta)


@dataclass
class BacktestSettings:
    grid: FrequencyGrid
    schemes: tuple = (AllocationScheme.DEPTH_HALVING, AllocationScheme.UNIFORM_CLUSTERS)
    rebalance: int | None = 1
    psd_repair: bool = True
    cross_frequency: bool = True
    variance_floor: float = VARIANCE_FLOOR
    refit_every: int | None = None
    baselines: tuple[str, ...] = ("EW", "MVO")
    mvo_target: float | None = None
    mvo_ridge: float | None = None
    annualization: float = ANNUALIZATION


@dataclass
class SharpeTable:
    k_values: list[int]
    rows: list[tuple[str, str]]
    values: np.ndarray

    def row(self, strategy: str, allocation: str) -> np.ndarray:
        return self.values[self.rows.index((strategy, allocation))]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", "allocation", *(f"K={k}" for k in self.k_values)])
            for (strategy, alloc), vals in zip(self.rows, self.values):
                w.writerow([strategy, alloc, *(_fmt(v) for v in vals)])


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else repr(float(v))


def build_strategies(
    train: ReturnsTable | np.ndarray,
    k_values,
    settings: BacktestSettings,
    moments: AugmentedSpectralMoments | None = None,
) -> tuple[list[Strategy], DynamicCutter]:
    x = train.returns if isinstance(train, ReturnsTable) else np.asarray(train, float)
    k_values = sorted(set(int(k) for k in k_values))
    if not k_values or k_values[0] < 1:
        raise ValueError("every K must be >= 1")
    if moments is None:
        moments = fit_moments(x, settings.grid, cross_frequency=settings.cross_frequency)
    mu, S = sample_moments(x)
    max_k = k_values[-1]
    cutter = DynamicCutter(
        moments, max_k, psd_repair=settings.psd_repair, variance_floor=settings.variance_floor,
        refit_every=settings.refit_every, train_returns=x if settings.refit_every else None,
    )
    static_tree = _cut_tree(build_market_graph(S, variance_floor=settings.variance_floor), max_k)
    strategies: list[Strategy] = []
    for scheme in settings.schemes:
        for k in k_values:
            strategies.append(SpectralCutStrategy(cutter, k, scheme, settings.rebalance))
    for scheme in settings.schemes:
        for k in k_values:
            strategies.append(StaticCutStrategy(static_tree, k, scheme))
    for b in settings.baselines:
        if b == "EW":
            strategies.append(EqualWeightStrategy(x.shape[1]))
        elif b == "MVO":
            strategies.append(MeanVarianceStrategy(S, mu, settings.mvo_target, settings.mvo_ridge))
        else:
            raise ValueError(f"unknown baseline {b!r}")
    return strategies, cutter


def sweep_cuts(
    train: ReturnsTable | np.ndarray,
    test: ReturnsTable | np.ndarray,
    k_values,
    settings: BacktestSettings,
    moments: AugmentedSpectralMoments | None = None,
) -> tuple[SharpeTable, BacktestReport, DynamicCutter]:
    """Sharpe ratios for every (strategy, allocation) row and K column."""
    strategies, cutter = build_strategies(train, k_values, settings, moments)
    n_train = len(train)
    report = run_backtest(test, strategies, t0=n_train, annualization=settings.annualization)
    ks = sorted(set(int(k) for k in k_values))
    rows, values = [], []
    for kind in ("SpectralCutN", "CutN"):
        for scheme in settings.schemes:
            scheme = AllocationScheme.parse(scheme)
            rows.append((kind, scheme.label))
            values.append([report[f"{kind}_K{k}_{scheme.value}"].sharpe for k in ks])
    for b in settings.baselines:
        rows.append((b, "-"))
        values.append([report[b].sharpe] * len(ks))
    report.meta.update({"k_values": ks, "rebalance": settings.rebalance, "grid": settings.grid.to_dict()})
    return SharpeTable(ks, rows, np.asarray(values, dtype=float)), report, cutter


def write_report(report: BacktestReport, table: SharpeTable, outdir, spectra: dict | None = None) -> None:
    outdir = Path(outdir)
    (outdir / "weights").mkdir(parents=True, exist_ok=True)
    table.to_csv(outdir / "report.csv")
    with (outdir / "curves.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "strategy", "cumulative"])
        for name, res in report.results.items():
            for d, c in zip(report.dates, res.cumulative):
                w.writerow([str(d), name, repr(float(c))])
    tickers = report.tickers or tuple(str(i) for i in range(report[next(iter(report.results))].weights.shape[1]))
    for name, res in report.results.items():
        with (outdir / "weights" / f"{name}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "ticker", "weight"])
            for d, row in zip(report.dates, res.weights):
                for tk, wt in zip(tickers, row):
                    w.writerow([str(d), tk, repr(float(wt))])
    if spectra:
        write_spectrum_csv(outdir / "spectrum.csv", spectra)


def write_spectrum_csv(path, spectra: dict[int, np.ndarray]) -> None:
    items = sorted(spectra.items())
    n = len(items[0][1]) if items else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *(f"lambda_{i + 1}" for i in range(n))])
        for t, vals in items:
            w.writerow([int(t), *(repr(float(v)) for v in vals)])
