"""Dynamic spectral portfolio cuts.

Cyclostationary covariance estimation on an augmented Fourier basis, a
time-varying market graph built from it, recursive normalized-cut
clustering and a walk-forward backtest against static baselines.
"""

from .backtest import BacktestReport, BacktestSettings, run_backtest, sharpe_ratio, sweep_cuts
from .graph import (
    CutTree,
    MarketGraph,
    build_market_graph,
    cut_value,
    cutn_value,
    fiedler_bisect,
    graph_spectrum,
    recursive_cuts,
)
from .ingest import PriceTable, ReturnsTable, SplitSpec, compute_returns, load_prices, split
from .portfolio import AllocationScheme, WeightVector, allocate_from_cuts, equal_weight, mean_variance
from .spectral import (
    AugmentedBasis,
    AugmentedSpectralMoments,
    FrequencyGrid,
    build_basis,
    default_grid,
    fit_moments,
    fit_spectral_covariance,
    fit_spectral_mean,
    reconstruct,
    reconstruct_many,
)

__version__ = "0.1.0"
