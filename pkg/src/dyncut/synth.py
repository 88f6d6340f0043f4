"""Synthetic returns with a planted cyclostationary covariance."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class CyclicCovariance:
    """``R(t) = base + amplitude * cos(2 pi t / period + phase)``."""

    base: np.ndarray
    amplitude: np.ndarray
    period: float
    phase: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.base, dtype=float)
        b = np.asarray(self.amplitude, dtype=float)
        if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("base and amplitude must be square matrices of the same size")
        object.__setattr__(self, "base", a)
        object.__setattr__(self, "amplitude", b)
        lo = min(np.linalg.eigvalsh(a + b).min(), np.linalg.eigvalsh(a - b).min())
        if lo < -1e-12 * max(np.abs(a).max(), 1.0):
            raise ValueError("base +/- amplitude must both be positive semi-definite")

    @property
    def n_assets(self) -> int:
        return self.base.shape[0]

    @property
    def omega(self) -> float:
        return 2 * np.pi / self.period

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        c = np.cos(self.omega * t + self.phase)
        return self.base + c[..., None, None] * self.amplitude


@dataclass(frozen=True)
class RegimeCovariance:
    """Two covariance regimes alternating every half period.

    ``cov_a`` holds while ``cos(2 pi t / period + phase) >= 0`` and ``cov_b``
    otherwise, so the block structure flips abruptly twice per cycle.
    """

    cov_a: np.ndarray
    cov_b: np.ndarray
    period: float
    phase: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.cov_a, dtype=float)
        b = np.asarray(self.cov_b, dtype=float)
        if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("regime covariances must be square matrices of the same size")
        object.__setattr__(self, "cov_a", a)
        object.__setattr__(self, "cov_b", b)

    @property
    def n_assets(self) -> int:
        return self.cov_a.shape[0]

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        in_a = np.cos(2 * np.pi * t / self.period + self.phase) >= 0
        return np.where(in_a[..., None, None], self.cov_a, self.cov_b)


def block_covariance(n_assets: int, blocks, rho: float, vol: float = 0.01) -> np.ndarray:
    """Equicorrelated blocks (``rho`` inside, 0 across) with common volatility."""
    corr = np.eye(n_assets)
    for block in blocks:
        idx = np.asarray(list(block), dtype=int)
        corr[np.ix_(idx, idx)] = rho
        corr[idx, idx] = 1.0
    return vol * vol * corr


def two_regime(cov_a, cov_b, period: float, phase: float = 0.0) -> CyclicCovariance:
    """Covariance swinging between ``cov_a`` (cos = 1) and ``cov_b`` (cos = -1)."""
    cov_a = np.asarray(cov_a, dtype=float)
    cov_b = np.asarray(cov_b, dtype=float)
    return CyclicCovariance(0.5 * (cov_a + cov_b), 0.5 * (cov_a - cov_b), period, phase)


def _sqrtm_psd(R: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(R)
    root = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * root[..., None, :]) @ np.swapaxes(vecs, -1, -2)


def generate_returns(model, n_samples: int, mean=0.0, seed=None, t0: int = 0) -> np.ndarray:
    """Gaussian returns ``r(t) ~ N(mean, R(t))`` for ``t = t0 .. t0 + n_samples - 1``."""
    rng = np.random.default_rng(seed)
    t = np.arange(t0, t0 + n_samples)
    roots = _sqrtm_psd(model(t))
    z = rng.standard_normal((n_samples, model.n_assets))
    r = np.einsum("tij,tj->ti", roots, z) + np.broadcast_to(np.asarray(mean, dtype=float), (model.n_assets,))
    if np.any(r <= -1):
        raise ValueError("generated a return <= -1; reduce the volatility")
    return r


def business_dates(start: str, n: int) -> np.ndarray:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n))


def prices_from_returns(returns: np.ndarray, start_price: float = 100.0) -> np.ndarray:
    r = np.asarray(returns, dtype=float)
    growth = np.cumprod(1.0 + r, axis=0)
    return start_price * np.vstack([np.ones((1, r.shape[1])), growth])


def write_price_csv(path, dates, tickers, prices) -> None:
    """Write the wide ``date,<ticker>,...`` format read by :func:`dyncut.ingest.load_prices`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *tickers])
        for d, row in zip(dates, prices):
            w.writerow([str(d), *(repr(float(p)) for p in row)])
