"""Price loading, simple returns and train/test splitting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MISSING_POLICIES = ("drop_asset", "drop_date")
_MISSING_TOKENS = {"", "na", "nan", "null", "none", "-"}


class PriceParseError(ValueError):
    """Raised when a price CSV cannot be parsed."""


def _as_dates(dates) -> np.ndarray:
    return np.asarray(dates, dtype="datetime64[D]")


@dataclass(frozen=True)
class PriceTable:
    dates: np.ndarray
    tickers: tuple[str, ...]
    prices: np.ndarray

    def __post_init__(self):
        dates = _as_dates(self.dates)
        prices = np.asarray(self.prices, dtype=float)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "prices", prices)
        if prices.ndim != 2 or prices.shape != (len(dates), len(self.tickers)):
            raise ValueError(
                f"prices shape {prices.shape} does not match "
                f"{len(dates)} dates x {len(self.tickers)} tickers"
            )
        if len(dates) > 1 and not np.all(np.diff(dates) > np.timedelta64(0, "D")):
            raise ValueError("dates must be strictly increasing")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise ValueError("prices must be finite and strictly positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.prices.shape


@dataclass(frozen=True)
class ReturnsTable:
    """Simple returns; row ``t`` holds the return realised on ``dates[t]``."""

    dates: np.ndarray
    tickers: tuple[str, ...]
    returns: np.ndarray

    def __post_init__(self):
        dates = _as_dates(self.dates)
        returns = np.asarray(self.returns, dtype=float)
        if returns.ndim == 1:
            returns = returns[:, None]
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "returns", returns)
        if returns.shape != (len(dates), len(self.tickers)):
            raise ValueError(
                f"returns shape {returns.shape} does not match "
                f"{len(dates)} dates x {len(self.tickers)} tickers"
            )
        if np.any(returns <= -1):
            raise ValueError("simple returns must exceed -1")

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    def rows(self, sl: slice) -> "ReturnsTable":
        return ReturnsTable(self.dates[sl], self.tickers, self.returns[sl])

    def select(self, tickers) -> "ReturnsTable":
        idx = [self.tickers.index(t) for t in tickers]
        return ReturnsTable(self.dates, tuple(tickers), self.returns[:, idx])


@dataclass(frozen=True)
class SplitSpec:
    train_end: np.datetime64

    def __post_init__(self):
        object.__setattr__(self, "train_end", np.datetime64(self.train_end, "D"))


def _parse_float(tok: str) -> float | None:
    tok = tok.strip()
    if tok.lower() in _MISSING_TOKENS:
        return None
    try:
        value = float(tok)
    except ValueError:
        return None
    if math.isnan(value):
        return None
    return value


def load_prices(path, missing_policy: str = "drop_asset") -> PriceTable:
    """Read a wide price CSV (``date,<ticker>,...``).

    Missing or unparseable cells are resolved by ``missing_policy``:
    ``drop_asset`` removes every ticker with a hole, ``drop_date`` removes
    every date with a hole. Non-positive prices, duplicate dates and
    malformed rows raise :class:`PriceParseError` with the line number.
    """
    if missing_policy not in MISSING_POLICIES:
        raise ValueError(f"missing_policy must be one of {MISSING_POLICIES}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PriceParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0].lower() != "date":
            raise PriceParseError(f"{path}: line 1: malformed header, expected 'date,<ticker>,...'")
        tickers = header[1:]
        if any(not t for t in tickers):
            raise PriceParseError(f"{path}: line 1: empty ticker name in header")
        if len(set(tickers)) != len(tickers):
            dup = sorted({t for t in tickers if tickers.count(t) > 1})
            raise PriceParseError(f"{path}: line 1: duplicate ticker(s) {dup}")

        seen: dict[np.datetime64, int] = {}
        dates, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PriceParseError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                date = np.datetime64(row[0].strip(), "D")
            except ValueError:
                raise PriceParseError(f"{path}: line {lineno}: bad date {row[0]!r}") from None
            if date in seen:
                raise PriceParseError(
                    f"{path}: line {lineno}: duplicate date {date} (first seen at line {seen[date]})"
                )
            seen[date] = lineno
            values = []
            for tok in row[1:]:
                v = _parse_float(tok)
                if v is not None and v <= 0:
                    raise PriceParseError(f"{path}: non-positive price at line {lineno}")
                values.append(np.nan if v is None else v)
            dates.append(date)
            rows.append(values)

    if not rows:
        raise PriceParseError(f"{path}: no data rows")
    dates_arr = np.array(dates, dtype="datetime64[D]")
    prices = np.array(rows, dtype=float)
    order = np.argsort(dates_arr, kind="stable")
    dates_arr, prices = dates_arr[order], prices[order]

    holes = np.isnan(prices)
    if holes.any():
        if missing_policy == "drop_asset":
            bad = holes.any(axis=0)
            logger.warning("dropping %d asset(s) with missing prices: %s",
                           bad.sum(), [t for t, b in zip(tickers, bad) if b])
            tickers = [t for t, b in zip(tickers, bad) if not b]
            prices = prices[:, ~bad]
        else:
            bad = holes.any(axis=1)
            logger.warning("dropping %d date(s) with missing prices", bad.sum())
            dates_arr, prices = dates_arr[~bad], prices[~bad]
        if prices.size == 0:
            raise PriceParseError(f"{path}: nothing left after applying missing_policy={missing_policy}")
    return PriceTable(dates_arr, tuple(tickers), prices)


def compute_returns(p: PriceTable) -> ReturnsTable:
    if len(p.dates) < 2:
        raise ValueError("at least two dates are needed to compute returns")
    prices = p.prices
    returns = (prices[1:] - prices[:-1]) / prices[:-1]
    return ReturnsTable(p.dates[1:], p.tickers, returns)


def compound(returns: ReturnsTable | np.ndarray, start) -> np.ndarray:
    """Rebuild a price path from returns and the initial price row."""
    r = returns.returns if isinstance(returns, ReturnsTable) else np.asarray(returns, float)
    start = np.asarray(start, dtype=float)
    growth = np.cumprod(1.0 + r, axis=0)
    return np.vstack([start[None, :], start[None, :] * growth])


def split(r: ReturnsTable, s: SplitSpec) -> tuple[ReturnsTable, ReturnsTable]:
    n_train = int(np.searchsorted(r.dates, s.train_end, side="right"))
    if n_train == 0:
        raise ValueError(f"train_end {s.train_end} precedes the first date {r.dates[0]}: empty training set")
    if n_train == len(r):
        raise ValueError(f"train_end {s.train_end} is on or after the last date {r.dates[-1]}: empty test set")
    return r.rows(slice(0, n_train)), r.rows(slice(n_train, None))
