"""``dyncut`` command line: fit, cut, backtest, synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import synth as synthetic
from .backtest import BacktestSettings, sweep_cuts, write_report, write_spectrum_csv
from .config import ConfigError, RunConfig
from .graph import build_market_graph, graph_spectrum, recursive_cuts
from .ingest import ReturnsTable, SplitSpec, compute_returns, load_prices, split
from .portfolio import AllocationScheme
from .spectral import AugmentedSpectralMoments, FrequencyGrid, default_grid, fit_moments, reconstruct

logger = logging.getLogger("dyncut")


def _grid(cfg: RunConfig) -> FrequencyGrid:
    s = cfg.spectral
    if s.harmonics == 0:
        return FrequencyGrid((), include_dc=True)
    return default_grid(s.period, s.harmonics, include_dc=s.include_dc)


def _load_returns(cfg: RunConfig) -> ReturnsTable:
    if not cfg.data.prices:
        raise ConfigError("no price file given (data.prices / --prices)")
    return compute_returns(load_prices(cfg.data.prices, cfg.data.missing_policy))


def _training(cfg: RunConfig, returns: ReturnsTable) -> tuple[ReturnsTable, ReturnsTable | None]:
    if cfg.data.train_end is None:
        return returns, None
    return split(returns, SplitSpec(cfg.data.train_end))


def _moments(cfg: RunConfig, train: ReturnsTable) -> AugmentedSpectralMoments:
    if cfg.spectral.moments:
        m = AugmentedSpectralMoments.load(cfg.spectral.moments)
        if m.tickers and tuple(m.tickers) != tuple(train.tickers):
            raise ConfigError("moments file was fitted on a different asset universe")
        if m.n_train != len(train):
            raise ConfigError(
                f"moments file was fitted on {m.n_train} rows, training window has {len(train)}"
            )
        return m
    return fit_moments(train, _grid(cfg), cross_frequency=cfg.spectral.cross_frequency)


def cmd_fit(cfg: RunConfig, out: Path) -> dict:
    returns = _load_returns(cfg)
    train, _ = _training(cfg, returns)
    moments = fit_moments(train, _grid(cfg), cross_frequency=cfg.spectral.cross_frequency)
    log = {
        "n_train": len(train),
        "n_assets": train.n_assets,
        "first_date": str(train.dates[0]),
        "last_date": str(train.dates[-1]),
        "grid": moments.grid.to_dict(),
        "cross_frequency": moments.cross_frequency,
    }
    moments.meta = {"first_date": log["first_date"], "last_date": log["last_date"]}
    out.parent.mkdir(parents=True, exist_ok=True)
    moments.save(out)
    out.with_name(out.name + ".log.json").write_text(json.dumps(log, indent=2, sort_keys=True) + "\n")
    cfg.dump(out.with_name(out.name + ".config.yaml"))
    logger.info("fitted T=%d N=%d M=%d -> %s", log["n_train"], log["n_assets"], moments.grid.n_freq, out)
    return log


def _resolve_times(returns: ReturnsTable | None, dates, times) -> list[tuple[int, str]]:
    out = [(int(t), f"t{int(t)}") for t in times or []]
    for d in dates or []:
        if returns is None:
            raise ConfigError("mapping dates to time indices needs the price file")
        day = np.datetime64(d, "D")
        pos = int(np.searchsorted(returns.dates, day))
        if pos >= len(returns) or returns.dates[pos] != day:
            raise ConfigError(f"date {d} is not a trading row of the price file")
        out.append((pos, str(day)))
    if not out:
        raise ConfigError("give at least one --date or --t")
    return out


def cmd_cut(cfg: RunConfig, outdir: Path, n_cuts: int, dates=(), times=()) -> list[Path]:
    returns = _load_returns(cfg) if cfg.data.prices else None
    if returns is not None:
        train, _ = _training(cfg, returns)
        moments = _moments(cfg, train)
    elif cfg.spectral.moments:
        moments = AugmentedSpectralMoments.load(cfg.spectral.moments)
    else:
        raise ConfigError("cut needs a price file or a moments file")
    tickers = list(moments.tickers) or [str(i) for i in range(moments.n_assets)]
    outdir.mkdir(parents=True, exist_ok=True)
    written, spectra = [], {}
    for t, label in _resolve_times(returns, dates, times):
        _, R = reconstruct(moments, t, psd_repair=cfg.spectral.psd_repair)
        g = build_market_graph(R, variance_floor=1e-12)
        tree = recursive_cuts(g, n_cuts)
        spectra[t] = graph_spectrum(g).eigenvalues
        doc = {"t": t, "label": label, "tickers": tickers, **tree.to_dict()}
        path = outdir / f"tree_{label}.json"
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
    write_spectrum_csv(outdir / "spectrum.csv", spectra)
    cfg.dump(outdir / "config.yaml")
    return written


def cmd_backtest(cfg: RunConfig, outdir: Path) -> Path:
    returns = _load_returns(cfg)
    if cfg.data.train_end is None:
        raise ConfigError("backtest needs data.train_end / --train-end")
    train, test = _training(cfg, returns)
    st = cfg.strategies
    settings = BacktestSettings(
        grid=_grid(cfg),
        schemes=tuple(AllocationScheme.parse(s) for s in st.schemes),
        rebalance=st.rebalance,
        psd_repair=cfg.spectral.psd_repair,
        cross_frequency=cfg.spectral.cross_frequency,
        refit_every=cfg.spectral.refit_every,
        baselines=tuple(st.baselines),
        mvo_target=st.mvo_target,
        mvo_ridge=st.mvo_ridge,
        annualization=st.annualization,
    )
    moments = _moments(cfg, train)
    settings.grid = moments.grid
    table, report, cutter = sweep_cuts(train, test, st.cuts, settings, moments=moments)
    report.dates, report.tickers = test.dates, test.tickers
    outdir.mkdir(parents=True, exist_ok=True)
    write_report(report, table, outdir, spectra=cutter.spectra())
    meta = {**report.meta, "strategies": {k: v.params for k, v in report.results.items()}}
    (outdir / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True, default=str) + "\n")
    cfg.dump(outdir / "config.yaml")
    return outdir / "report.csv"


def _default_blocks(n: int):
    half = n // 2
    a = [list(range(half)), list(range(half, n))]
    b = [list(range(0, n, 2)), list(range(1, n, 2))]
    return a, b


def cmd_synth(cfg: RunConfig, out: Path) -> Path:
    sy = cfg.synth
    da, db = _default_blocks(sy.n_assets)
    cov_a = synthetic.block_covariance(sy.n_assets, sy.blocks_a or da, sy.rho, sy.vol)
    cov_b = synthetic.block_covariance(sy.n_assets, sy.blocks_b or db, sy.rho, sy.vol)
    if sy.kind == "cyclic":
        model = synthetic.two_regime(cov_a, cov_b, sy.period)
    else:
        model = synthetic.RegimeCovariance(cov_a, cov_b, sy.period)
    r = synthetic.generate_returns(model, sy.n_samples, mean=sy.drift, seed=cfg.seed)
    prices = synthetic.prices_from_returns(r)
    dates = synthetic.business_dates(sy.start_date, sy.n_samples + 1)
    tickers = [f"A{i:02d}" for i in range(sy.n_assets)]
    synthetic.write_price_csv(out, dates, tickers, prices)
    cut_row = int(round(sy.train_fraction * sy.n_samples))
    info = {"train_end": str(dates[cut_row]), "n_samples": sy.n_samples, "seed": cfg.seed}
    out.with_name(out.name + ".info.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    cfg.dump(out.with_name(out.name + ".config.yaml"))
    return out


def _csv_ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _csv_strs(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dyncut", description="Dynamic spectral portfolio cuts")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--prices", help="price CSV (date,<ticker>,...)")
    common.add_argument("--train-end", help="last training date, YYYY-MM-DD")
    common.add_argument("--missing-policy", choices=["drop_asset", "drop_date"])
    common.add_argument("--period", type=int)
    common.add_argument("--harmonics", type=int, help="0 selects the stationary (DC-only) grid")
    common.add_argument("--no-dc", action="store_true", help="drop the DC basis column")
    common.add_argument("--no-psd-repair", action="store_true")
    common.add_argument("--no-cross-frequency", action="store_true")
    common.add_argument("--refit-every", type=int, help="rolling refit interval in test rows")
    common.add_argument("--moments", help="pre-fitted moments file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path)

    sub.add_parser("fit", parents=[common], help="fit augmented spectral moments")

    c = sub.add_parser("cut", parents=[common], help="cut tree + graph spectrum at given dates")
    c.add_argument("--date", action="append", default=[], help="trading date (repeatable)")
    c.add_argument("--t", action="append", type=int, default=[], help="integer time index (repeatable)")
    c.add_argument("--k", type=int, help="number of cuts (default: largest configured K)")

    b = sub.add_parser("backtest", parents=[common], help="walk-forward backtest and K sweep")
    b.add_argument("--cuts", type=_csv_ints, help="comma-separated K values")
    b.add_argument("--schemes", type=_csv_strs, help="depth_halving,uniform_clusters")
    b.add_argument("--rebalance", type=int, help="rebalance interval in rows, 0 = never")

    s = sub.add_parser("synth", parents=[common], help="write a synthetic price CSV")
    s.add_argument("--kind", choices=["cyclic", "regime"])
    s.add_argument("--n-assets", type=int)
    s.add_argument("--n-samples", type=int)
    s.add_argument("--drift", type=float)
    return p


def _apply_overrides(cfg: RunConfig, a: argparse.Namespace) -> RunConfig:
    d, s, st, sy = cfg.data, cfg.spectral, cfg.strategies, cfg.synth
    if a.prices is not None:
        d.prices = a.prices
    if a.train_end is not None:
        d.train_end = a.train_end
    if a.missing_policy is not None:
        d.missing_policy = a.missing_policy
    if a.period is not None:
        s.period = a.period
        sy.period = a.period
    if a.harmonics is not None:
        s.harmonics = a.harmonics
    if a.no_dc:
        s.include_dc = False
    if a.no_psd_repair:
        s.psd_repair = False
    if a.no_cross_frequency:
        s.cross_frequency = False
    if a.refit_every is not None:
        s.refit_every = a.refit_every
    if a.moments is not None:
        s.moments = a.moments
    if a.seed is not None:
        cfg.seed = a.seed
    if a.out is not None:
        cfg.out = str(a.out)
    if getattr(a, "cuts", None):
        st.cuts = a.cuts
    if getattr(a, "schemes", None):
        st.schemes = a.schemes
    if getattr(a, "rebalance", None) is not None:
        st.rebalance = a.rebalance or None
    for name in ("kind", "n_assets", "n_samples", "drift"):
        value = getattr(a, name, None)
        if value is not None:
            setattr(sy, name, value)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        cfg = _apply_overrides(cfg, args).validate()
        out = Path(cfg.out)
        if args.command == "fit":
            cmd_fit(cfg, out)
        elif args.command == "cut":
            k = args.k or max(cfg.strategies.cuts)
            for path in cmd_cut(cfg, out, k, dates=args.date, times=args.t):
                print(path)
        elif args.command == "backtest":
            print(cmd_backtest(cfg, out))
        elif args.command == "synth":
            print(cmd_synth(cfg, out))
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"dyncut {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
