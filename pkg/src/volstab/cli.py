"""Command-line pipeline: simulate, analyze, mfht, fht-pdf, acf, compare.

Every subcommand resolves its configuration from built-in defaults, an
optional ``key = value`` config file, and explicit flags (in that order of
precedence), writes the result files into one output directory, and records
a manifest there; re-running with the same manifest reproduces the output
bytes exactly.

Exit codes: 0 success, 2 configuration error, 3 input error, 4 empty result.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .episodes import (
    DEFAULT_ENTRY_RULE,
    DEFAULT_VOL_SCOPE,
    ENTRY_RULES,
    VOL_SCOPES,
    WINDOW_FAMILIES,
    EpisodeTable,
    ThresholdWindow,
    extract_table,
    read_episodes_csv,
    window_family,
    write_episodes_csv,
)
from .model import (
    DEFAULT_DAYS,
    DEFAULT_DT,
    DEFAULT_N_SERIES,
    DEFAULT_SEED,
    DEFAULT_STEPS_PER_DAY,
    CirParams,
    ModelParams,
    PotentialParams,
    SimConfig,
    daily_returns,
    simulate_ensemble,
)
from .returns import (
    ReturnSeries,
    load_prices,
    market_stats,
    read_returns_csv,
    to_returns,
    write_returns_csv,
    write_stats_json,
)
from .stats import (
    DEFAULT_BINS,
    DEFAULT_MIN_COUNT,
    MfhtCurve,
    ensemble_acf,
    fht_pdf,
    mfht_curve,
    nonmonotonicity_verdict,
    read_curve_csv,
    write_acf_csv,
    write_curve_csv,
    write_histogram_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_EMPTY = 4

_INT_KEYS = ("steps_per_day", "days", "n_series", "seed")
_FLOAT_KEYS = ("m", "n", "a", "b", "c", "v_start", "x0", "dt")
CONFIG_KEYS = _FLOAT_KEYS + _INT_KEYS

DEFAULT_CONFIG = {
    "m": 2.0,
    "n": 3.0,
    "a": 2.0,
    "b": 0.01,
    "c": 0.83,
    "v_start": 8.62e-5,
    "x0": 0.0,
    "dt": DEFAULT_DT,
    "steps_per_day": DEFAULT_STEPS_PER_DAY,
    "days": DEFAULT_DAYS,
    "n_series": DEFAULT_N_SERIES,
    "seed": DEFAULT_SEED,
}


class ConfigError(Exception):
    exit_code = EXIT_CONFIG


class InputError(Exception):
    exit_code = EXIT_INPUT


class EmptyResultError(Exception):
    exit_code = EXIT_EMPTY


def _parse_config_text(path: Path) -> dict:
    values = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {line_no}: expected 'key = value', got {raw!r}")
        key, _, text = line.partition("=")
        key, text = key.strip(), text.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}: line {line_no}: unknown key {key!r}")
        try:
            values[key] = int(text) if key in _INT_KEYS else float(text)
        except ValueError:
            raise ConfigError(f"{path}: line {line_no}: bad value for {key}: {text!r}") from None
    return values


def load_config_file(path: str | Path) -> dict:
    """Read a ``key = value`` config file, or the config block of a manifest."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from None
        block = payload.get("config", payload)
        unknown = set(block) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        return {k: (int(v) if k in _INT_KEYS else float(v)) for k, v in block.items()}
    return _parse_config_text(path)


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicit flags."""
    config = dict(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        config.update(load_config_file(args.config))
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def build_model(config: dict) -> tuple[ModelParams, SimConfig]:
    try:
        mp = ModelParams(
            potential=PotentialParams(m=config["m"], n=config["n"]),
            cir=CirParams(a=config["a"], b=config["b"], c=config["c"], v_start=config["v_start"]),
            x0=config["x0"],
        )
        cfg = SimConfig(
            dt=config["dt"],
            steps_per_day=config["steps_per_day"],
            days=config["days"],
            n_series=config["n_series"],
            seed=config["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return mp, cfg


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _out_dir(args: argparse.Namespace, seed: int | None) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = Path("runs") / (f"{stamp}-seed{seed}" if seed is not None else stamp)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(
    out: Path,
    subcommand: str,
    config: dict,
    inputs: list[Path],
    extra: dict | None = None,
) -> None:
    manifest = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "seed": config.get("seed"),
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(payload, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- simulate


def cmd_simulate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    mp, cfg = build_model(config)
    out = _out_dir(args, cfg.seed)

    trajectories = simulate_ensemble(mp, cfg, threads=args.threads)
    if cfg.days >= 1:
        series = [daily_returns(t, ticker=f"sim{i:04d}") for i, t in enumerate(trajectories)]
        write_returns_csv(series, out / "returns.csv")
        stats = market_stats(series)
        write_stats_json(stats, out / "stats.json")
        sigma_bar = stats.sigma_bar
    else:
        sigma_bar = None

    if args.write_trajectories or cfg.days < 1:
        with open(out / "trajectories.csv", "w", newline="") as fh:
            fh.write("series,day,x,v\n")
            for i, t in enumerate(trajectories):
                fh.writelines(
                    f"{i},{d},{xv!r},{vv!r}\n"
                    for d, (xv, vv) in enumerate(zip(t.x.tolist(), t.v.tolist()))
                )

    inputs = [Path(args.config)] if args.config else []
    write_manifest(out, "simulate", config, inputs, extra={"sigma_bar": sigma_bar})
    print(f"simulate: {cfg.n_series} series x {cfg.days} days -> {out}")
    if sigma_bar is not None:
        print(f"sigma_bar = {sigma_bar!r}")
    return EXIT_OK


# ----------------------------------------------------------------- analyze


def _load_input_series(args: argparse.Namespace) -> tuple[list[ReturnSeries], list[Path]]:
    if bool(args.returns) == bool(args.prices):
        raise ConfigError("exactly one of --returns or --prices is required")
    try:
        if args.returns:
            path = Path(args.returns)
            return read_returns_csv(path), [path]
        path = Path(args.prices)
        prices = load_prices(path, layout=args.layout)
        files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
        return [to_returns(p) for p in prices], files
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _resolve_windows(args: argparse.Namespace, sigma_bar: float) -> list[ThresholdWindow]:
    try:
        if args.window == "manual":
            if args.theta_i is None or args.theta_f is None or args.direction is None:
                raise ConfigError("manual windows need --theta-i, --theta-f and --direction")
            return [ThresholdWindow(args.theta_i, args.theta_f, sigma_bar, args.direction)]
        return window_family(args.window, sigma_bar)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _curves_and_verdicts(
    out: Path, tables: list[EpisodeTable], bins: int, min_count: int
) -> list[dict]:
    verdicts = []
    for table in tables:
        window_id = table.window.window_id
        try:
            curve = mfht_curve(table, bins=bins, min_count=min_count)
        except ValueError:  # no episodes, or none with binnable volatility
            verdicts.append(nonmonotonicity_verdict(_empty_curve(min_count), window_id=window_id))
            continue
        write_curve_csv(curve, out / f"curve_{window_id}.csv")
        verdicts.append(nonmonotonicity_verdict(curve, window_id=window_id))
    return verdicts


def _empty_curve(min_count: int) -> MfhtCurve:
    return MfhtCurve(
        bin_edges=np.array([0.0, 1.0]),
        mfht=np.array([np.nan]),
        counts=np.zeros(1, dtype=np.int64),
        min_count=min_count,
    )


def cmd_analyze(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    series, inputs = _load_input_series(args)
    sigma_bar = args.sigma_bar if args.sigma_bar is not None else market_stats(series).sigma_bar
    windows = _resolve_windows(args, sigma_bar)
    out = _out_dir(args, config["seed"])

    tables = [
        extract_table(series, w, entry_rule=args.entry_rule, vol_scope=args.vol_scope)
        for w in windows
    ]
    write_episodes_csv(tables, out / "episodes.csv")
    verdicts = _curves_and_verdicts(out, tables, args.bins, args.min_count)
    _write_json(verdicts, out / "verdicts.json")
    write_manifest(
        out,
        "analyze",
        config,
        inputs,
        extra={
            "sigma_bar": sigma_bar,
            "window": args.window,
            "entry_rule": args.entry_rule,
            "vol_scope": args.vol_scope,
            "bins": args.bins,
            "min_count": args.min_count,
        },
    )
    total = sum(len(t) for t in tables)
    print(f"analyze: {len(series)} series, {len(windows)} window(s), {total} episodes -> {out}")
    if total == 0:
        print("no episodes extracted", file=sys.stderr)
        return EXIT_EMPTY
    return EXIT_OK


# ------------------------------------------------------- mfht / fht-pdf / acf


def _load_episode_tables(path_text: str) -> list[EpisodeTable]:
    path = Path(path_text)
    try:
        tables = read_episodes_csv(path)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None
    if not tables or all(len(t) == 0 for t in tables):
        raise EmptyResultError(f"{path}: no episodes")
    return tables


def cmd_mfht(args: argparse.Namespace) -> int:
    tables = _load_episode_tables(args.episodes)
    out = _out_dir(args, None)
    verdicts = _curves_and_verdicts(out, tables, args.bins, args.min_count)
    _write_json(verdicts, out / "verdicts.json")
    write_manifest(
        out,
        "mfht",
        {"bins": args.bins, "min_count": args.min_count},
        [Path(args.episodes)],
    )
    print(f"mfht: {len(tables)} window(s) -> {out}")
    return EXIT_OK


def cmd_fht_pdf(args: argparse.Namespace) -> int:
    tables = _load_episode_tables(args.episodes)
    out = _out_dir(args, None)
    for table in tables:
        hist = fht_pdf(table, bins=args.bins)
        write_histogram_csv(hist, out / f"fht_pdf_{table.window.window_id}.csv")
    write_manifest(out, "fht-pdf", {"bins": args.bins}, [Path(args.episodes)])
    print(f"fht-pdf: {len(tables)} window(s) -> {out}")
    return EXIT_OK


def cmd_acf(args: argparse.Namespace) -> int:
    try:
        series = read_returns_csv(Path(args.returns))
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None
    shortest = min(rs.returns.size for rs in series)
    if shortest <= args.max_lag + 1:
        raise InputError(f"shortest series ({shortest}) too short for max_lag={args.max_lag}")
    result = ensemble_acf(series, args.max_lag, absolute=args.absolute)
    out = _out_dir(args, None)
    name = "acf_abs.csv" if args.absolute else "acf.csv"
    write_acf_csv(result, out / name)
    write_manifest(
        out, "acf", {"max_lag": args.max_lag, "absolute": args.absolute}, [Path(args.returns)]
    )
    print(f"acf: {len(series)} series, lags 0..{args.max_lag} -> {out / name}")
    return EXIT_OK


# ----------------------------------------------------------------- compare


def _rebin(curve: MfhtCurve, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Count-weighted means of populated source bins onto the common grid."""
    mids = np.sqrt(curve.bin_edges[:-1] * curve.bin_edges[1:])
    sums = np.zeros(edges.size - 1)
    counts = np.zeros(edges.size - 1)
    for i in np.flatnonzero(curve.populated):
        j = int(np.searchsorted(edges, mids[i], side="right")) - 1
        if mids[i] == edges[-1]:
            j = edges.size - 2
        if 0 <= j < edges.size - 1:
            sums[j] += curve.mfht[i] * curve.counts[i]
            counts[j] += curve.counts[i]
    with np.errstate(invalid="ignore"):
        return sums / counts, counts


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        empirical = read_curve_csv(Path(args.empirical))
        model = read_curve_csv(Path(args.model))
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None

    def _span(curve: MfhtCurve) -> tuple[float, float]:
        pop = np.flatnonzero(curve.populated)
        if pop.size == 0:
            raise InputError("curve has no populated bins")
        return float(curve.bin_edges[pop[0]]), float(curve.bin_edges[pop[-1] + 1])

    lo_e, hi_e = _span(empirical)
    lo_m, hi_m = _span(model)
    lo, hi = max(lo_e, lo_m), min(hi_e, hi_m)
    if not lo < hi:
        raise InputError("no overlap between the volatility ranges of the two curves")

    if empirical.bin_edges.size == model.bin_edges.size and np.array_equal(
        empirical.bin_edges, model.bin_edges
    ):
        edges = empirical.bin_edges
        mfht_e = empirical.mfht.copy()
        mfht_m = model.mfht.copy()
    else:
        nbins = max(8, min(empirical.n_bins, model.n_bins))
        edges = np.exp(np.linspace(np.log(lo), np.log(hi), nbins + 1))
        edges[0], edges[-1] = lo, hi
        mfht_e, _ = _rebin(empirical, edges)
        mfht_m, _ = _rebin(model, edges)

    both = np.isfinite(mfht_e) & np.isfinite(mfht_m)
    if not both.any():
        raise InputError("no common populated bins after rebinning")
    diff = np.where(both, mfht_e - mfht_m, np.nan)

    peak_e = int(np.nanargmax(np.where(np.isfinite(mfht_e), mfht_e, -np.inf)))
    peak_m = int(np.nanargmax(np.where(np.isfinite(mfht_m), mfht_m, -np.inf)))
    report = {
        "bins_compared": int(both.sum()),
        "max_abs_diff": float(np.nanmax(np.abs(diff))),
        "mean_abs_diff": float(np.nanmean(np.abs(diff[both]))),
        "peak_bin_empirical": peak_e,
        "peak_bin_model": peak_m,
        "peak_offset_bins": abs(peak_e - peak_m),
        "verdict_empirical": nonmonotonicity_verdict(empirical, window_id="empirical"),
        "verdict_model": nonmonotonicity_verdict(model, window_id="model"),
    }
    out = _out_dir(args, None)
    with open(out / "compare.csv", "w", newline="") as fh:
        fh.write("bin_lo,bin_hi,mfht_empirical,mfht_model,diff\n")
        for i in range(edges.size - 1):
            e = repr(float(mfht_e[i])) if np.isfinite(mfht_e[i]) else ""
            m = repr(float(mfht_m[i])) if np.isfinite(mfht_m[i]) else ""
            d = repr(float(diff[i])) if np.isfinite(diff[i]) else ""
            fh.write(f"{edges[i]!r},{edges[i + 1]!r},{e},{m},{d}\n")
    _write_json(report, out / "compare.json")
    write_manifest(out, "compare", {}, [Path(args.empirical), Path(args.model)])
    print(
        f"compare: {report['bins_compared']} common bins, "
        f"peak offset {report['peak_offset_bins']} -> {out}"
    )
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file, or a manifest .json to replay")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--out", help="output directory (default: runs/<timestamp>-seed<seed>)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for simulation")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    for key in _FLOAT_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float, default=None)
    for key in _INT_KEYS:
        if key != "seed":  # already a shared flag
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int, default=None)


def _add_analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", choices=WINDOW_FAMILIES + ("manual",), default="fig1a")
    p.add_argument("--theta-i", dest="theta_i", type=float, default=None)
    p.add_argument("--theta-f", dest="theta_f", type=float, default=None)
    p.add_argument("--direction", choices=("crash", "rally"), default=None)
    p.add_argument("--sigma-bar", dest="sigma_bar", type=float, default=None,
                   help="override the market volatility computed from the input data")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--min-count", dest="min_count", type=int, default=DEFAULT_MIN_COUNT)
    p.add_argument("--entry-rule", dest="entry_rule", choices=ENTRY_RULES, default=DEFAULT_ENTRY_RULE)
    p.add_argument("--vol-scope", dest="vol_scope", choices=VOL_SCOPES, default=DEFAULT_VOL_SCOPE)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volstab",
        description="Hitting-time stability analysis of daily returns, simulated or empirical.",
    )
    parser.add_argument("--version", action="version", version=f"volstab {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="generate a return ensemble from the model")
    _add_shared(p)
    _add_model_flags(p)
    p.add_argument("--write-trajectories", action="store_true",
                   help="also export series,day,x,v rows")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="extract episodes and build hitting-time curves")
    _add_shared(p)
    p.add_argument("--returns", help="returns CSV (ticker,day_index,return)")
    p.add_argument("--prices", help="price CSV file or directory")
    p.add_argument("--layout", choices=("per-stock", "wide"), default="per-stock")
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("mfht", help="bin an episode file into curves and verdicts")
    _add_shared(p)
    p.add_argument("--episodes", required=True)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--min-count", dest="min_count", type=int, default=DEFAULT_MIN_COUNT)
    p.set_defaults(func=cmd_mfht)

    p = sub.add_parser("fht-pdf", help="histogram the hitting times of an episode file")
    _add_shared(p)
    p.add_argument("--episodes", required=True)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.set_defaults(func=cmd_fht_pdf)

    p = sub.add_parser("acf", help="ensemble-average autocorrelation of a returns file")
    _add_shared(p)
    p.add_argument("--returns", required=True)
    p.add_argument("--max-lag", dest="max_lag", type=int, default=50)
    p.add_argument("--absolute", action="store_true", help="autocorrelation of |returns|")
    p.set_defaults(func=cmd_acf)

    p = sub.add_parser("compare", help="compare two hitting-time curves")
    _add_shared(p)
    p.add_argument("--empirical", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, EmptyResultError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
