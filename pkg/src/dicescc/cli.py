"""Command-line scenario runner.

Subcommands::

    dicescc run <scenario>            optimize, extract marginals, write artifacts
    dicescc compare <dir>...          scc / smac table across finished runs
    dicescc gradcheck <params>        adjoint vs finite differences
    dicescc oracle <scenario> --periods 2,5 --delta 1e-3

Exit codes: 0 ok, 1 a check failed, 2 usage or configuration error,
3 optimizer did not converge (artifacts are still written and flagged).
"""

from __future__ import annotations

import argparse
import enum
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .diffkernel import fd_check
from .dynamics import Controls, simulate, trajectory_csv
from .marginals import (BisectionBracketError, MarginalSeries, marginal_series,
                        oracle_compensation, read_marginals_csv)
from .optimizer import NotConverged, OptResult, ScenarioConstraints, optimize
from .params import Params, ParamsError, load_params, parse_assignments, resolve_params_path

log = logging.getLogger("dicescc")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 1, 2, 3
RATIO_BAND = (0.9, 1.1)


class ConfigError(ValueError):
    pass


class UtilityVariant(enum.Enum):
    POPULATION_WEIGHTED = "PopulationWeighted"
    UNWEIGHTED = "Unweighted"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    params_path: Path
    utility_variant: UtilityVariant = UtilityVariant.POPULATION_WEIGHTED
    temp_cap: float | None = None
    horizon_override: int | None = None
    plot_window: tuple[int, int] | None = None
    cumulative_cap: bool = True
    # (first period, last period, "s" | "mu", value)
    pins: tuple[tuple[int, int, str, float], ...] = ()
    output_dir: Path = Path(".")

    def load_params(self) -> Params:
        p = load_params(self.params_path)
        if self.horizon_override is not None:
            if not 2 <= self.horizon_override <= p.t_max:
                raise ConfigError(f"horizon_override {self.horizon_override} outside 2..{p.t_max}")
            p = p.truncated(self.horizon_override)
        if self.utility_variant is UtilityVariant.UNWEIGHTED:
            p = p.unweighted()
        if self.plot_window is not None:
            years = p.years()
            lo, hi = self.plot_window
            if not (years[0] <= lo < hi <= years[-1]):
                raise ConfigError(f"plot_window {self.plot_window} outside {years[0]}..{years[-1]}")
        return p

    def constraints(self, p: Params) -> ScenarioConstraints:
        # pins past a shortened horizon are dropped
        pins = tuple((t, kind, value)
                     for first, last, kind, value in self.pins
                     for t in range(first, min(last, p.t_max) + 1))
        return ScenarioConstraints(temp_cap=self.temp_cap,
                                   cumulative_cap_enabled=self.cumulative_cap,
                                   pinned_controls=pins)

    @property
    def run_dir(self) -> Path:
        return self.output_dir / self.name


SCENARIO_KEYS = ("name", "params", "utility_variant", "temp_cap", "horizon_override",
                 "plot_window", "cumulative_cap", "pin_s", "pin_mu")


def _expect(kind: str, item, key: str):
    got, value, line = item
    if got != kind:
        raise ConfigError(f"line {line}: {key} must be a {kind}, got {got}")
    return value


def parse_scenario(text: str, source: str = "<string>", base_dir: Path | None = None,
                   output_dir: Path | str = ".") -> ScenarioConfig:
    try:
        entries = parse_assignments(text, source)
    except ParamsError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = sorted(set(entries) - set(SCENARIO_KEYS))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
    for key in ("name", "params"):
        if key not in entries:
            raise ConfigError(f"{source}: missing key {key!r}")
    name = _expect("string", entries["name"], "name")
    if not name or "/" in name or name in (".", ".."):
        raise ConfigError(f"{source}: invalid scenario name {name!r}")

    params_ref = _expect("string", entries["params"], "params")
    params_path = Path(params_ref)
    if base_dir is not None and not params_path.is_absolute() and (base_dir / params_path).exists():
        params_path = base_dir / params_path
    try:
        params_path = resolve_params_path(params_path)
    except FileNotFoundError as exc:
        raise ConfigError(f"{source}: {exc}") from None

    kw: dict = {}
    if "utility_variant" in entries:
        raw = _expect("string", entries["utility_variant"], "utility_variant")
        try:
            kw["utility_variant"] = UtilityVariant(raw)
        except ValueError:
            raise ConfigError(f"{source}: utility_variant must be PopulationWeighted or Unweighted") from None
    if "temp_cap" in entries:
        cap = _expect("scalar", entries["temp_cap"], "temp_cap")
        if not cap > 0:
            raise ConfigError(f"{source}: temp_cap must be positive")
        kw["temp_cap"] = cap
    if "horizon_override" in entries:
        h = _expect("scalar", entries["horizon_override"], "horizon_override")
        if h != int(h):
            raise ConfigError(f"{source}: horizon_override must be an integer")
        kw["horizon_override"] = int(h)
    if "plot_window" in entries:
        w = _expect("vector", entries["plot_window"], "plot_window")
        if len(w) != 2:
            raise ConfigError(f"{source}: plot_window takes [year_from, year_to]")
        kw["plot_window"] = (int(w[0]), int(w[1]))
    if "cumulative_cap" in entries:
        kw["cumulative_cap"] = _expect("flag", entries["cumulative_cap"], "cumulative_cap")
    pins = []
    for key, kind in (("pin_s", "s"), ("pin_mu", "mu")):
        if key in entries:
            v = _expect("vector", entries[key], key)
            if len(v) != 3 or v[0] != int(v[0]) or v[1] != int(v[1]) or not 1 <= v[0] <= v[1]:
                raise ConfigError(f"{source}: {key} takes [first_period, last_period, value]")
            pins.append((int(v[0]), int(v[1]), kind, float(v[2])))
    return ScenarioConfig(name=name, params_path=params_path, pins=tuple(pins),
                          output_dir=Path(output_dir), **kw)


def resolve_scenario_path(path: str | Path) -> Path:
    """Existing file, else a bundled scenario by bare name (e.g. ``a_baseline``)."""
    p = Path(path)
    if p.exists():
        return p
    name = str(path)
    if not name.endswith(".scenario"):
        name += ".scenario"
    bundled = resources.files("dicescc") / "data" / "scenarios" / name
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"scenario file not found: {path}")


def load_scenario(path: str | Path, output_dir: str | Path = ".") -> ScenarioConfig:
    path = resolve_scenario_path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), str(path), path.parent, output_dir)


# --- artifacts ------------------------------------------------------------------------

def write_atomic(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunArtifacts:
    directory: Path
    trajectory_csv: Path
    marginals_csv: Path
    plot_svg: Path
    convergence_log: Path
    summary_json: Path
    summary: dict = field(default_factory=dict)

    @classmethod
    def in_dir(cls, directory: Path) -> RunArtifacts:
        directory = Path(directory)
        return cls(directory, directory / "trajectory.csv", directory / "marginals.csv",
                   directory / "plot.svg", directory / "convergence.log", directory / "summary.json")

    @property
    def converged(self) -> bool:
        return bool(self.summary.get("converged"))


def _json_float(x: float):
    return None if x is None or not math.isfinite(x) else float(x)


def build_summary(cfg: ScenarioConfig, p: Params, opt: OptResult, ms: MarginalSeries) -> dict:
    years = p.years()
    peak, peak_year = ms.max_ratio(years)
    out = {
        "name": cfg.name,
        "converged": opt.converged,
        "t_max": p.t_max,
        "utility_variant": cfg.utility_variant.value,
        "temp_cap": cfg.temp_cap,
        "w_star": opt.w_star,
        "kkt_residual": opt.kkt_residual,
        "max_violation": opt.max_violation,
        "iterations": opt.iterations,
        "max_scc_over_smac": _json_float(peak),
        "year_of_max": peak_year,
        "active_temperature_periods": opt.active_temperature_periods(),
        "cumulative_multiplier": opt.ineq_multipliers.cumulative,
        "plot_window": list(cfg.plot_window) if cfg.plot_window else None,
    }
    if cfg.plot_window:
        wpeak, wyear = ms.max_ratio(years, cfg.plot_window)
        out["max_scc_over_smac_in_window"] = _json_float(wpeak)
        out["year_of_max_in_window"] = wyear
    return out


def run_scenario(cfg: ScenarioConfig) -> RunArtifacts:
    """Optimize, extract marginals and write every artifact of one scenario."""
    p = cfg.load_params()
    sc = cfg.constraints(p)
    log.info("optimizing %s (%d periods)", cfg.name, p.t_max)
    opt = optimize(p, sc)
    if not opt.converged:
        log.warning("%s: not converged (kkt %.3e); marginals are those of the last iterate",
                    cfg.name, opt.kkt_residual)
    ms = marginal_series(p, sc, opt, strict=False)
    years = p.years()
    art = RunArtifacts.in_dir(cfg.run_dir)
    tr = simulate(p, opt.controls)
    write_atomic(art.trajectory_csv, trajectory_csv(tr, opt.controls, years))
    write_atomic(art.marginals_csv, ms.to_csv(years))
    write_atomic(art.plot_svg, emit_plot(years, {"SCC": ms.scc, "SMAC": ms.smac},
                                         window=cfg.plot_window, title=cfg.name))
    write_atomic(art.convergence_log, opt.log_text())
    art.summary = build_summary(cfg, p, opt, ms)
    write_atomic(art.summary_json, json.dumps(art.summary, indent=2, sort_keys=True) + "\n")
    return art


# --- plotting -------------------------------------------------------------------------

def _nice_step(span: float, target_ticks: int = 5) -> float:
    raw = span / max(target_ticks, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for m in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= m * mag:
            return m * mag
    return 10.0 * mag


def _num(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


CURVE_COLORS = ("#b2182b", "#2166ac", "#1b7837", "#762a83")


def emit_plot(years, series: dict[str, np.ndarray], window: tuple[int, int] | None = None,
              title: str = "", width: int = 720, height: int = 420) -> str:
    """Self-contained SVG line chart of ``series`` against ``years``.

    The y axis starts at zero (or the smallest value, if negative) and is
    auto-scaled to the finite values inside ``window``.  Non-finite points break
    a curve.  Output depends only on the inputs.
    """
    if not series:
        raise ValueError("nothing to plot")
    years = np.asarray(years, dtype=float)
    mask = np.ones(len(years), dtype=bool)
    if window is not None:
        mask = (years >= window[0]) & (years <= window[1])
    if not mask.any():
        raise ValueError("plot window contains no data")
    xs = years[mask]
    ys = {k: np.asarray(v, dtype=float)[mask] for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()])
    y_lo = min(0.0, float(finite.min())) if finite.size else 0.0
    y_hi = float(finite.max()) if finite.size else 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    y_step = _nice_step(y_hi - y_lo)
    y_lo = math.floor(y_lo / y_step) * y_step
    y_hi = math.ceil(y_hi / y_step) * y_step
    x_lo, x_hi = float(xs[0]), float(xs[-1])
    if x_hi == x_lo:
        x_hi = x_lo + 5.0
    x_step = _nice_step(x_hi - x_lo, 8)

    left, right, top, bottom = 70, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return top + (y_hi - y) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">'
                   f'{escape(title)}</text>')
    # grid and ticks
    n_y = int(round((y_hi - y_lo) / y_step))
    for k in range(n_y + 1):
        y = y_lo + k * y_step
        out.append(f'<line x1="{left}" y1="{py(y):.2f}" x2="{left + pw}" y2="{py(y):.2f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{py(y) + 4:.2f}" text-anchor="end">{_num(y)}</text>')
    x0 = math.ceil(x_lo / x_step) * x_step
    k = 0
    while x0 + k * x_step <= x_hi + 1e-9:
        x = x0 + k * x_step
        out.append(f'<line x1="{px(x):.2f}" y1="{top + ph}" x2="{px(x):.2f}" y2="{top + ph + 5}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{px(x):.2f}" y="{top + ph + 18}" text-anchor="middle">{_num(x)}</text>')
        k += 1
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">year</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">USD per tCO2</text>')
    # curves
    for i, (label, v) in enumerate(ys.items()):
        color = CURVE_COLORS[i % len(CURVE_COLORS)]
        segment: list[str] = []
        segments = []
        for x, y in zip(xs, v):
            if math.isfinite(y):
                segment.append(f"{px(x):.2f},{py(y):.2f}")
            elif segment:
                segments.append(segment)
                segment = []
        if segment:
            segments.append(segment)
        for seg in segments:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                       f'points="{" ".join(seg)}"><title>{escape(label)}</title></polyline>')
        ly = top + 16 + 18 * i
        out.append(f'<line x1="{left + 12}" y1="{ly}" x2="{left + 36}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + 42}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --- compare --------------------------------------------------------------------------

@dataclass
class Comparison:
    names: list[str]
    years: list[int]
    # name -> year -> (scc, smac, ratio)
    rows: dict[str, dict[int, tuple[float, float, float]]]
    flagged: dict[str, list[int]]
    horizons_differ: bool

    def max_ratio(self, name: str) -> float:
        vals = [r for _, _, r in self.rows[name].values() if math.isfinite(r)]
        return max(vals) if vals else math.nan

    def table(self) -> str:
        head = f"{'year':>6}"
        for n in self.names:
            head += f" | {n[:12]:>12} {'smac':>10} {'ratio':>8} "
        lines = [head, "-" * len(head)]
        for y in self.years:
            line = f"{y:>6}"
            for n in self.names:
                if y in self.rows[n]:
                    s, m, r = self.rows[n][y]
                    mark = "*" if y in self.flagged[n] else " "
                    line += f" | {s:>12.4g} {m:>10.4g} {r:>8.4f}{mark}"
                else:
                    line += f" | {'':>12} {'':>10} {'':>8} "
            lines.append(line)
        lines.append("")
        lines.append(f"* ratio outside [{RATIO_BAND[0]}, {RATIO_BAND[1]}]")
        for n in self.names:
            lines.append(f"{n}: max scc/smac {self.max_ratio(n):.4f}, "
                         f"{len(self.flagged[n])} flagged year(s)")
        if self.horizons_differ:
            lines.append("note: runs have different horizons")
        return "\n".join(lines) + "\n"


def compare(run_dirs) -> Comparison:
    if not run_dirs:
        raise ConfigError("compare needs at least one run directory")
    names, rows, flagged, horizons = [], {}, {}, set()
    for d in run_dirs:
        d = Path(d)
        path = d / "marginals.csv"
        if not path.exists():
            raise ConfigError(f"{d}: no marginals.csv")
        years, ms = read_marginals_csv(path.read_text(encoding="utf-8"))
        name = d.name
        k = 2
        while name in rows:
            name = f"{d.name}#{k}"
            k += 1
        names.append(name)
        ratio = ms.ratio
        rows[name] = {int(y): (float(ms.scc[i]), float(ms.smac[i]), float(ratio[i]))
                      for i, y in enumerate(years)}
        flagged[name] = [int(y) for i, y in enumerate(years)
                         if not (RATIO_BAND[0] <= ratio[i] <= RATIO_BAND[1])]
        horizons.add((int(years[0]), int(years[-1])) if len(years) else None)
    all_years = sorted({y for r in rows.values() for y in r})
    return Comparison(names, all_years, rows, flagged, len(horizons) > 1)


# --- command handlers -----------------------------------------------------------------

def _cmd_run(args) -> int:
    cfg = load_scenario(args.scenario, args.output_dir)
    art = run_scenario(cfg)
    s = art.summary
    print(f"{cfg.name}: W* = {s['w_star']:.10g}, kkt = {s['kkt_residual']:.3e}, "
          f"max scc/smac = {s['max_scc_over_smac']} in {s['year_of_max']}")
    if cfg.plot_window:
        print(f"  within {cfg.plot_window[0]}-{cfg.plot_window[1]}: "
              f"{s['max_scc_over_smac_in_window']} in {s['year_of_max_in_window']}")
    print(f"  artifacts in {art.directory}")
    if not art.converged:
        print(f"{cfg.name}: optimizer did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_compare(args) -> int:
    base = Path(args.output_dir)
    dirs = [d if Path(d).is_absolute() else base / d for d in args.runs]
    cmp = compare(dirs)
    text = cmp.table()
    sys.stdout.write(text)
    if args.report:
        write_atomic(base / args.report, text)
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    p = load_params(args.params)
    rng = np.random.default_rng(args.seed)
    lines, ok = [], True
    for k in range(args.points):
        s = rng.uniform(0.15, 0.35, p.t_max)
        mu = rng.uniform(0.05, 0.95, p.t_max) * np.minimum(1.0, p.pi35)
        rep = fd_check(p, Controls(s, mu), eps=args.eps, tolerance=args.tolerance)
        ok &= rep.passed
        lines.append(f"point {k + 1} (seed {args.seed})")
        lines.append(rep.table())
        lines.append("")
    text = "\n".join(lines)
    sys.stdout.write(text)
    write_atomic(Path(args.output_dir) / "gradcheck.txt", text)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _parse_periods(text: str) -> list[int]:
    try:
        periods = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--periods expects comma-separated integers, got {text!r}") from None
    if not periods:
        raise ConfigError("--periods is empty")
    return periods


def _cmd_oracle(args) -> int:
    cfg = load_scenario(args.scenario, args.output_dir)
    periods = _parse_periods(args.periods)
    p = cfg.load_params()
    for t in periods:
        if not 1 <= t <= p.t_max:
            raise ConfigError(f"period {t} outside 1..{p.t_max}")
    sc = cfg.constraints(p)
    base = optimize(p, sc)
    if not base.converged:
        print(f"{cfg.name}: base optimization did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    rows = ["period,year,delta_e,x_native,scc_oracle,scc_predicted,relative_gap"]
    print(f"{'period':>6} {'year':>5} {'scc (duals)':>14} {'scc (oracle)':>14} {'gap':>10}")
    years = p.years()
    for t in periods:
        try:
            r = oracle_compensation(p, sc, t, args.delta, args.tol, base=base)
        except NotConverged as exc:
            print(f"period {t}: {exc}", file=sys.stderr)
            return EXIT_NOT_CONVERGED
        except BisectionBracketError as exc:
            print(f"period {t}: {exc}", file=sys.stderr)
            return EXIT_CHECK_FAILED
        oracle_scc = r.scc_oracle(p.unit_scale)
        print(f"{t:>6} {years[t - 1]:>5} {r.scc_predicted:>14.6f} {oracle_scc:>14.6f} "
              f"{r.relative_gap:>10.3e}")
        rows.append(",".join([str(t), str(int(years[t - 1])), repr(r.delta_e), repr(r.x_native),
                              repr(oracle_scc), repr(r.scc_predicted), repr(r.relative_gap)]))
    write_atomic(cfg.run_dir / "oracle.csv", "\n".join(rows) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dicescc",
                                     description="SCC and SMAC from a DICE-type optimum.")
    parser.add_argument("--output-dir", default=".", help="root for all outputs (default: .)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="optimize one scenario and write its artifacts")
    run.add_argument("scenario", help="scenario file, or bundled name such as a_baseline")
    run.set_defaults(func=_cmd_run)

    cmp = sub.add_parser("compare", help="scc/smac table for finished runs")
    cmp.add_argument("runs", nargs="+", help="run directories (relative to --output-dir)")
    cmp.add_argument("--report", help="also write the table to this file")
    cmp.set_defaults(func=_cmd_compare)

    gc = sub.add_parser("gradcheck", help="adjoint vs central finite differences")
    gc.add_argument("params", help="parameter file, or dice2016 / desk")
    gc.add_argument("--points", type=int, default=1)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--eps", type=float, default=1e-5)
    gc.add_argument("--tolerance", type=float, default=1e-6)
    gc.set_defaults(func=_cmd_gradcheck)

    orc = sub.add_parser("oracle", help="re-optimization check of scc at chosen periods")
    orc.add_argument("scenario")
    orc.add_argument("--periods", default="2,5,10", help="comma-separated periods (1-based)")
    orc.add_argument("--delta", type=float, default=1e-3, help="emission bump, GtC")
    orc.add_argument("--tol", type=float, default=1e-10)
    orc.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "points", 1) < 1:
        parser.error("--points must be at least 1")
    if getattr(args, "eps", 1.0) <= 0:
        parser.error("--eps must be positive")
    try:
        return args.func(args)
    except (ConfigError, ParamsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
