"""Equation marginal values, SCC, SMAC and the re-optimization oracle.

Marginals are the envelope sensitivities of the Lagrangian at a converged
optimum: one adjoint sweep with the temperature and cumulative-emission
multipliers as seeds gives the derivative of the optimal value with respect
to a right-hand-side addition to the emissions or consumption equation of any
period.  With a binding temperature cap the multiplier terms matter; dropping
them gives the fixed-control sensitivity of W alone, which the oracle shows is
the wrong dual.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .diffkernel import sweep
from .dynamics import Perturbation, Target, fmt17
from .optimizer import NotConverged, OptOptions, OptResult, ScenarioConstraints, optimize
from .params import Params

GAP_FLOOR = 1e-6   # $/tCO2; denominator floor of the oracle's relative gap


class DegenerateDual(ZeroDivisionError):
    def __init__(self, period: int, value: float):
        self.period = period
        super().__init__(f"period {period}: consumption marginal {value!r} too small")


class BisectionBracketError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MarginalSeries:
    eeq_m: np.ndarray   # welfare per GtC added to E(t)
    cc_m: np.ndarray    # welfare per trillion USD added to C(t)
    scc: np.ndarray     # USD per tCO2
    smac: np.ndarray    # USD per tCO2

    @property
    def ratio(self) -> np.ndarray:
        """scc/smac; NaN where smac is zero."""
        out = np.full(len(self.scc), np.nan)
        ok = self.smac > 0
        out[ok] = self.scc[ok] / self.smac[ok]
        return out

    def max_ratio(self, years=None, window=None) -> tuple[float, int | None]:
        """Largest finite scc/smac, optionally within a (from, to) year window.

        Returns (value, year) where ``year`` is None when ``years`` is not given.
        """
        r = self.ratio
        mask = np.isfinite(r)
        if window is not None:
            y = np.asarray(years)
            mask &= (y >= window[0]) & (y <= window[1])
        if not mask.any():
            return math.nan, None
        idx = np.flatnonzero(mask)
        j = int(idx[np.argmax(r[idx])])
        return float(r[j]), (int(years[j]) if years is not None else None)

    def to_csv(self, years) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        r = self.ratio
        for i, year in enumerate(years):
            w.writerow([str(int(year)), fmt17(self.eeq_m[i]), fmt17(self.cc_m[i]),
                        fmt17(self.scc[i]), fmt17(self.smac[i]), fmt17(r[i])])
        return buf.getvalue()


CSV_COLUMNS = ("year", "eeq_m", "cc_m", "scc", "smac", "scc_over_smac")


def read_marginals_csv(text: str) -> tuple[np.ndarray, MarginalSeries]:
    """Inverse of :meth:`MarginalSeries.to_csv`."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError("not a marginals CSV (header mismatch)")
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float).reshape(-1, 6)
    return data[:, 0].astype(int), MarginalSeries(data[:, 1], data[:, 2], data[:, 3], data[:, 4])


@dataclass(frozen=True)
class OracleResult:
    period: int
    delta_e: float          # GtC added to E(period)
    x_native: float         # trillion USD added to C(period) restoring the optimal value
    x_compensating: float   # x_native / delta_e, trillion USD per GtC
    scc_predicted: float    # USD per tCO2 from the duals
    relative_gap: float
    evaluations: int

    def scc_oracle(self, unit_scale: float) -> float:
        return self.x_compensating * unit_scale


def _require_converged(opt: OptResult) -> None:
    if not opt.converged:
        raise NotConverged(f"optimum not converged (kkt residual {opt.kkt_residual:.3e})")


def _lagrangian_sweep(p: Params, sc: ScenarioConstraints, opt: OptResult, strict: bool = True):
    if strict:
        _require_converged(opt)
    temp_seed = -opt.ineq_multipliers.temperature if sc.has_temp_cap else None
    eind_seed = -opt.ineq_multipliers.cumulative if sc.cumulative_cap_enabled else 0.0
    return sweep(p, opt.controls, opt.perturbations, temp_seed=temp_seed, eind_seed=eind_seed)


def _check_period(p: Params, t: int) -> None:
    if not 1 <= t <= p.t_max:
        raise ValueError(f"period {t} outside 1..{p.t_max}")


def marginal_emissions(p: Params, sc: ScenarioConstraints, opt: OptResult, t: int) -> float:
    """d V / d a for an addition ``a`` (GtC) to the emissions equation of period ``t``."""
    _check_period(p, t)
    return float(_lagrangian_sweep(p, sc, opt).d_e[t - 1])


def marginal_consumption(p: Params, sc: ScenarioConstraints, opt: OptResult, t: int) -> float:
    """d V / d a for an addition ``a`` (trillion USD) to the consumption equation of period ``t``."""
    _check_period(p, t)
    return float(_lagrangian_sweep(p, sc, opt).d_c[t - 1])


def scc(eeq_m, cc_m, unit_scale: float) -> np.ndarray:
    """Solve ``eeq_m + (scc / unit_scale) * cc_m = 0`` period by period."""
    eeq_m = np.atleast_1d(np.asarray(eeq_m, dtype=float))
    cc_m = np.atleast_1d(np.asarray(cc_m, dtype=float))
    tiny = np.abs(cc_m) < 1e-300
    if tiny.any():
        j = int(np.argmax(tiny))
        raise DegenerateDual(j + 1, float(cc_m[j]))
    # adding 0.0 turns -0.0 into 0.0
    return -unit_scale * eeq_m / cc_m + 0.0


def smac(opt: OptResult | np.ndarray, p: Params) -> np.ndarray:
    """``c1(t) * mu(t)**c2`` at the optimal abatement rates."""
    mu = opt.controls.mu if isinstance(opt, OptResult) else np.asarray(opt, dtype=float)
    return np.asarray(p.c1) * mu ** p.c2


def marginal_series(p: Params, sc: ScenarioConstraints, opt: OptResult,
                    strict: bool = True) -> MarginalSeries:
    """All four series in one sweep.  ``strict=False`` accepts an unconverged
    iterate (used to still write flagged artifacts)."""
    sw = _lagrangian_sweep(p, sc, opt, strict)
    return MarginalSeries(sw.d_e, sw.d_c, scc(sw.d_e, sw.d_c, p.unit_scale), smac(opt, p))


def oracle_compensation(p: Params, sc: ScenarioConstraints | None, t: int, delta_e: float = 1e-3,
                        tol: float = 1e-10, base: OptResult | None = None,
                        opts: OptOptions | None = None) -> OracleResult:
    """Find the consumption addition that offsets ``delta_e`` extra emissions at period ``t``.

    The perturbed problem is re-optimized (warm-started from the base optimum)
    for each trial ``x``; ``V(x) - V(0)`` is increasing in ``x``, so the root
    is bracketed in ``[0, x_max]`` and located with Brent's method.  The root is
    refined well past ``|V(x) - V(0)| <= tol * |V(0)|`` so that the returned
    ``x`` reflects the first-order regime rather than the stopping tolerance.
    """
    sc = sc or ScenarioConstraints()
    opts = opts or OptOptions()
    _check_period(p, t)
    if not math.isfinite(delta_e) or delta_e < 0:
        raise ValueError("delta_e must be finite and non-negative")
    if base is None:
        base = optimize(p, sc, opts)
    _require_converged(base)
    sw = _lagrangian_sweep(p, sc, base)
    eeq, cc = float(sw.d_e[t - 1]), float(sw.d_c[t - 1])
    predicted = float(scc(eeq, cc, p.unit_scale)[0])

    def gap(x_comp: float) -> float:
        return abs(x_comp * p.unit_scale - predicted) / max(abs(predicted), GAP_FLOOR)

    if delta_e == 0.0:
        return OracleResult(t, 0.0, 0.0, 0.0, predicted, gap(0.0), 0)

    v0 = base.w_star
    warm = OptOptions(**{**opts.__dict__, "start": base.controls, "log_path": None})
    count = 0

    def excess(x: float) -> float:
        nonlocal count
        count += 1
        perts = (Perturbation(Target.EMISSIONS, t, delta_e), Perturbation(Target.CONSUMPTION, t, x))
        r = optimize(p, sc, warm, perturbations=perts)
        if not r.converged:
            raise NotConverged(f"perturbed problem at period {t}, x={x!r} did not converge")
        return r.w_star - v0

    f_lo = excess(0.0)
    if abs(f_lo) <= tol * abs(v0) and f_lo >= 0:
        return OracleResult(t, delta_e, 0.0, 0.0, predicted, gap(0.0), count)
    x_hi = 10.0 * abs(eeq / cc) * delta_e if cc != 0 else delta_e
    x_hi = max(x_hi, 1e-12)
    f_hi = excess(x_hi)
    doublings = 0
    while f_hi < 0:
        if doublings == 12:
            raise BisectionBracketError(f"no sign change in [0, {x_hi!r}] at period {t}")
        x_hi *= 2.0
        f_hi = excess(x_hi)
        doublings += 1
    if f_lo > 0:
        raise BisectionBracketError(f"V already exceeds the base optimum at x=0, period {t}")
    root = brentq(excess, 0.0, x_hi, xtol=1e-15 * x_hi, rtol=1e-13, maxiter=200)
    if abs(excess(root)) > tol * abs(v0):
        raise NotConverged(f"compensation at period {t} missed the value tolerance")
    x_comp = root / delta_e
    return OracleResult(t, delta_e, root, x_comp, predicted, gap(x_comp), count)
