"""Welfare maximization over savings and abatement rates.

The box ``0 <= s <= 1``, ``0 <= mu <= pi35`` is handled directly by the inner
solver (L-BFGS-B); the inequality constraints (per-period temperature cap and
cumulative industrial emissions cap) go through an augmented Lagrangian.
Every inner solve is finished by a few projected Newton steps on the free
variables with a finite-difference Hessian of the adjoint gradient, which
brings the projected gradient down to round-off level.

Sign conventions: the Lagrangian is ``L = W - sum_j lambda_j * g_j`` with
``g_j <= 0`` and ``lambda_j >= 0``; multipliers are reported in welfare units
per °C (temperature cap) and per GtC (cumulative cap).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .diffkernel import sweep
from .dynamics import Controls, SimulationDomainError, simulate
from .params import Params

log = logging.getLogger(__name__)


LOG_HEADER = "iter W kkt_residual max_violation penalty\n"


class NotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConstraints:
    temp_cap: float | None = None
    cumulative_cap_enabled: bool = True
    # (period, "s" | "mu", value), periods 1-based
    pinned_controls: tuple[tuple[int, str, float], ...] = ()

    def __post_init__(self):
        if self.temp_cap is not None and not self.temp_cap > 0:
            raise ValueError("temp_cap must be positive")
        pins = tuple((int(t), str(k), float(v)) for t, k, v in self.pinned_controls)
        for t, k, _ in pins:
            if k not in ("s", "mu"):
                raise ValueError(f"pinned control must be 's' or 'mu', got {k!r}")
        object.__setattr__(self, "pinned_controls", pins)

    @property
    def has_temp_cap(self) -> bool:
        return self.temp_cap is not None and math.isfinite(self.temp_cap)


@dataclass
class OptOptions:
    tol: float = 1e-8              # KKT residual, relative to max(1, |W|)
    feas_tol: float = 1e-7         # °C for the temperature cap
    cum_feas_tol: float = 1e-6     # GtC for the cumulative cap
    max_outer: int = 40
    max_inner: int = 20000
    initial_penalty: float = 10.0
    penalty_growth: float = 10.0
    theta: float = 0.25
    newton_steps: int = 8
    start: Controls | None = None
    log_path: str | Path | None = None


@dataclass(frozen=True, eq=False)
class Multipliers:
    temperature: np.ndarray   # per period; zeros without a cap
    cumulative: float

    def all_nonnegative(self) -> bool:
        return bool(np.all(self.temperature >= 0) and self.cumulative >= 0)


@dataclass(eq=False)
class OptResult:
    controls: Controls
    w_star: float
    ineq_multipliers: Multipliers
    kkt_residual: float
    stationarity: float
    complementarity: float
    max_violation: float
    iterations: int
    converged: bool
    log_lines: list[str] = field(default_factory=list)
    al_values: list[float] = field(default_factory=list)
    perturbations: tuple = ()

    def log_text(self) -> str:
        return LOG_HEADER + "".join(line + "\n" for line in self.log_lines)

    def active_temperature_periods(self, tol: float = 1e-12) -> list[int]:
        return [i + 1 for i, v in enumerate(self.ineq_multipliers.temperature) if v > tol]


def default_start(p: Params, sc: ScenarioConstraints | None = None) -> Controls:
    s = np.full(p.t_max, 0.25)
    mu = np.linspace(0.03, min(1.0, float(p.pi35[-1])), p.t_max)
    mu = np.minimum(mu, p.pi35)
    u = Controls(s, mu)
    if sc is not None:
        u = apply_pins(u, sc)
    return u


def apply_pins(u: Controls, sc: ScenarioConstraints) -> Controls:
    if not sc.pinned_controls:
        return u
    s, mu = u.s.copy(), u.mu.copy()
    for t, kind, value in sc.pinned_controls:
        (s if kind == "s" else mu)[t - 1] = value
    return Controls(s, mu)


def project(u: Controls, p: Params) -> Controls:
    return Controls(np.clip(u.s, 0.0, 1.0), np.clip(u.mu, 0.0, p.pi35))


def box_bounds(p: Params, sc: ScenarioConstraints) -> tuple[np.ndarray, np.ndarray]:
    n = p.t_max
    lb = np.zeros(2 * n)
    ub = np.concatenate([np.ones(n), np.asarray(p.pi35, dtype=float)])
    for t, kind, value in sc.pinned_controls:
        if not 1 <= t <= n:
            raise ValueError(f"pinned period {t} outside 1..{n}")
        j = t - 1 if kind == "s" else n + t - 1
        if not lb[j] <= value <= ub[j]:
            raise ValueError(f"pin {kind}({t}) = {value} outside its bounds")
        lb[j] = ub[j] = value
    return lb, ub


def al_update(multipliers, violations, penalty: float, previous_violation: float | None = None,
              growth: float = 10.0, theta: float = 0.25):
    """One outer step: ``lambda' = max(0, lambda + penalty * g)``.

    The penalty is multiplied by ``growth`` when the worst violation did not
    shrink below ``theta`` times the previous one.
    """
    if not penalty > 0:
        raise ValueError("penalty must be positive")
    lam = np.maximum(0.0, np.asarray(multipliers, dtype=float) + penalty * np.asarray(violations, dtype=float))
    worst = float(np.max(np.maximum(np.asarray(violations, dtype=float), 0.0), initial=0.0))
    if previous_violation is not None and worst > 0 and worst > theta * previous_violation:
        penalty = penalty * growth
    return lam, penalty


def projected_gradient(grad: np.ndarray, x: np.ndarray, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    """Projected gradient of a maximization: components pushing out of the box vanish."""
    pg = grad.copy()
    pg[(x <= lb) & (grad < 0)] = 0.0
    pg[(x >= ub) & (grad > 0)] = 0.0
    pg[lb == ub] = 0.0
    return pg


class _Problem:
    """Augmented Lagrangian of one scenario in normalized units (minimized)."""

    def __init__(self, p: Params, sc: ScenarioConstraints, perturbations, wscale: float):
        self.p = p
        self.sc = sc
        self.perturbations = tuple(perturbations)
        self.wscale = wscale
        self.n = p.t_max
        self.use_temp = sc.has_temp_cap
        self.use_cum = sc.cumulative_cap_enabled
        self.lam_t = np.zeros(self.n)
        self.lam_e = 0.0
        self.rho = 1.0

    def constraints(self, tr) -> tuple[np.ndarray, float]:
        g_t = tr.T_AT - self.sc.temp_cap if self.use_temp else np.full(self.n, -np.inf)
        g_e = (float(np.sum(tr.E_ind)) - self.p.pi19) / self.p.pi19 if self.use_cum else -np.inf
        return g_t, g_e

    def _shifted(self, tr):
        g_t, g_e = self.constraints(tr)
        a_t = np.maximum(0.0, self.lam_t + self.rho * g_t) if self.use_temp else np.zeros(self.n)
        a_e = max(0.0, self.lam_e + self.rho * g_e) if self.use_cum else 0.0
        return g_t, g_e, a_t, a_e

    def fun_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        u = Controls.from_vector(x)
        try:
            tr = simulate(self.p, u, self.perturbations)
        except SimulationDomainError:
            return 1e30, np.zeros_like(x)
        g_t, g_e, a_t, a_e = self._shifted(tr)
        penalty = 0.0
        if self.use_temp:
            penalty += float(np.sum(a_t * a_t - self.lam_t * self.lam_t)) / (2 * self.rho)
        if self.use_cum:
            penalty += (a_e * a_e - self.lam_e * self.lam_e) / (2 * self.rho)
        sw = sweep(self.p, u, self.perturbations, temp_seed=-self.wscale * a_t,
                   eind_seed=-self.wscale * a_e / self.p.pi19, tr=tr)
        f = -tr.W / self.wscale + penalty
        grad = -np.concatenate([sw.d_s, sw.d_mu]) / self.wscale
        return f, grad

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.fun_grad(x)[1]


def _newton_polish(prob: _Problem, x: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                   steps: int) -> np.ndarray:
    """Projected Newton steps on the free variables of the box-constrained AL."""
    f, g = prob.fun_grad(x)
    pg = -projected_gradient(-g, x, lb, ub)
    for _ in range(steps):
        free = (lb < ub) & ~((x <= lb) & (g > 0)) & ~((x >= ub) & (g < 0))
        idx = np.flatnonzero(free)
        if idx.size == 0 or np.max(np.abs(pg)) == 0.0:
            break
        H = np.empty((idx.size, idx.size))
        for col, j in enumerate(idx):
            h = 1e-6 * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            if x[j] + h > ub[j]:
                xm[j] -= h
                H[:, col] = (g - prob.grad(xm))[idx] / h
            elif x[j] - h < lb[j]:
                xp[j] += h
                H[:, col] = (prob.grad(xp) - g)[idx] / h
            else:
                xp[j] += h
                xm[j] -= h
                H[:, col] = (prob.grad(xp) - prob.grad(xm))[idx] / (2 * h)
        H = 0.5 * (H + H.T)
        evals, evecs = np.linalg.eigh(H)
        floor = 1e-10 * max(float(np.max(np.abs(evals))), 1e-300)
        evals = np.maximum(evals, floor)
        step = np.zeros_like(x)
        step[idx] = -evecs @ ((evecs.T @ g[idx]) / evals)
        accepted = False
        for alpha in (1.0, 0.5, 0.25, 0.125):
            x_new = np.clip(x + alpha * step, lb, ub)
            f_new, g_new = prob.fun_grad(x_new)
            pg_new = -projected_gradient(-g_new, x_new, lb, ub)
            if f_new <= f + 1e-13 * abs(f) and np.max(np.abs(pg_new)) < np.max(np.abs(pg)):
                x, f, g, pg = x_new, f_new, g_new, pg_new
                accepted = True
                break
        if not accepted:
            break
    return x


def _inner_solve(prob: _Problem, x: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                 opts: OptOptions) -> tuple[np.ndarray, int]:
    res = minimize(prob.fun_grad, x, jac=True, method="L-BFGS-B",
                   bounds=list(zip(lb, ub)),
                   options=dict(maxiter=opts.max_inner, maxcor=30, ftol=1e-16,
                                gtol=1e-12, maxls=60))
    x = np.clip(res.x, lb, ub)
    if opts.newton_steps:
        x = _newton_polish(prob, x, lb, ub, opts.newton_steps)
    return x, int(res.nit)


def optimize(p: Params, sc: ScenarioConstraints | None = None, opts: OptOptions | None = None,
             perturbations=()) -> OptResult:
    """Maximize W subject to the box and the scenario's inequality constraints.

    Deterministic for identical inputs.  A result with ``converged=False`` is
    returned (not raised) when the iteration limit is hit; callers that need a
    converged optimum raise :class:`NotConverged` themselves.
    """
    sc = sc or ScenarioConstraints()
    opts = opts or OptOptions()
    lb, ub = box_bounds(p, sc)
    u0 = opts.start if opts.start is not None else default_start(p, sc)
    x = np.clip(apply_pins(u0, sc).as_vector(), lb, ub)
    w0 = simulate(p, Controls.from_vector(x), perturbations).W
    prob = _Problem(p, sc, perturbations, wscale=max(1.0, abs(w0)))
    prob.rho = opts.initial_penalty

    lines: list[str] = []
    al_values: list[float] = []
    prev_violation = None
    converged = False
    total_iters = 0
    state = None
    for outer in range(1, opts.max_outer + 1):
        x, nit = _inner_solve(prob, x, lb, ub, opts)
        total_iters += nit
        f_al, _ = prob.fun_grad(x)
        al_values.append(-f_al * prob.wscale)
        state = _kkt_state(prob, x, lb, ub, opts)
        lines.append(f"{outer} {state['W']:.17g} {state['kkt']:.6e} {state['violation']:.6e} "
                     f"{prob.rho:.6e}")
        log.debug(lines[-1])
        if state["feasible"] and state["kkt"] <= opts.tol:
            converged = True
            break
        violations = np.append(np.where(np.isfinite(state["g_t"]), state["g_t"], -1.0),
                               state["g_e"] if np.isfinite(state["g_e"]) else -1.0)
        lam_old = np.append(prob.lam_t, prob.lam_e)
        lam_new, rho_new = al_update(lam_old, violations, prob.rho, prev_violation,
                                     opts.penalty_growth, opts.theta)
        prev_violation = state["violation"] if state["violation"] > 0 else None
        prob.lam_t = lam_new[:-1] if prob.use_temp else prob.lam_t
        prob.lam_e = float(lam_new[-1]) if prob.use_cum else 0.0
        prob.rho = rho_new

    mult = Multipliers(state["lam_t"] * prob.wscale,
                       state["lam_e"] * prob.wscale / p.pi19)
    result = OptResult(
        controls=Controls.from_vector(x),
        w_star=state["W"],
        ineq_multipliers=mult,
        kkt_residual=state["kkt"],
        stationarity=state["stationarity"],
        complementarity=state["complementarity"],
        max_violation=state["violation"],
        iterations=total_iters,
        converged=converged,
        log_lines=lines,
        al_values=al_values,
        perturbations=tuple(perturbations),
    )
    if opts.log_path is not None:
        Path(opts.log_path).write_text(result.log_text(), encoding="utf-8")
    return result


def _kkt_state(prob: _Problem, x, lb, ub, opts: OptOptions) -> dict:
    """First-order multipliers and KKT measures at the end of an inner solve."""
    p = prob.p
    u = Controls.from_vector(x)
    tr = simulate(p, u, prob.perturbations)
    g_t, g_e, a_t, a_e = prob._shifted(tr)
    sw = sweep(p, u, prob.perturbations, temp_seed=-prob.wscale * a_t,
               eind_seed=-prob.wscale * a_e / p.pi19, tr=tr)
    scale = max(1.0, abs(tr.W))
    pg = projected_gradient(np.concatenate([sw.d_s, sw.d_mu]), x, lb, ub)
    stationarity = float(np.max(np.abs(pg))) / scale
    comp = 0.0
    viol_t = 0.0
    viol_e = 0.0
    if prob.use_temp:
        viol_t = float(np.max(np.maximum(g_t, 0.0)))
        comp = max(comp, float(np.max(a_t * np.abs(g_t))) * prob.wscale / scale)
    if prob.use_cum:
        viol_e = max(0.0, g_e) * p.pi19
        comp = max(comp, a_e * abs(g_e) * prob.wscale / scale)
    feasible = viol_t <= opts.feas_tol and viol_e <= opts.cum_feas_tol
    return dict(W=tr.W, kkt=max(stationarity, comp), stationarity=stationarity,
                complementarity=comp, violation=max(viol_t, viol_e), feasible=feasible,
                g_t=g_t, g_e=g_e, lam_t=a_t, lam_e=a_e)
