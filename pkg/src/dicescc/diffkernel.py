"""Reverse-mode sensitivities of welfare, derived by hand per recursion.

One backward sweep over a stored trajectory yields the derivative of

    J = W + sum_t temp_seed[t] * T_AT(t) + eind_seed * sum_t E_ind(t)

with respect to both controls of every period and to right-hand-side
additions of the emissions and consumption equations of every period.  With
zero seeds this is the gradient of W; with seeds equal to minus the
inequality multipliers it is the gradient of the Lagrangian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import LN2, Controls, Perturbation, Target, Trajectory, simulate
from .params import Params


@dataclass(frozen=True, eq=False)
class Gradient:
    d_s: np.ndarray
    d_mu: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.d_s, self.d_mu])


@dataclass(frozen=True)
class RhsSensitivity:
    target: Target
    period: int
    value: float


@dataclass(frozen=True, eq=False)
class Sweep:
    """Everything one backward pass produces."""

    value: float
    d_s: np.ndarray
    d_mu: np.ndarray
    d_e: np.ndarray   # dJ/d(emissions RHS addition) per period
    d_c: np.ndarray   # dJ/d(consumption RHS addition) per period
    trajectory: Trajectory

    @property
    def gradient(self) -> Gradient:
        return Gradient(self.d_s, self.d_mu)


def sweep(p: Params, u: Controls, perturbations=(), temp_seed=None, eind_seed: float = 0.0,
          tr: Trajectory | None = None) -> Sweep:
    if tr is None:
        tr = simulate(p, u, perturbations)
    n = p.t_max
    w_t = [0.0] * n if temp_seed is None else [float(x) for x in temp_seed]
    s, mu = u.s.tolist(), u.mu.tolist()
    yg_, q_, c_ = tr.Y_gross.tolist(), tr.Q.tolist(), tr.c.tolist()
    om_, lam_, m_at_ = tr.Omega.tolist(), tr.Lambda.tolist(), tr.M_AT.tolist()
    k_ = [p.k0] + tr.K.tolist()
    t_at_ = [p.t_at0] + tr.T_AT.tolist()
    pi1, pi10, pi12 = p.pi1.tolist(), p.pi10.tolist(), p.pi12.tolist()
    pi14, pi15, pi17 = p.pi14.tolist(), p.pi15.tolist(), p.pi17.tolist()
    pi2, pi3, pi5, pi8, pi9, pi11 = p.pi2, p.pi3, p.pi5, p.pi8, p.pi9, p.pi11
    pi13, pi16, pi18 = p.pi13, p.pi16, p.pi18
    pi21, pi22, pi23, pi24, pi25, pi26, pi27 = p.pi21, p.pi22, p.pi23, p.pi24, p.pi25, p.pi26, p.pi27
    pi28, pi31, pi32, pi33, pi34 = p.pi28, p.pi31, p.pi32, p.pi33, p.pi34
    a_tt = 1.0 - pi31 * pi32 - pi31 * pi33

    d_s = [0.0] * n
    d_mu = [0.0] * n
    d_e = [0.0] * n
    d_c = [0.0] * n
    # adjoints of the states produced by the period being processed
    gK = gMAT = gMUP = gMLO = gTL = 0.0
    gT = 0.0
    for i in range(n - 1, -1, -1):
        gT += w_t[i]
        k = k_[i]
        t_prev = t_at_[i]
        # temperatures
        dF = gT * pi31
        dTp = gT * a_tt + gTL * pi34
        dTLp = gT * pi31 * pi33 + gTL * (1.0 - pi34)
        # forcing -> atmospheric carbon of this period
        gM = gMAT + dF * pi28 / (m_at_[i] * LN2)
        d_e[i] = gM
        dMATp = gM * pi21 + gMUP * pi23
        dMUPp = gM * pi22 + gMUP * pi24 + gMLO * pi26
        dMLOp = gMUP * pi25 + gMLO * pi27
        # industrial emissions
        dEind = gM + eind_seed
        e_scale = pi14[i] * pi15[i] * pi17[i] ** pi18
        d_mu_i = -dEind * e_scale * k ** pi16
        dKp = dEind * (1.0 - mu[i]) * e_scale * pi16 * k ** (pi16 - 1.0)
        # utility
        disc = pi3 ** (-(i + 1))
        dC = disc * pi1[i] * c_[i] ** (pi2 - 1.0) / pi12[i]
        d_c[i] = dC
        # capital update and savings split
        dI = gK
        dKp += -pi13 * gK
        dQ = s[i] * dI + (1.0 - s[i]) * dC
        d_s[i] = q_[i] * (dI - dC)
        # output
        yg, om, lam = yg_[i], om_[i], lam_[i]
        dLam = -dQ * yg / (1.0 + om)
        dYg = dQ * (1.0 - lam) / (1.0 + om)
        dOm = -dQ * q_[i] / (1.0 + om)
        if mu[i] != 0.0:
            d_mu_i += dLam * pi10[i] * pi11 * mu[i] ** (pi11 - 1.0)
        d_mu[i] = d_mu_i
        dTp += dOm * (pi8 + 2.0 * pi9 * t_prev)
        dKp += dYg * pi5 * yg / k
        gK, gMAT, gMUP, gMLO, gT, gTL = dKp, dMATp, dMUPp, dMLOp, dTp, dTLp

    value = tr.W
    if temp_seed is not None:
        value += float(np.dot(w_t, tr.T_AT))
    if eind_seed:
        value += eind_seed * float(np.sum(tr.E_ind))
    return Sweep(value, np.array(d_s), np.array(d_mu), np.array(d_e), np.array(d_c), tr)


def grad_controls(p: Params, u: Controls, perturbations=()) -> Gradient:
    """dW/ds(t) and dW/dmu(t) for every period."""
    return sweep(p, u, perturbations).gradient


def sens_rhs(p: Params, u: Controls, target, period: int, perturbations=()) -> RhsSensitivity:
    """dW/da for an addition ``a`` to one equation's right-hand side, controls held fixed.

    At a converged unconstrained optimum this is the equation's marginal value;
    for constrained optima use :mod:`dicescc.marginals`, which seeds the
    sweep with the inequality multipliers.
    """
    target = Target.parse(target)
    if not 1 <= period <= p.t_max:
        raise ValueError(f"period {period} outside 1..{p.t_max}")
    sw = sweep(p, u, perturbations)
    vec = sw.d_e if target is Target.EMISSIONS else sw.d_c
    return RhsSensitivity(target, period, float(vec[period - 1]))


# --- finite-difference verification -------------------------------------------------

@dataclass
class FDBlock:
    name: str
    max_rel_error: float
    worst_index: int
    n_checked: int
    passed: bool


@dataclass
class FDReport:
    eps: float
    tolerance: float
    blocks: list[FDBlock]

    @property
    def max_rel_error(self) -> float:
        return max(b.max_rel_error for b in self.blocks)

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    def table(self) -> str:
        lines = [f"{'block':<15} {'checked':>7} {'max rel err':>12} {'worst':>6}  status",
                 "-" * 52]
        for b in self.blocks:
            status = "ok" if b.passed else "FLAGGED"
            lines.append(f"{b.name:<15} {b.n_checked:>7} {b.max_rel_error:>12.3e} "
                         f"{b.worst_index:>6}  {status}")
        lines.append(f"eps={self.eps:g}  tolerance={self.tolerance:g}")
        return "\n".join(lines)


def _block_error(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, int]:
    # normwise relative error: max |a - f| over the block, relative to max |f|
    diff = np.abs(analytic - numeric)
    scale = max(float(np.max(np.abs(numeric))), 1e-300)
    j = int(np.argmax(diff))
    return float(diff[j]) / scale, j


def fd_check(p: Params, u: Controls, eps: float = 1e-5, tolerance: float = 1e-6,
             periods=None, sweep_fn=None, perturbations=()) -> FDReport:
    """Compare adjoint derivatives against central differences of ``simulate``.

    Every control coordinate is checked; the two right-hand-side targets are
    checked at ``periods`` (default: first, middle and last period).  The step
    for a coordinate with value v is ``eps * max(1, |v|)``; for an equation it
    is scaled by that equation's right-hand side (E(t) or C(t)).  ``sweep_fn`` lets a
    caller substitute another adjoint, e.g. to confirm that a broken one is
    flagged.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    sweep_fn = sweep_fn or sweep
    n = p.t_max
    if periods is None:
        periods = sorted({1, (n + 1) // 2, n})
    sw = sweep_fn(p, u, perturbations)

    def W_at(x, extra=()):
        return simulate(p, Controls.from_vector(x), tuple(perturbations) + tuple(extra)).W

    x0 = u.as_vector()
    fd = np.empty(2 * n)
    for j in range(2 * n):
        h = eps * max(1.0, abs(x0[j]))
        xp = x0.copy()
        xm = x0.copy()
        xp[j] += h
        xm[j] -= h
        fd[j] = (W_at(xp) - W_at(xm)) / (2 * h)

    blocks = []
    for name, analytic, numeric in (("s", sw.d_s, fd[:n]), ("mu", sw.d_mu, fd[n:])):
        err, j = _block_error(analytic, numeric)
        blocks.append(FDBlock(name, err, j + 1, n, err <= tolerance))
    for target, vec in ((Target.EMISSIONS, sw.d_e), (Target.CONSUMPTION, sw.d_c)):
        analytic = np.array([vec[t - 1] for t in periods])
        numeric = np.empty(len(periods))
        rhs = sw.trajectory.E if target is Target.EMISSIONS else sw.trajectory.C
        for k, t in enumerate(periods):
            h = eps * max(1.0, abs(rhs[t - 1]))
            up = W_at(x0, [Perturbation(target, t, h)])
            dn = W_at(x0, [Perturbation(target, t, -h)])
            numeric[k] = (up - dn) / (2 * h)
        err, j = _block_error(analytic, numeric)
        blocks.append(FDBlock(target.value, err, periods[j], len(periods), err <= tolerance))
    return FDReport(eps, tolerance, blocks)
