"""Forward simulation of the climate-economy recursions.

Timing: production, damages and industrial emissions of period t use the
capital stock ``K(t-1)`` and surface temperature ``T_AT(t-1)`` carried in from
the previous period (``K(0)``, ``T_AT(0)`` are the initial constants).  Period t
then produces ``K(t)``, the carbon boxes ``M(t)`` (which include ``E(t)``) and the
temperatures ``T(t)``.  Everything else is the literal recursion, including the
capital update ``K(t) = I(t) - pi13 * K(t-1)`` with a negative ``pi13``.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .params import Params

LN2 = math.log(2.0)


class SimulationDomainError(ArithmeticError):
    def __init__(self, period: int, message: str):
        self.period = period
        super().__init__(f"period {period}: {message}")


class NonPositiveCarbon(SimulationDomainError):
    pass


class Target(enum.Enum):
    EMISSIONS = "EmissionsEq"
    CONSUMPTION = "ConsumptionEq"

    @classmethod
    def parse(cls, value: str | Target) -> Target:
        if isinstance(value, Target):
            return value
        for member in cls:
            if value in (member.value, member.name, member.name.lower()):
                return member
        raise ValueError(f"unknown perturbation target {value!r}")


@dataclass(frozen=True)
class Perturbation:
    """Right-hand-side addition to the emissions or consumption equation.

    ``period`` is 1-based.  ``amount`` is in GtC per period for emissions and
    trillion USD per period for consumption.
    """

    target: Target
    period: int
    amount: float

    def __post_init__(self):
        object.__setattr__(self, "target", Target.parse(self.target))
        if not math.isfinite(self.amount):
            raise ValueError("perturbation amount must be finite")


@dataclass(frozen=True, eq=False)
class Controls:
    s: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        s = np.array(self.s, dtype=float)
        mu = np.array(self.mu, dtype=float)
        if s.shape != mu.shape or s.ndim != 1:
            raise ValueError("s and mu must be 1-d arrays of equal length")
        s.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def from_vector(cls, x: np.ndarray) -> Controls:
        n = len(x) // 2
        return cls(x[:n], x[n:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.s, self.mu])

    def check(self, p: Params, tol: float = 0.0) -> None:
        if len(self.s) != p.t_max:
            raise ValueError(f"controls have {len(self.s)} periods, params {p.t_max}")
        if np.any(self.s < -tol) or np.any(self.s > 1 + tol):
            raise ValueError("savings rate outside [0, 1]")
        if np.any(self.mu < -tol) or np.any(self.mu > p.pi35 + tol):
            raise ValueError("abatement rate outside [0, pi35]")


SERIES = ("U", "R", "Q", "Omega", "Lambda", "C", "I", "c", "K", "E_ind", "E",
          "M_AT", "M_UP", "M_LO", "F", "T_AT", "T_LO")


@dataclass(frozen=True, eq=False)
class Trajectory:
    U: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    Omega: np.ndarray
    Lambda: np.ndarray
    C: np.ndarray
    I: np.ndarray  # noqa: E741
    c: np.ndarray
    K: np.ndarray
    E_ind: np.ndarray
    E: np.ndarray
    M_AT: np.ndarray
    M_UP: np.ndarray
    M_LO: np.ndarray
    F: np.ndarray
    T_AT: np.ndarray
    T_LO: np.ndarray
    W: float
    # gross production per period, kept for the adjoint sweep
    Y_gross: np.ndarray = field(repr=False, default=None)

    @property
    def t_max(self) -> int:
        return len(self.U)


def damage_fraction(t_at, p: Params):
    return p.pi8 * t_at + p.pi9 * t_at * t_at


def abatement_fraction(mu, t: int, p: Params):
    """Abatement cost share at (1-based) period ``t``."""
    return p.pi10[t - 1] * mu ** p.pi11


def carbon_step(m_at: float, m_up: float, m_lo: float, e: float, p: Params) -> tuple[float, float, float]:
    return (
        e + p.pi21 * m_at + p.pi22 * m_up,
        p.pi23 * m_at + p.pi24 * m_up + p.pi25 * m_lo,
        p.pi26 * m_up + p.pi27 * m_lo,
    )


def forcing(m_at: float, t: int, p: Params) -> float:
    if not m_at > 0:
        raise NonPositiveCarbon(t, f"atmospheric carbon {m_at} <= 0")
    return p.pi28 * math.log(m_at / p.pi29) / LN2 + p.pi30[t - 1]


def temperature_step(t_at: float, t_lo: float, m_at: float, t: int, p: Params) -> tuple[float, float]:
    """Advance temperatures into period ``t`` given that period's atmospheric carbon."""
    f = forcing(m_at, t, p)
    return (
        t_at + p.pi31 * (f - p.pi32 * t_at - p.pi33 * (t_at - t_lo)),
        t_lo + p.pi34 * (t_at - t_lo),
    )


def _rhs_additions(perturbations, t_max: int) -> tuple[list[float], list[float]]:
    add_e = [0.0] * t_max
    add_c = [0.0] * t_max
    for pert in perturbations:
        if not 1 <= pert.period <= t_max:
            raise ValueError(f"perturbation period {pert.period} outside 1..{t_max}")
        if pert.target is Target.EMISSIONS:
            add_e[pert.period - 1] += pert.amount
        else:
            add_c[pert.period - 1] += pert.amount
    return add_e, add_c


def simulate(p: Params, u: Controls, perturbations=()) -> Trajectory:
    """Run all periods in order and return every series plus welfare ``W``."""
    n = p.t_max
    if len(u.s) != n:
        raise ValueError(f"controls have {len(u.s)} periods, params {n}")
    add_e, add_c = _rhs_additions(perturbations, n)
    s, mu = u.s.tolist(), u.mu.tolist()
    pi1, pi4, pi6, pi10 = p.pi1.tolist(), p.pi4.tolist(), p.pi6.tolist(), p.pi10.tolist()
    pi12, pi14, pi15, pi17 = p.pi12.tolist(), p.pi14.tolist(), p.pi15.tolist(), p.pi17.tolist()
    pi20, pi30 = p.pi20.tolist(), p.pi30.tolist()
    pi2, pi3, pi5, pi7, pi8, pi9, pi11 = p.pi2, p.pi3, p.pi5, p.pi7, p.pi8, p.pi9, p.pi11
    pi13, pi16, pi18 = p.pi13, p.pi16, p.pi18
    pi21, pi22, pi23, pi24, pi25, pi26, pi27 = p.pi21, p.pi22, p.pi23, p.pi24, p.pi25, p.pi26, p.pi27
    pi28, pi29, pi31, pi32, pi33, pi34 = p.pi28, p.pi29, p.pi31, p.pi32, p.pi33, p.pi34

    out = {name: [0.0] * n for name in SERIES}
    y_gross = [0.0] * n
    k, m_at, m_up, m_lo, t_at, t_lo = p.k0, p.m_at0, p.m_up0, p.m_lo0, p.t_at0, p.t_lo0
    W = 0.0
    for i in range(n):
        t = i + 1
        if not k > 0:
            raise SimulationDomainError(t, f"capital {k} <= 0")
        yg = pi4[i] * k ** pi5 * pi6[i] ** pi7
        omega = pi8 * t_at + pi9 * t_at * t_at
        lam = pi10[i] * mu[i] ** pi11
        q = (1.0 - lam) * yg / (1.0 + omega)
        inv = s[i] * q
        cons = (1.0 - s[i]) * q + add_c[i]
        if not cons > 0:
            raise SimulationDomainError(t, f"consumption {cons} <= 0")
        cpc = cons / pi12[i]
        k_new = inv - pi13 * k
        e_ind = pi14[i] * (1.0 - mu[i]) * pi15[i] * k ** pi16 * pi17[i] ** pi18
        e = e_ind + pi20[i] + add_e[i]
        m_at, m_up, m_lo = (
            e + pi21 * m_at + pi22 * m_up,
            pi23 * m_at + pi24 * m_up + pi25 * m_lo,
            pi26 * m_up + pi27 * m_lo,
        )
        if not m_at > 0:
            raise NonPositiveCarbon(t, f"atmospheric carbon {m_at} <= 0")
        f = pi28 * math.log(m_at / pi29) / LN2 + pi30[i]
        t_at, t_lo = (
            t_at + pi31 * (f - pi32 * t_at - pi33 * (t_at - t_lo)),
            t_lo + pi34 * (t_at - t_lo),
        )
        util = pi1[i] * cpc ** pi2 / pi2
        disc = pi3 ** (-t)
        W += util * disc
        k = k_new
        y_gross[i] = yg
        for name, value in (("U", util), ("R", disc), ("Q", q), ("Omega", omega), ("Lambda", lam),
                            ("C", cons), ("I", inv), ("c", cpc), ("K", k_new), ("E_ind", e_ind),
                            ("E", e), ("M_AT", m_at), ("M_UP", m_up), ("M_LO", m_lo), ("F", f),
                            ("T_AT", t_at), ("T_LO", t_lo)):
            out[name][i] = value
    if not k > 0:
        raise SimulationDomainError(n, f"capital {k} <= 0")
    arrays = {name: np.array(v) for name, v in out.items()}
    return Trajectory(W=W, Y_gross=np.array(y_gross), **arrays)


def welfare(tr: Trajectory) -> float:
    """Discounted utility sum, accumulated in period order like ``simulate``."""
    return float(sum((tr.U * tr.R).tolist()))


CSV_COLUMNS = ("year", "s", "mu", "Q", "C", "c", "I", "K", "E_ind", "E", "M_AT", "M_UP",
               "M_LO", "F", "T_AT", "T_LO", "Omega", "Lambda", "U", "R")


def fmt17(x: float) -> str:
    return format(float(x), ".17g")


def trajectory_csv(tr: Trajectory, u: Controls, years) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i, year in enumerate(years):
        row = [str(int(year)), fmt17(u.s[i]), fmt17(u.mu[i])]
        row += [fmt17(getattr(tr, col)[i]) for col in CSV_COLUMNS[3:]]
        w.writerow(row)
    return buf.getvalue()
