import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dicescc.diffkernel import sens_rhs
from dicescc.dynamics import (CSV_COLUMNS, Controls, NonPositiveCarbon, Perturbation,
                              SimulationDomainError, Target, abatement_fraction, carbon_step,
                              damage_fraction, simulate, temperature_step, trajectory_csv,
                              welfare)

SIGMA1 = 35.85 / (105.5 * 0.97)


def const_controls(p, s=0.2, mu=0.0):
    return Controls(np.full(p.t_max, s), np.full(p.t_max, mu))


def spreadsheet_welfare(p, s, mu):
    """Matrix-form re-statement of the recursions, written independently."""
    K = p.k0
    M = np.array([p.m_at0, p.m_up0, p.m_lo0])
    T_at, T_lo = p.t_at0, p.t_lo0
    A = p.carbon_matrix()
    total = 0.0
    for t in range(p.t_max):
        gross = p.pi4[t] * K ** p.pi5 * p.pi6[t] ** p.pi7
        net = (1 - p.pi10[t] * mu[t] ** p.pi11) * gross / (1 + p.pi8 * T_at + p.pi9 * T_at ** 2)
        per_capita = (1 - s[t]) * net / p.pi12[t]
        total += p.pi1[t] * per_capita ** p.pi2 / p.pi2 / p.pi3 ** (t + 1)
        e_ind = p.pi14[t] * (1 - mu[t]) * p.pi15[t] * K ** p.pi16 * p.pi17[t] ** p.pi18
        M = A @ M + np.array([e_ind + p.pi20[t], 0.0, 0.0])
        F = p.pi28 * np.log2(M[0] / p.pi29) + p.pi30[t]
        T_at, T_lo = (T_at + p.pi31 * (F - p.pi32 * T_at - p.pi33 * (T_at - T_lo)),
                      T_lo + p.pi34 * (T_at - T_lo))
        K = s[t] * net - p.pi13 * K
    return total


# --- damage and abatement ---------------------------------------------------------------

def test_damage_fraction(desk):
    assert damage_fraction(0.0, desk) == 0.0
    q = 0.0123
    p = replace(desk, pi8=0.0, pi9=q)
    assert damage_fraction(2.0, p) == pytest.approx(4 * q, rel=1e-15)
    assert damage_fraction(1.0, desk) == pytest.approx(0.0 + 0.00236, rel=1e-15)


def test_abatement_fraction(desk):
    assert abatement_fraction(0.0, 1, desk) == 0.0
    assert abatement_fraction(1.0, 3, desk) == desk.pi10[2]
    cost1 = 550 * SIGMA1 / 2.6 / 1000
    assert abatement_fraction(0.5, 1, desk) == pytest.approx(cost1 * 0.5 ** 2.6, rel=1e-12)


# --- carbon and temperature ---------------------------------------------------------------

def test_carbon_identity_transfer(desk):
    p = replace(desk, pi21=1.0, pi22=0.0, pi23=0.0, pi24=1.0, pi25=0.0, pi26=0.0, pi27=1.0)
    assert carbon_step(800.0, 400.0, 1700.0, 0.0, p) == (800.0, 400.0, 1700.0)


def test_carbon_step_hand(desk):
    b21 = 0.12 * 588 / 360
    b32 = 0.007 * 360 / 1720
    at, up, lo = carbon_step(851.0, 460.0, 1740.0, 10.0, desk)
    assert at == pytest.approx(10 + 0.88 * 851 + b21 * 460, rel=1e-14)
    assert up == pytest.approx(0.12 * 851 + (1 - b21 - 0.007) * 460 + b32 * 1740, rel=1e-14)
    assert lo == pytest.approx(0.007 * 460 + (1 - b32) * 1740, rel=1e-14)
    assert at == pytest.approx(849.04, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.tuples(*[st.floats(0.0, 1e4, allow_subnormal=False)] * 3), st.integers(1, 500))
def test_carbon_conservation(desk, masses, steps):
    m = masses
    total = sum(m)
    for _ in range(steps):
        m = carbon_step(*m, 0.0, desk)
    assert abs(sum(m) - total) <= 1e-9 * max(total, 1e-300)


def test_temperature_no_forcing(desk):
    p = replace(desk, pi30=np.zeros(desk.t_max), t_at0=0.0, t_lo0=0.0)
    assert temperature_step(0.0, 0.0, p.pi29, 1, p) == (0.0, 0.0)


def test_one_doubling_gives_pi28(desk):
    p = replace(desk, pi30=np.zeros(desk.t_max))
    # with T_at = T_lo = 0 the new T_at is pi31 * F
    t_at, _ = temperature_step(0.0, 0.0, 2 * p.pi29, 1, p)
    assert t_at / p.pi31 == pytest.approx(p.pi28, rel=1e-14)


def test_temperature_step_hand(desk):
    forcing = 3.6813 * math.log(851 / 588) / math.log(2) + (0.5 + 0.5 / 17)
    t_at = 0.85 + 0.1005 * (forcing - 3.6813 / 3.1 * 0.85 - 0.088 * (0.85 - 0.0068))
    t_lo = 0.0068 + 0.025 * (0.85 - 0.0068)
    got = temperature_step(0.85, 0.0068, 851.0, 1, desk)
    assert got[0] == pytest.approx(t_at, rel=1e-13)
    assert got[1] == pytest.approx(t_lo, rel=1e-13)


def test_nonpositive_carbon(desk):
    with pytest.raises(NonPositiveCarbon):
        temperature_step(0.8, 0.0, 0.0, 1, desk)


# --- simulate ---------------------------------------------------------------------------

def test_zero_abatement_run(desk):
    tr = simulate(desk, const_controls(desk))
    assert np.all(tr.Lambda == 0.0)
    assert np.all(tr.E_ind > 0)
    for name in ("U", "Q", "K", "T_AT", "M_LO"):
        assert len(getattr(tr, name)) == desk.t_max


def test_matches_spreadsheet(desk):
    rng = np.random.default_rng(1)
    s = rng.uniform(0.15, 0.35, desk.t_max)
    mu = rng.uniform(0.0, 1.0, desk.t_max)
    tr = simulate(desk, Controls(s, mu))
    assert tr.W == pytest.approx(spreadsheet_welfare(desk, s, mu), rel=1e-12)


def test_perturbation_locality(desk):
    u = const_controls(desk, 0.22, 0.1)
    a = 0.37
    base = simulate(desk, u)
    pert = simulate(desk, u, [Perturbation(Target.EMISSIONS, 3, a)])
    for name in ("Q", "C", "K", "E", "M_AT", "T_AT", "U"):
        assert np.array_equal(getattr(base, name)[:2], getattr(pert, name)[:2])
    assert pert.E[2] == base.E[2] + a
    assert pert.E_ind[2] == base.E_ind[2]


def test_consumption_perturbation_skips_investment(desk):
    u = const_controls(desk, 0.22, 0.1)
    base = simulate(desk, u)
    pert = simulate(desk, u, [Perturbation(Target.CONSUMPTION, 4, 0.5)])
    assert pert.C[3] == base.C[3] + 0.5
    assert pert.I[3] == base.I[3]
    assert pert.K[3] == base.K[3]


def test_first_order_welfare_change(desk):
    u = const_controls(desk, 0.24, 0.2)
    w0 = simulate(desk, u).W
    lam_e = sens_rhs(desk, u, Target.EMISSIONS, 6).value
    lam_c = sens_rhs(desk, u, Target.CONSUMPTION, 9).value
    residuals = []
    for a in (1e-2, 5e-3):
        a1, a2 = a, 0.3 * a
        w = simulate(desk, u, [Perturbation(Target.EMISSIONS, 6, a1),
                               Perturbation(Target.CONSUMPTION, 9, a2)]).W
        residuals.append(abs(w - w0 - lam_e * a1 - lam_c * a2))
        assert residuals[-1] <= 1e-3 * abs(lam_e * a1 + lam_c * a2)
    assert residuals[1] < residuals[0] / 3


def test_domain_errors_name_period(desk):
    u = const_controls(desk)
    with pytest.raises(SimulationDomainError) as exc:
        simulate(desk, u, [Perturbation(Target.CONSUMPTION, 5, -1e6)])
    assert exc.value.period == 5
    with pytest.raises(NonPositiveCarbon) as exc:
        simulate(desk, u, [Perturbation(Target.EMISSIONS, 2, -1e6)])
    assert exc.value.period == 2


def test_perturbation_validation(desk):
    with pytest.raises(ValueError):
        simulate(desk, const_controls(desk), [Perturbation(Target.EMISSIONS, 21, 1.0)])
    with pytest.raises(ValueError):
        Perturbation(Target.EMISSIONS, 1, math.inf)
    assert Perturbation("EmissionsEq", 1, 1.0).target is Target.EMISSIONS


def test_controls_validation(desk):
    with pytest.raises(ValueError):
        Controls(np.zeros(3), np.zeros(4))
    u = Controls(np.full(20, 1.2), np.zeros(20))
    with pytest.raises(ValueError):
        u.check(desk)
    with pytest.raises(ValueError):
        simulate(desk, Controls(np.zeros(5), np.zeros(5)))


def test_bit_reproducible(desk):
    u = const_controls(desk, 0.25, 0.3)
    a, b = simulate(desk, u), simulate(desk, u)
    assert a.W == b.W
    assert a.T_AT.tobytes() == b.T_AT.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.01, 2.0))
def test_monotone_damage(desk, t0, dt):
    u = const_controls(desk, 0.25, 0.2)
    cool = simulate(replace(desk, t_at0=t0), u)
    warm = simulate(replace(desk, t_at0=t0 + dt), u)
    assert warm.Q[0] <= cool.Q[0]


# --- welfare ----------------------------------------------------------------------------

def test_welfare_sums(desk):
    tr = simulate(desk, const_controls(desk, 0.2, 0.1))
    assert welfare(tr) == tr.W
    assert welfare(replace(tr, U=np.zeros(desk.t_max))) == 0.0
    one = simulate(desk.truncated(1), Controls([0.2], [0.1]))
    assert one.W == one.U[0] * one.R[0]
    assert tr.W == pytest.approx(math.fsum(tr.U * tr.R), rel=1e-13)


def test_unweighted_switch(desk):
    ones = replace(desk, pi1=np.ones(desk.t_max))
    u = const_controls(desk, 0.2, 0.1)
    assert simulate(ones, u).W == simulate(desk.unweighted(), u).W
    assert desk.unweighted().pi1.tolist() == [1.0] * desk.t_max


def test_trajectory_csv(desk):
    u = const_controls(desk, 0.2, 0.1)
    tr = simulate(desk, u)
    text = trajectory_csv(tr, u, desk.years())
    lines = text.splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert len(lines) == desk.t_max + 1
    first = lines[1].split(",")
    assert first[0] == "2015"
    assert float(first[CSV_COLUMNS.index("T_AT")]) == tr.T_AT[0]
    assert float(first[CSV_COLUMNS.index("K")]) == tr.K[0]
