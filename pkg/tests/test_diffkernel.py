from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dicescc.diffkernel import Sweep, fd_check, grad_controls, sens_rhs, sweep
from dicescc.dynamics import Controls, Perturbation, Target, simulate


def interior(p, seed):
    rng = np.random.default_rng(seed)
    return Controls(rng.uniform(0.1, 0.4, p.t_max), rng.uniform(0.02, 0.95, p.t_max) * p.pi35)


def test_one_period_closed_form(desk):
    p = desk.truncated(1)
    s, mu = 0.3, 0.2
    tr = simulate(p, Controls([s], [mu]))
    # W = pi1 * c^pi2 / pi2 / pi3, c = (1 - s) Q / pi12
    c = (1 - s) * tr.Q[0] / p.pi12[0]
    expected = -p.pi1[0] * c ** (p.pi2 - 1) * tr.Q[0] / p.pi12[0] / p.pi3
    assert grad_controls(p, Controls([s], [mu])).d_s[0] == pytest.approx(expected, rel=1e-13)


def test_last_abatement_without_cost_is_irrelevant(desk):
    pi10 = desk.pi10.copy()
    pi10[-1] = 0.0
    p = replace(desk, pi10=pi10)
    g = grad_controls(p, interior(p, 3))
    assert g.d_mu[-1] == 0.0


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adjoint_matches_finite_differences(desk, seed):
    rep = fd_check(desk, interior(desk, seed))
    assert rep.passed, rep.table()
    assert rep.max_rel_error <= 1e-6


def test_consumption_sensitivity_closed_form(desk):
    u = interior(desk, 7)
    tr = simulate(desk, u)
    for t in (1, 8, 20):
        expected = tr.R[t - 1] * desk.pi1[t - 1] / desk.pi12[t - 1] * tr.c[t - 1] ** (desk.pi2 - 1)
        got = sens_rhs(desk, u, Target.CONSUMPTION, t).value
        assert got == pytest.approx(expected, rel=1e-13)


def test_last_period_emissions_sensitivity(desk):
    u = interior(desk, 8)
    got = sens_rhs(desk, u, "EmissionsEq", desk.t_max).value
    h = 1e-3
    up = simulate(desk, u, [Perturbation(Target.EMISSIONS, desk.t_max, h)]).W
    dn = simulate(desk, u, [Perturbation(Target.EMISSIONS, desk.t_max, -h)]).W
    fd = (up - dn) / (2 * h)
    # the last period's carbon feeds no later production
    assert got == 0.0
    assert abs(fd - got) <= 1e-6 * max(1.0, abs(sens_rhs(desk, u, "EmissionsEq", 1).value))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_emission_sensitivity_nonpositive(desk, seed, t):
    assert sens_rhs(desk, interior(desk, seed), Target.EMISSIONS, t).value <= 0.0


def test_corrupted_adjoint_is_flagged(desk):
    def shifted(p, u, perturbations=()):
        sw = sweep(p, u, perturbations)
        return Sweep(sw.value, np.roll(sw.d_s, 1), sw.d_mu, sw.d_e, sw.d_c, sw.trajectory)

    rep = fd_check(desk, interior(desk, 11), sweep_fn=shifted)
    assert not rep.passed
    flagged = {b.name: b for b in rep.blocks if not b.passed}
    assert set(flagged) == {"s"}
    assert flagged["s"].max_rel_error > 1e-3
    assert "FLAGGED" in rep.table()


def test_eps_must_be_positive(desk):
    with pytest.raises(ValueError):
        fd_check(desk, interior(desk, 1), eps=0.0)


def test_remainder_shrinks_quadratically(desk):
    u = interior(desk, 12)
    w0 = simulate(desk, u).W
    lam = sens_rhs(desk, u, Target.EMISSIONS, 4).value
    res = []
    for a in (2.0, 1.0, 0.5):
        w = simulate(desk, u, [Perturbation(Target.EMISSIONS, 4, a)]).W
        res.append(abs(w - w0 - lam * a))
    assert res[0] / res[1] >= 3.5
    assert res[1] / res[2] >= 3.5


def test_seeded_sweep_adds_temperature_terms(desk):
    u = interior(desk, 13)
    seed = np.zeros(desk.t_max)
    seed[9] = -2.0
    sw = sweep(desk, u, temp_seed=seed, eind_seed=-0.5)
    tr = simulate(desk, u)
    assert sw.value == pytest.approx(tr.W - 2.0 * tr.T_AT[9] - 0.5 * tr.E_ind.sum(), rel=1e-15)
    # derivative of the seeded objective against central differences
    h = 1e-4
    def J(x):
        t = simulate(desk, Controls.from_vector(x))
        return t.W - 2.0 * t.T_AT[9] - 0.5 * t.E_ind.sum()
    x = u.as_vector()
    for j in (2, 25):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        fd = (J(xp) - J(xm)) / (2 * h)
        analytic = np.concatenate([sw.d_s, sw.d_mu])[j]
        assert analytic == pytest.approx(fd, rel=1e-6)
