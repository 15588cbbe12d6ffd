"""DICE-2016R calibration, mapped onto the model's constant vector.

Upstream scalars are transcribed from the public GAMS source
(DICE2016R-091916ap.gms).  ``build`` derives every per-period vector with the
upstream recursions and folds the unit conversions in:

* 5-year period totals: output, consumption and investment are trillion USD
  per period (``pi4 = 5 * al``), capital depreciation is the 5-year carry
  ``(1 - dk)**5`` stored with a negative sign in ``pi13``.
* carbon: emissions enter the atmospheric box in GtC per period, so the
  emission intensities carry the factor ``5 / 3.666``.
* utility weight ``pi1 = 5 * scale1 * L * pi3`` reproduces the upstream
  objective up to its additive constants (``R(t) = pi3**-t`` while the upstream
  discount factor starts at 1).

Production and emissions in period t use capital and temperature carried in
from period t-1, so the period-t carbon and temperature states here correspond
to the upstream states at t+1; exogenous forcing is shifted accordingly.

Run ``python -m dicescc.calibration`` to regenerate the bundled files.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .params import Params, dump_params

UPSTREAM = dict(
    tstep=5.0,
    elasmu=1.45,
    prstp=0.015,
    gama=0.300,
    pop0=7403.0,
    popadj=0.134,
    popasym=11500.0,
    dk=0.100,
    q0=105.5,
    k0=223.0,
    a0=5.115,
    ga0=0.076,
    dela=0.005,
    gsigma1=-0.0152,
    dsig=-0.001,
    eland0=2.6,
    deland=0.115,
    e0=35.85,
    miu0=0.03,
    mat0=851.0,
    mu0=460.0,
    ml0=1740.0,
    mateq=588.0,
    mueq=360.0,
    mleq=1720.0,
    b12=0.12,
    b23=0.007,
    t2xco2=3.1,
    fex0=0.5,
    fex1=1.0,
    tocean0=0.0068,
    tatm0=0.85,
    c1=0.1005,
    c3=0.088,
    c4=0.025,
    fco22x=3.6813,
    a1=0.0,
    a2=0.00236,
    expcost2=2.6,
    pback=550.0,
    gback=0.025,
    limmiu=1.2,
    fosslim=6000.0,
    cca0=400.0,
    scale1=0.0302455265681763,
    co2_per_c=3.666,
)

# Savings rate the upstream model fixes for its last 10 periods.
def optimal_long_run_savings(u: dict = UPSTREAM) -> float:
    return (u["dk"] + 0.004) / (u["dk"] + 0.004 * u["elasmu"] + u["prstp"]) * u["gama"]


def upstream_series(n: int, u: dict = UPSTREAM) -> dict[str, np.ndarray]:
    """Upstream exogenous series indexed by upstream period 1..n (array index 0..n-1)."""
    ts = u["tstep"]
    t = np.arange(1, n + 1)
    L = np.empty(n)
    L[0] = u["pop0"]
    for i in range(1, n):
        L[i] = L[i - 1] * (u["popasym"] / L[i - 1]) ** u["popadj"]
    ga = u["ga0"] * np.exp(-u["dela"] * ts * (t - 1))
    al = np.empty(n)
    al[0] = u["a0"]
    for i in range(1, n):
        al[i] = al[i - 1] / (1 - ga[i - 1])
    gsig = u["gsigma1"] * (1 + u["dsig"]) ** (ts * (t - 1))
    sig0 = u["e0"] / (u["q0"] * (1 - u["miu0"]))
    sigma = np.empty(n)
    sigma[0] = sig0
    for i in range(1, n):
        sigma[i] = sigma[i - 1] * math.exp(gsig[i - 1] * ts)
    pbacktime = u["pback"] * (1 - u["gback"]) ** (t - 1)
    cost1 = pbacktime * sigma / u["expcost2"] / 1000
    etree = u["eland0"] * (1 - u["deland"]) ** (t - 1)
    forcoth = np.where(
        t < 18,
        u["fex0"] + (1 / 17) * (u["fex1"] - u["fex0"]) * (t - 1),
        u["fex0"] + (u["fex1"] - u["fex0"]),
    )
    return dict(L=L, al=al, sigma=sigma, sig0=np.array(sig0), pbacktime=pbacktime,
                cost1=cost1, etree=etree, forcoth=forcoth, gsig=gsig)


def build(t_max: int = 100, u: dict = UPSTREAM) -> Params:
    ts = u["tstep"]
    s = upstream_series(t_max + 1, u)
    L = s["L"][:t_max]
    pi3 = (1 + u["prstp"]) ** ts
    emis = ts / u["co2_per_c"]
    b11 = 1 - u["b12"]
    b21 = u["b12"] * u["mateq"] / u["mueq"]
    b22 = 1 - b21 - u["b23"]
    b32 = u["b23"] * u["mueq"] / u["mleq"]
    b33 = 1 - b32
    t = np.arange(1, t_max + 1)
    return Params(
        t_max=t_max,
        pi1=ts * u["scale1"] * pi3 * L,
        pi2=1 - u["elasmu"],
        pi3=pi3,
        pi4=ts * s["al"][:t_max],
        pi5=u["gama"],
        pi6=L / 1000,
        pi7=1 - u["gama"],
        pi8=u["a1"],
        pi9=u["a2"],
        pi10=s["cost1"][:t_max],
        pi11=u["expcost2"],
        pi12=ts * L / 1000,
        pi13=-((1 - u["dk"]) ** ts),
        pi14=emis * s["sigma"][:t_max],
        pi15=s["al"][:t_max],
        pi16=u["gama"],
        pi17=L / 1000,
        pi18=1 - u["gama"],
        pi19=u["fosslim"] - u["cca0"],
        pi20=emis * s["etree"][:t_max],
        pi21=b11,
        pi22=b21,
        pi23=u["b12"],
        pi24=b22,
        pi25=b32,
        pi26=u["b23"],
        pi27=b33,
        pi28=u["fco22x"],
        pi29=u["mateq"],
        pi30=s["forcoth"][1:t_max + 1],
        pi31=u["c1"],
        pi32=u["fco22x"] / u["t2xco2"],
        pi33=u["c3"],
        pi34=u["c4"],
        pi35=np.where(t < 30, 1.0, u["limmiu"]),
        k0=u["k0"],
        m_at0=u["mat0"],
        m_up0=u["mu0"],
        m_lo0=u["ml0"],
        t_at0=u["tatm0"],
        t_lo0=u["tocean0"],
        c1=s["pbacktime"][:t_max],
        c2=u["expcost2"] - 1,
        unit_scale=1000 / u["co2_per_c"],
        carbon_conservation=True,
    )


HEADER = """\
DICE-2016R calibration (DICE2016R-091916ap.gms), {t_max} periods of 5 years, t=1 is 2015.
Generated by dicescc.calibration; do not edit by hand.

Units and conventions
  pi1   utility weight 5*scale1*pi3*L(t), L in millions
  pi2   utility exponent 1-elasmu
  pi3   5-year discount base (1+prstp)^5, R(t)=pi3^-t
  pi4   5*TFP: gross output per period, trillion 2010 USD
  pi6, pi17   labour L/1000;  pi7, pi18 = 1-gamma;  pi5, pi16 = gamma
  pi8, pi9    damage coefficients per degC and per degC^2
  pi10  abatement cost scale cost1(t);  pi11 = expcost2
  pi12  5*L/1000 so c = C/pi12 is thousand USD per person per year
  pi13  NEGATIVE capital carry: K(t) = I(t) - pi13*K(t-1), pi13 = -(1-dk)^5
  pi14  carbon intensity sigma(t)*5/3.666, GtC per period per unit gross output
  pi15  TFP al(t) (emissions scale with gross output)
  pi19  cumulative industrial emission cap, GtC (fosslim minus 400 GtC to date)
  pi20  land emissions, GtC per period
  pi21..pi27  carbon transfer coefficients (columns sum to 1)
  pi28  forcing per CO2 doubling, W/m2;  pi29 preindustrial atmospheric carbon, GtC
  pi30  exogenous forcing, W/m2 (upstream forcoth shifted one period)
  pi31..pi34  temperature coefficients c1, fco22x/t2xco2, c3, c4
  pi35  upper bound on abatement: 1 before period 30, 1.2 after
  c1, c2  marginal abatement cost pbacktime(t) $/tCO2 and exponent expcost2-1
  unit_scale  1000/3.666: trillion USD per GtC -> USD per tCO2
"""


def growth_stanzas(u: dict = UPSTREAM) -> dict[str, tuple[float, float, float]]:
    """Growth stanzas for the vectors whose upstream recursion has that form."""
    ts = u["tstep"]
    emis = ts / u["co2_per_c"]
    sig0 = u["e0"] / (u["q0"] * (1 - u["miu0"]))
    return {
        "pi14": (emis * sig0, ts * u["gsigma1"], (1 + u["dsig"]) ** ts),
        "pi20": (emis * u["eland0"], math.log(1 - u["deland"]), 1.0),
    }


def write_bundled(directory: Path) -> None:
    stanzas = growth_stanzas()
    for t_max, name, note in ((100, "dice2016", ""),
                              (20, "desk", "Desk-scale truncation of dice2016.params.\n")):
        text = dump_params(build(t_max), HEADER.format(t_max=t_max) + note, stanzas)
        (directory / f"{name}.params").write_text(text, encoding="utf-8")


if __name__ == "__main__":
    write_bundled(Path(__file__).parent / "data")
