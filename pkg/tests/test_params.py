import math
import re
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dicescc.params import (LengthMismatch, MissingKey, ParseError, dump_params,
                            expand_growth, load_params, parse_params, validate)


def test_bundled_dice2016_loads_and_validates(dice):
    assert dice.t_max == 100
    assert all(len(getattr(dice, k)) == 100 for k in ("pi1", "pi4", "pi20", "pi35", "c1"))
    rep = validate(dice)
    assert rep.ok, rep.errors
    assert rep.warnings == []


def test_desk_is_truncated_dice2016(desk, dice):
    assert desk.t_max == 20
    assert desk == dice.truncated(20)
    assert validate(desk).ok


def test_calibration_hand_checks(dice):
    # values recomputed by hand from the DICE-2016R recursions
    L2 = 7403 * (11500 / 7403) ** 0.134
    assert dice.pi12[1] == pytest.approx(5 * L2 / 1000, rel=1e-12)
    a2 = 5.115 / (1 - 0.076)
    assert dice.pi4[1] == pytest.approx(5 * a2, rel=1e-12)
    sigma1 = 35.85 / (105.5 * (1 - 0.03))
    assert dice.pi14[0] == pytest.approx(5 / 3.666 * sigma1, rel=1e-12)
    assert dice.pi10[0] == pytest.approx(550 * sigma1 / 2.6 / 1000, rel=1e-12)
    assert dice.pi20[2] == pytest.approx(5 / 3.666 * 2.6 * (1 - 0.115) ** 2, rel=1e-12)
    assert dice.pi13 == pytest.approx(-(0.9 ** 5), rel=1e-15)
    assert dice.pi3 == pytest.approx(1.015 ** 5, rel=1e-15)


def test_growth_stanza_three_periods():
    # x1 = 2; x2 = 2 e^0.1; x3 = x2 e^(0.1 * 0.5)
    got = expand_growth(2.0, 0.1, 0.5, 3)
    assert got[0] == 2.0
    assert got[1] == pytest.approx(2 * math.exp(0.1), rel=1e-15)
    assert got[2] == pytest.approx(2 * math.exp(0.1) * math.exp(0.05), rel=1e-15)


def _desk_text(desk):
    return dump_params(desk)


def _replace_line(text, key, new):
    pattern = re.compile(rf"^{key} = (\[[^\]]*\]|[^\n]*)", re.M)
    assert pattern.search(text), key
    return pattern.sub(new, text, count=1)


def test_round_trip_bundled(desk, dice):
    for p in (desk, dice):
        assert parse_params(dump_params(p)) == p


def test_load_is_deterministic(tmp_path, desk):
    f = tmp_path / "x.params"
    f.write_text(_desk_text(desk), encoding="utf-8")
    a, b = load_params(f), load_params(f)
    assert a == b
    for k in ("pi4", "c1"):
        assert getattr(a, k).tobytes() == getattr(b, k).tobytes()


def test_missing_key(desk):
    text = _replace_line(_desk_text(desk), "pi29", "")
    with pytest.raises(MissingKey) as exc:
        parse_params(text)
    assert exc.value.key == "pi29"


def test_length_mismatch(desk):
    text = _replace_line(_desk_text(desk), "pi20", "pi20 = [" + ", ".join(["1.0"] * 19) + "]")
    with pytest.raises(LengthMismatch) as exc:
        parse_params(text)
    assert exc.value.key == "pi20"
    assert exc.value.line is not None


def test_parse_error_names_key_and_line(desk):
    text = _replace_line(_desk_text(desk), "pi28", "pi28 = three")
    with pytest.raises(ParseError) as exc:
        parse_params(text)
    assert exc.value.key == "pi28"
    expected_line = text.splitlines().index("pi28 = three") + 1
    assert exc.value.line == expected_line


def test_unknown_and_duplicate_keys(desk):
    text = _desk_text(desk)
    with pytest.raises(ParseError, match="unknown"):
        parse_params(text + "pi99 = 1\n")
    with pytest.raises(ParseError, match="duplicate"):
        parse_params(text + "pi28 = 1\n")


def test_verbatim_vector_beats_stanza(desk):
    text = _desk_text(desk)
    stanza = "pi20 = grow(1.0, 0.0, 1.0)\n"
    p = parse_params(text + stanza)
    assert np.array_equal(p.pi20, desk.pi20)
    only_stanza = _replace_line(text, "pi20", "pi20 = grow(1.0, 0.0, 1.0)")
    assert np.array_equal(parse_params(only_stanza).pi20, np.ones(20))


def test_stanza_rejected_for_non_growth_key(desk):
    text = _replace_line(_desk_text(desk), "pi30", "pi30 = grow(1.0, 0.0, 1.0)")
    with pytest.raises(ParseError):
        parse_params(text)


def test_validate_discount_base(desk):
    rep = validate(replace(desk, pi3=0.9))
    assert [f for f, _ in rep.errors] == ["pi3"]


def test_validate_carbon_columns(desk):
    bad = replace(desk, pi21=desk.pi21 - 0.02)
    rep = validate(bad)
    assert "carbon_cycle" in [f for f, _ in rep.errors]
    # without the conservation flag the same coefficients are accepted
    assert validate(replace(bad, carbon_conservation=False)).ok


def test_validate_sorted_and_complete(desk):
    rep = validate(replace(desk, pi3=0.5, pi11=0.5, pi29=-1.0, pi5=2.0))
    fields = [f for f, _ in rep.errors]
    assert fields == sorted(fields)
    assert set(fields) == {"pi3", "pi11", "pi29", "pi5"}


def test_c1_inconsistency_warns_not_errors(desk):
    rep = validate(replace(desk, c1=desk.c1 * 1.01))
    assert rep.ok
    assert [f for f, _ in rep.warnings] == ["c1"]


def test_params_are_read_only(desk):
    with pytest.raises(ValueError):
        desk.pi4[0] = 1.0
    with pytest.raises(Exception):
        desk.pi3 = 2.0


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_subnormal=False)


@settings(max_examples=30, deadline=None)
@given(pi8=finite, pi28=finite, vec=st.lists(finite, min_size=20, max_size=20))
def test_round_trip_property(desk, pi8, pi28, vec):
    p = replace(desk, pi8=pi8, pi28=pi28, pi30=np.array(vec))
    q = parse_params(dump_params(p))
    assert q == p
