import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadsteer import model as mdl
from quadsteer.bounds import EnvelopeSpec
from quadsteer.model import RobotParams
from quadsteer.sim import dynamics_rhs
from quadsteer.uncertainty import (
    UncertaintyModel,
    compile_force,
    composite,
    eval_f,
    gravity_plane,
    verify_assumption_bounds,
    weighted_viscous,
)

P = RobotParams()
ENV = EnvelopeSpec(a=P.a)
ZERO = (0.0,) * 6
W = P.m * 9.81


def test_none_is_zero():
    assert np.all(eval_f(UncertaintyModel(), ZERO, (1,) * 6, 3.0) == 0)
    assert compile_force(UncertaintyModel()) is None


def test_euclidean_viscous_spin():
    f = eval_f(UncertaintyModel(kind="viscous", b_f=0.0305), ZERO, (0, 0, 0, 1, 0, 0), 0)
    assert f == pytest.approx([0, 0, 0, 0.0305, 0, 0])


def test_weighted_viscous_scales_with_rim_speed():
    f = eval_f(weighted_viscous(0.0305, P.r), ZERO, (0, 0, 0, 1, 0, 0), 0)
    assert f[3] == pytest.approx(0.0305 * P.r**2, rel=1e-12)


def test_gravity_plane_force():
    f = eval_f(gravity_plane(9.81, 3.5), ZERO, ZERO, 0)
    assert f[:2] == pytest.approx([0.0, -34.335], abs=1e-9)


def test_constant_bias():
    f = eval_f(UncertaintyModel(kind="constant_bias", c_bias=(1, 2, 3, 4, 5, 6)), ZERO, ZERO, 0)
    assert list(f) == [1, 2, 3, 4, 5, 6]


def test_pulse_window():
    m = UncertaintyModel(kind="thruster_pulse", pulses=[(1.0, 2.0, (1, 0, 0, 0, 0, 0))])
    assert eval_f(m, ZERO, ZERO, 1.5)[0] == 1.0
    assert eval_f(m, ZERO, ZERO, 2.5)[0] == 0.0
    assert m.time_dependent


def test_composite_sums_parts():
    a = gravity_plane(9.81, 3.5)
    b = UncertaintyModel(kind="viscous", b_f=0.1)
    qd = (0, 0, 0, 2, 0, 0)
    total = eval_f(composite(a, b), ZERO, qd, 0)
    assert total == pytest.approx(eval_f(a, ZERO, qd, 0) + eval_f(b, ZERO, qd, 0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_compiled_force_matches_eval(q, qd):
    m = composite(gravity_plane(9.81, 3.5), weighted_viscous(0.0305, P.r), UncertaintyModel(kind="constant_bias", c_bias=(0, 1, 0, 0, 0, 0)))
    assert compile_force(m)(q, qd, 0.0) == pytest.approx(list(eval_f(m, q, qd, 0.0)), abs=1e-12)


def test_eval_is_pure():
    m = weighted_viscous(0.0305, P.r)
    qd = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    assert np.array_equal(eval_f(m, ZERO, qd, 1.0), eval_f(m, ZERO, qd, 1.0))


def test_viscous_decelerates_wheel():
    m = UncertaintyModel(kind="viscous", b_f=0.0305)
    _, vdot, _ = dynamics_rhs(ZERO, (0.1, 0, 0), (0, 0, 0), m, P, 0.0)
    expected = -0.0305 * (0.1 / P.r) / P.r / mdl.m11(0, 0, P)
    assert vdot[0] == pytest.approx(expected, rel=1e-12)
    assert vdot[0] == pytest.approx(-1.3269, rel=1e-3)


def test_declared_viscous_bound_is_tight():
    m = UncertaintyModel(kind="viscous", b_f=0.0305, c=ZERO, d=(0, 0, 0, 0.0305, 0, 0))
    rep = verify_assumption_bounds(m, ENV, 500)
    assert rep.passed
    assert rep.max_component_violation == 0.0


def test_declared_gravity_bound_too_small():
    m = gravity_plane(9.81, 3.5, c=(0, W / 2, 0, 0, 0, 0), d=ZERO)
    rep = verify_assumption_bounds(m, ENV, 200)
    assert not rep.passed
    assert rep.max_component_violation == pytest.approx(W / 2, rel=1e-9)
    assert rep.worst_component == 1
    assert "violated" in rep.diagnostic()


@pytest.mark.parametrize("kind", ["viscous", "gravity_plane", "constant_bias"])
def test_derived_bounds_cover_model(kind):
    m = {
        "viscous": weighted_viscous(0.0305, P.r),
        "gravity_plane": gravity_plane(9.81, 3.5),
        "constant_bias": UncertaintyModel(kind="constant_bias", c_bias=(0.5, -1, 0, 0, 0.1, 0)),
    }[kind]
    assert verify_assumption_bounds(m, ENV, 300).passed


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "bogus"},
        {"metric": "manhattan"},
        {"kind": "viscous", "b_f": -1.0},
        {"kind": "viscous", "metric": "weighted", "b_f": 0.1},
        {"kind": "constant_bias", "c_bias": (1, 2)},
    ],
)
def test_invalid_models_rejected(kwargs):
    with pytest.raises(ValueError):
        UncertaintyModel(**kwargs)


def test_lipschitz_defaults():
    assert weighted_viscous(0.0305, P.r).lipschitz() == (0.0, 0.0305)
    assert gravity_plane(9.81, 3.5).lipschitz() == (0.0, 0.0)
    assert math.isclose(composite(weighted_viscous(0.01, P.r), weighted_viscous(0.02, P.r)).lipschitz()[1], 0.03)
