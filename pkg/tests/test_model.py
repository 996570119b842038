import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadsteer import model as mdl
from quadsteer.bounds import EnvelopeSpec, sample_configs
from quadsteer.model import RobotParams
from quadsteer.sim import dynamics_rhs, rk4_step

P = RobotParams()
angle = st.floats(-math.pi / 2, math.pi / 2)
q_strategy = st.tuples(
    st.floats(-5, 5), st.floats(-5, 5), st.floats(-math.pi, math.pi), st.floats(-10, 10), angle, angle
)


def test_geometry_factor():
    assert P.A == pytest.approx(2.2222, rel=1e-4)


def test_I_recomputed_by_hand():
    assert P.I_recomputed == pytest.approx(0.03333 + 4 * 0.03203 * 2 * 0.1125**2, rel=1e-12)
    assert P.I_recomputed == pytest.approx(0.0365730375, rel=1e-9)


def test_I_defaults_to_recomputed():
    assert RobotParams(I=None).I == P.I_recomputed


@pytest.mark.parametrize("name", ["r", "a", "m", "I_delta"])
@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
def test_params_reject_nonpositive(name, bad):
    with pytest.raises(ValueError):
        RobotParams(**{name: bad})


def test_jacobian_column_at_rest():
    col = mdl.jacobian_col((0, 0, 0, 0, 0, 0), P)
    assert col == pytest.approx((1.0, 0.0, 0.0, 39.3701), abs=1e-4)


def test_jacobian_column_rotated_heading():
    col = mdl.jacobian_col((0, 0, math.pi / 2, 0, 0, 0), P)
    assert col == pytest.approx((0.0, 1.0, 0.0, 39.3701), abs=1e-4)


def test_jacobian_yaw_row_opposed_steering():
    col = mdl.jacobian_col((0, 0, 0, 0, math.pi / 2, -math.pi / 2), P)
    assert col[2] == pytest.approx(4.4444, abs=1e-4)


def test_jacobian_shape_and_steering_rows():
    J = mdl.jacobian((0.1, 0.2, 0.3, 0.4, 0.5, -0.6), P)
    assert J.shape == (6, 3)
    assert J[4:, 1:] == pytest.approx(np.eye(2))
    assert np.all(J[:4, 1:] == 0)


def test_constraint_annihilates_jacobian_parallel_steering():
    q = (0, 0, 0.7, 0, 0.3, 0.3)
    assert np.max(np.abs(mdl.constraint_matrix(q, P) @ mdl.jacobian(q, P))) <= 1e-12


@settings(max_examples=300, deadline=None)
@given(q_strategy)
def test_constraint_annihilates_jacobian(q):
    assert np.max(np.abs(mdl.constraint_matrix(q, P) @ mdl.jacobian(q, P))) <= 1e-12


def test_full_mass_matrix_diagonal():
    M = mdl.mass_matrix_full(P)
    assert np.diag(M) == pytest.approx([3.5, 3.5, 0.0365, 4.12e-5, 0.004, 0.004], rel=1e-9)
    assert np.count_nonzero(M - np.diag(np.diag(M))) == 0


@settings(max_examples=300, deadline=None)
@given(q_strategy)
def test_reduced_mass_is_projection(q):
    J = mdl.jacobian(q, P)
    assert np.max(np.abs(J.T @ mdl.mass_matrix_full(P) @ J - mdl.m_tilde(q, P))) <= 1e-12


def test_m11_zero_steer():
    assert mdl.m11(0.0, 0.0, P) == pytest.approx(3.563860, rel=1e-6)


def test_c11_example():
    assert mdl.c11(0.1, 0.0, 0.5, 0.0, P) == pytest.approx(-0.03472, abs=5e-6)


def test_b11_values():
    assert mdl.b11(0.0, 0.0, P) == pytest.approx(314.9606, rel=1e-6)
    assert mdl.b11(math.pi / 2, -math.pi / 2, P) == pytest.approx(236.2205, rel=1e-6)


@settings(max_examples=300, deadline=None)
@given(angle, angle)
def test_b11_lower_bound(df, dr):
    assert mdl.b11(df, dr, P) >= 4.0 / P.r * (1 - 1e-12)


@settings(max_examples=200, deadline=None)
@given(angle, angle, st.floats(-2, 2), st.floats(-2, 2))
def test_skew_symmetry(df, dr, wf, wr):
    h = 1e-6
    mdot = (mdl.m11(df + h * wf, dr + h * wr, P) - mdl.m11(df - h * wf, dr - h * wr, P)) / (2 * h)
    assert abs(mdot - 2.0 * mdl.c11(df, dr, wf, wr, P)) <= 1e-6


def test_force_projection():
    q = (0, 0, 0, 0, 0, 0)
    assert mdl.f_tilde_project(q, (1, 0, 0, 0, 0, 0), P) == pytest.approx((1, 0, 0))
    assert mdl.f_tilde_project(q, (0, 0, 0, 1, 0, 0), P) == pytest.approx((39.3701, 0, 0), abs=1e-4)
    assert mdl.f_tilde_project(q, (0, 0, 0, 0, 2, -3), P) == pytest.approx((0, 2, -3))


def test_rhs_unit_acceleration():
    tau_w = mdl.m11(0, 0, P) / mdl.b11(0, 0, P)
    assert tau_w == pytest.approx(0.011315, rel=1e-4)
    _, vdot, _ = dynamics_rhs((0,) * 6, (0, 0, 0), (tau_w, 0, 0), None, P, 0.0)
    assert vdot == pytest.approx((1.0, 0.0, 0.0), abs=1e-12)


def test_rhs_steering_channels():
    _, vdot, _ = dynamics_rhs((0,) * 6, (0, 0, 0), (0, 0.004, -0.002), None, P, 0.0)
    assert vdot[1:] == pytest.approx((2.0, -1.0))


def test_energy_conserved_without_input():
    v0 = (0.1, 0.3, -0.2)
    x = [0.0] * 6 + list(v0)

    def rhs(t, s):
        qd, vd, _ = dynamics_rhs(s[:6], s[6:], (0, 0, 0), None, P, t)
        return list(qd) + list(vd)

    def energy(s):
        return 0.5 * mdl.m11(s[4], s[5], P) * s[6] ** 2 + P.I_delta * (s[7] ** 2 + s[8] ** 2)

    e0 = energy(x)
    for k in range(10_000):
        x = rk4_step(x, rhs, 1e-3, k * 1e-3)
    assert abs(energy(x) - e0) < 1e-6


def test_envelope_structural_sample():
    qs = sample_configs(EnvelopeSpec(a=P.a), 2000, seed=3)
    M = mdl.mass_matrix_full(P)
    for q in qs:
        J = mdl.jacobian(q, P)
        assert np.max(np.abs(mdl.constraint_matrix(q, P) @ J)) <= 1e-12
        assert np.max(np.abs(J.T @ M @ J - mdl.m_tilde(q, P))) <= 1e-12
