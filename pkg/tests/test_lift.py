import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from incstab.lift import (TangentPoint, complete_lift, lie_transport, lifted_trajectory,
                          transport_bound_check)
from incstab.odeflow import flow_map
from incstab.sysdsl import SystemDef

from oracles import expm_ss

A = np.array([[-1.0, 1.0], [0.0, -2.0]])
LINEAR = SystemDef.from_strings(["-x1 + x2", "-2*x2"])
DECAY = SystemDef.from_strings(["-x1"])
CUBIC = SystemDef.from_strings(["-x1^3"])
ROTATION = SystemDef.from_strings(["x2", "-x1"])
PENDULUM = SystemDef.from_strings(["x2", "-sin(x1) - 0.5*x2 + 0.2*cos(t)"])


class TestCompleteLift:
    def test_linear_field(self):
        lift = complete_lift(LINEAR)
        x, v = np.array([0.4, -1.0]), np.array([2.0, 3.0])
        z = lift.rhs(np.concatenate([x, v]))
        np.testing.assert_allclose(z, np.concatenate([A @ x, A @ v]))

    def test_scalar_cubic_field(self):
        sys = SystemDef.from_strings(["-x1 - x1^3"])
        z = complete_lift(sys).rhs(np.array([2.0, 0.5]))
        assert z[1] == pytest.approx((-1 - 12) * 0.5)

    def test_dimension(self):
        assert complete_lift(PENDULUM).dim == 4

    def test_projection_ignores_v(self):
        lift = complete_lift(PENDULUM)
        a = lift.rhs(np.array([0.1, 0.2, 0.0, 0.0]), 0.3)
        b = lift.rhs(np.array([0.1, 0.2, 7.0, -9.0]), 0.3)
        np.testing.assert_array_equal(a[:2], b[:2])


class TestLieTransport:
    def test_linear_against_expm(self):
        out = lie_transport(LINEAR, TangentPoint([0.5, 0.5], [1.0, 1.0]), 0, 1)
        ref = expm_ss(A) @ np.array([1.0, 1.0])
        assert np.max(np.abs(out.v - ref) / np.abs(ref)) <= 1e-6

    def test_cubic_closed_form(self):
        out = lie_transport(CUBIC, TangentPoint([1.0], [1.0]), 0, 4)
        # x(t) = x0 (1 + 2 x0^2 t)^(-1/2), so dx/dx0 = (1 + 2 t)^(-3/2) at x0 = 1
        assert out.v[0] == pytest.approx(1 / 27, abs=1e-5)

    def test_zero_tangent_stays_zero(self):
        traj = lifted_trajectory(PENDULUM, TangentPoint([0.3, 0.1], [0.0, 0.0]), 0, 5)
        assert np.all(traj.y[:, 2:] == 0.0)

    def test_same_time_identity(self):
        tp = TangentPoint([1.0, 2.0], [3.0, 4.0])
        out = lie_transport(PENDULUM, tp, 2.0, 2.0)
        np.testing.assert_array_equal(out.v, tp.v)

    def test_projection_matches_flow(self):
        tp = TangentPoint([0.5, 0.3], [1.0, 2.0])
        out = lie_transport(PENDULUM, tp, 0, 5)
        np.testing.assert_allclose(out.x, flow_map(PENDULUM, tp.x, 0, 5), atol=1e-9)

    def test_cocycle(self):
        tp = TangentPoint([0.7, -0.2], [0.3, 1.0])
        mid = lie_transport(PENDULUM, tp, 0, 1.3)
        end = lie_transport(PENDULUM, mid, 1.3, 3.0)
        direct = lie_transport(PENDULUM, tp, 0, 3.0)
        np.testing.assert_allclose(end.v, direct.v, atol=1e-7)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-3, 3), st.lists(st.floats(-2, 2), min_size=4, max_size=4))
    def test_linearity_in_v(self, alpha, vw):
        x = [0.4, -0.6]
        v, w = np.array(vw[:2]), np.array(vw[2:])
        lv = lie_transport(PENDULUM, TangentPoint(x, v), 0, 2).v
        lw = lie_transport(PENDULUM, TangentPoint(x, w), 0, 2).v
        lc = lie_transport(PENDULUM, TangentPoint(x, alpha * v + w), 0, 2).v
        np.testing.assert_allclose(lc, alpha * lv + lw, atol=1e-8)

    def test_tangent_point_validation(self):
        with pytest.raises(ValueError):
            TangentPoint([1.0, 2.0], [1.0])


def _tangents(n, count, seed=0):
    rng = np.random.default_rng(seed)
    return [TangentPoint(rng.uniform(-1, 1, n), rng.normal(size=n)) for _ in range(count)]


class TestTransportBounds:
    def test_decay_tight_bounds(self):
        rep = transport_bound_check(DECAY, _tangents(1, 10), 0, 5, 1.0, 1.0, 1.0)
        assert rep.ok and len(rep.grid) == 50

    def test_rotation_violates_upper(self):
        rep = transport_bound_check(ROTATION, _tangents(2, 5), 0, 5, 1.0, 0.5, 1.0)
        assert rep.count("upper") == 5 * 49  # every grid time after the start
        assert rep.count("lower") == 0

    def test_decay_violates_lower_with_small_L(self):
        rep = transport_bound_check(DECAY, _tangents(1, 3), 0, 5, 1.0, 0.5, 0.5)
        assert rep.count("lower") == 3 * 49
        assert rep.count("upper") == 0

    def test_overclaimed_rate(self):
        rep = transport_bound_check(DECAY, _tangents(1, 4), 0, 5, 1.0, 1.5, 1.0)
        assert rep.count("upper") > 0

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            transport_bound_check(DECAY, _tangents(1, 1), 0, 1, 0.5, 1.0, 1.0)
        with pytest.raises(ValueError):
            transport_bound_check(DECAY, _tangents(1, 1), 0, 1, 1.0, -1.0, 1.0)
