import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from incstab.metricgeo import MetricSpec
from incstab.sysdsl import (BinOp, Call, Const, DualScalar, EvalDomainError, Neg, ParseError,
                            SystemDef, SystemFileError, Time, Var, eval_expr, jacobian_ad,
                            parse_expression, parse_system_text, to_source)
from incstab.sysdsl.dual import seed
from incstab.sysdsl.evaluate import CompiledVector
from incstab.sysdsl.expr import FUNCTIONS

from oracles import central_jacobian


class TestParse:
    def test_single_variable(self):
        assert parse_expression("x2", 2) == Var(2)

    def test_linear_combination(self):
        e = parse_expression("-x1 - 2*x2", 2)
        assert eval_expr(e, [1.0, 1.0]) == -3.0

    def test_truncated_input_offset(self):
        with pytest.raises(ParseError) as info:
            parse_expression("x1 +", 1)
        assert info.value.offset == 4

    def test_power_binds_tighter_than_minus(self):
        assert parse_expression("-x1^2", 1) == Neg(BinOp("^", Var(1), Const(2.0)))
        assert eval_expr(parse_expression("-x1^2", 1), [3.0]) == -9.0

    def test_power_right_associative(self):
        assert eval_expr(parse_expression("2^3^2", 1), [0.0]) == 512.0

    def test_left_associative_minus_and_divide(self):
        assert eval_expr(parse_expression("8 - 3 - 2", 1), [0.0]) == 3.0
        assert eval_expr(parse_expression("8 / 4 / 2", 1), [0.0]) == 1.0

    def test_time_and_pi(self):
        e = parse_expression("sin(pi*t)", 1)
        assert abs(eval_expr(e, [0.0], 0.5) - 1.0) < 1e-15

    def test_named_state(self):
        e = parse_expression("theta * omega", 2, names=["theta", "omega"])
        assert e == BinOp("*", Var(1), Var(2))

    @pytest.mark.parametrize("src, offset, fragment", [
        ("x3", 0, "out of range"),
        ("x1 + y", 5, "unknown identifier"),
        ("foo(x1)", 0, "unknown function"),
        ("(x1", 3, "end of input"),
        ("x1 $ 2", 3, ""),
        ("x1 x2", 3, ""),
    ])
    def test_positioned_errors(self, src, offset, fragment):
        with pytest.raises(ParseError) as info:
            parse_expression(src, 2)
        assert info.value.offset == offset
        assert fragment in str(info.value)

    def test_time_rejected_where_disallowed(self):
        with pytest.raises(ParseError):
            parse_expression("t*x1", 1, allow_time=False)

    def test_offsets_are_bytes(self):
        with pytest.raises(ParseError) as info:
            parse_expression("x1 + ü", 1)
        assert info.value.offset == 5


class TestEval:
    def test_sin_t_zero(self):
        assert eval_expr(parse_expression("sin(t)*x1", 1), [5.0], 0.0) == 0.0

    def test_exp(self):
        assert math.isclose(eval_expr(parse_expression("exp(x1)", 1), [1.0]), math.e,
                            rel_tol=4e-16)

    @pytest.mark.parametrize("src, x", [("1/x1", 0.0), ("log(x1)", -1.0), ("sqrt(x1)", -2.0),
                                        ("x1^0.5", -1.0), ("log(x1 - 1)", 1.0)])
    def test_domain_errors(self, src, x):
        with pytest.raises(EvalDomainError) as info:
            eval_expr(parse_expression(src, 1), [x])
        assert info.value.offset >= 0

    def test_domain_error_points_at_node(self):
        src = "x1 + 1/x1"
        with pytest.raises(EvalDomainError) as info:
            eval_expr(parse_expression(src, 1), [0.0])
        assert src[info.value.offset] == "/"

    def test_integer_power_of_negative_base(self):
        assert eval_expr(parse_expression("x1^3", 1), [-2.0]) == -8.0

    def test_all_functions(self):
        x = 0.3
        for name in FUNCTIONS:
            got = eval_expr(parse_expression(f"{name}(x1)", 1), [x])
            assert math.isclose(got, getattr(math, name)(x), rel_tol=1e-15)

    def test_batched_matches_scalar(self):
        cv = CompiledVector([parse_expression(s, 2) for s in ["x1*x2 + sin(t)", "exp(-x2)"]], 2)
        X = np.random.default_rng(1).uniform(-1, 1, size=(2, 7))
        batched = cv.value(X, 0.4)
        for k in range(7):
            np.testing.assert_allclose(batched[:, k], cv.value(X[:, k], 0.4), rtol=1e-15)


class TestJacobian:
    def test_cubic(self):
        f = [parse_expression("-x1 - x1^3", 1)]
        np.testing.assert_array_equal(jacobian_ad(f, [1.0]), [[-4.0]])

    def test_linear_exact(self):
        A = np.array([[-1.5, 2.25], [0.125, -3.0]])
        f = [parse_expression(f"{float(A[i, 0])!r}*x1 + {float(A[i, 1])!r}*x2", 2) for i in range(2)]
        for x in ([0.0, 0.0], [0.7, -0.2], [100.0, 3.0]):
            np.testing.assert_array_equal(jacobian_ad(f, x), A)

    def test_pendulum_against_fd(self):
        f = [parse_expression(s, 2) for s in ["x2", "-sin(x1) - 0.5*x2"]]
        x = np.array([0.3, -1.0])
        ad = jacobian_ad(f, x)
        fd = central_jacobian(lambda y: [eval_expr(e, y) for e in f], x)
        np.testing.assert_allclose(ad, fd, atol=1e-8)

    BENCHMARKS = [
        ["-x1 - x1^3 + x2", "-x1 - x2 - x2^3"],
        ["x2", "-sin(x1) - 0.5*x2 + cos(t)"],
        ["-(2 + sin(t))*x1 + tanh(x2)", "atan(x1*x2) - exp(0.3*x2)"],
        ["sqrt(2 + x1^2) - cosh(x2/2)", "log(3 + x1) * sinh(x2) / (1 + x2^2)"],
        ["tan(0.5*x1) + x2^4", "(x1 + 2)^2.5 + (x2 + 2)^x1"],
    ]

    @pytest.mark.parametrize("srcs", BENCHMARKS)
    def test_random_points_against_fd(self, srcs):
        cv = CompiledVector([parse_expression(s, 2) for s in srcs], 2)
        rng = np.random.default_rng(7)
        X = rng.uniform(-1, 1, size=(2, 1000))
        T = rng.uniform(0, 10, size=1000)
        for k in range(1000):
            x, t = X[:, k], T[k]
            ad = cv.jacobian(x, t)
            fd = central_jacobian(lambda y: cv.value(y, t), x, 1e-5)
            assert np.all(np.abs(ad - fd) <= 1e-6 * np.maximum(1.0, np.abs(ad)))

    def test_batched_jacobian_shape(self):
        cv = CompiledVector([parse_expression(s, 2) for s in self.BENCHMARKS[0]], 2)
        X = np.random.default_rng(0).uniform(-1, 1, size=(2, 5))
        _, J = cv.value_and_jacobian(X, 0.0)
        assert J.shape == (2, 2, 5)
        np.testing.assert_allclose(J[:, :, 3], cv.jacobian(X[:, 3]), rtol=1e-15)

    def test_sqrt_at_zero_not_differentiable(self):
        with pytest.raises(EvalDomainError):
            jacobian_ad([parse_expression("sqrt(x1)", 1)], [0.0])


class TestDual:
    def test_product_rule(self):
        a, b = seed([2.0, 3.0])
        c = a * b + a / b - b ** 2
        assert c.value == pytest.approx(6 + 2 / 3 - 9)
        assert c.partials == pytest.approx((3 + 1 / 3, 2 - 2 / 9 - 6))

    def test_constant_arithmetic(self):
        (a,) = seed([1.5])
        d = 2.0 - a * 4.0
        assert isinstance(d, DualScalar)
        assert d.partials == (-4.0,)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-2, 2), st.floats(0.1, 3))
    def test_chain_rule_against_fd(self, x, y):
        srcs = ["sin(x1*x2) + exp(x1)/x2", "x2^x1 + tanh(x1 - x2)"]
        cv = CompiledVector([parse_expression(s, 2) for s in srcs], 2)
        p = np.array([x, y])
        ad = cv.jacobian(p)
        fd = central_jacobian(lambda q: cv.value(q), p, 1e-6)
        np.testing.assert_allclose(ad, fd, rtol=1e-5, atol=1e-6)


# -- hypothesis: printing round-trip and totality -----------------------------------

_leaf = st.one_of(
    st.floats(0, 1e6, allow_nan=False, allow_infinity=False).map(Const),
    st.integers(1, 3).map(Var),
    st.just(Time()),
)


def _grow(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda a: BinOp(*a)),
        st.tuples(st.sampled_from(FUNCTIONS), children).map(lambda a: Call(*a)),
    )


ast_strategy = st.recursive(_leaf, _grow, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(ast_strategy)
def test_print_parse_round_trip(node):
    assert parse_expression(to_source(node), 3) == node


@settings(max_examples=500, deadline=None)
@given(st.text(alphabet="x1234t+-*/^() .e,sincoxplqrtah", max_size=30))
def test_parse_is_total_on_fuzz(src):
    try:
        parse_expression(src, 3)
    except ParseError as exc:
        assert 0 <= exc.offset <= len(src.encode())


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=20))
def test_parse_is_total_on_arbitrary_text(src):
    try:
        parse_expression(src, 2)
    except ParseError as exc:
        assert 0 <= exc.offset <= len(src.encode())


# -- system files --------------------------------------------------------------------

SAMPLE = """
# damped oscillator
name = "osc"
state = ["x1", "x2"]
f = ["x2", "-x1-2*x2"]
"""


class TestSystemFile:
    def test_two_state(self):
        sys = parse_system_text(SAMPLE)
        assert sys.n == 2 and sys.name == "osc"
        np.testing.assert_array_equal(sys.jacobian([0.0, 0.0]), [[0, 1], [-1, -2]])

    def test_defaults(self):
        sys = parse_system_text(SAMPLE)
        assert sys.metric.kind == "euclidean"
        np.testing.assert_array_equal(sys.lower, [-1, -1])
        np.testing.assert_array_equal(sys.upper, [1, 1])
        assert sys.is_autonomous and not sys.has_h

    def test_indefinite_metric(self):
        with pytest.raises(SystemFileError, match=r"not positive definite \(eigenvalue -1\)"):
            parse_system_text(SAMPLE + 'metric.kind = "constant"\nmetric.P = [[1,2],[2,1]]\n')

    def test_full_file(self):
        text = SAMPLE + """
h = ["x1", "x2"]
metric.kind = "expr"
metric.m = ["exp(x1)",
            "1 + x2^2"]
domain.lower = [-2, -3]
domain.upper = [2, 3]
equilibrium = [0, 0]
"""
        sys = parse_system_text(text)
        assert sys.has_h and sys.metric.kind == "expr"
        np.testing.assert_allclose(sys.metric.matrix(np.array([1.0, 2.0])),
                                   np.diag([math.e, 5.0]))
        np.testing.assert_array_equal(sys.upper, [2, 3])

    @pytest.mark.parametrize("extra, fragment", [
        ('f = ["x1"]\n', "duplicate"),
        ('colour = "red"\n', "unknown key"),
        ('h = ["t*x1", "x2"]\n', "time"),
        ('domain.lower = [1, 1]\ndomain.upper = [0, 2]\n', "lower"),
        ('domain.lower = [0]\n', "domain"),
        ('equilibrium = [0, 0, 0]\n', "equilibrium"),
        ('metric.kind = "constant"\nmetric.P = [[1, 0]]\n', "metric"),
    ])
    def test_invalid(self, extra, fragment):
        with pytest.raises(SystemFileError, match=fragment):
            parse_system_text(SAMPLE + extra)

    def test_dimension_mismatch(self):
        with pytest.raises(SystemFileError):
            parse_system_text('state = ["a", "b"]\nf = ["a"]\n')

    def test_bad_expression_reports_line(self):
        with pytest.raises(SystemFileError) as info:
            parse_system_text('state = ["x1"]\nf = ["x1 +"]\n')
        assert info.value.line == 2

    def test_from_strings_roundtrip(self):
        sys = SystemDef.from_strings(["-x1 + sin(t)"], metric=MetricSpec.constant([[2.0]]))
        assert not sys.is_autonomous
        assert sys.rhs([1.0], 0.0)[0] == -1.0
