"""Unit tests for guard expressions."""

import pytest
from hypothesis import given, strategies as st

from protocol_testbed.domain.errors import GuardEvaluationError, GuardSyntaxError, GuardTypeError
from protocol_testbed.domain.guard import (
    Literal,
    ValueType,
    evaluate,
    infer_type,
    parse_guard,
    referenced_names,
)
from protocol_testbed.domain.value_objects import U64_MAX

U64 = st.integers(min_value=0, max_value=U64_MAX)


class TestParsing:
    """Tests for parse_guard."""

    def test_arithmetic_and_comparison(self):
        """Test arithmetic binds tighter than comparison."""
        assert evaluate(parse_guard("a + 1 == 3"), {"a": 2}) is True

    def test_logical_precedence(self):
        """Test 'and' binds tighter than 'or' and 'not' applies to a comparison."""
        expr = parse_guard("not a == 1 or a == 1 and false")
        assert evaluate(expr, {"a": 2}) is True
        assert evaluate(expr, {"a": 1}) is False

    def test_literals(self):
        """Test hex, byte string, text and boolean literals."""
        assert evaluate(parse_guard("0x10 == 16"), {}) is True
        assert evaluate(parse_guard('x"dead" == b'), {"b": b"\xde\xad"}) is True
        assert evaluate(parse_guard('t == "hi"'), {"t": "hi"}) is True
        assert parse_guard(True) == Literal(True)
        assert parse_guard(7) == Literal(7)

    def test_dotted_names(self):
        """Test names with dots are single references."""
        assert referenced_names(parse_guard("msg.seq == trigger.seq + n")) == {"msg.seq", "trigger.seq", "n"}

    @pytest.mark.parametrize("text", ["", "a ==", "(a == 1", "a $ 1", "a == 1 1", "18446744073709551616"])
    def test_syntax_errors(self, text):
        """Test malformed expressions are rejected."""
        with pytest.raises(GuardSyntaxError):
            parse_guard(text)


class TestTypes:
    """Tests for infer_type."""

    def test_comparison_is_bool(self):
        """Test a comparison of integers is boolean."""
        assert infer_type(parse_guard("a < b + 1"), {"a": ValueType.INT, "b": ValueType.INT}) == ValueType.BOOL

    @pytest.mark.parametrize(
        "text",
        ['a == "x"', 'x"00" < x"01"', "a and true", "not a", "a + true", "missing == 1"],
    )
    def test_type_errors(self, text):
        """Test ill-typed expressions are rejected statically."""
        with pytest.raises(GuardTypeError):
            infer_type(parse_guard(text), {"a": ValueType.INT})

    def test_bytes_equality(self):
        """Test byte strings support equality."""
        assert infer_type(parse_guard('b != x"00"'), {"b": ValueType.BYTES}) == ValueType.BOOL


class TestEvaluation:
    """Tests for checked evaluation."""

    def test_underflow(self):
        """Test subtraction below zero is an evaluation error."""
        with pytest.raises(GuardEvaluationError):
            evaluate(parse_guard("a - 1"), {"a": 0})

    def test_overflow(self):
        """Test addition past 64 bits is an evaluation error."""
        with pytest.raises(GuardEvaluationError):
            evaluate(parse_guard("a + 1"), {"a": U64_MAX})

    @given(U64, U64)
    def test_addition_is_checked(self, a, b):
        """Test addition either equals the exact sum or raises on overflow."""
        expr = parse_guard("a + b")
        if a + b > U64_MAX:
            with pytest.raises(GuardEvaluationError):
                evaluate(expr, {"a": a, "b": b})
        else:
            assert evaluate(expr, {"a": a, "b": b}) == a + b

    @given(U64, U64)
    def test_ordering_matches_python(self, a, b):
        """Test ordering operators agree with integer ordering."""
        env = {"a": a, "b": b}
        assert evaluate(parse_guard("a < b"), env) == (a < b)
        assert evaluate(parse_guard("a >= b"), env) == (a >= b)
