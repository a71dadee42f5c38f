"""Guard expression language: parsing, type checking and checked evaluation."""

import re
from dataclasses import dataclass
from enum import Enum
from typing import List, Mapping, Optional, Set, Tuple, Union

from protocol_testbed.domain.errors import (
    GuardEvaluationError,
    GuardSyntaxError,
    GuardTypeError,
    InternalSpecError,
)
from protocol_testbed.domain.value_objects import U64_MAX


class ValueType(Enum):
    """Static types of guard values."""

    INT = "int"
    BYTES = "bytes"
    TEXT = "text"
    BOOL = "bool"


Value = Union[int, bytes, str, bool]


@dataclass(frozen=True)
class Literal:
    value: Value


@dataclass(frozen=True)
class Name:
    path: str


@dataclass(frozen=True)
class Not:
    operand: "GuardExpr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "GuardExpr"
    right: "GuardExpr"


GuardExpr = Union[Literal, Name, Not, Binary]

COMPARISONS = ("==", "!=", "<", "<=", ">", ">=")
ARITHMETIC = ("+", "-")
LOGICAL = ("and", "or")

_TOKEN = re.compile(
    r"""\s*(?:
        (?P<hex>0x[0-9A-Fa-f]+)
      | (?P<int>\d+)
      | (?P<bytes>x"[0-9A-Fa-f]*")
      | (?P<text>"[^"]*")
      | (?P<op>==|!=|<=|>=|<|>|\+|-|\(|\))
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
    )""",
    re.VERBOSE,
)
_KEYWORDS = {"and", "or", "not", "true", "false"}


def value_type_of(value: Value) -> ValueType:
    """Runtime type of a value."""
    if isinstance(value, bool):
        return ValueType.BOOL
    if isinstance(value, int):
        return ValueType.INT
    if isinstance(value, bytes):
        return ValueType.BYTES
    if isinstance(value, str):
        return ValueType.TEXT
    raise GuardTypeError(f"unsupported value {value!r}")


def _tokenize(text: str) -> List[Tuple[str, str]]:
    tokens: List[Tuple[str, str]] = []
    position = 0
    text = text.rstrip()
    while position < len(text):
        match = _TOKEN.match(text, position)
        if not match or match.end() == position:
            raise GuardSyntaxError(f"unexpected character at offset {position} in {text!r}")
        kind = match.lastgroup or ""
        token = match.group(kind)
        if kind == "name" and token in _KEYWORDS:
            kind = "keyword"
        tokens.append((kind, token))
        position = match.end()
    return tokens


class _Parser:
    """Recursive descent over the token list."""

    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.index = 0

    def peek(self) -> Optional[Tuple[str, str]]:
        return self.tokens[self.index] if self.index < len(self.tokens) else None

    def accept(self, *values: str) -> Optional[str]:
        token = self.peek()
        if token and token[0] in ("op", "keyword") and token[1] in values:
            self.index += 1
            return token[1]
        return None

    def expect(self, value: str) -> None:
        if not self.accept(value):
            raise GuardSyntaxError(f"expected '{value}' in {self.text!r}")

    def parse(self) -> GuardExpr:
        if not self.tokens:
            raise GuardSyntaxError("empty expression")
        expr = self.parse_or()
        if self.peek() is not None:
            raise GuardSyntaxError(f"unexpected '{self.peek()[1]}' in {self.text!r}")
        return expr

    def parse_or(self) -> GuardExpr:
        expr = self.parse_and()
        while self.accept("or"):
            expr = Binary("or", expr, self.parse_and())
        return expr

    def parse_and(self) -> GuardExpr:
        expr = self.parse_not()
        while self.accept("and"):
            expr = Binary("and", expr, self.parse_not())
        return expr

    def parse_not(self) -> GuardExpr:
        if self.accept("not"):
            return Not(self.parse_not())
        return self.parse_comparison()

    def parse_comparison(self) -> GuardExpr:
        left = self.parse_additive()
        op = self.accept(*COMPARISONS)
        if op:
            return Binary(op, left, self.parse_additive())
        return left

    def parse_additive(self) -> GuardExpr:
        expr = self.parse_primary()
        while True:
            op = self.accept(*ARITHMETIC)
            if not op:
                return expr
            expr = Binary(op, expr, self.parse_primary())

    def parse_primary(self) -> GuardExpr:
        token = self.peek()
        if token is None:
            raise GuardSyntaxError(f"unexpected end of {self.text!r}")
        kind, text = token
        if self.accept("("):
            expr = self.parse_or()
            self.expect(")")
            return expr
        self.index += 1
        if kind in ("int", "hex"):
            value = int(text, 0)
            if value > U64_MAX:
                raise GuardSyntaxError(f"integer literal {text} exceeds 64 bits")
            return Literal(value)
        if kind == "bytes":
            return Literal(bytes.fromhex(text[2:-1]))
        if kind == "text":
            return Literal(text[1:-1])
        if kind == "keyword" and text in ("true", "false"):
            return Literal(text == "true")
        if kind == "name":
            return Name(text)
        raise GuardSyntaxError(f"unexpected '{text}' in {self.text!r}")


def parse_guard(text: Union[str, int, bool]) -> GuardExpr:
    """Parse guard text. Bare YAML scalars (integers, booleans) become literals."""
    if isinstance(text, bool) or isinstance(text, int):
        return Literal(text)
    return _Parser(str(text)).parse()


def referenced_names(expr: GuardExpr) -> Set[str]:
    """Every dotted name read by the expression."""
    if isinstance(expr, Name):
        return {expr.path}
    if isinstance(expr, Not):
        return referenced_names(expr.operand)
    if isinstance(expr, Binary):
        return referenced_names(expr.left) | referenced_names(expr.right)
    return set()


def infer_type(expr: GuardExpr, types: Mapping[str, ValueType]) -> ValueType:
    """
    Static type of expr. Comparisons need like types; ordering and
    arithmetic need integers; byte and text strings support equality only.
    """
    if isinstance(expr, Literal):
        return value_type_of(expr.value)
    if isinstance(expr, Name):
        if expr.path not in types:
            raise GuardTypeError(f"undefined name '{expr.path}'")
        return types[expr.path]
    if isinstance(expr, Not):
        if infer_type(expr.operand, types) != ValueType.BOOL:
            raise GuardTypeError("'not' needs a boolean operand")
        return ValueType.BOOL
    left = infer_type(expr.left, types)
    right = infer_type(expr.right, types)
    if expr.op in LOGICAL:
        if left != ValueType.BOOL or right != ValueType.BOOL:
            raise GuardTypeError(f"'{expr.op}' needs boolean operands")
        return ValueType.BOOL
    if left != right:
        raise GuardTypeError(f"'{expr.op}' compares {left.value} with {right.value}")
    if expr.op in ARITHMETIC:
        if left != ValueType.INT:
            raise GuardTypeError(f"'{expr.op}' needs integers, got {left.value}")
        return ValueType.INT
    if expr.op in ("==", "!="):
        return ValueType.BOOL
    if left != ValueType.INT:
        raise GuardTypeError(f"'{expr.op}' orders integers only, got {left.value}")
    return ValueType.BOOL


def evaluate(expr: GuardExpr, env: Mapping[str, Value]) -> Value:
    """Strict evaluation with checked unsigned 64-bit arithmetic."""
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, Name):
        try:
            return env[expr.path]
        except KeyError:
            raise InternalSpecError(f"name '{expr.path}' is not bound") from None
    if isinstance(expr, Not):
        return not evaluate(expr.operand, env)
    left = evaluate(expr.left, env)
    right = evaluate(expr.right, env)
    op = expr.op
    if op == "and":
        return bool(left) and bool(right)
    if op == "or":
        return bool(left) or bool(right)
    if op == "+":
        result = left + right  # type: ignore[operator]
        if result > U64_MAX:
            raise GuardEvaluationError(f"{left} + {right} overflows 64 bits")
        return result
    if op == "-":
        result = left - right  # type: ignore[operator]
        if result < 0:
            raise GuardEvaluationError(f"{left} - {right} underflows")
        return result
    if op == "==":
        return left == right
    if op == "!=":
        return left != right
    if op == "<":
        return left < right  # type: ignore[operator]
    if op == "<=":
        return left <= right  # type: ignore[operator]
    if op == ">":
        return left > right  # type: ignore[operator]
    if op == ">=":
        return left >= right  # type: ignore[operator]
    raise InternalSpecError(f"unknown operator {op}")
