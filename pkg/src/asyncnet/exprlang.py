"""Expression language for vector-field components, guards and level functions.

Grammar (lowest to highest binding)::

    expr    := or
    or      := and ("or" and)*
    and     := not ("and" not)*
    not     := "not" not | cmp
    cmp     := sum (("<" | "<=" | ">" | ">=" | "=" | "!=") sum)?
    sum     := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | atom
    atom    := NUMBER | NAME | NAME "[" INT "]" "[" INT "]"
             | FUNC "(" expr ("," expr)* ")" | "(" expr ")"

Comparisons are exact (no tolerance) and do not chain.  ``==``, ``<>`` and
the unicode forms of the comparison operators are accepted on input; the
printer always emits the ASCII forms above.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi
THREE_HALF_PI = 1.5 * math.pi

FUNCTIONS = {
    "sin": 1, "cos": 1, "tan": 1, "exp": 1, "log": 1, "abs": 1, "mod2pi": 1,
    "min": 2, "max": 2, "circ_dist": 2,
}
KEYWORDS = {"and", "or", "not"}
ARITH_OPS = ("+", "-", "*", "/")
CMP_OPS = ("<", "<=", ">", ">=", "=", "!=")


class ExprError(Exception):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int, expected: frozenset = frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class EvaluationError(ExprError):
    def __init__(self, message: str, subexpr: "Expression | None" = None):
        self.subexpr = subexpr
        where = f" in '{to_text(subexpr)}'" if subexpr is not None else ""
        super().__init__(message + where)


class UnboundVariable(EvaluationError):
    pass


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"numeric literal must be finite and non-negative, got {self.value!r}")
        object.__setattr__(self, "value", v)


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple

    def __post_init__(self):
        if self.func not in FUNCTIONS:
            raise ValueError(f"unknown function {self.func!r}")
        if len(self.args) != FUNCTIONS[self.func]:
            raise ValueError(f"{self.func} takes {FUNCTIONS[self.func]} argument(s)")


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Not:
    operand: "Expression"


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" | "or"
    left: "Expression"
    right: "Expression"


Expression = Union[Num, Var, Neg, BinOp, Call, Compare, Not, BoolOp]


def children(e: Expression) -> tuple:
    if isinstance(e, (Num, Var)):
        return ()
    if isinstance(e, (Neg, Not)):
        return (e.operand,)
    if isinstance(e, Call):
        return e.args
    return (e.left, e.right)


def free_variables(e: Expression) -> frozenset:
    """Names of all variables syntactically reachable in ``e``."""
    out = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.name)
        else:
            stack.extend(children(node))
    return frozenset(out)


def is_boolean(e: Expression) -> bool:
    return isinstance(e, (Compare, Not, BoolOp))


def check_kinds(e: Expression, want: str = "real") -> None:
    """Raise ExprError unless ``e`` is well-typed with result kind ``want``."""
    got = "bool" if is_boolean(e) else "real"
    if got != want:
        raise ExprError(f"expected a {want} expression, got {got}: '{to_text(e)}'")
    if isinstance(e, (Neg, BinOp, Call, Compare)):
        for c in children(e):
            check_kinds(c, "real")
    elif isinstance(e, (Not, BoolOp)):
        for c in children(e):
            check_kinds(c, "bool")


def substitute(e: Expression, mapping: Mapping[str, Expression]) -> Expression:
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Num):
        return e
    if isinstance(e, (Neg, Not)):
        return type(e)(substitute(e.operand, mapping))
    if isinstance(e, Call):
        return Call(e.func, tuple(substitute(a, mapping) for a in e.args))
    return type(e)(e.op, substitute(e.left, mapping), substitute(e.right, mapping))


# ---------------------------------------------------------------------------
# circle-aware primitives

def mod2pi(x: float) -> float:
    r = math.fmod(x, TWO_PI)
    if r < 0.0:
        r += TWO_PI
        if r >= TWO_PI:
            r = 0.0
    return r


def circ_dist(u: float, v: float) -> float:
    d = math.fmod(abs(u - v), TWO_PI)
    return TWO_PI - d if d > math.pi else d


# Angles are stored as doubles with float(pi) standing for the half turn; the
# trig primitives are exact at the quarter-turn lattice of that representation
# so that symmetric configurations (e.g. antiphase) are preserved bit-for-bit.
def sin(x: float) -> float:
    r = math.fmod(x, TWO_PI)
    if r == 0.0 or r == math.pi or r == -math.pi:
        return 0.0
    if r == HALF_PI or r == -THREE_HALF_PI:
        return 1.0
    if r == -HALF_PI or r == THREE_HALF_PI:
        return -1.0
    return math.sin(x)


def cos(x: float) -> float:
    r = math.fmod(x, TWO_PI)
    if r == 0.0:
        return 1.0
    if r == math.pi or r == -math.pi:
        return -1.0
    if r in (HALF_PI, -HALF_PI, THREE_HALF_PI, -THREE_HALF_PI):
        return 0.0
    return math.cos(x)


def tan(x: float) -> float:
    r = math.fmod(x, TWO_PI)
    if r == 0.0 or r == math.pi or r == -math.pi:
        return 0.0
    return math.tan(x)


def log(x: float) -> float:
    if x <= 0.0:
        raise ValueError("log of non-positive value")
    return math.log(x)


def exp(x: float) -> float:
    return math.exp(x)


RUNTIME = {
    "sin": sin, "cos": cos, "tan": tan, "exp": exp, "log": log, "abs": abs,
    "mod2pi": mod2pi, "min": min, "max": max, "circ_dist": circ_dist,
}


# ---------------------------------------------------------------------------
# tokenizer and parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|==|!=|<>|[-+*/()<>=,\[\]]|≤|≥|≠)
    """,
    re.VERBOSE,
)
_OP_ALIASES = {"==": "=", "<>": "!=", "≤": "<=", "≥": ">=", "≠": "!="}


def _tokenize(src: str) -> list:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", len(src[:pos].encode()))
        kind = m.lastgroup
        text = m.group(kind)
        offset = len(src[:pos].encode())
        if kind == "op":
            tokens.append(("op", _OP_ALIASES.get(text, text), offset))
        elif kind != "ws":
            tokens.append((kind, text, offset))
        pos = m.end()
    tokens.append(("end", "", len(src.encode())))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, val, off = self.peek()
        if val != text or kind == "end":
            raise ParseError(f"unexpected {val or 'end of input'!r}", off, {text})
        return self.take()

    def at(self, *texts) -> bool:
        kind, val, _ = self.peek()
        return kind in ("op", "name") and val in texts

    def parse(self) -> Expression:
        e = self.or_()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", off, {"end of input", "and", "or", "+", "-", "*", "/"})
        return e

    def or_(self):
        e = self.and_()
        while self.at("or"):
            self.take()
            e = BoolOp("or", e, self.and_())
        return e

    def and_(self):
        e = self.not_()
        while self.at("and"):
            self.take()
            e = BoolOp("and", e, self.not_())
        return e

    def not_(self):
        if self.at("not"):
            self.take()
            return Not(self.not_())
        return self.cmp()

    def cmp(self):
        e = self.sum()
        if self.at(*CMP_OPS):
            op = self.take()[1]
            e = Compare(op, e, self.sum())
            if self.at(*CMP_OPS):
                _, val, off = self.peek()
                raise ParseError("comparisons do not chain", off)
        return e

    def sum(self):
        e = self.term()
        while self.at("+", "-"):
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.at("*", "/"):
            op = self.take()[1]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self):
        if self.at("-"):
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in KEYWORDS:
                raise ParseError(f"unexpected keyword {val!r}", off, {"number", "name", "(", "-"})
            if val in FUNCTIONS:
                self.expect("(")
                args = [self.or_()]
                while self.at(","):
                    self.take()
                    args.append(self.or_())
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise ParseError(f"{val} takes {FUNCTIONS[val]} argument(s), got {len(args)}", off)
                return Call(val, tuple(args))
            if val == "x" and self.at("["):
                idx = []
                for _ in range(2):
                    self.expect("[")
                    k, v, o = self.take()
                    if k != "num" or not v.isdigit():
                        raise ParseError("expected an integer index", o, {"integer"})
                    idx.append(int(v))
                    self.expect("]")
                return Var(f"x[{idx[0]}][{idx[1]}]")
            return Var(val)
        if kind == "op" and val == "(":
            e = self.or_()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {val or 'end of input'!r}", off, {"number", "name", "(", "-"})


def parse(src: str) -> Expression:
    if not src or not src.strip():
        raise ParseError("empty expression", 0, {"number", "name", "(", "-"})
    return _Parser(src).parse()


# ---------------------------------------------------------------------------
# printer

_PREC = {"or": 1, "and": 2, "not": 3, "cmp": 4, "+": 5, "-": 5, "*": 6, "/": 6, "neg": 7, "atom": 8}


def _prec(e: Expression) -> int:
    if isinstance(e, BoolOp):
        return _PREC[e.op]
    if isinstance(e, Not):
        return _PREC["not"]
    if isinstance(e, Compare):
        return _PREC["cmp"]
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def format_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_text(e: Expression) -> str:
    """Canonical text form; ``parse(to_text(e)) == e``."""
    if isinstance(e, Num):
        return format_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_text(a) for a in e.args)})"
    if isinstance(e, Neg):
        inner = to_text(e.operand)
        return "-" + (inner if _prec(e.operand) >= _PREC["neg"] else f"({inner})")
    if isinstance(e, Not):
        inner = to_text(e.operand)
        return "not " + (inner if _prec(e.operand) >= _PREC["not"] else f"({inner})")
    p = _prec(e)
    lt, rt = to_text(e.left), to_text(e.right)
    if isinstance(e, Compare):
        # comparisons do not chain: both sides need strictly higher precedence
        if _prec(e.left) <= p:
            lt = f"({lt})"
        if _prec(e.right) <= p:
            rt = f"({rt})"
    else:
        if _prec(e.left) < p:
            lt = f"({lt})"
        if _prec(e.right) <= p:
            rt = f"({rt})"
    return f"{lt} {e.op} {rt}"


# ---------------------------------------------------------------------------
# evaluation

def evaluate(e: Expression, env: Mapping[str, float]):
    """Evaluate ``e`` in IEEE double arithmetic; predicates yield booleans."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundVariable(f"unbound variable {e.name!r}", e) from None
    if isinstance(e, Neg):
        return -evaluate(e.operand, env)
    if isinstance(e, Not):
        return not evaluate(e.operand, env)
    if isinstance(e, BoolOp):
        left = evaluate(e.left, env)
        if e.op == "and":
            return left and evaluate(e.right, env)
        return left or evaluate(e.right, env)
    if isinstance(e, Call):
        args = [evaluate(a, env) for a in e.args]
        try:
            return RUNTIME[e.func](*args)
        except (ValueError, OverflowError) as exc:
            raise EvaluationError(f"domain error: {exc}", e) from None
    a = evaluate(e.left, env)
    b = evaluate(e.right, env)
    if isinstance(e, Compare):
        return _COMPARE[e.op](a, b)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if b == 0.0:
        raise EvaluationError("division by zero", e)
    return a / b


_COMPARE = {
    "<": lambda a, b: a < b, "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b, ">=": lambda a, b: a >= b,
    "=": lambda a, b: a == b, "!=": lambda a, b: a != b,
}


# ---------------------------------------------------------------------------
# compilation to Python closures (hot path of the integrator)

def to_python(e: Expression, slots: Mapping[str, str], constants: Mapping[str, float]) -> str:
    """Python source for ``e``; ``slots`` maps variable names to source
    fragments (e.g. ``"s[3]"``), constants are inlined."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        if e.name in slots:
            return slots[e.name]
        if e.name in constants:
            return f"({float(constants[e.name])!r})"
        raise UnboundVariable(f"unbound variable {e.name!r}", e)
    if isinstance(e, Neg):
        return f"(-{to_python(e.operand, slots, constants)})"
    if isinstance(e, Not):
        return f"(not {to_python(e.operand, slots, constants)})"
    if isinstance(e, Call):
        args = ", ".join(to_python(a, slots, constants) for a in e.args)
        return f"_{e.func}({args})"
    lt = to_python(e.left, slots, constants)
    rt = to_python(e.right, slots, constants)
    if isinstance(e, BoolOp):
        return f"({lt} {e.op} {rt})"
    if isinstance(e, Compare):
        op = "==" if e.op == "=" else e.op
        return f"({lt} {op} {rt})"
    return f"({lt} {e.op} {rt})"


COMPILE_NAMESPACE = {f"_{k}": v for k, v in RUNTIME.items()}


def compile_function(params: str, body: str) -> Callable:
    src = f"def _f({params}):\n    return {body}\n"
    ns = dict(COMPILE_NAMESPACE)
    exec(compile(src, "<asyncnet-expr>", "exec"), ns)
    return ns["_f"]


def compile_expr(e: Expression, slots: Mapping[str, str], constants: Mapping[str, float],
                 params: str = "s, t") -> Callable:
    return compile_function(params, to_python(e, slots, constants))


# ---------------------------------------------------------------------------
# normalization (used for boundary-equality checks)

_COMMUTATIVE = {"+", "*"}


def normalize(e: Expression) -> Expression:
    """Constant folding plus canonical operand order for ``+`` and ``*``."""
    if isinstance(e, (Num, Var)):
        return e
    if isinstance(e, Neg):
        inner = normalize(e.operand)
        if isinstance(inner, Neg):
            return inner.operand
        if isinstance(inner, Num) and inner.value == 0.0:
            return Num(0.0)
        return Neg(inner)
    if isinstance(e, Not):
        return Not(normalize(e.operand))
    if isinstance(e, Call):
        args = tuple(normalize(a) for a in e.args)
        if all(isinstance(a, Num) for a in args):
            try:
                return _num(RUNTIME[e.func](*(a.value for a in args)))
            except (ValueError, OverflowError):
                pass
        return Call(e.func, args)
    left, right = normalize(e.left), normalize(e.right)
    if isinstance(e, BinOp):
        lv = _value(left)
        rv = _value(right)
        if lv is not None and rv is not None and not (e.op == "/" and rv == 0.0):
            return _num(evaluate(BinOp(e.op, _num(lv), _num(rv)), {}))
        if e.op == "+" and rv == 0.0:
            return left
        if e.op == "+" and lv == 0.0:
            return right
        if e.op == "-" and rv == 0.0:
            return left
        if e.op == "-" and lv == 0.0:
            return normalize(Neg(right))
        if e.op == "*" and rv == 1.0:
            return left
        if e.op == "*" and lv == 1.0:
            return right
        if e.op == "/" and rv == 1.0:
            return left
        if e.op in _COMMUTATIVE and to_text(right) < to_text(left):
            left, right = right, left
        return BinOp(e.op, left, right)
    return type(e)(e.op, left, right)


def _value(e: Expression):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Neg) and isinstance(e.operand, Num):
        return -e.operand.value
    return None


def _num(v: float) -> Expression:
    return Num(v) if v >= 0 or v != v else Neg(Num(-v))


def structurally_equal(a: Expression, b: Expression) -> bool:
    return normalize(a) == normalize(b)
