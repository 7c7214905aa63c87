"""Arithmetic coefficient expressions over ``t, x1..xn, y, z1..zd, u1..uk``.

Grammar (lowest to highest binding)::

    sum     := product (('+' | '-') product)*
    product := signed (('*' | '/') signed)*
    signed  := ('-' | '+') signed | power
    power   := atom ('^' signed)?          # right-associative
    atom    := number | name | func '(' sum (',' sum)* ')' | '(' sum ')'

The parser is an operator-precedence (shunting-yard) machine, so input
length never translates into Python recursion depth.  Trees deeper than
``MAX_DEPTH`` are rejected at parse time, which keeps evaluation, printing
and comparison bounded as well.

Evaluation works on floats and on numpy arrays alike (everything
broadcasts), which is how the solvers evaluate coefficients over whole
path ensembles at once.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .errors import FbhjbError

MAX_DEPTH = 200

UNARY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "tanh": np.tanh,
    "abs": np.abs,
    "sqrt": np.sqrt,
}
NARY_FUNCS = {"min": np.minimum, "max": np.maximum}
FUNCTIONS = frozenset(UNARY_FUNCS) | frozenset(NARY_FUNCS)


class ExprError(FbhjbError):
    module = "expr"

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at offset {offset})")
        self.offset = offset


class ExprSyntaxError(ExprError):
    """Malformed input. ``offset`` is a byte offset into the UTF-8 source."""

    def __init__(self, message: str, offset: int, expected=()):
        super().__init__(message, offset)
        self.expected = frozenset(expected)


class UnknownVariable(ExprError):
    def __init__(self, name: str, offset: int | None = None):
        super().__init__(f"unknown variable {name!r}", offset)
        self.name = name


class UnknownFunction(UnknownVariable):
    def __init__(self, name: str, offset: int | None = None):
        ExprError.__init__(self, f"unknown function {name!r}", offset)
        self.name = name


class DimensionError(ExprError):
    def __init__(self, name: str, limit: int, offset: int | None = None):
        super().__init__(f"{name!r} exceeds declared dimension {limit}", offset)
        self.name = name


class DomainError(ExprError):
    def __init__(self, message: str, offset: int | None, subexpression: str):
        super().__init__(f"{message} in {subexpression!r}", offset)
        self.subexpression = subexpression


# --------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)
    depth: int = field(default=1, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False)
    depth: int = field(default=1, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Node"
    pos: int = field(default=0, compare=False)
    depth: int = field(default=1, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"
    pos: int = field(default=0, compare=False)
    depth: int = field(default=1, compare=False)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    pos: int = field(default=0, compare=False)
    depth: int = field(default=1, compare=False)


Node = Union[Num, Var, Neg, BinOp, Call]


def to_source(node: Node) -> str:
    """Fully parenthesised text that parses back to an equal tree."""
    if isinstance(node, Num):
        return "1e999" if math.isinf(node.value) else repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    return f"{node.name}({', '.join(to_source(a) for a in node.args)})"


def free_variables(node: Node) -> frozenset[str]:
    out: set[str] = set()
    stack = [node]
    while stack:
        cur = stack.pop()
        if isinstance(cur, Var):
            out.add(cur.name)
        elif isinstance(cur, Neg):
            stack.append(cur.operand)
        elif isinstance(cur, BinOp):
            stack.extend((cur.left, cur.right))
        elif isinstance(cur, Call):
            stack.extend(cur.args)
    return frozenset(out)


# ------------------------------------------------------------------ lexing

_NUMBER = re.compile(r"([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_INDEXED = re.compile(r"([xzu])([0-9]+)")
_OPERATORS = "+-*/^(),"
_DIGITS = "0123456789"
OPERAND_START = frozenset({"number", "identifier", "(", "-", "+"})


@dataclass(frozen=True)
class _Tok:
    kind: str  # "num", "name", "op", "end"
    text: str
    pos: int  # character offset


def _tokenize(source: str, byte_offset) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch in _DIGITS or (ch == "." and i + 1 < n and source[i + 1] in _DIGITS):
            m = _NUMBER.match(source, i)
            end = m.end()
            if end < n and source[end] in "eE":
                raise ExprSyntaxError("malformed exponent", byte_offset(end + 1),
                                      {"digit"})
            toks.append(_Tok("num", m.group(0), i))
            i = end
            continue
        if ch.isascii() and (ch.isalpha() or ch == "_"):
            m = _IDENT.match(source, i)
            toks.append(_Tok("name", m.group(0), i))
            i = m.end()
            continue
        if ch in _OPERATORS:
            toks.append(_Tok("op", ch, i))
            i += 1
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", byte_offset(i), OPERAND_START)
    toks.append(_Tok("end", "", n))
    return toks


# ----------------------------------------------------------------- parsing

_BINARY_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3


@dataclass
class _Frame:
    """Open-parenthesis marker on the operator stack."""

    pos: int
    func: str | None = None
    argc: int = 1


def _check_variable(name: str, dims: Mapping[str, int] | None, offset: int) -> None:
    if name in ("t", "y"):
        return
    m = _INDEXED.fullmatch(name)
    if m is None:
        raise UnknownVariable(name, offset)
    if dims is None:
        return
    limit = {"x": dims.get("n", 0), "z": dims.get("d", 0), "u": dims.get("k", 0)}[m.group(1)]
    index = int(m.group(2))
    if index < 1 or index > limit:
        raise DimensionError(name, limit, offset)


def _parse_tree(source: str, dims: Mapping[str, int]) -> Node:
    encoded_prefix = None
    if not source.isascii():
        encoded_prefix = np.cumsum([0] + [len(c.encode("utf-8")) for c in source])

    def boff(i: int) -> int:
        return i if encoded_prefix is None else int(encoded_prefix[i])

    toks = _tokenize(source, boff)
    out: list[Node] = []
    ops: list = []  # str binary op, ("neg", pos) or _Frame

    def build(kind, pos: int) -> None:
        if kind == "neg":
            a = out.pop()
            node = Neg(a, pos=boff(pos), depth=a.depth + 1)
        else:
            r = out.pop()
            left = out.pop()
            node = BinOp(kind, left, r, pos=boff(pos), depth=max(left.depth, r.depth) + 1)
        if node.depth > MAX_DEPTH:
            raise ExprSyntaxError(f"expression nested deeper than {MAX_DEPTH}", boff(pos))
        out.append(node)

    def expected_after_operand() -> set[str]:
        exp = set("+-*/^")
        frames = [o for o in ops if isinstance(o, _Frame)]
        if frames:
            exp.add(")")
            if frames[-1].func is not None:
                exp.add(",")
        else:
            exp.add("end")
        return exp

    def close_to_frame(pos: int) -> _Frame | None:
        while ops and not isinstance(ops[-1], _Frame):
            top = ops.pop()
            build(top[0], top[1])
        return ops.pop() if ops else None

    want_operand = True
    i = 0
    while True:
        tok = toks[i]
        if want_operand:
            if tok.kind == "num":
                out.append(Num(float(tok.text), pos=boff(tok.pos)))
                want_operand = False
            elif tok.kind == "name":
                nxt = toks[i + 1]
                if nxt.kind == "op" and nxt.text == "(":
                    if tok.text not in FUNCTIONS:
                        raise UnknownFunction(tok.text, boff(tok.pos))
                    ops.append(_Frame(tok.pos, func=tok.text))
                    i += 2
                    continue
                if tok.text in FUNCTIONS:
                    raise ExprSyntaxError(f"function {tok.text!r} needs arguments",
                                          boff(nxt.pos), {"("})
                _check_variable(tok.text, dims, boff(tok.pos))
                out.append(Var(tok.text, pos=boff(tok.pos)))
                want_operand = False
            elif tok.kind == "op" and tok.text == "(":
                ops.append(_Frame(tok.pos))
            elif tok.kind == "op" and tok.text == "-":
                ops.append(("neg", tok.pos))
            elif tok.kind == "op" and tok.text == "+":
                pass
            else:
                what = "end of input" if tok.kind == "end" else repr(tok.text)
                raise ExprSyntaxError(f"expected operand, found {what}", boff(tok.pos),
                                      OPERAND_START)
        else:
            if tok.kind == "op" and tok.text in _BINARY_PREC:
                prec = _BINARY_PREC[tok.text]
                while ops and not isinstance(ops[-1], _Frame):
                    top = ops[-1]
                    top_prec = _NEG_PREC if top[0] == "neg" else _BINARY_PREC[top[0]]
                    if top_prec > prec or (top_prec == prec and tok.text != "^"):
                        ops.pop()
                        build(top[0], top[1])
                    else:
                        break
                ops.append((tok.text, tok.pos))
                want_operand = True
            elif tok.kind == "op" and tok.text in "),":
                frame = close_to_frame(tok.pos)
                if frame is None or (tok.text == "," and frame.func is None):
                    raise ExprSyntaxError(f"unexpected {tok.text!r}", boff(tok.pos),
                                          expected_after_operand() if frame is None
                                          else expected_after_operand() - {","})
                if tok.text == ",":
                    frame.argc += 1
                    ops.append(frame)
                    want_operand = True
                elif frame.func is not None:
                    _finish_call(frame, out, boff)
            elif tok.kind == "end":
                frame = close_to_frame(tok.pos)
                if frame is not None:
                    raise ExprSyntaxError("unbalanced '('", boff(tok.pos),
                                          {")", ","} if frame.func else {")"})
                break
            else:
                raise ExprSyntaxError(f"expected operator, found {tok.text!r}",
                                      boff(tok.pos), expected_after_operand())
        i += 1
    return out[0]


def _finish_call(frame: _Frame, out: list, boff) -> None:
    args = tuple(out[len(out) - frame.argc:])
    del out[len(out) - frame.argc:]
    name = frame.func
    if name in UNARY_FUNCS and len(args) != 1:
        raise ExprSyntaxError(f"{name} takes exactly one argument", boff(frame.pos), {")"})
    if name in NARY_FUNCS and len(args) < 2:
        raise ExprSyntaxError(f"{name} takes at least two arguments", boff(frame.pos), {","})
    depth = max(a.depth for a in args) + 1
    if depth > MAX_DEPTH:
        raise ExprSyntaxError(f"expression nested deeper than {MAX_DEPTH}", boff(frame.pos))
    out.append(Call(name, args, pos=boff(frame.pos), depth=depth))


# -------------------------------------------------------------- evaluation


def _domain(node: Node, message: str):
    return DomainError(message, node.pos, to_source(node))


def eval_node(node: Node, env: Mapping[str, object]):
    """Evaluate a tree; values in ``env`` may be floats or arrays."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise UnknownVariable(node.name, node.pos) from None
    if isinstance(node, Neg):
        return -eval_node(node.operand, env)
    if isinstance(node, BinOp):
        a = eval_node(node.left, env)
        b = eval_node(node.right, env)
        op = node.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if np.any(np.asarray(b) == 0):
                raise _domain(node, "division by zero")
            return np.true_divide(a, b)
        with np.errstate(all="ignore"):
            res = np.power(np.asarray(a, dtype=float), b)
        base = np.asarray(a, dtype=float)
        expo = np.asarray(b, dtype=float)
        if np.any((base == 0) & (expo < 0)):
            raise _domain(node, "zero raised to a negative power")
        if np.any(np.isnan(res) & ~np.isnan(base) & ~np.isnan(expo)):
            raise _domain(node, "negative base with fractional exponent")
        return res if np.ndim(res) else float(res)
    args = [eval_node(a, env) for a in node.args]
    name = node.name
    if name in NARY_FUNCS:
        fn = NARY_FUNCS[name]
        res = args[0]
        for a in args[1:]:
            res = fn(res, a)
        return res
    arg = args[0]
    if name == "log" and np.any(np.asarray(arg) <= 0):
        raise _domain(node, "log of a nonpositive value")
    if name == "sqrt" and np.any(np.asarray(arg) < 0):
        raise _domain(node, "sqrt of a negative value")
    with np.errstate(over="ignore"):
        res = UNARY_FUNCS[name](arg)
    return res if np.ndim(res) else float(res)


@dataclass(frozen=True)
class Expression:
    """A parsed coefficient expression."""

    source: str
    ast: Node
    variables: frozenset = frozenset()

    def evaluate(self, point: Mapping[str, object]):
        return evaluate(self, point)

    def __str__(self) -> str:
        return to_source(self.ast)


def parse(source: str, dims: Mapping[str, int] | None = None) -> Expression:
    """Parse ``source`` with variable indices checked against ``dims``.

    ``dims`` maps ``n``, ``d`` and ``k`` to the state, noise and control
    dimensions; missing keys count as zero.  ``None`` skips index checks.
    """
    ast = _parse_tree(source, dims)
    return Expression(source, ast, free_variables(ast))


def evaluate(e: Expression, point: Mapping[str, object]):
    """Evaluate ``e`` at a full variable binding (scalars or arrays)."""
    if isinstance(e, Expression):
        return eval_node(e.ast, point)
    return eval_node(e, point)
