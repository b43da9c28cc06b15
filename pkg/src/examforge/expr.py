"""Math/condition expression language: parser, evaluator, structural analysis.

The language covers arithmetic with the usual precedence (``^`` right
associative, then unary minus, ``*``/``/``, ``+``/``-``), comparisons,
``!``/``&&``/``||`` for conditions, double-quoted strings, and calls to a
fixed registry of function names.  Expressions are immutable trees; every
operation here is pure given an explicit RNG, so values can be shared freely
across threads.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from random import Random
from statistics import NormalDist, fmean, stdev
from typing import Callable, Iterable, Mapping, Sequence, Union


class ExprError(Exception):
    """Base class for all expression-language failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class UnknownFunctionError(ExprSyntaxError):
    def __init__(self, name: str, position: int):
        super().__init__(f"unknown function '{name}'", position)
        self.name = name


class EvalError(ExprError):
    """Evaluation failure with a coarse kind: 'unbound' | 'domain' | 'arity'."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class OccurrenceError(ExprError):
    """Requested call occurrence does not exist in the tree."""


class EquivalenceDomainError(ExprError):
    """Too many sample points were discarded while testing equivalence."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: Union[int, float]


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class Unary:
    op: str  # '-' or '!'
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Union[Num, Str, Name, Unary, Binary, Call]


@dataclass(frozen=True)
class ImageValue:
    """Opaque media payload produced by plot builtins."""

    media_type: str
    data: bytes

    @property
    def media_id(self) -> str:
        import hashlib

        return hashlib.blake2s(self.data, digest_size=12).hexdigest()


# Runtime values the evaluator produces.  Expression objects appear as values
# only inside feedback-condition evaluation (the ``sub`` binding).
Value = Union[int, float, bool, str, list, ImageValue, Num, Str, Name, Unary, Binary, Call]


# ---------------------------------------------------------------------------
# Function registry

ALIASES = {"arctan": "atan"}

# name -> (min arity, max arity or None for variadic)
FUNCTIONS: dict[str, tuple[int, int | None]] = {
    "sin": (1, 1), "cos": (1, 1), "tan": (1, 1),
    "atan": (1, 1), "asin": (1, 1), "acos": (1, 1),
    "exp": (1, 1), "ln": (1, 1), "log10": (1, 1), "sqrt": (1, 1), "abs": (1, 1),
    "min": (1, None), "max": (1, None),
    "floor": (1, 1), "ceil": (1, 1), "round": (1, 2),
    "randint": (2, 2), "runif": (2, 2), "rnorm": (2, 2), "rnormv": (3, 3),
    "mean": (1, 1), "sd": (1, 1), "sum": (1, 1), "len": (1, 1),
    "qnorm": (1, 1), "qt": (2, 2),
    # workspace-language extras (evaluated only by the backend)
    "setseed": (1, 1), "plot_histogram": (1, 1),
    # condition predicates (evaluated only by the session engine)
    "dependson": (2, 2), "usesfunction": (2, 2), "argumentof": (3, 3),
    "equivalent": (2, None), "evalat": (3, 3), "within": (2, 2),
}

SAMPLING_FUNCTIONS = {"randint", "runif", "rnorm", "rnormv"}

CONSTANTS: dict[str, Value] = {"pi": math.pi, "e": math.e, "true": True, "false": False}


def canonical_function_name(name: str) -> str:
    lowered = name.lower()
    return ALIASES.get(lowered, lowered)


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"(?:\\.|[^"\\])*")
  | (?P<op>\|\||&&|==|!=|<=|>=|[-+*/^<>!(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num' | 'ident' | 'str' | 'op' | 'end'
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws" and m.lastgroup is not None:
            group = m.lastgroup
            if group in ("num", "ident", "str", "op"):
                tokens.append(_Token(group, m.group(), pos))
            else:  # numeric sub-groups
                tokens.append(_Token("num", m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent; precedence low to high: || < && < ! < comparison
# < +- < */ < unary minus < ^)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        if self.cur.kind == "op" and self.cur.text == text:
            return self.advance()
        raise ExprSyntaxError(f"expected '{text}'", self.cur.pos)

    def at_op(self, *texts: str) -> bool:
        return self.cur.kind == "op" and self.cur.text in texts

    def parse(self) -> Expr:
        expr = self.parse_or()
        if self.cur.kind != "end":
            raise ExprSyntaxError(f"unexpected token {self.cur.text!r}", self.cur.pos)
        return expr

    def parse_or(self) -> Expr:
        left = self.parse_and()
        while self.at_op("||"):
            self.advance()
            left = Binary("||", left, self.parse_and())
        return left

    def parse_and(self) -> Expr:
        left = self.parse_not()
        while self.at_op("&&"):
            self.advance()
            left = Binary("&&", left, self.parse_not())
        return left

    def parse_not(self) -> Expr:
        if self.at_op("!"):
            self.advance()
            return Unary("!", self.parse_not())
        return self.parse_comparison()

    def parse_comparison(self) -> Expr:
        left = self.parse_additive()
        if self.at_op("==", "!=", "<", "<=", ">", ">="):
            op = self.advance().text
            right = self.parse_additive()
            return Binary(op, left, right)
        return left

    def parse_additive(self) -> Expr:
        left = self.parse_multiplicative()
        while self.at_op("+", "-"):
            op = self.advance().text
            left = Binary(op, left, self.parse_multiplicative())
        return left

    def parse_multiplicative(self) -> Expr:
        left = self.parse_unary()
        while self.at_op("*", "/"):
            op = self.advance().text
            left = Binary(op, left, self.parse_unary())
        return left

    def parse_unary(self) -> Expr:
        if self.at_op("-"):
            self.advance()
            return Unary("-", self.parse_unary())
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_atom()
        if self.at_op("^"):
            self.advance()
            # exponent may carry its own unary minus: 2^-3
            return Binary("^", base, self.parse_unary())
        return base

    def parse_atom(self) -> Expr:
        tok = self.cur
        if tok.kind == "num":
            self.advance()
            if "." in tok.text or "e" in tok.text or "E" in tok.text:
                return Num(float(tok.text))
            return Num(int(tok.text))
        if tok.kind == "str":
            self.advance()
            return Str(_unescape(tok.text, tok.pos))
        if tok.kind == "ident":
            self.advance()
            if self.at_op("("):
                name = canonical_function_name(tok.text)
                if name not in FUNCTIONS:
                    raise UnknownFunctionError(tok.text, tok.pos)
                self.advance()
                args: list[Expr] = []
                if not self.at_op(")"):
                    args.append(self.parse_or())
                    while self.at_op(","):
                        self.advance()
                        args.append(self.parse_or())
                self.expect(")")
                lo, hi = FUNCTIONS[name]
                if len(args) < lo or (hi is not None and len(args) > hi):
                    raise ExprSyntaxError(
                        f"function '{name}' takes {lo}"
                        + (f"..{hi}" if hi not in (None, lo) else ("+" if hi is None else ""))
                        + f" arguments, got {len(args)}",
                        tok.pos,
                    )
                return Call(name, tuple(args))
            return Name(tok.text)
        if self.at_op("("):
            self.advance()
            inner = self.parse_or()
            self.expect(")")
            return inner
        if tok.kind == "end":
            raise ExprSyntaxError("unexpected end of input", tok.pos)
        raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.pos)


def _unescape(raw: str, pos: int) -> str:
    body = raw[1:-1]
    out: list[str] = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            i += 1
            if i >= len(body):
                raise ExprSyntaxError("dangling escape in string", pos)
            esc = body[i]
            out.append({"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc, esc))
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def parse(text: str) -> Expr:
    """Parse expression text into an immutable AST.

    Raises ExprSyntaxError (with offset) on malformed input, including empty
    input and unknown function names.
    """
    if not text.strip():
        raise ExprSyntaxError("empty input", 0)
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Canonical serialization

_PREC = {
    "||": 1, "&&": 2,
    "==": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5, "*": 6, "/": 6,
    "^": 8,
}
_UNARY_PREC = {"!": 3, "-": 7}
_RIGHT_ASSOC = {"^"}
_NON_ASSOC = {"==", "!=", "<", "<=", ">", ">="}


def _prec(expr: Expr) -> int:
    if isinstance(expr, Binary):
        return _PREC[expr.op]
    if isinstance(expr, Unary):
        return _UNARY_PREC[expr.op]
    return 9


def serialize(expr: Expr) -> str:
    """Render the canonical text form: infix, minimal parentheses, '.' decimals,
    lowercase function names.  parse(serialize(e)) is structurally equal to e."""
    if isinstance(expr, Num):
        v = expr.value
        if isinstance(v, int):
            return str(v)
        return repr(v)
    if isinstance(expr, Str):
        body = expr.value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{body}"'
    if isinstance(expr, Name):
        return expr.ident
    if isinstance(expr, Unary):
        mine = _UNARY_PREC[expr.op]
        inner = serialize(expr.operand)
        if _prec(expr.operand) < mine:
            inner = f"({inner})"
        return expr.op + inner
    if isinstance(expr, Binary):
        mine = _PREC[expr.op]
        left = serialize(expr.left)
        right = serialize(expr.right)
        lp = _prec(expr.left)
        rp = _prec(expr.right)
        if expr.op in _NON_ASSOC:
            if lp <= mine:
                left = f"({left})"
            if rp <= mine:
                right = f"({right})"
        elif expr.op in _RIGHT_ASSOC:
            if lp <= mine:
                left = f"({left})"
            if rp < mine:
                right = f"({right})"
        else:
            if lp < mine:
                left = f"({left})"
            if rp <= mine:
                right = f"({right})"
        return f"{left}{expr.op}{right}"
    if isinstance(expr, Call):
        return f"{expr.func}({','.join(serialize(a) for a in expr.args)})"
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Evaluation


def round_half_away(value: float, digits: int) -> float:
    """Round to `digits` decimals with ties going away from zero."""
    q = Decimal(1).scaleb(-digits) if digits > 0 else Decimal(1)
    return float(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP))


def _require_number(v: Value, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise EvalError("domain", f"{what} requires a number, got {type(v).__name__}")
    return v


def _require_vector(v: Value, what: str) -> list:
    if not isinstance(v, list):
        raise EvalError("domain", f"{what} requires a vector, got {type(v).__name__}")
    if not v:
        raise EvalError("domain", f"{what} of empty vector")
    return v


def _check_finite(v: Value) -> Value:
    if isinstance(v, float) and not math.isfinite(v):
        raise EvalError("domain", "non-finite result")
    return v


def _as_int(v: Value, what: str) -> int:
    x = _require_number(v, what)
    if isinstance(x, float):
        if not x.is_integer():
            raise EvalError("domain", f"{what} requires an integer, got {x}")
        return int(x)
    return int(x)


def _pow(a: float, b: float) -> float:
    try:
        return math.pow(a, b)
    except ValueError as exc:
        raise EvalError("domain", f"invalid power: {a}^{b}") from exc
    except OverflowError as exc:
        raise EvalError("domain", f"power overflow: {a}^{b}") from exc


def _unary_math(fn: Callable[[float], float], name: str, x: float) -> float:
    try:
        return fn(x)
    except ValueError as exc:
        raise EvalError("domain", f"{name}({x}) out of domain") from exc
    except OverflowError as exc:
        raise EvalError("domain", f"{name}({x}) overflows") from exc


def _qt(p: float, df: float) -> float:
    from scipy.stats import t as _student_t  # deferred: scipy import is slow

    return float(_student_t.ppf(p, df))


def _apply_builtin(name: str, args: list[Value], rng: Random | None) -> Value:
    if name in SAMPLING_FUNCTIONS and rng is None:
        raise EvalError("domain", f"{name} requires a seeded random stream")

    if name in ("sin", "cos", "tan", "atan", "asin", "acos", "exp", "sqrt"):
        fn = getattr(math, name)
        return _check_finite(_unary_math(fn, name, _require_number(args[0], name)))
    if name == "ln":
        x = _require_number(args[0], name)
        if x <= 0:
            raise EvalError("domain", f"ln({x}) out of domain")
        return math.log(x)
    if name == "log10":
        x = _require_number(args[0], name)
        if x <= 0:
            raise EvalError("domain", f"log10({x}) out of domain")
        return math.log10(x)
    if name == "abs":
        return abs(_require_number(args[0], name))
    if name in ("min", "max"):
        picker = min if name == "min" else max
        if len(args) == 1:
            return picker(_require_vector(args[0], name))
        return picker(_require_number(a, name) for a in args)
    if name == "floor":
        return math.floor(_require_number(args[0], name))
    if name == "ceil":
        return math.ceil(_require_number(args[0], name))
    if name == "round":
        digits = _as_int(args[1], "round digits") if len(args) == 2 else 0
        if digits < 0:
            raise EvalError("domain", "round digits must be >= 0")
        if isinstance(args[0], list):
            return [round_half_away(_require_number(x, "round"), digits) for x in args[0]]
        return round_half_away(_require_number(args[0], "round"), digits)
    if name == "randint":
        a, b = _as_int(args[0], name), _as_int(args[1], name)
        if a > b:
            raise EvalError("domain", f"randint bounds reversed: {a} > {b}")
        return rng.randint(a, b)
    if name == "runif":
        a, b = _require_number(args[0], name), _require_number(args[1], name)
        return rng.uniform(a, b)
    if name == "rnorm":
        mu, sigma = _require_number(args[0], name), _require_number(args[1], name)
        return rng.gauss(mu, sigma)
    if name == "rnormv":
        n = _as_int(args[0], name)
        if n < 1:
            raise EvalError("domain", "rnormv requires n >= 1")
        mu, sigma = _require_number(args[1], name), _require_number(args[2], name)
        return [rng.gauss(mu, sigma) for _ in range(n)]
    if name == "mean":
        return fmean(_require_vector(args[0], name))
    if name == "sd":
        v = _require_vector(args[0], name)
        if len(v) < 2:
            raise EvalError("domain", "sd requires at least 2 values")
        return stdev(v)
    if name == "sum":
        return math.fsum(_require_vector(args[0], name))
    if name == "len":
        return len(_require_vector(args[0], name))
    if name == "qnorm":
        p = _require_number(args[0], name)
        if not 0 < p < 1:
            raise EvalError("domain", f"qnorm requires 0 < p < 1, got {p}")
        return NormalDist().inv_cdf(p)
    if name == "qt":
        p = _require_number(args[0], name)
        df = _require_number(args[1], name)
        if not 0 < p < 1 or df <= 0:
            raise EvalError("domain", f"qt out of domain: p={p}, df={df}")
        return _check_finite(_qt(p, df))
    raise EvalError("domain", f"function '{name}' is not available in this context")


def evaluate(
    expr: Expr,
    bindings: Mapping[str, Value],
    rng: Random | None = None,
    functions: Mapping[str, Callable[..., Value]] | None = None,
) -> Value:
    """Evaluate an expression under the given bindings.

    `functions` lets callers layer extra callables (condition predicates, plot
    builtins) over the math registry; they are consulted first by name.
    """
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Str):
        return expr.value
    if isinstance(expr, Name):
        if expr.ident in bindings:
            return bindings[expr.ident]
        if expr.ident in CONSTANTS:
            return CONSTANTS[expr.ident]
        raise EvalError("unbound", f"unbound identifier '{expr.ident}'")
    if isinstance(expr, Unary):
        if expr.op == "-":
            return _check_finite(-_require_number(
                evaluate(expr.operand, bindings, rng, functions), "unary minus"))
        v = evaluate(expr.operand, bindings, rng, functions)
        if not isinstance(v, bool):
            raise EvalError("domain", "'!' requires a boolean")
        return not v
    if isinstance(expr, Binary):
        op = expr.op
        if op in ("&&", "||"):
            left = evaluate(expr.left, bindings, rng, functions)
            if not isinstance(left, bool):
                raise EvalError("domain", f"'{op}' requires booleans")
            if op == "&&" and not left:
                return False
            if op == "||" and left:
                return True
            right = evaluate(expr.right, bindings, rng, functions)
            if not isinstance(right, bool):
                raise EvalError("domain", f"'{op}' requires booleans")
            return right
        left = evaluate(expr.left, bindings, rng, functions)
        right = evaluate(expr.right, bindings, rng, functions)
        if op in ("==", "!="):
            ok = _loose_equal(left, right)
            return ok if op == "==" else not ok
        if op in ("<", "<=", ">", ">="):
            a = _require_number(left, f"'{op}'")
            b = _require_number(right, f"'{op}'")
            return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]
        a = _require_number(left, f"'{op}'")
        b = _require_number(right, f"'{op}'")
        if op == "+":
            return _check_finite(a + b)
        if op == "-":
            return _check_finite(a - b)
        if op == "*":
            return _check_finite(a * b)
        if op == "/":
            if b == 0:
                raise EvalError("domain", "division by zero")
            return _check_finite(a / b)
        if op == "^":
            return _check_finite(_pow(a, b))
        raise EvalError("domain", f"unknown operator '{op}'")
    if isinstance(expr, Call):
        args = [evaluate(a, bindings, rng, functions) for a in expr.args]
        if functions is not None and expr.func in functions:
            return functions[expr.func](*args)
        return _apply_builtin(expr.func, args, rng)
    raise TypeError(f"not an expression node: {expr!r}")


def _loose_equal(a: Value, b: Value) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        if isinstance(a, bool) and isinstance(b, bool):
            return a == b
        raise EvalError("domain", "'==' cannot mix booleans and numbers")
    if isinstance(a, str) and isinstance(b, str):
        return a == b
    return _require_number(a, "'=='") == _require_number(b, "'=='")


# ---------------------------------------------------------------------------
# Structural analysis


def free_identifiers(expr: Expr) -> set[str]:
    """All identifiers occurring in the tree (constants like pi included)."""
    out: set[str] = set()
    _walk_names(expr, out)
    return out


def _walk_names(expr: Expr, out: set[str]) -> None:
    if isinstance(expr, Name):
        out.add(expr.ident)
    elif isinstance(expr, Unary):
        _walk_names(expr.operand, out)
    elif isinstance(expr, Binary):
        _walk_names(expr.left, out)
        _walk_names(expr.right, out)
    elif isinstance(expr, Call):
        for a in expr.args:
            _walk_names(a, out)


def depends_on(expr: Expr, name: str) -> bool:
    """True iff the identifier occurs in the tree (purely syntactic, so
    ``x - x`` still depends on x)."""
    return name in free_identifiers(expr)


def uses_function(expr: Expr, fname: str) -> bool:
    """True iff a call to fname (or an alias of it) occurs anywhere."""
    target = canonical_function_name(fname)
    if target not in FUNCTIONS:
        raise EvalError("domain", f"unknown function '{fname}'")
    return any(c.func == target for c in _iter_calls(expr))


def _iter_calls(expr: Expr) -> Iterable[Call]:
    if isinstance(expr, Call):
        yield expr
        for a in expr.args:
            yield from _iter_calls(a)
    elif isinstance(expr, Unary):
        yield from _iter_calls(expr.operand)
    elif isinstance(expr, Binary):
        yield from _iter_calls(expr.left)
        yield from _iter_calls(expr.right)


def argument_of(expr: Expr, fname: str, occurrence: int = 1) -> Expr:
    """Argument subtree of the n-th call to fname (depth-first, left to right,
    1-based).  Trees are immutable, so the returned subtree is safe to share."""
    target = canonical_function_name(fname)
    if target not in FUNCTIONS:
        raise EvalError("domain", f"unknown function '{fname}'")
    seen = 0
    for call in _iter_calls(expr):
        if call.func == target:
            seen += 1
            if seen == occurrence:
                if not call.args:
                    raise OccurrenceError(f"call to '{fname}' has no arguments")
                return call.args[0]
    raise OccurrenceError(f"no occurrence {occurrence} of '{fname}'")


DEFAULT_TRIALS = 50
DEFAULT_REL_TOL = 1e-9
_EQUIV_SEED = 0x5EED


def equivalent(
    a: Expr,
    b: Expr,
    varspecs: Sequence[tuple[str, tuple[float, float]]],
    trials: int = DEFAULT_TRIALS,
    rel_tol: float = DEFAULT_REL_TOL,
    rng: Random | None = None,
    bindings: Mapping[str, Value] | None = None,
) -> bool:
    """Randomized numeric equivalence over joint samples from the intervals.

    Samples where either side is non-finite (or hits a numeric-domain error)
    are discarded and redrawn, up to 10x `trials` extra draws.  Equality holds
    when |a - b| <= rel_tol * max(1, |a|, |b|) at every retained sample.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if rng is None:
        rng = Random(_EQUIV_SEED)
    base = dict(bindings) if bindings else {}
    retained = 0
    attempts = 0
    max_attempts = trials + 10 * trials
    while retained < trials:
        if attempts >= max_attempts:
            raise EquivalenceDomainError(
                f"discarded too many samples ({attempts - retained} of {attempts})")
        attempts += 1
        env = dict(base)
        for name, (lo, hi) in varspecs:
            env[name] = rng.uniform(lo, hi)
        try:
            va = float(_require_number(evaluate(a, env), "equivalence"))
            vb = float(_require_number(evaluate(b, env), "equivalence"))
        except EvalError as exc:
            if exc.kind == "domain":
                continue
            raise
        if not (math.isfinite(va) and math.isfinite(vb)):
            continue
        retained += 1
        if abs(va - vb) > rel_tol * max(1.0, abs(va), abs(vb)):
            return False
    return True
