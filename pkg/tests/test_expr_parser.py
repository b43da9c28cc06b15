import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from examforge.expr import (
    Binary,
    Call,
    ExprSyntaxError,
    Name,
    Num,
    Unary,
    UnknownFunctionError,
    parse,
    serialize,
)


def test_power_is_right_associative():
    tree = parse("2^3^2")
    assert tree == Binary("^", Num(2), Binary("^", Num(3), Num(2)))


def test_subtraction_is_left_associative():
    assert parse("a-b-c") == Binary("-", Binary("-", Name("a"), Name("b")), Name("c"))


def test_unary_minus_binds_looser_than_power():
    # -2^2 reads as -(2^2)
    assert parse("-2^2") == Unary("-", Binary("^", Num(2), Num(2)))


def test_unary_minus_binds_tighter_than_mul():
    assert parse("-a*b") == Binary("*", Unary("-", Name("a")), Name("b"))


def test_cauchy_cdf_expression_shape():
    tree = parse("(1/pi)*atan((x-m)/k)+1/2")
    assert isinstance(tree, Binary) and tree.op == "+"
    prod = tree.left
    assert isinstance(prod, Binary) and prod.op == "*"
    call = prod.right
    assert isinstance(call, Call) and call.func == "atan"
    from examforge.expr import free_identifiers

    assert free_identifiers(tree) >= {"x", "m", "k", "pi"}


def test_arctan_alias_normalizes_to_atan():
    assert parse("arctan(x)") == Call("atan", (Name("x"),))


def test_not_binds_looser_than_comparison():
    assert parse("!a<b") == Unary("!", Binary("<", Name("a"), Name("b")))


def test_and_or_precedence():
    tree = parse("a&&b||c")
    assert tree == Binary("||", Binary("&&", Name("a"), Name("b")), Name("c"))


def test_incomplete_input_reports_offset():
    with pytest.raises(ExprSyntaxError) as exc:
        parse("x +")
    assert exc.value.position == 3


def test_empty_input_rejected():
    with pytest.raises(ExprSyntaxError):
        parse("   ")


def test_unknown_function_rejected_at_parse_time():
    with pytest.raises(UnknownFunctionError):
        parse("frobnicate(x)")


def test_bad_arity_rejected_at_parse_time():
    with pytest.raises(ExprSyntaxError):
        parse("atan(x, y)")


def test_string_literals():
    from examforge.expr import Str

    assert parse('usesfunction(x, "atan")') == Call(
        "usesfunction", (Name("x"), Str("atan"))
    )


def test_scientific_notation():
    assert parse("1e3") == Num(1000.0)
    assert parse("2.5e-2") == Num(0.025)


def test_round_trip_of_worked_example():
    text = "(1/pi)*atan((x-m)/k)+1/2"
    tree = parse(text)
    assert parse(serialize(tree)) == tree


def test_serialization_keeps_structural_parens():
    assert serialize(parse("a-(b-c)")) == "a-(b-c)"
    assert serialize(parse("(a-b)-c")) == "a-b-c"
    assert serialize(parse("(2^3)^2")) == "(2^3)^2"
    assert serialize(parse("2^3^2")) == "2^3^2"


# -- generated round-trip property -------------------------------------------

_names = st.sampled_from(["x", "y", "k", "m", "n", "s"])
_numbers = st.one_of(
    st.integers(min_value=0, max_value=9999).map(Num),
    st.floats(min_value=0.001, max_value=1e6, allow_nan=False).map(Num),
)


def _exprs(depth: int):
    leaf = st.one_of(_numbers, _names.map(Name))
    if depth == 0:
        return leaf
    sub = _exprs(depth - 1)
    return st.one_of(
        leaf,
        st.tuples(st.sampled_from("+-*/^"), sub, sub).map(lambda t: Binary(*t)),
        sub.map(lambda e: Unary("-", e)),
        st.tuples(st.sampled_from(["sin", "atan", "exp", "sqrt", "abs"]), sub).map(
            lambda t: Call(t[0], (t[1],))
        ),
        st.tuples(st.sampled_from(["==", "<", "<=", ">", ">=", "!="]), sub, sub).map(
            lambda t: Binary(*t)
        ),
    )


@settings(max_examples=300, deadline=None)
@given(_exprs(4))
def test_parse_serialize_round_trip(tree):
    assert parse(serialize(tree)) == tree
