"""Type validation and automatic casting."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jolt import types, values
from jolt.errors import JoltFault
from jolt.types import ONE, OPTIONAL, STAR, TypeDef
from jolt.values import Value

SUM_T = TypeDef(values.VOID, {
    "x": (ONE, types.T_INT),
    "y": (ONE, types.T_INT),
}, name="SumT")


def test_validate_accepts_typed_pair():
    v = Value.tree(None, x=2, y=3)
    assert types.validate(v, SUM_T) == []


def test_validate_void_against_undefined():
    assert types.validate(Value(), types.T_UNDEFINED) == []


def test_validate_reports_both_rule_violations():
    # Oracle: the two declared rules checked by hand. {x:"hello"} breaks
    # the kind of .x and the cardinality of .y; both must be reported.
    v = Value.tree(None, x="hello")
    report = types.validate(v, SUM_T)
    paths = {(m.path, m.expected) for m in report}
    assert ("x", "int") in paths
    assert ("y", "exactly one") in paths
    assert len(report) == 2


def test_validate_rejects_undeclared_children():
    v = Value.tree(None, x=2, y=3, z=4)
    report = types.validate(v, SUM_T)
    assert any(m.path == "z" for m in report)


def test_validate_is_pure():
    v = Value.tree(None, x="hello")
    snapshot = v.clone()
    types.validate(v, SUM_T)
    assert v == snapshot


def test_cast_reparses_strings():
    v = Value.tree(None, x="2", y="3")
    out = types.cast(v, SUM_T)
    assert out.first("x").kind == values.INT and out.first("x").content == 2
    assert out.first("y").content == 3


def test_cast_failure_is_type_mismatch():
    v = Value.tree(None, x="hello", y="3")
    with pytest.raises(JoltFault) as exc:
        types.cast(v, SUM_T)
    assert exc.value.name == "TypeMismatch"


def test_cast_passes_through_typed_values():
    v = Value.tree(None, x=2, y=3)
    assert types.cast(v, SUM_T) == v


def test_cast_bool_words():
    t = TypeDef(values.VOID, {"b": (ONE, types.T_BOOL)})
    for word, expected in [("true", True), ("False", False), ("1", True),
                           ("0", False)]:
        out = types.cast(Value.tree(None, b=word), t)
        assert out.first("b").kind == values.BOOL
        assert out.first("b").content is expected
    with pytest.raises(JoltFault):
        types.cast(Value.tree(None, b="maybe"), t)


def test_cast_cardinalities():
    t = TypeDef(values.VOID, {
        "opt": (OPTIONAL, types.T_INT),
        "many": (STAR, types.T_STRING),
    })
    assert types.cast(Value(), t) == Value()
    v = Value()
    v.children["many"] = [Value.of("a"), Value.of("b")]
    out = types.cast(v, t)
    assert [item.content for item in out.vector("many")] == ["a", "b"]
    dup = Value()
    dup.children["opt"] = [Value.of(1), Value.of(2)]
    with pytest.raises(JoltFault):
        types.cast(dup, t)


def test_cast_int_range_checked():
    t = TypeDef(values.VOID, {"n": (ONE, types.T_INT)})
    with pytest.raises(JoltFault):
        types.cast(Value.tree(None, n=str(2**40)), t)
    out = types.cast(Value.tree(None, n=str(2**40)),
                     TypeDef(values.VOID, {"n": (ONE, types.T_LONG)}))
    assert out.first("n").kind == values.LONG


def _typed_value_strategy():
    """(TypeDef, conforming Value) pairs for the cast properties."""
    leaf_kinds = st.sampled_from([values.INT, values.LONG, values.DOUBLE,
                                  values.STRING, values.BOOL])

    def value_for(kind, rnd):
        if kind == values.INT:
            return Value(values.INT, rnd.randint(-1000, 1000))
        if kind == values.LONG:
            return Value(values.LONG, rnd.randint(-10**12, 10**12))
        if kind == values.DOUBLE:
            return Value(values.DOUBLE, rnd.randint(-1000, 1000) / 8.0)
        if kind == values.BOOL:
            return Value(values.BOOL, rnd.random() < 0.5)
        return Value(values.STRING, "s" + str(rnd.randint(0, 999)))

    @st.composite
    def pair(draw, depth=0):
        rnd = draw(st.randoms(use_true_random=False))
        root_kind = draw(st.sampled_from(
            [values.VOID, values.INT, values.STRING]))
        t = TypeDef(root_kind)
        v = (Value() if root_kind == values.VOID
             else value_for(root_kind, rnd))
        if depth < 2:
            for i in range(draw(st.integers(0, 2))):
                name = f"n{i}"
                kind = draw(leaf_kinds)
                card = draw(st.sampled_from([ONE, OPTIONAL, STAR]))
                t.children[name] = (card, TypeDef(kind))
                count = 1 if card == ONE else draw(st.integers(0, 2 if card == STAR else 1))
                if count:
                    v.children[name] = [value_for(kind, rnd) for _ in range(count)]
        return t, v

    return pair()


@settings(max_examples=200)
@given(_typed_value_strategy())
def test_cast_idempotent_and_validating(pair):
    t, v = pair
    once = types.cast(v, t)
    twice = types.cast(once, t)
    assert once == twice
    assert types.validate(once, t) == []


@settings(max_examples=200)
@given(_typed_value_strategy())
def test_cast_from_stringified_wire_form(pair):
    """A value with every scalar stringified casts back to itself."""
    t, v = pair

    def stringify(node: Value) -> Value:
        out = Value()
        if node.kind != values.VOID:
            out.set_scalar(values.STRING, values.to_plain_string(node))
        for name, vec in node.children.items():
            out.children[name] = [stringify(item) for item in vec]
        return out

    assert types.cast(stringify(v), t) == v
