"""Tree-shaped message types: validation and automatic casting.

A ``TypeDef`` constrains one node: the scalar kind of its root plus, per
declared child name, a cardinality and a nested type. Wire formats that
carry no type information (querystrings, form encodings) arrive as all
strings; ``cast`` re-parses those strings into the kinds an operation
declares, so one service body handles every encoding the same way.
"""

from __future__ import annotations

from typing import Optional

from . import values
from .errors import JoltFault, FAULT_TYPE_MISMATCH
from .values import Value

# Root kind wildcards, in addition to the scalar kinds in values.KINDS.
ANY = "any"
UNDEFINED = "undefined"

ROOT_KINDS = (
    values.VOID, values.BOOL, values.INT, values.LONG,
    values.DOUBLE, values.STRING, ANY, UNDEFINED,
)

# Child cardinalities.
ONE = "one"          # exactly one
OPTIONAL = "optional"  # zero or one
STAR = "star"        # zero or more


class TypeDef:
    """Constraint on a value node. ``children`` maps name -> (card, TypeDef).

    Instances may form cycles (recursive named types); validation and
    casting descend the *value*, which is finite, so expansion terminates.
    """

    __slots__ = ("root", "children", "name")

    def __init__(self, root: str, children=None, name: str = ""):
        if root not in ROOT_KINDS:
            raise ValueError(f"unknown type kind: {root}")
        self.root = root
        self.children: dict[str, tuple[str, TypeDef]] = children or {}
        self.name = name

    def __repr__(self):
        return f"TypeDef({self.name or self.root})"


T_VOID = TypeDef(values.VOID)
T_BOOL = TypeDef(values.BOOL)
T_INT = TypeDef(values.INT)
T_LONG = TypeDef(values.LONG)
T_DOUBLE = TypeDef(values.DOUBLE)
T_STRING = TypeDef(values.STRING)
T_ANY = TypeDef(ANY)
T_UNDEFINED = TypeDef(UNDEFINED)

BASIC = {
    "void": T_VOID, "bool": T_BOOL, "int": T_INT, "long": T_LONG,
    "double": T_DOUBLE, "string": T_STRING, "any": T_ANY,
    "undefined": T_UNDEFINED,
}


class Mismatch:
    """One validation failure: where, what was expected, what was found."""

    def __init__(self, path: str, expected: str, actual: str):
        self.path = path
        self.expected = expected
        self.actual = actual

    def __repr__(self):
        return f"{self.path or '<root>'}: expected {self.expected}, got {self.actual}"


def _kind_ok(kind: str, root: str) -> bool:
    if root in (ANY, UNDEFINED):
        return True
    if root == values.STRING and kind == values.BYTES:
        return False
    return kind == root


def validate(v: Value, t: TypeDef, path: str = "") -> list[Mismatch]:
    """All mismatches of ``v`` against ``t`` (empty list means ok)."""
    report: list[Mismatch] = []
    _validate(v, t, path, report)
    return report


def _validate(v: Value, t: TypeDef, path: str, report: list) -> None:
    if t.root == UNDEFINED:
        return
    if not _kind_ok(v.kind, t.root):
        report.append(Mismatch(path, t.root, v.kind))
    declared = t.children
    for name, (card, child_t) in declared.items():
        vec = v.vector(name)
        cpath = f"{path}.{name}" if path else name
        if card == ONE and len(vec) != 1:
            report.append(Mismatch(cpath, "exactly one", f"{len(vec)} occurrence(s)"))
        elif card == OPTIONAL and len(vec) > 1:
            report.append(Mismatch(cpath, "at most one", f"{len(vec)} occurrence(s)"))
        for i, item in enumerate(vec):
            ipath = f"{cpath}[{i}]" if len(vec) > 1 else cpath
            _validate(item, child_t, ipath, report)
    for name in v.children:
        if name not in declared:
            report.append(Mismatch(f"{path}.{name}" if path else name,
                                   "no such child", "present"))


def is_valid(v: Value, t: TypeDef) -> bool:
    return not validate(v, t)


_TRUE_WORDS = {"true", "1"}
_FALSE_WORDS = {"false", "0"}


def _cast_scalar(v: Value, target: str, path: str) -> Value:
    kind = v.kind
    if kind == target:
        return Value(kind, v.content)
    if target == values.VOID:
        if kind == values.STRING and v.content == "":
            return Value()
        raise _mismatch(path, target, v)
    if target == values.BOOL:
        if kind == values.STRING:
            word = v.content.strip().lower()
            if word in _TRUE_WORDS:
                return Value(values.BOOL, True)
            if word in _FALSE_WORDS:
                return Value(values.BOOL, False)
        elif kind in (values.INT, values.LONG) and v.content in (0, 1):
            return Value(values.BOOL, bool(v.content))
        raise _mismatch(path, target, v)
    if target == values.INT:
        n = _parse_integer(v, path, target)
        if not values.fits_int(n):
            raise _mismatch(path, target, v)
        return Value(values.INT, n)
    if target == values.LONG:
        n = _parse_integer(v, path, target)
        if not values.fits_long(n):
            raise _mismatch(path, target, v)
        return Value(values.LONG, n)
    if target == values.DOUBLE:
        if kind in (values.INT, values.LONG):
            return Value(values.DOUBLE, float(v.content))
        if kind == values.STRING:
            try:
                return Value(values.DOUBLE, float(v.content.strip()))
            except ValueError:
                raise _mismatch(path, target, v) from None
        if kind == values.BOOL:
            return Value(values.DOUBLE, 1.0 if v.content else 0.0)
        raise _mismatch(path, target, v)
    if target == values.STRING:
        if kind == values.BYTES:
            raise _mismatch(path, target, v)
        return Value(values.STRING, values.to_plain_string(v))
    raise _mismatch(path, target, v)


def _parse_integer(v: Value, path: str, target: str) -> int:
    if v.kind in (values.INT, values.LONG):
        return v.content
    if v.kind == values.DOUBLE and float(v.content).is_integer():
        return int(v.content)
    if v.kind == values.BOOL:
        return 1 if v.content else 0
    if v.kind == values.STRING:
        try:
            return int(v.content.strip(), 10)
        except ValueError:
            raise _mismatch(path, target, v) from None
    raise _mismatch(path, target, v)


def _mismatch(path: str, expected: str, v: Value) -> JoltFault:
    shown = values.to_plain_string(v)
    if len(shown) > 40:
        shown = shown[:37] + "..."
    detail = f"{path or '<root>'}: cannot cast {v.kind} '{shown}' to {expected}"
    payload = Value.tree(detail, path=path or "<root>", expected=expected, actual=v.kind)
    return JoltFault(FAULT_TYPE_MISMATCH, payload, detail)


def cast(v: Value, t: TypeDef, path: str = "") -> Value:
    """New value shaped by ``t``; raises a TypeMismatch fault on failure.

    String leaves are re-parsed into the declared kind; nodes already of
    the right kind pass through; ``undefined`` subtrees pass unchanged.
    """
    if t.root == UNDEFINED:
        return v.clone()
    if t.root == ANY:
        out = Value(v.kind, v.content)
    else:
        out = _cast_scalar(v, t.root, path)
    declared = t.children
    for name in v.children:
        if name not in declared:
            raise JoltFault(
                FAULT_TYPE_MISMATCH,
                Value.tree(f"unexpected child '{name}'", path=path or "<root>"),
                f"{path or '<root>'}: unexpected child '{name}'",
            )
    for name, (card, child_t) in declared.items():
        vec = v.vector(name)
        cpath = f"{path}.{name}" if path else name
        if card == ONE and len(vec) != 1:
            raise JoltFault(
                FAULT_TYPE_MISMATCH,
                Value.tree(f"'{cpath}' must occur exactly once", path=cpath),
                f"'{cpath}' must occur exactly once, found {len(vec)}",
            )
        if card == OPTIONAL and len(vec) > 1:
            raise JoltFault(
                FAULT_TYPE_MISMATCH,
                Value.tree(f"'{cpath}' must occur at most once", path=cpath),
                f"'{cpath}' must occur at most once, found {len(vec)}",
            )
        if vec:
            out.children[name] = [
                cast(item, child_t, f"{cpath}[{i}]" if len(vec) > 1 else cpath)
                for i, item in enumerate(vec)
            ]
    return out


def describe(t: Optional[TypeDef]) -> str:
    if t is None:
        return "undefined"
    return t.name or t.root
