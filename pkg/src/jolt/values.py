"""Tree-structured values: the universal datum for state and messages.

Every piece of program state and every message payload is a ``Value``: a
scalar root (void, bool, int, long, double, string, or bytes) plus named,
ordered vectors of child values. Paths address nodes in such trees;
writes auto-create missing intermediate nodes, reads never do.
"""

from __future__ import annotations

from typing import Iterator, Optional

from .errors import JoltFault, FAULT_ALIAS_LOOP

# Scalar kinds.
VOID = "void"
BOOL = "bool"
INT = "int"
LONG = "long"
DOUBLE = "double"
STRING = "string"
BYTES = "bytes"

KINDS = (VOID, BOOL, INT, LONG, DOUBLE, STRING, BYTES)

INT_MIN, INT_MAX = -(2**31), 2**31 - 1
LONG_MIN, LONG_MAX = -(2**63), 2**63 - 1

_ALIAS_RESOLVE_CAP = 64


def fits_int(n: int) -> bool:
    return INT_MIN <= n <= INT_MAX


def fits_long(n: int) -> bool:
    return LONG_MIN <= n <= LONG_MAX


class Value:
    """One tree node: scalar content plus ordered child vectors.

    ``children`` maps child name to a non-empty list of values; an absent
    child is simply not in the map. Insertion order of names is preserved
    and observable through serialization.
    """

    __slots__ = ("kind", "content", "children")

    def __init__(self, kind: str = VOID, content=None, children=None):
        self.kind = kind
        self.content = content
        self.children: dict[str, list[Value]] = children if children is not None else {}

    # -- constructors ----------------------------------------------------

    @classmethod
    def of(cls, py) -> "Value":
        """Build a scalar value from a native datum, inferring the kind."""
        if py is None:
            return cls()
        if isinstance(py, Value):
            return py.clone()
        if isinstance(py, bool):
            return cls(BOOL, py)
        if isinstance(py, int):
            if fits_int(py):
                return cls(INT, py)
            if fits_long(py):
                return cls(LONG, py)
            raise OverflowError(f"integer out of 64-bit range: {py}")
        if isinstance(py, float):
            return cls(DOUBLE, py)
        if isinstance(py, str):
            return cls(STRING, py)
        if isinstance(py, (bytes, bytearray)):
            return cls(BYTES, bytes(py))
        raise TypeError(f"cannot build a Value from {type(py).__name__}")

    @classmethod
    def long(cls, n: int) -> "Value":
        if not fits_long(n):
            raise OverflowError(f"integer out of 64-bit range: {n}")
        return cls(LONG, n)

    @classmethod
    def tree(cls, root=None, **children) -> "Value":
        """Convenience constructor: ``Value.tree(5, x=2, y="a")``."""
        v = cls.of(root)
        for name, item in children.items():
            if isinstance(item, list):
                v.children[name] = [cls.of(e) for e in item]
            else:
                v.children[name] = [cls.of(item)]
        return v

    # -- structure -------------------------------------------------------

    def is_void(self) -> bool:
        return self.kind == VOID

    def is_empty(self) -> bool:
        """True when the node carries no content and no children."""
        return self.kind == VOID and not self.children

    def vector(self, name: str) -> list["Value"]:
        """Child vector for ``name``, or an empty list (not attached)."""
        return self.children.get(name, [])

    def first(self, name: str) -> Optional["Value"]:
        vec = self.children.get(name)
        return vec[0] if vec else None

    def get_child(self, name: str, index: int = 0) -> Optional["Value"]:
        vec = self.children.get(name)
        if vec is None or index >= len(vec):
            return None
        return vec[index]

    def ensure_child(self, name: str, index: int = 0) -> "Value":
        """Child at (name, index), padding holes with fresh void nodes."""
        vec = self.children.get(name)
        if vec is None:
            vec = []
            self.children[name] = vec
        while len(vec) <= index:
            vec.append(Value())
        return vec[index]

    def set_scalar(self, kind: str, content=None) -> None:
        """Replace this node's content, leaving children untouched."""
        self.kind = kind
        self.content = content

    def assign_tree(self, src: "Value") -> None:
        """Replace content and children with a structural clone of ``src``."""
        clone = src.clone()
        self.kind = clone.kind
        self.content = clone.content
        self.children = clone.children

    def clone(self) -> "Value":
        out = Value(self.kind, self.content)
        for name, vec in self.children.items():
            out.children[name] = [v.clone() for v in vec]
        return out

    def walk(self) -> Iterator["Value"]:
        yield self
        for vec in self.children.values():
            for v in vec:
                yield from v.walk()

    # -- comparison ------------------------------------------------------

    def __eq__(self, other) -> bool:
        if not isinstance(other, Value):
            return NotImplemented
        if self.kind != other.kind or self.content != other.content:
            return False
        if self.children.keys() != other.children.keys():
            return False
        for name, vec in self.children.items():
            ovec = other.children[name]
            if len(vec) != len(ovec):
                return False
            for a, b in zip(vec, ovec):
                if a != b:
                    return False
        return True

    __hash__ = None  # mutable

    def __repr__(self):
        return f"Value({to_debug_string(self)})"


def truthy(v: Value) -> bool:
    """Truth of a node's content: void and empty/"false" strings are false."""
    if v.kind == VOID:
        return False
    if v.kind == BOOL:
        return v.content
    if v.kind in (INT, LONG):
        return v.content != 0
    if v.kind == DOUBLE:
        return v.content != 0.0
    if v.kind == STRING:
        return v.content != "" and v.content.lower() != "false"
    if v.kind == BYTES:
        return len(v.content) > 0
    return False


def to_plain_string(v: Value) -> str:
    """Canonical textual rendering of a node's content."""
    if v.kind == VOID:
        return ""
    if v.kind == BOOL:
        return "true" if v.content else "false"
    if v.kind in (INT, LONG):
        return str(v.content)
    if v.kind == DOUBLE:
        return repr(v.content)
    if v.kind == STRING:
        return v.content
    if v.kind == BYTES:
        return v.content.decode("utf-8", errors="replace")
    return ""


def to_debug_string(v: Value, indent: int = 0) -> str:
    """Human-readable tree rendering used by Console and diagnostics."""
    pad = "  " * indent
    if v.kind == STRING:
        head = repr(v.content)
    elif v.kind == BYTES:
        head = f"<{len(v.content)} bytes>"
    else:
        head = to_plain_string(v) or "(void)"
    lines = [head]
    for name, vec in v.children.items():
        for i, child in enumerate(vec):
            idx = f"[{i}]" if len(vec) > 1 else ""
            lines.append(f"{pad}  .{name}{idx} = {to_debug_string(child, indent + 1)}")
    return "\n".join(lines)


# -- paths ----------------------------------------------------------------

class Segment:
    """One concrete path step: a child name plus a vector index."""

    __slots__ = ("name", "index")

    def __init__(self, name: str, index: int = 0):
        self.name = name
        self.index = index

    def __eq__(self, other):
        return (
            isinstance(other, Segment)
            and self.name == other.name
            and self.index == other.index
        )

    def __hash__(self):
        return hash((self.name, self.index))

    def __repr__(self):
        return f"{self.name}[{self.index}]" if self.index else self.name


Path = tuple  # tuple[Segment, ...]


def path(*steps) -> Path:
    """Build a path from names or (name, index) pairs."""
    out = []
    for step in steps:
        if isinstance(step, Segment):
            out.append(step)
        elif isinstance(step, tuple):
            out.append(Segment(step[0], step[1]))
        else:
            out.append(Segment(step))
    return tuple(out)


def parse_path(dotted: str) -> Path:
    """Parse ``a.b[2].c`` into a concrete path (no dynamic segments)."""
    out = []
    for part in dotted.split("."):
        if "[" in part:
            name, _, rest = part.partition("[")
            out.append(Segment(name, int(rest.rstrip("]"))))
        else:
            out.append(Segment(part))
    return tuple(out)


def get(root: Value, p: Path) -> Value:
    """Node at ``p``, or a detached void value when any step is missing.

    Never mutates the tree.
    """
    node = root
    for seg in p:
        child = node.get_child(seg.name, seg.index)
        if child is None:
            return Value()
        node = child
    return node


def get_existing(root: Value, p: Path) -> Optional[Value]:
    """Node at ``p`` or None; never mutates."""
    node = root
    for seg in p:
        child = node.get_child(seg.name, seg.index)
        if child is None:
            return None
        node = child
    return node


def ensure(root: Value, p: Path) -> Value:
    """Node at ``p``, creating void intermediates (and holes) as needed."""
    node = root
    for seg in p:
        node = node.ensure_child(seg.name, seg.index)
    return node


def set_scalar(root: Value, p: Path, kind: str, content=None) -> None:
    """Write content at ``p``; intermediates auto-created, children kept."""
    ensure(root, p).set_scalar(kind, content)


def deep_copy(root: Value, p: Path, src: Value) -> None:
    """Replace the subtree at ``p`` with a structural clone of ``src``."""
    # Clone before ensure so self-copies (dst inside src) stay correct.
    clone = src.clone()
    node = ensure(root, p)
    node.kind = clone.kind
    node.content = clone.content
    node.children = clone.children


def vector_size(root: Value, p: Path) -> int:
    """Length of the vector addressed by the last step of ``p``."""
    if not p:
        return 0
    parent = get_existing(root, p[:-1]) if len(p) > 1 else root
    if parent is None:
        return 0
    return len(parent.vector(p[-1].name))


def alias_key(p: Path) -> Path:
    """Normalize an alias source path: it names a child, not an element."""
    return p[:-1] + (Segment(p[-1].name, 0),)


def resolve_alias(aliases: dict, p: Path) -> Path:
    """Rewrite ``p`` through alias bindings (longest prefix, repeatedly).

    An alias source matches a prefix of ``p`` whose final step agrees by
    name; the index used at that step carries over onto the target's
    final step, so aliasing a name aliases its whole vector. Rewriting
    repeats (an alias may point through another) with a cycle cap.
    """
    if not aliases:
        return p
    for _ in range(_ALIAS_RESOLVE_CAP):
        hit = None
        for cut in range(len(p), 0, -1):
            target = aliases.get(alias_key(p[:cut]))
            if target is not None:
                index = p[cut - 1].index
                last = target[-1] if index == 0 else Segment(target[-1].name, index)
                hit = target[:-1] + (last,) + p[cut:]
                break
        if hit is None:
            return p
        p = hit
    raise JoltFault(FAULT_ALIAS_LOOP, message="alias resolution did not terminate")
