"""Program model: the parsed form of a service definition.

A program couples a deployment (types, interfaces, ports, correlation
sets) with a behaviour tree. The parser produces these nodes; the engine
walks them; the printer turns them back into source text.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .types import TypeDef
from .values import Value


# -- expressions ------------------------------------------------------------

@dataclass(eq=True)
class Lit:
    value: Value  # scalar only

    def __repr__(self):
        return f"Lit({self.value.content!r})"


@dataclass(eq=True)
class PathSegment:
    """One step of a variable path; the name may be computed at runtime."""
    name: Optional[str] = None
    name_expr: Optional["Expr"] = None  # dynamic segment: .( expr )
    index_expr: Optional["Expr"] = None  # [ expr ]; None means 0


@dataclass(eq=True)
class PathExpr:
    segments: list[PathSegment]

    @property
    def root_name(self) -> Optional[str]:
        return self.segments[0].name if self.segments else None


@dataclass(eq=True)
class VectorSize:
    path: PathExpr  # #a.b


@dataclass(eq=True)
class Fresh:
    """The ``new`` expression: a fresh correlation token."""


@dataclass(eq=True)
class Unary:
    op: str  # '-' | '!'
    operand: "Expr"


@dataclass(eq=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(eq=True)
class PostIncrement:
    """``p++`` / ``p--`` as an expression: yields the old value."""
    path: PathExpr
    delta: int  # +1 or -1


@dataclass(eq=True)
class TreeLit:
    """Inline tree: ``{ .a = e, ... }`` optionally rooted ``e0 { ... }``."""
    root: Optional["Expr"]
    entries: list[tuple[list[PathSegment], "Expr"]]


Expr = Union[Lit, PathExpr, VectorSize, Fresh, Unary, Binary, PostIncrement, TreeLit]


# -- behaviour --------------------------------------------------------------

@dataclass(eq=True)
class NullProcess:
    pass


@dataclass(eq=True)
class Sequence:
    items: list["Behavior"]


@dataclass(eq=True)
class ParallelNode:
    arms: list["Behavior"]


@dataclass(eq=True)
class Receive:
    """One-way input: ``op( target )``."""
    operation: str
    target: Optional[PathExpr]


@dataclass(eq=True)
class ReceiveReply:
    """Request-response input: ``op( target )( response ) { body }``."""
    operation: str
    target: Optional[PathExpr]
    response: Optional[Expr]
    body: "Behavior"


InputGuard = Union[Receive, ReceiveReply]


@dataclass(eq=True)
class InputChoice:
    branches: list[tuple[InputGuard, "Behavior"]]


@dataclass(eq=True)
class ProvideUntil:
    provide: list[tuple[InputGuard, "Behavior"]]
    until: list[tuple[InputGuard, "Behavior"]]


@dataclass(eq=True)
class Notify:
    """Notification output: ``op@Port( arg )``."""
    operation: str
    port: str
    arg: Optional[Expr]


@dataclass(eq=True)
class Solicit:
    """Solicit-response output: ``op@Port( arg )( store )``."""
    operation: str
    port: str
    arg: Optional[Expr]
    store: Optional[PathExpr]


@dataclass(eq=True)
class Assign:
    path: PathExpr
    expr: Expr


@dataclass(eq=True)
class DeepCopy:
    path: PathExpr
    expr: Expr


@dataclass(eq=True)
class AliasOf:
    path: PathExpr
    target: PathExpr


@dataclass(eq=True)
class Increment:
    path: PathExpr
    delta: int


@dataclass(eq=True)
class If:
    condition: Expr
    then: "Behavior"
    orelse: Optional["Behavior"]


@dataclass(eq=True)
class While:
    condition: Expr
    body: "Behavior"


@dataclass(eq=True)
class For:
    init: "Behavior"
    condition: Expr
    post: "Behavior"
    body: "Behavior"


@dataclass(eq=True)
class ForEachChild:
    var: str
    source: PathExpr
    body: "Behavior"


@dataclass(eq=True)
class Throw:
    fault: str
    arg: Optional[Expr]


@dataclass(eq=True)
class Call:
    procedure: str


Behavior = Union[
    NullProcess, Sequence, ParallelNode, Receive, ReceiveReply, InputChoice,
    ProvideUntil, Notify, Solicit, Assign, DeepCopy, AliasOf, Increment,
    If, While, For, ForEachChild, Throw, Call,
]


# -- deployment -------------------------------------------------------------

@dataclass
class InterfaceDef:
    name: str
    one_way: dict[str, TypeDef] = field(default_factory=dict)
    request_response: dict[str, tuple[TypeDef, TypeDef]] = field(default_factory=dict)

    def operations(self):
        yield from self.one_way
        yield from self.request_response

    def has(self, op: str) -> bool:
        return op in self.one_way or op in self.request_response

    def kind_of(self, op: str) -> Optional[str]:
        if op in self.one_way:
            return "oneway"
        if op in self.request_response:
            return "rr"
        return None

    def request_type(self, op: str) -> Optional[TypeDef]:
        if op in self.one_way:
            return self.one_way[op]
        if op in self.request_response:
            return self.request_response[op][0]
        return None

    def response_type(self, op: str) -> Optional[TypeDef]:
        if op in self.request_response:
            return self.request_response[op][1]
        return None


@dataclass
class ParamEntry:
    """One protocol parameter: a constant leaf or a variable-bound leaf."""
    path: tuple[str, ...]
    constant: Optional[Value] = None
    variable: Optional[PathExpr] = None


@dataclass
class PortDef:
    name: str
    is_input: bool
    location: Optional[str] = None
    protocol: Optional[str] = None
    params: list[ParamEntry] = field(default_factory=list)
    interfaces: list[str] = field(default_factory=list)
    aggregates: list[str] = field(default_factory=list)

    @property
    def bound(self) -> bool:
        return self.location is not None and self.protocol is not None


@dataclass
class CsetDecl:
    """Correlation set: variables plus per-operation binding paths."""
    variables: list[str]
    # (operation, variable) -> path of names into the request message
    bindings: dict[tuple[str, str], tuple[str, ...]] = field(default_factory=dict)

    def operations(self) -> set[str]:
        return {op for (op, _var) in self.bindings}


@dataclass
class Program:
    source_name: str = "<string>"
    includes: list[str] = field(default_factory=list)
    # declarations pulled in via includes: ("type"|"interface"|"port", name)
    from_includes: set = field(default_factory=set)
    types: dict[str, TypeDef] = field(default_factory=dict)
    interfaces: dict[str, InterfaceDef] = field(default_factory=dict)
    input_ports: list[PortDef] = field(default_factory=list)
    output_ports: list[PortDef] = field(default_factory=list)
    csets: list[CsetDecl] = field(default_factory=list)
    procedures: dict[str, Behavior] = field(default_factory=dict)
    init: Optional[Behavior] = None
    main: Optional[Behavior] = None

    def output_port(self, name: str) -> Optional[PortDef]:
        for p in self.output_ports:
            if p.name == name:
                return p
        return None

    def interfaces_of(self, port: PortDef) -> list[InterfaceDef]:
        return [self.interfaces[n] for n in port.interfaces]

    def port_operation(self, port: PortDef, op: str):
        """(kind, request type, response type) of ``op`` on ``port``'s own
        interfaces, or None."""
        for iface in self.interfaces_of(port):
            kind = iface.kind_of(op)
            if kind:
                return kind, iface.request_type(op), iface.response_type(op)
        return None
