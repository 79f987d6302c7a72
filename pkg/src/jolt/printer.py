"""Source renderer: turns a program model back into canonical text.

The output reparses to an equal model, which the test suite checks as a
fixpoint property. Declarations merged from includes are not re-emitted;
the include lines themselves are.
"""

from __future__ import annotations

from . import model, types, values
from .model import (
    AliasOf, Assign, Binary, Call, DeepCopy, For, ForEachChild, Fresh, If,
    Increment, InputChoice, Lit, Notify, NullProcess, ParallelNode, PathExpr,
    PostIncrement, Program, ProvideUntil, Receive, ReceiveReply, Sequence,
    Solicit, Throw, TreeLit, Unary, VectorSize, While,
)

_PREC = {
    "||": 1, "&&": 2,
    "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
    "+": 4, "-": 4, "*": 5, "/": 5, "%": 5,
}
_UNARY_PREC = 6
_PRIMARY_PREC = 7


def print_scalar(v: values.Value) -> str:
    if v.kind == values.STRING:
        body = (v.content.replace("\\", "\\\\").replace('"', '\\"')
                .replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r"))
        return f'"{body}"'
    if v.kind == values.BOOL:
        return "true" if v.content else "false"
    if v.kind == values.LONG:
        return f"{v.content}L"
    if v.kind == values.DOUBLE:
        text = repr(v.content)
        return text if ("." in text or "e" in text or "E" in text) else text + ".0"
    if v.kind == values.INT:
        return str(v.content)
    raise ValueError(f"cannot print scalar of kind {v.kind}")


def print_expr(e, parent_prec: int = 0) -> str:
    if isinstance(e, Lit):
        return print_scalar(e.value)
    if isinstance(e, PathExpr):
        return print_path(e)
    if isinstance(e, Fresh):
        return "new"
    if isinstance(e, VectorSize):
        return "#" + print_path(e.path)
    if isinstance(e, PostIncrement):
        return print_path(e.path) + ("++" if e.delta > 0 else "--")
    if isinstance(e, Unary):
        inner = print_expr(e.operand, _UNARY_PREC)
        return e.op + inner
    if isinstance(e, Binary):
        prec = _PREC[e.op]
        text = (print_expr(e.left, prec) + " " + e.op + " "
                + print_expr(e.right, prec + 1))
        if prec < parent_prec:
            return "(" + text + ")"
        return text
    if isinstance(e, TreeLit):
        entries = ", ".join(
            "." + _print_segments(segs) + " = " + print_expr(val)
            for segs, val in e.entries)
        head = print_expr(e.root, _PRIMARY_PREC) + " " if e.root is not None else ""
        return head + "{ " + entries + " }" if entries else head + "{}"
    raise ValueError(f"cannot print expression {e!r}")


def _print_segments(segments) -> str:
    parts = []
    for seg in segments:
        if seg.name_expr is not None:
            text = "(" + print_expr(seg.name_expr) + ")"
        else:
            text = seg.name
        if seg.index_expr is not None:
            text += "[" + print_expr(seg.index_expr) + "]"
        parts.append(text)
    return ".".join(parts)


def print_path(p: PathExpr) -> str:
    return _print_segments(p.segments)


def _guard(g, ind: str) -> str:
    if isinstance(g, Receive):
        target = print_path(g.target) if g.target else ""
        return f"{g.operation}( {target} )" if target else f"{g.operation}()"
    target = print_path(g.target) if g.target else ""
    resp = print_expr(g.response) if g.response is not None else ""
    head = f"{g.operation}( {target} )( {resp} )" if target or resp else f"{g.operation}()()"
    if isinstance(g.body, NullProcess):
        return head
    return head + " {\n" + print_behavior(g.body, ind + "\t") + "\n" + ind + "}"


def _branches(branches, ind: str) -> str:
    out = []
    for guard, body in branches:
        text = ind + "[ " + _guard(guard, ind) + " ]"
        if not isinstance(body, NullProcess):
            text += " {\n" + print_behavior(body, ind + "\t") + "\n" + ind + "}"
        out.append(text)
    return "\n".join(out)


def print_behavior(b, ind: str = "\t") -> str:
    if isinstance(b, Sequence):
        return ";\n".join(_seq_item(item, ind) for item in b.items)
    if isinstance(b, ParallelNode):
        return ("\n" + ind + "|\n").join(print_behavior(arm, ind) for arm in b.arms)
    return _statement(b, ind)


def _seq_item(item, ind: str) -> str:
    if isinstance(item, ParallelNode):
        return (ind + "{\n" + print_behavior(item, ind + "\t") + "\n" + ind + "}")
    return _statement(item, ind)


def _block(b, ind: str) -> str:
    return "{\n" + print_behavior(b, ind + "\t") + "\n" + ind + "}"


def _statement(b, ind: str) -> str:
    pad = ind
    if isinstance(b, NullProcess):
        return pad + "nullProcess"
    if isinstance(b, Assign):
        return pad + print_path(b.path) + " = " + print_expr(b.expr)
    if isinstance(b, DeepCopy):
        return pad + print_path(b.path) + " << " + print_expr(b.expr)
    if isinstance(b, AliasOf):
        return pad + print_path(b.path) + " -> " + print_path(b.target)
    if isinstance(b, Increment):
        return pad + print_path(b.path) + ("++" if b.delta > 0 else "--")
    if isinstance(b, Call):
        return pad + b.procedure
    if isinstance(b, Throw):
        if b.arg is not None:
            return pad + f"throw( {b.fault}, {print_expr(b.arg)} )"
        return pad + f"throw( {b.fault} )"
    if isinstance(b, Receive):
        target = print_path(b.target) if b.target else ""
        return pad + (f"{b.operation}( {target} )" if target else f"{b.operation}()")
    if isinstance(b, ReceiveReply):
        return pad + _guard(b, ind)
    if isinstance(b, Notify):
        arg = print_expr(b.arg) if b.arg is not None else ""
        return pad + (f"{b.operation}@{b.port}( {arg} )" if arg
                      else f"{b.operation}@{b.port}()")
    if isinstance(b, Solicit):
        arg = print_expr(b.arg) if b.arg is not None else ""
        store = print_path(b.store) if b.store is not None else ""
        return pad + f"{b.operation}@{b.port}( {arg} )( {store} )"
    if isinstance(b, If):
        text = pad + "if ( " + print_expr(b.condition) + " ) " + _block(b.then, ind)
        if b.orelse is not None:
            if isinstance(b.orelse, If):
                text += " else " + _statement(b.orelse, ind).lstrip()
            else:
                text += " else " + _block(b.orelse, ind)
        return text
    if isinstance(b, While):
        return pad + "while ( " + print_expr(b.condition) + " ) " + _block(b.body, ind)
    if isinstance(b, For):
        init = _statement(b.init, "").strip()
        post = _statement(b.post, "").strip()
        return (pad + f"for ( {init}, {print_expr(b.condition)}, {post} ) "
                + _block(b.body, ind))
    if isinstance(b, ForEachChild):
        return (pad + f"foreach ( {b.var} : {print_path(b.source)} ) "
                + _block(b.body, ind))
    if isinstance(b, InputChoice):
        return _branches(b.branches, ind)
    if isinstance(b, ProvideUntil):
        return (pad + "provide\n" + _branches(b.provide, ind + "\t")
                + "\n" + pad + "until\n" + _branches(b.until, ind + "\t"))
    raise ValueError(f"cannot print statement {b!r}")


def _print_type_ref(td: types.TypeDef, declaring: str = "") -> str:
    if td.name and td.name != declaring:
        return td.name
    if not td.children:
        return td.root
    parts = []
    for child, (card, sub) in td.children.items():
        suffix = {types.ONE: "", types.OPTIONAL: "?", types.STAR: "*"}[card]
        parts.append(f".{child}{suffix}: {_print_type_ref(sub)}")
    return td.root + " { " + " ".join(parts) + " }"


def print_program(prog: Program) -> str:
    out = []
    for inc in prog.includes:
        out.append(f'include "{inc}"')
    if prog.includes:
        out.append("")
    for name, td in prog.types.items():
        if ("type", name) in prog.from_includes:
            continue
        if td.name and td.name != name:
            out.append(f"type {name}: {td.name}")
        else:
            out.append(f"type {name}: {_print_type_ref(td, declaring=name)}")
    for name, iface in prog.interfaces.items():
        if ("interface", name) in prog.from_includes:
            continue
        lines = [f"interface {name} {{"]
        if iface.request_response:
            entries = ", ".join(
                f"{op}( {_print_type_ref(req)} )( {_print_type_ref(resp)} )"
                for op, (req, resp) in iface.request_response.items())
            lines.append(f"\tRequestResponse: {entries}")
        if iface.one_way:
            entries = ", ".join(f"{op}( {_print_type_ref(req)} )"
                                for op, req in iface.one_way.items())
            lines.append(f"\tOneWay: {entries}")
        lines.append("}")
        out.append("\n".join(lines))
    for port in prog.input_ports + prog.output_ports:
        if ("port", port.name) in prog.from_includes:
            continue
        kind = "inputPort" if port.is_input else "outputPort"
        lines = [f"{kind} {port.name} {{"]
        if port.location is not None:
            lines.append(f'\tLocation: "{port.location}"')
        if port.protocol is not None:
            if port.params:
                plines = []
                for entry in port.params:
                    dotted = ".".join(entry.path)
                    if entry.variable is not None:
                        plines.append(f"\t\t.{dotted} -> {print_path(entry.variable)}")
                    else:
                        plines.append(f"\t\t.{dotted} = {print_scalar(entry.constant)}")
                lines.append(f"\tProtocol: {port.protocol} {{\n"
                             + ";\n".join(plines) + "\n\t}")
            else:
                lines.append(f"\tProtocol: {port.protocol}")
        if port.interfaces:
            lines.append("\tInterfaces: " + ", ".join(port.interfaces))
        if port.aggregates:
            lines.append("\tAggregates: " + ", ".join(port.aggregates))
        lines.append("}")
        out.append("\n".join(lines))
    for decl in prog.csets:
        lines = ["cset {"]
        for var in decl.variables:
            bindings = " ".join(
                f"{op}." + ".".join(path)
                for (op, v), path in decl.bindings.items() if v == var)
            lines.append(f"\t{var}: {bindings}")
        lines.append("}")
        out.append("\n".join(lines))
    for name, body in prog.procedures.items():
        if ("procedure", name) in prog.from_includes:
            continue
        out.append(f"define {name} {{\n{print_behavior(body)}\n}}")
    if prog.init is not None:
        out.append(f"init {{\n{print_behavior(prog.init)}\n}}")
    if prog.main is not None:
        out.append(f"main {{\n{print_behavior(prog.main)}\n}}")
    return "\n\n".join(out) + "\n"
