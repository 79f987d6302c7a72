"""Recursive-descent parser for the service-definition language.

Source files couple deployment declarations (types, interfaces, ports,
correlation sets) with behaviour blocks (``define``/``init``/``main``).
``parse_program`` tokenizes, parses and resolves a whole program;
``parse_protocol_params`` handles a bare protocol-parameter block.
"""

from __future__ import annotations

import os
from typing import Optional

from . import model, types, values
from .errors import ParseError, ResolutionError
from .model import (
    AliasOf, Assign, Binary, Call, CsetDecl, DeepCopy, For, ForEachChild,
    Fresh, If, Increment, InputChoice, InterfaceDef, Lit, Notify, NullProcess,
    ParallelNode, ParamEntry, PathExpr, PathSegment, PortDef, PostIncrement,
    Program, ProvideUntil, Receive, ReceiveReply, Sequence, Solicit, Throw,
    TreeLit, VectorSize, While,
)
from .values import Value

KEYWORDS = {
    "include", "type", "interface", "inputPort", "outputPort", "cset",
    "define", "init", "main", "if", "else", "while", "for", "foreach",
    "provide", "until", "throw", "nullProcess", "new", "true", "false",
}

_PUNCT = [
    "<<", "->", "++", "--", "&&", "||", "==", "!=", "<=", ">=",
    "{", "}", "(", ")", "[", "]", ";", ",", ".", ":", "?", "|",
    "=", "<", ">", "+", "-", "*", "/", "%", "!", "#", "@",
]

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\", "/": "/"}


class Token:
    __slots__ = ("kind", "value", "line", "col")

    def __init__(self, kind, value, line, col):
        self.kind = kind  # ident, keyword, int, long, double, string, punct, eof
        self.value = value
        self.line = line
        self.col = col

    def __repr__(self):
        return f"{self.kind}:{self.value!r}@{self.line}:{self.col}"


def tokenize(src: str) -> list[Token]:
    tokens = []
    i, line, col = 0, 1, 1
    n = len(src)

    def err(msg):
        raise ParseError(msg, line, col)

    while i < n:
        c = src[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if src.startswith("//", i):
            while i < n and src[i] != "\n":
                i += 1
            continue
        if src.startswith("/*", i):
            end = src.find("*/", i + 2)
            if end < 0:
                err("unterminated comment")
            for ch in src[i:end + 2]:
                if ch == "\n":
                    line += 1
                    col = 1
                else:
                    col += 1
            i = end + 2
            continue
        start_line, start_col = line, col
        if c == '"':
            i += 1
            col += 1
            buf = []
            while True:
                if i >= n:
                    err("unterminated string literal")
                ch = src[i]
                if ch == '"':
                    i += 1
                    col += 1
                    break
                if ch == "\n":
                    err("newline inside string literal")
                if ch == "\\":
                    if i + 1 >= n:
                        err("unterminated escape")
                    esc = src[i + 1]
                    if esc == "u":
                        hexpart = src[i + 2:i + 6]
                        if len(hexpart) != 4:
                            err("bad \\u escape")
                        try:
                            buf.append(chr(int(hexpart, 16)))
                        except ValueError:
                            err("bad \\u escape")
                        i += 6
                        col += 6
                        continue
                    if esc not in _ESCAPES:
                        err(f"unknown escape \\{esc}")
                    buf.append(_ESCAPES[esc])
                    i += 2
                    col += 2
                    continue
                buf.append(ch)
                i += 1
                col += 1
            tokens.append(Token("string", "".join(buf), start_line, start_col))
            continue
        if c.isdigit():
            j = i
            while j < n and src[j].isdigit():
                j += 1
            is_double = False
            if j < n and src[j] == "." and j + 1 < n and src[j + 1].isdigit():
                is_double = True
                j += 1
                while j < n and src[j].isdigit():
                    j += 1
            if j < n and src[j] in "eE":
                k = j + 1
                if k < n and src[k] in "+-":
                    k += 1
                if k < n and src[k].isdigit():
                    is_double = True
                    j = k
                    while j < n and src[j].isdigit():
                        j += 1
            text = src[i:j]
            if not is_double and j < n and src[j] == "L":
                tokens.append(Token("long", int(text), start_line, start_col))
                j += 1
            elif is_double:
                tokens.append(Token("double", float(text), start_line, start_col))
            else:
                tokens.append(Token("int", int(text), start_line, start_col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            word = src[i:j]
            kind = "keyword" if word in KEYWORDS else "ident"
            tokens.append(Token(kind, word, start_line, start_col))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if src.startswith(p, i):
                tokens.append(Token("punct", p, start_line, start_col))
                i += len(p)
                col += len(p)
                break
        else:
            err(f"unexpected character {c!r}")
    tokens.append(Token("eof", None, line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token], source_name: str = "<string>"):
        self.tokens = tokens
        self.pos = 0
        self.source_name = source_name

    # -- token helpers ----------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at(self, value: str) -> bool:
        tok = self.peek()
        return tok.kind in ("punct", "keyword") and tok.value == value

    def at_kind(self, kind: str) -> bool:
        return self.peek().kind == kind

    def accept(self, value: str) -> bool:
        if self.at(value):
            self.next()
            return True
        return False

    def expect(self, value: str) -> Token:
        if not self.at(value):
            tok = self.peek()
            raise ParseError(f"unexpected {self._show(tok)}", tok.line, tok.col,
                             expected={value})
        return self.next()

    def expect_ident(self, what: str = "identifier") -> str:
        tok = self.peek()
        if tok.kind != "ident":
            raise ParseError(f"unexpected {self._show(tok)}", tok.line, tok.col,
                             expected={what})
        self.next()
        return tok.value

    def expect_name(self, what: str = "name") -> str:
        # child-name positions admit words that are keywords elsewhere
        tok = self.peek()
        if tok.kind not in ("ident", "keyword"):
            raise ParseError(f"unexpected {self._show(tok)}", tok.line, tok.col,
                             expected={what})
        self.next()
        return tok.value

    @staticmethod
    def _show(tok: Token) -> str:
        if tok.kind == "eof":
            return "end of input"
        return repr(tok.value)

    def fail(self, msg: str, expected=None):
        tok = self.peek()
        raise ParseError(msg, tok.line, tok.col, expected=expected)

    # -- program ------------------------------------------------------------

    def parse_program_syntax(self) -> tuple[Program, dict]:
        prog = Program(source_name=self.source_name)
        type_syntax: dict[str, tuple] = {}
        while not self.at_kind("eof"):
            if self.accept("include"):
                tok = self.peek()
                if tok.kind != "string":
                    self.fail("include expects a quoted file name")
                self.next()
                prog.includes.append(tok.value)
            elif self.accept("type"):
                name = self.expect_ident("type name")
                if name in type_syntax:
                    self.fail(f"duplicate type {name}")
                self.expect(":")
                type_syntax[name] = self.parse_type_ref()
            elif self.accept("interface"):
                self.parse_interface(prog)
            elif self.at("inputPort") or self.at("outputPort"):
                self.parse_port(prog)
            elif self.accept("cset"):
                self.parse_cset(prog)
            elif self.accept("define"):
                name = self.expect_ident("procedure name")
                if name in prog.procedures:
                    self.fail(f"duplicate procedure {name}")
                prog.procedures[name] = self.parse_block()
            elif self.accept("init"):
                if prog.init is not None:
                    self.fail("duplicate init block")
                prog.init = self.parse_block()
            elif self.accept("main"):
                if prog.main is not None:
                    self.fail("duplicate main block")
                prog.main = self.parse_block()
            else:
                self.fail("expected a declaration",
                          expected={"type", "interface", "inputPort",
                                    "outputPort", "cset", "define", "init",
                                    "main", "include"})
        return prog, type_syntax

    # Types are parsed to a light syntax form first so that named
    # references (including recursive ones) resolve in a second pass.
    # Forms: ("name", ident) | ("node", kind, [(child, card, form), ...])

    def parse_type_ref(self):
        tok = self.peek()
        if tok.kind != "ident":
            self.fail("expected a type name")
        self.next()
        head = tok.value
        if self.at("{"):
            if head not in types.BASIC:
                self.fail(f"children block requires a basic kind, got {head}")
            self.next()
            children = []
            while not self.accept("}"):
                self.expect(".")
                child = self.expect_name("child name")
                card = types.ONE
                if self.accept("?"):
                    card = types.OPTIONAL
                elif self.accept("*"):
                    card = types.STAR
                self.expect(":")
                children.append((child, card, self.parse_type_ref()))
            return ("node", head, children)
        if head in types.BASIC:
            return ("node", head, [])
        return ("name", head)

    def parse_interface(self, prog: Program):
        name = self.expect_ident("interface name")
        if name in prog.interfaces:
            self.fail(f"duplicate interface {name}")
        iface = InterfaceDef(name)
        iface._syntax = []  # (group, op, req_form, resp_form|None)
        self.expect("{")
        while not self.accept("}"):
            group = self.expect_ident("RequestResponse or OneWay")
            if group not in ("RequestResponse", "OneWay"):
                self.fail("expected RequestResponse or OneWay")
            self.expect(":")
            while True:
                op = self.expect_ident("operation name")
                self.expect("(")
                req = self.parse_type_ref()
                self.expect(")")
                resp = None
                if group == "RequestResponse":
                    self.expect("(")
                    resp = self.parse_type_ref()
                    self.expect(")")
                iface._syntax.append((group, op, req, resp))
                if not self.accept(","):
                    break
                # tolerate a trailing comma before the next group or brace
                if self.at("}") or (self.at_kind("ident")
                                    and self.peek().value in ("RequestResponse", "OneWay")
                                    and self.peek(1).value == ":"):
                    break
        prog.interfaces[name] = iface

    def parse_port(self, prog: Program):
        is_input = self.next().value == "inputPort"
        name = self.expect_ident("port name")
        port = PortDef(name=name, is_input=is_input)
        self.expect("{")
        while not self.accept("}"):
            section = self.expect_ident("port section")
            self.expect(":")
            if section == "Location":
                tok = self.peek()
                if tok.kind != "string":
                    self.fail("Location expects a quoted URI")
                self.next()
                port.location = tok.value
            elif section == "Protocol":
                port.protocol = self.expect_ident("protocol name")
                if self.at("{"):
                    port.params = self.parse_param_block()
            elif section == "Interfaces":
                port.interfaces.append(self.expect_ident())
                while self.accept(","):
                    port.interfaces.append(self.expect_ident())
            elif section == "Aggregates":
                if not is_input:
                    self.fail("Aggregates is only valid on input ports")
                port.aggregates.append(self.expect_ident())
                while self.accept(","):
                    port.aggregates.append(self.expect_ident())
            else:
                self.fail(f"unknown port section {section}")
        (prog.input_ports if is_input else prog.output_ports).append(port)

    def parse_param_block(self) -> list[ParamEntry]:
        self.expect("{")
        entries: list[ParamEntry] = []
        while not self.accept("}"):
            self.expect(".")
            parts = [self.expect_name("parameter name")]
            while self.accept("."):
                parts.append(self.expect_name("parameter name"))
            if self.accept("="):
                entries.append(ParamEntry(tuple(parts), constant=self.parse_param_literal()))
            elif self.accept("->"):
                entries.append(ParamEntry(tuple(parts), variable=self.parse_path()))
            else:
                self.fail("expected = or -> in protocol parameter")
            self.accept(";")
        return entries

    def parse_param_literal(self) -> Value:
        neg = self.accept("-")
        tok = self.peek()
        if tok.kind == "string":
            self.next()
            if neg:
                self.fail("cannot negate a string")
            return Value(values.STRING, tok.value)
        if tok.kind == "int":
            self.next()
            return Value.of(-tok.value if neg else tok.value)
        if tok.kind == "long":
            self.next()
            return Value.long(-tok.value if neg else tok.value)
        if tok.kind == "double":
            self.next()
            return Value(values.DOUBLE, -tok.value if neg else tok.value)
        if self.accept("true"):
            return Value(values.BOOL, True)
        if self.accept("false"):
            return Value(values.BOOL, False)
        self.fail("expected a literal protocol parameter value")

    def parse_cset(self, prog: Program):
        self.expect("{")
        decl = CsetDecl(variables=[])
        while not self.accept("}"):
            var = self.expect_ident("correlation variable")
            self.expect(":")
            decl.variables.append(var)
            saw_binding = False
            while self.at_kind("ident") and self.peek(1).value == ".":
                # next var intro looks like `ident :`, bindings like `ident .`
                op = self.expect_ident()
                path = []
                while self.accept("."):
                    path.append(self.expect_name("path segment"))
                if not path:
                    self.fail("correlation binding needs a message path")
                decl.bindings[(op, var)] = tuple(path)
                saw_binding = True
            if not saw_binding:
                self.fail(f"correlation variable {var} declares no bindings")
        prog.csets.append(decl)

    # -- behaviour ----------------------------------------------------------

    def parse_block(self):
        self.expect("{")
        if self.accept("}"):
            return NullProcess()
        b = self.parse_behavior()
        self.expect("}")
        return b

    def parse_behavior(self):
        arms = [self.parse_sequence()]
        while self.accept("|"):
            arms.append(self.parse_sequence())
        if len(arms) == 1:
            return arms[0]
        return ParallelNode(arms)

    def _starts_statement(self) -> bool:
        tok = self.peek()
        if tok.kind == "ident":
            return True
        if tok.kind == "keyword":
            return tok.value in ("if", "while", "for", "foreach", "provide",
                                "throw", "nullProcess")
        return tok.kind == "punct" and tok.value in ("{", "[")

    def parse_sequence(self):
        items = [self.parse_statement()]
        while self.accept(";"):
            if not self._starts_statement():
                break  # tolerate a trailing separator
            items.append(self.parse_statement())
        # flatten nested sequences produced by assignment chains
        flat = []
        for item in items:
            if isinstance(item, Sequence):
                flat.extend(item.items)
            else:
                flat.append(item)
        if len(flat) == 1:
            return flat[0]
        return Sequence(flat)

    def parse_statement(self):
        if self.at("{"):
            return self.parse_block()
        if self.at("["):
            return InputChoice(self.parse_branches())
        if self.accept("provide"):
            provide = self.parse_branches()
            self.expect("until")
            until = self.parse_branches()
            return ProvideUntil(provide, until)
        if self.accept("if"):
            return self.parse_if()
        if self.accept("while"):
            self.expect("(")
            cond = self.parse_expr()
            self.expect(")")
            return While(cond, self.parse_block())
        if self.accept("for"):
            self.expect("(")
            init = self.parse_simple_statement()
            self.expect(",")
            cond = self.parse_expr()
            self.expect(",")
            post = self.parse_simple_statement()
            self.expect(")")
            return For(init, cond, post, self.parse_block())
        if self.accept("foreach"):
            self.expect("(")
            var = self.expect_ident("iteration variable")
            self.expect(":")
            source = self.parse_path()
            self.expect(")")
            return ForEachChild(var, source, self.parse_block())
        if self.accept("throw"):
            self.expect("(")
            fault = self.expect_ident("fault name")
            arg = None
            if self.accept(","):
                arg = self.parse_expr()
            self.expect(")")
            return Throw(fault, arg)
        if self.accept("nullProcess"):
            return NullProcess()
        if self.at_kind("ident"):
            return self.parse_simple_statement()
        self.fail("expected a statement")

    def parse_if(self):
        self.expect("(")
        cond = self.parse_expr()
        self.expect(")")
        then = self.parse_block()
        orelse = None
        if self.accept("else"):
            if self.accept("if"):
                orelse = self.parse_if()
            else:
                orelse = self.parse_block()
        return If(cond, then, orelse)

    def parse_branches(self):
        branches = []
        while self.at("["):
            self.next()
            guard = self.parse_input_guard()
            self.expect("]")
            body = self.parse_block() if self.at("{") else NullProcess()
            branches.append((guard, body))
        if not branches:
            self.fail("expected at least one [ input ] branch")
        return branches

    def parse_input_guard(self):
        op = self.expect_ident("operation name")
        self.expect("(")
        target = None
        if not self.at(")"):
            target = self.parse_path()
        self.expect(")")
        if not self.at("("):
            return Receive(op, target)
        self.next()
        response = None
        if not self.at(")"):
            response = self.parse_expr()
        self.expect(")")
        body = self.parse_block() if self.at("{") else NullProcess()
        return ReceiveReply(op, target, response, body)

    def parse_simple_statement(self):
        """Identifier-led statement: io, assignment, copy, alias or call."""
        start = self.peek()
        path = self.parse_path()
        single = (len(path.segments) == 1 and path.segments[0].name is not None
                  and path.segments[0].index_expr is None)
        if self.at("@"):
            if not single:
                raise ParseError("operation name must be a plain identifier",
                                 start.line, start.col)
            self.next()
            port = self.expect_ident("output port name")
            self.expect("(")
            arg = None
            if not self.at(")"):
                arg = self.parse_expr()
            self.expect(")")
            if self.at("("):
                self.next()
                store = None
                if not self.at(")"):
                    store = self.parse_path()
                self.expect(")")
                return Solicit(path.segments[0].name, port, arg, store)
            return Notify(path.segments[0].name, port, arg)
        if self.at("(") and single:
            return self.parse_input_after_name(path.segments[0].name)
        if self.accept("="):
            return self.parse_assignment(path)
        if self.accept("<<"):
            return DeepCopy(path, self.parse_expr())
        if self.accept("->"):
            return AliasOf(path, self.parse_path())
        if self.accept("++"):
            return Increment(path, 1)
        if self.accept("--"):
            return Increment(path, -1)
        if single:
            return Call(path.segments[0].name)
        raise ParseError("expected an assignment or call", start.line, start.col)

    def parse_input_after_name(self, op: str):
        self.expect("(")
        target = None
        if not self.at(")"):
            target = self.parse_path()
        self.expect(")")
        if not self.at("("):
            return Receive(op, target)
        self.next()
        response = None
        if not self.at(")"):
            response = self.parse_expr()
        self.expect(")")
        body = self.parse_block() if self.at("{") else NullProcess()
        return ReceiveReply(op, target, response, body)

    def parse_assignment(self, first: PathExpr):
        targets = [first]
        while True:
            expr = self.parse_expr()
            if isinstance(expr, PathExpr) and self.accept("="):
                targets.append(expr)
                continue
            final = expr
            break
        stmts = [Assign(targets[-1], final)]
        for earlier in reversed(targets[:-1]):
            stmts.append(Assign(earlier, targets[-1]))
        if len(stmts) == 1:
            return stmts[0]
        return Sequence(stmts)

    # -- paths and expressions ----------------------------------------------

    def parse_path(self) -> PathExpr:
        segments = [self.parse_path_root()]
        while self.at(".") :
            self.next()
            segments.append(self.parse_path_segment())
        return PathExpr(segments)

    def parse_path_root(self) -> PathSegment:
        name = self.expect_ident("variable name")
        index = None
        if self.accept("["):
            index = self.parse_expr()
            self.expect("]")
        return PathSegment(name=name, index_expr=index)

    def parse_path_segment(self) -> PathSegment:
        if self.accept("("):
            name_expr = self.parse_expr()
            self.expect(")")
            index = None
            if self.accept("["):
                index = self.parse_expr()
                self.expect("]")
            return PathSegment(name_expr=name_expr, index_expr=index)
        name = self.expect_name("path segment")
        index = None
        if self.accept("["):
            index = self.parse_expr()
            self.expect("]")
        return PathSegment(name=name, index_expr=index)

    def parse_expr(self):
        return self.parse_or()

    def parse_or(self):
        left = self.parse_and()
        while self.at("||"):
            self.next()
            left = Binary("||", left, self.parse_and())
        return left

    def parse_and(self):
        left = self.parse_comparison()
        while self.at("&&"):
            self.next()
            left = Binary("&&", left, self.parse_comparison())
        return left

    def parse_comparison(self):
        left = self.parse_additive()
        while self.peek().kind == "punct" and self.peek().value in (
                "==", "!=", "<", "<=", ">", ">="):
            op = self.next().value
            left = Binary(op, left, self.parse_additive())
        return left

    def parse_additive(self):
        left = self.parse_multiplicative()
        while self.peek().kind == "punct" and self.peek().value in ("+", "-"):
            op = self.next().value
            left = Binary(op, left, self.parse_multiplicative())
        return left

    def parse_multiplicative(self):
        left = self.parse_unary()
        while self.peek().kind == "punct" and self.peek().value in ("*", "/", "%"):
            op = self.next().value
            left = Binary(op, left, self.parse_unary())
        return left

    def parse_unary(self):
        if self.accept("!"):
            return model.Unary("!", self.parse_unary())
        if self.accept("-"):
            return model.Unary("-", self.parse_unary())
        if self.accept("#"):
            return VectorSize(self.parse_path())
        return self.parse_primary()

    def parse_primary(self):
        tok = self.peek()
        if tok.kind == "int":
            self.next()
            return self._with_tree(Lit(Value.of(tok.value)))
        if tok.kind == "long":
            self.next()
            return self._with_tree(Lit(Value.long(tok.value)))
        if tok.kind == "double":
            self.next()
            return self._with_tree(Lit(Value(values.DOUBLE, tok.value)))
        if tok.kind == "string":
            self.next()
            return self._with_tree(Lit(Value(values.STRING, tok.value)))
        if self.accept("true"):
            return self._with_tree(Lit(Value(values.BOOL, True)))
        if self.accept("false"):
            return self._with_tree(Lit(Value(values.BOOL, False)))
        if self.accept("new"):
            return Fresh()
        if self.accept("("):
            inner = self.parse_expr()
            self.expect(")")
            return self._with_tree(inner)
        if self.at("{"):
            return self.parse_tree_literal(None)
        if tok.kind == "ident":
            p = self.parse_path()
            if self.accept("++"):
                return PostIncrement(p, 1)
            if self.accept("--"):
                return PostIncrement(p, -1)
            return self._with_tree(p)
        self.fail("expected an expression")

    def _with_tree(self, root):
        """Allow ``e { .path = e, ... }`` where a tree body follows."""
        if self.at("{") and self.peek(1).value == ".":
            return self.parse_tree_literal(root)
        return root

    def parse_tree_literal(self, root):
        self.expect("{")
        entries = []
        while not self.accept("}"):
            self.expect(".")
            segments = [self.parse_path_segment()]
            while self.accept("."):
                segments.append(self.parse_path_segment())
            self.expect("=")
            entries.append((segments, self.parse_expr()))
            if not self.accept(","):
                self.accept(";")
        return TreeLit(root, entries)


# -- type resolution ----------------------------------------------------------


def _resolve_types(type_syntax: dict, extern: dict):
    resolved: dict[str, types.TypeDef] = {}
    in_progress: set[str] = set()

    def resolve_name(name: str) -> types.TypeDef:
        if name in resolved:
            return resolved[name]
        if name not in type_syntax:
            if name in extern:
                return extern[name]
            raise ResolutionError(f"unknown type {name}")
        if name in in_progress:
            raise ResolutionError(f"type alias cycle through {name}")
        form = type_syntax[name]
        if form[0] == "name":
            in_progress.add(name)
            try:
                result = resolve_name(form[1])
            finally:
                in_progress.discard(name)
            resolved[name] = result
            return result
        td = types.TypeDef(form[1], name=name)
        resolved[name] = td  # memo before children so recursion terminates
        _fill(td, form[2])
        return td

    def build(form) -> types.TypeDef:
        if form[0] == "name":
            return resolve_name(form[1])
        if not form[2]:
            return types.BASIC[form[1]]
        td = types.TypeDef(form[1])
        _fill(td, form[2])
        return td

    def _fill(td: types.TypeDef, children):
        for child, card, sub in children:
            if child in td.children:
                raise ResolutionError(f"duplicate child {child} in type {td.name or td.root}")
            td.children[child] = (card, build(sub))

    for name in type_syntax:
        resolve_name(name)
    return resolved, build


def _resolve_interfaces(prog: Program, build):
    for iface in prog.interfaces.values():
        if not hasattr(iface, "_syntax"):
            continue  # merged from an include, already resolved
        for group, op, req, resp in iface._syntax:
            if iface.has(op):
                raise ResolutionError(
                    f"duplicate operation {op} in interface {iface.name}")
            if group == "OneWay":
                iface.one_way[op] = build(req)
            else:
                iface.request_response[op] = (build(req), build(resp))
        del iface._syntax


def _check_ports(prog: Program):
    seen = set()
    for port in prog.input_ports + prog.output_ports:
        key = (port.is_input, port.name)
        if key in seen:
            raise ResolutionError(f"duplicate port {port.name}")
        seen.add(key)
        for ifname in port.interfaces:
            if ifname not in prog.interfaces:
                raise ResolutionError(
                    f"port {port.name} references unknown interface {ifname}")
    for port in prog.input_ports:
        ops = {}
        for iface in prog.interfaces_of(port):
            for op in iface.operations():
                if op in ops:
                    raise ResolutionError(
                        f"operation {op} deployed twice on port {port.name}")
                ops[op] = port.name
        for agg_name in port.aggregates:
            target = prog.output_port(agg_name)
            if target is None:
                raise ResolutionError(
                    f"port {port.name} aggregates unknown output port {agg_name}")
            for iface in prog.interfaces_of(target):
                for op in iface.operations():
                    if op in ops:
                        raise ResolutionError(
                            f"aggregated operation {op} ({agg_name}) collides on "
                            f"port {port.name}")
                    ops[op] = agg_name


def _check_csets(prog: Program):
    own_ops = set()
    for port in prog.input_ports:
        for iface in prog.interfaces_of(port):
            own_ops.update(iface.operations())
    for decl in prog.csets:
        for (op, var) in decl.bindings:
            if var not in decl.variables:
                raise ResolutionError(f"correlation binding for undeclared variable {var}")
            if op not in own_ops:
                raise ResolutionError(
                    f"correlation set references operation {op} not deployed "
                    f"on any input port")


def _check_behaviors(prog: Program):
    def walk(node):
        if node is None:
            return
        if isinstance(node, Call):
            if node.procedure not in prog.procedures:
                raise ResolutionError(f"unknown procedure {node.procedure}")
        elif isinstance(node, Sequence):
            for item in node.items:
                walk(item)
        elif isinstance(node, ParallelNode):
            for arm in node.arms:
                walk(arm)
        elif isinstance(node, (InputChoice, ProvideUntil)):
            branches = (node.branches if isinstance(node, InputChoice)
                        else node.provide + node.until)
            for guard, body in branches:
                if isinstance(guard, ReceiveReply):
                    walk(guard.body)
                walk(body)
        elif isinstance(node, ReceiveReply):
            walk(node.body)
        elif isinstance(node, If):
            walk(node.then)
            walk(node.orelse)
        elif isinstance(node, While):
            walk(node.body)
        elif isinstance(node, For):
            walk(node.init)
            walk(node.post)
            walk(node.body)
        elif isinstance(node, ForEachChild):
            walk(node.body)

    for body in prog.procedures.values():
        walk(body)
    walk(prog.init)
    walk(prog.main)


def _merge_includes(prog: Program, base_dir: Optional[str], seen: set):
    from . import stdlib

    for inc in prog.includes:
        if inc in stdlib.INCLUDES:
            stdlib.INCLUDES[inc](prog)
            continue
        path = os.path.join(base_dir or ".", inc)
        real = os.path.realpath(path)
        if real in seen:
            continue
        seen.add(real)
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ResolutionError(f"cannot include {inc}: {exc}") from exc
        sub = parse_program(text, source_name=inc,
                            base_dir=os.path.dirname(path) or ".",
                            require_main=False, _seen=seen)
        for name, td in sub.types.items():
            if name in prog.types:
                raise ResolutionError(f"duplicate type {name} from include {inc}")
            prog.types[name] = td
            prog.from_includes.add(("type", name))
        for name, iface in sub.interfaces.items():
            if name in prog.interfaces:
                raise ResolutionError(f"duplicate interface {name} from include {inc}")
            prog.interfaces[name] = iface
            prog.from_includes.add(("interface", name))
        for port in sub.input_ports + sub.output_ports:
            prog.from_includes.add(("port", port.name))
        prog.input_ports.extend(sub.input_ports)
        prog.output_ports.extend(sub.output_ports)
        prog.csets.extend(sub.csets)
        for name, body in sub.procedures.items():
            if name in prog.procedures:
                raise ResolutionError(f"duplicate procedure {name} from include {inc}")
            prog.procedures[name] = body
            prog.from_includes.add(("procedure", name))


def parse_program(source: str, source_name: str = "<string>",
                  base_dir: Optional[str] = None, require_main: bool = True,
                  _seen: Optional[set] = None) -> Program:
    """Parse and resolve a complete program from source text."""
    parser = _Parser(tokenize(source), source_name)
    prog, type_syntax = parser.parse_program_syntax()
    _merge_includes(prog, base_dir, _seen if _seen is not None else set())
    for name in type_syntax:
        if name in prog.types:
            raise ResolutionError(f"duplicate type {name}")
    resolved, build = _resolve_types(type_syntax, prog.types)
    prog.types.update(resolved)
    _resolve_interfaces(prog, build)
    _check_ports(prog)
    _check_csets(prog)
    _check_behaviors(prog)
    if require_main and prog.main is None:
        raise ResolutionError(f"{source_name}: missing main")
    return prog


def parse_file(path: str) -> Program:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_program(text, source_name=os.path.basename(path),
                         base_dir=os.path.dirname(path) or ".")


def parse_protocol_params(block: str) -> list[ParamEntry]:
    """Parse a bare protocol-parameter block, with or without braces."""
    text = block.strip()
    if not text.startswith("{"):
        text = "{" + text + "}"
    parser = _Parser(tokenize(text), "<params>")
    entries = parser.parse_param_block()
    if not parser.at_kind("eof"):
        parser.fail("trailing input after parameter block")
    return entries


def parse_behavior(source: str):
    """Parse a bare behaviour fragment (used by tests and tooling)."""
    parser = _Parser(tokenize(source), "<behavior>")
    b = parser.parse_behavior()
    if not parser.at_kind("eof"):
        parser.fail("trailing input after behaviour")
    return b
