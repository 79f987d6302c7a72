"""Built-in services reachable from behaviours through output ports.

``include "console.iol"`` and friends splice an interface plus an output
port bound to a ``builtin://`` location into the program; invocations on
those ports run in-process. Time deliveries go through the normal
correlation path, so a timeout message correlates exactly like one
arriving from the network.
"""

from __future__ import annotations

import os
import re
import sys
from typing import Optional
from urllib.parse import parse_qsl, quote, unquote

from . import types, values
from .errors import (
    FAULT_ACCESS_DENIED, FAULT_FILE_NOT_FOUND, FAULT_IO, FAULT_MISSING_PARAM,
    FAULT_TEMPLATE, FAULT_TYPE_MISMATCH, JoltFault,
)
from .messages import Message, MessageMeta, ONEWAY, RR
from .model import InterfaceDef, PortDef
from .values import Value

MIME_BY_EXTENSION = {
    ".html": "text/html",
    ".htm": "text/html",
    ".css": "text/css",
    ".js": "application/javascript",
    ".json": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".txt": "text/plain",
}
DEFAULT_MIME = "application/octet-stream"

_TEXT_MIMES = ("text/", "application/json", "application/javascript",
               "image/svg+xml")


def mime_for(filename: str) -> str:
    _, ext = os.path.splitext(filename)
    return MIME_BY_EXTENSION.get(ext.lower(), DEFAULT_MIME)


def _iface(name: str, rr: dict, ow: Optional[dict] = None) -> InterfaceDef:
    iface = InterfaceDef(name)
    for op, (req, resp) in rr.items():
        iface.request_response[op] = (req, resp)
    for op, req in (ow or {}).items():
        iface.one_way[op] = req
    return iface


def _register(prog, iface: InterfaceDef, port_name: str, builtin: str) -> None:
    if prog.output_port(port_name) is not None:
        return  # already included
    prog.interfaces.setdefault(iface.name, iface)
    prog.from_includes.add(("interface", iface.name))
    port = PortDef(name=port_name, is_input=False,
                   location=f"builtin://{builtin}", protocol="local",
                   interfaces=[iface.name])
    prog.output_ports.append(port)
    prog.from_includes.add(("port", port_name))


U = types.T_UNDEFINED


def _include_console(prog):
    _register(prog, _iface("ConsoleIface", {
        "println": (U, types.T_VOID),
        "print": (U, types.T_VOID),
    }), "Console", "console")


def _include_file(prog):
    _register(prog, _iface("FileIface", {
        "readFile": (U, U),
        "writeFile": (U, types.T_VOID),
        "delete": (U, types.T_VOID),
        "exists": (U, types.T_BOOL),
        "getMimeType": (U, types.T_STRING),
    }), "File", "file")


def _include_time(prog):
    _register(prog, _iface("TimeIface", {
        "sleep": (U, types.T_VOID),
    }, ow={"setNextTimeout": U}), "Time", "time")


def _include_uri_templates(prog):
    _register(prog, _iface("UriTemplatesIface", {
        "match": (U, U),
        "expand": (U, types.T_STRING),
    }), "UriTemplates", "uri_templates")


def _include_reflection(prog):
    _register(prog, _iface("ReflectionIface", {
        "invoke": (U, U),
    }), "Reflection", "reflection")


def _include_string_utils(prog):
    _register(prog, _iface("StringUtilsIface", {
        "length": (U, types.T_INT),
        "toLowerCase": (U, types.T_STRING),
        "toUpperCase": (U, types.T_STRING),
        "trim": (U, types.T_STRING),
        "startsWith": (U, types.T_BOOL),
        "endsWith": (U, types.T_BOOL),
        "contains": (U, types.T_BOOL),
        "substring": (U, types.T_STRING),
        "split": (U, U),
    }), "StringUtils", "string_utils")


def _include_router(prog):
    # interface only: the program declares its own output port to a router
    if "RouterIface" not in prog.interfaces:
        prog.interfaces["RouterIface"] = _iface("RouterIface", {
            "config": (U, types.T_VOID),
            "makeLink": (U, types.T_STRING),
        })
        prog.from_includes.add(("interface", "RouterIface"))


INCLUDES = {
    "console.iol": _include_console,
    "file.iol": _include_file,
    "time.iol": _include_time,
    "uri_templates.iol": _include_uri_templates,
    "reflection.iol": _include_reflection,
    "string_utils.iol": _include_string_utils,
    "router.iol": _include_router,
}


# -- implementations -----------------------------------------------------------

class Builtin:
    def __init__(self, runtime):
        self.runtime = runtime

    async def call(self, op: str, arg: Value, inst) -> Value:
        handler = getattr(self, "op_" + op, None)
        if handler is None:
            raise JoltFault("OperationNotFound", Value.of(op),
                            f"{type(self).__name__} has no operation {op}")
        return await handler(arg)


class Console(Builtin):
    def _out(self):
        return (self.runtime.stdout
                if self.runtime and self.runtime.stdout else sys.stdout)

    async def op_println(self, arg: Value) -> Value:
        out = self._out()
        if arg.children:
            out.write(values.to_debug_string(arg) + "\n")
        else:
            out.write(values.to_plain_string(arg) + "\n")
        out.flush()
        return Value()

    async def op_print(self, arg: Value) -> Value:
        out = self._out()
        out.write(values.to_plain_string(arg))
        out.flush()
        return Value()


class File(Builtin):
    def _resolve(self, rel: str) -> str:
        root = os.path.realpath(self.runtime.root_dir if self.runtime else ".")
        candidate = os.path.realpath(os.path.join(root, rel.lstrip("/")))
        if candidate != root and not candidate.startswith(root + os.sep):
            raise JoltFault(FAULT_ACCESS_DENIED, Value.of(rel),
                            f"path {rel!r} escapes the document root")
        return candidate

    @staticmethod
    def _filename(arg: Value) -> str:
        if arg.kind == values.STRING:
            return arg.content
        for key in ("filename", "requestUri"):
            node = arg.first(key)
            if node is not None and node.kind == values.STRING:
                return node.content
        raise JoltFault(FAULT_TYPE_MISMATCH, message="expected a file name")

    async def op_readFile(self, arg: Value) -> Value:
        rel = unquote(self._filename(arg))
        full = self._resolve(rel)
        if not os.path.isfile(full):
            raise JoltFault(FAULT_FILE_NOT_FOUND, Value.of(rel),
                            f"no such file {rel!r}")
        with open(full, "rb") as fh:
            data = fh.read()
        if mime_for(full).startswith(_TEXT_MIMES):
            try:
                return Value(values.STRING, data.decode("utf-8"))
            except UnicodeDecodeError:
                pass
        return Value(values.BYTES, data)

    async def op_writeFile(self, arg: Value) -> Value:
        rel = unquote(self._filename(arg))
        full = self._resolve(rel)
        content = arg.first("content")
        data = b""
        if content is not None:
            data = (content.content if content.kind == values.BYTES
                    else values.to_plain_string(content).encode("utf-8"))
        os.makedirs(os.path.dirname(full), exist_ok=True)
        with open(full, "wb") as fh:
            fh.write(data)
        return Value()

    async def op_delete(self, arg: Value) -> Value:
        rel = unquote(self._filename(arg))
        full = self._resolve(rel)
        if not os.path.isfile(full):
            raise JoltFault(FAULT_FILE_NOT_FOUND, Value.of(rel),
                            f"no such file {rel!r}")
        os.remove(full)
        return Value()

    async def op_exists(self, arg: Value) -> Value:
        try:
            full = self._resolve(unquote(self._filename(arg)))
        except JoltFault:
            return Value(values.BOOL, False)
        return Value(values.BOOL, os.path.isfile(full))

    async def op_getMimeType(self, arg: Value) -> Value:
        return Value(values.STRING, mime_for(self._filename(arg)))


class Time(Builtin):
    async def op_setNextTimeout(self, arg: Value) -> Value:
        duration_ms = arg.content if arg.kind in (values.INT, values.LONG) else 0
        if duration_ms < 0:
            raise JoltFault(FAULT_TYPE_MISMATCH, message="negative timeout")
        operation = values.to_plain_string(arg.first("operation") or Value()) or "timeout"
        message = arg.first("message")
        payload = message.clone() if message is not None else Value()
        runtime = self.runtime

        async def fire():
            await runtime.timer.sleep(duration_ms / 1000.0)
            status = runtime.deliver(Message(operation, payload, ONEWAY,
                                             MessageMeta(protocol="time")))
            if status != "accepted":
                import logging
                logging.getLogger("jolt.stdlib").info(
                    "timeout %s found no live process", operation)

        runtime.spawn_background(fire())
        return Value()

    async def op_sleep(self, arg: Value) -> Value:
        ms = arg.content if arg.kind in (values.INT, values.LONG) else 0
        await self.runtime.timer.sleep(ms / 1000.0)
        return Value()


_VAR_SEGMENT = re.compile(r"^\{([A-Za-z_][A-Za-z0-9_]*)\}$")


def split_template(template: str):
    """(path segments, literal query pairs) of a URI template."""
    path, _, query = template.partition("?")
    segments = [s for s in path.split("/") if s]
    for seg in segments:
        if ("{" in seg or "}" in seg) and not _VAR_SEGMENT.match(seg):
            raise JoltFault(FAULT_TEMPLATE, Value.of(template),
                            f"malformed template segment {seg!r}")
    pairs = parse_qsl(query, keep_blank_values=True) if query else []
    return segments, pairs


def template_match(uri: str, template: str) -> Value:
    """Match result: root bool plus one child per captured variable."""
    t_segments, t_pairs = split_template(template)
    path, _, query = uri.partition("?")
    u_segments = [unquote(s) for s in path.split("/") if s]
    result = Value(values.BOOL, False)
    if len(u_segments) != len(t_segments):
        return result
    captures = {}
    for t_seg, u_seg in zip(t_segments, u_segments):
        m = _VAR_SEGMENT.match(t_seg)
        if m:
            captures[m.group(1)] = u_seg
        elif unquote(t_seg) != u_seg:
            return result
    if t_pairs:
        u_pairs = parse_qsl(query, keep_blank_values=True)
        for pair in t_pairs:
            if pair not in u_pairs:
                return result
    result.content = True
    for name, captured in captures.items():
        result.children[name] = [Value(values.STRING, captured)]
    return result


def template_expand(template: str, params: Value) -> str:
    t_segments, t_pairs = split_template(template)
    out = []
    for seg in t_segments:
        m = _VAR_SEGMENT.match(seg)
        if not m:
            out.append(seg)
            continue
        node = params.first(m.group(1))
        if node is None or node.kind == values.VOID:
            raise JoltFault(FAULT_MISSING_PARAM, Value.of(m.group(1)),
                            f"template parameter {m.group(1)} missing")
        out.append(quote(values.to_plain_string(node), safe=""))
    path = "/" + "/".join(out)
    if t_pairs:
        path += "?" + "&".join(f"{quote(k, safe='')}={quote(v, safe='')}"
                               for k, v in t_pairs)
    return path


class UriTemplates(Builtin):
    async def op_match(self, arg: Value) -> Value:
        uri = values.to_plain_string(arg.first("uri") or Value())
        template = arg.first("template")
        if template is None or template.kind != values.STRING:
            raise JoltFault(FAULT_TEMPLATE, message="match needs a template node")
        return template_match(uri, template.content)

    async def op_expand(self, arg: Value) -> Value:
        template = arg.first("template")
        if template is None or template.kind != values.STRING:
            raise JoltFault(FAULT_TEMPLATE, message="expand needs a template node")
        params = arg.first("params") or Value()
        return Value(values.STRING, template_expand(template.content, params))


class Reflection(Builtin):
    async def op_invoke(self, arg: Value) -> Value:
        from . import ports

        operation = values.to_plain_string(arg.first("operation") or Value())
        location = values.to_plain_string(arg.first("location") or Value())
        if not operation or not location:
            raise JoltFault(FAULT_TYPE_MISMATCH,
                            message="invoke needs operation and location nodes")
        proto_node = arg.first("protocol")
        protocol = "sodep"
        proto_params = None
        if proto_node is not None and proto_node.kind != values.VOID:
            protocol = values.to_plain_string(proto_node)
            if proto_node.children:
                proto_params = proto_node
        data = arg.first("data")
        payload = data.clone() if data is not None else Value()
        return await ports.transient_invoke(self.runtime, location, protocol,
                                            proto_params, operation, payload, RR)


class StringUtils(Builtin):
    @staticmethod
    def _text(arg: Value) -> str:
        return values.to_plain_string(arg)

    @staticmethod
    def _child(arg: Value, name: str) -> str:
        node = arg.first(name)
        if node is None:
            raise JoltFault(FAULT_MISSING_PARAM, Value.of(name),
                            f"missing .{name} node")
        return values.to_plain_string(node)

    async def op_length(self, arg):
        return Value.of(len(self._text(arg)))

    async def op_toLowerCase(self, arg):
        return Value.of(self._text(arg).lower())

    async def op_toUpperCase(self, arg):
        return Value.of(self._text(arg).upper())

    async def op_trim(self, arg):
        return Value.of(self._text(arg).strip())

    async def op_startsWith(self, arg):
        return Value.of(self._text(arg).startswith(self._child(arg, "prefix")))

    async def op_endsWith(self, arg):
        return Value.of(self._text(arg).endswith(self._child(arg, "suffix")))

    async def op_contains(self, arg):
        return Value.of(self._child(arg, "substring") in self._text(arg))

    async def op_substring(self, arg):
        begin = arg.first("begin")
        end = arg.first("end")
        text = self._text(arg)
        b = begin.content if begin is not None and begin.kind in (values.INT, values.LONG) else 0
        e = end.content if end is not None and end.kind in (values.INT, values.LONG) else len(text)
        return Value.of(text[b:e])

    async def op_split(self, arg):
        sep = self._child(arg, "separator")
        out = Value()
        out.children["result"] = [Value.of(part)
                                  for part in self._text(arg).split(sep)]
        return out


BUILTINS = {
    "console": Console,
    "file": File,
    "time": Time,
    "uri_templates": UriTemplates,
    "reflection": Reflection,
    "string_utils": StringUtils,
}


def create_builtin(name: str, runtime) -> Builtin:
    cls = BUILTINS.get(name)
    if cls is None:
        raise JoltFault(FAULT_IO, Value.of(name), f"unknown builtin {name!r}")
    return cls(runtime)
