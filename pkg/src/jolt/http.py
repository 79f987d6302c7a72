"""HTTP binding: wire parsing plus value <-> payload transformation.

A request's first path segment names the operation; the querystring,
body and mapped cookies merge into the message value, which is then cast
against the operation's declared request type. Responses pick a format
by content negotiation (explicit Accept match, else the configured
fallback, else XML) and honour the protocol parameters: per-method
default operations, cookie mappings, status/redirect/content-type
aliases, cache directives and REST path aliases with ``%!{node}``
substitution.
"""

from __future__ import annotations

import base64
import json as _json
import logging
import re
import xml.etree.ElementTree as ET
from typing import Callable, Optional
from urllib.parse import parse_qsl, quote, unquote, urlencode

from . import values
from .errors import (
    FAULT_ACCESS_DENIED, FAULT_BINDING, FAULT_CORRELATION, FAULT_CSET_REASSIGN,
    FAULT_FILE_NOT_FOUND, FAULT_IO, FAULT_MISSING_ALIAS_VALUE,
    FAULT_MISSING_PARAM, FAULT_PORT_UNBOUND, FAULT_TYPE_MISMATCH,
    FAULT_UNKNOWN_OPERATION, JoltFault,
)
from .model import ParamEntry, PathExpr
from .values import Value

log = logging.getLogger("jolt.http")

MAX_HEADER_BYTES = 64 * 1024
MAX_BODY_BYTES = 64 * 1024 * 1024

REASONS = {
    200: "OK", 201: "Created", 204: "No Content", 302: "Found",
    400: "Bad Request", 403: "Forbidden", 404: "Not Found",
    405: "Method Not Allowed", 500: "Internal Server Error",
    502: "Bad Gateway",
}

FAULT_STATUS = {
    FAULT_TYPE_MISMATCH: 400,
    FAULT_MISSING_PARAM: 400,
    FAULT_MISSING_ALIAS_VALUE: 400,
    FAULT_CORRELATION: 404,
    "OperationNotFound": 404,
    "RouteNotFound": 404,
    FAULT_UNKNOWN_OPERATION: 404,
    FAULT_FILE_NOT_FOUND: 404,
    FAULT_ACCESS_DENIED: 403,
    FAULT_IO: 502,
    FAULT_PORT_UNBOUND: 500,
    FAULT_BINDING: 500,
    FAULT_CSET_REASSIGN: 500,
}


def fault_status(name: str) -> int:
    return FAULT_STATUS.get(name, 500)


# -- wire structures ---------------------------------------------------------

class HttpRequest:
    def __init__(self, method: str, target: str, version: str = "HTTP/1.1",
                 headers=None, body: bytes = b""):
        self.method = method.upper()
        self.target = target
        self.version = version
        self.headers: list[tuple[str, str]] = headers or []
        self.body = body

    def header(self, name: str) -> Optional[str]:
        low = name.lower()
        for k, v in self.headers:
            if k.lower() == low:
                return v
        return None

    @property
    def path(self) -> str:
        return self.target.split("?", 1)[0].split("#", 1)[0]

    @property
    def query(self) -> str:
        rest = self.target.split("?", 1)
        if len(rest) < 2:
            return ""
        return rest[1].split("#", 1)[0]


class HttpResponse:
    def __init__(self, status: int, headers=None, body: bytes = b"",
                 version: str = "HTTP/1.1"):
        self.status = status
        self.headers: list[tuple[str, str]] = headers or []
        self.body = body
        self.version = version

    def header(self, name: str) -> Optional[str]:
        low = name.lower()
        for k, v in self.headers:
            if k.lower() == low:
                return v
        return None


class WireError(Exception):
    """Malformed or oversized HTTP traffic."""


async def _read_head(reader) -> Optional[list[str]]:
    head = await reader.readuntil(b"\r\n\r\n")
    if len(head) > MAX_HEADER_BYTES:
        raise WireError("header block too large")
    lines = head.decode("latin-1").split("\r\n")
    return [ln for ln in lines if ln]


def _parse_headers(lines: list[str]) -> list[tuple[str, str]]:
    headers = []
    for line in lines:
        if ":" not in line:
            raise WireError(f"malformed header line {line!r}")
        name, _, value = line.partition(":")
        headers.append((name.strip(), value.strip()))
    return headers


async def _read_body(reader, headers) -> bytes:
    te = next((v for k, v in headers if k.lower() == "transfer-encoding"), "")
    if "chunked" in te.lower():
        chunks = []
        total = 0
        while True:
            size_line = await reader.readuntil(b"\r\n")
            size = int(size_line.strip().split(b";")[0], 16)
            if size == 0:
                await reader.readuntil(b"\r\n")
                break
            total += size
            if total > MAX_BODY_BYTES:
                raise WireError("chunked body too large")
            chunks.append(await reader.readexactly(size))
            await reader.readexactly(2)
        return b"".join(chunks)
    cl = next((v for k, v in headers if k.lower() == "content-length"), None)
    if cl is None:
        return b""
    length = int(cl)
    if length > MAX_BODY_BYTES:
        raise WireError("body too large")
    return await reader.readexactly(length)


async def read_request(reader) -> Optional[HttpRequest]:
    """One request from the stream, or None on a clean EOF."""
    import asyncio
    try:
        lines = await _read_head(reader)
    except (asyncio.IncompleteReadError, ConnectionError):
        return None
    if not lines:
        return None
    parts = lines[0].split(" ")
    if len(parts) != 3:
        raise WireError(f"malformed request line {lines[0]!r}")
    method, target, version = parts
    headers = _parse_headers(lines[1:])
    body = await _read_body(reader, headers)
    return HttpRequest(method, target, version, headers, body)


async def read_response(reader) -> HttpResponse:
    lines = await _read_head(reader)
    if not lines:
        raise WireError("empty response")
    head = lines[0].split(" ", 2)
    if len(head) < 2 or not head[0].startswith("HTTP/"):
        raise WireError(f"malformed status line {lines[0]!r}")
    headers = _parse_headers(lines[1:])
    status = int(head[1])
    if status == 204:
        return HttpResponse(status, headers, b"", head[0])
    body = await _read_body(reader, headers)
    return HttpResponse(status, headers, body, head[0])


def serialize_request(req: HttpRequest) -> bytes:
    out = [f"{req.method} {req.target} {req.version}".encode("latin-1")]
    have_cl = any(k.lower() == "content-length" for k, _ in req.headers)
    headers = list(req.headers)
    if req.body and not have_cl:
        headers.append(("Content-Length", str(len(req.body))))
    elif not req.body and req.method in ("POST", "PUT") and not have_cl:
        headers.append(("Content-Length", "0"))
    for k, v in headers:
        out.append(f"{k}: {v}".encode("latin-1"))
    return b"\r\n".join(out) + b"\r\n\r\n" + req.body


def serialize_response(resp: HttpResponse, keep_alive: bool = True) -> bytes:
    reason = REASONS.get(resp.status, "Unknown")
    out = [f"{resp.version} {resp.status} {reason}".encode("latin-1")]
    headers = list(resp.headers)
    if resp.status != 204:
        headers.append(("Content-Length", str(len(resp.body))))
    headers.append(("Connection", "keep-alive" if keep_alive else "close"))
    for k, v in headers:
        out.append(f"{k}: {v}".encode("latin-1"))
    body = b"" if resp.status == 204 else resp.body
    return b"\r\n".join(out) + b"\r\n\r\n" + body


# -- value codecs --------------------------------------------------------------

def _scalar_to_json(v: Value):
    if v.kind == values.VOID:
        return None
    if v.kind == values.BYTES:
        return base64.b64encode(v.content).decode("ascii")
    return v.content


def _to_json(v: Value):
    if not v.children:
        return _scalar_to_json(v)
    obj = {}
    if v.kind != values.VOID:
        obj["$"] = _scalar_to_json(v)
    for name, vec in v.children.items():
        if len(vec) == 1:
            obj[name] = _to_json(vec[0])
        else:
            obj[name] = [_to_json(item) for item in vec]
    return obj


def json_encode(v: Value) -> bytes:
    return _json.dumps(_to_json(v), separators=(",", ":")).encode("utf-8")


def _from_json(o) -> Value:
    if isinstance(o, dict):
        v = Value()
        for name, member in o.items():
            if name == "$":
                scalar = _from_json(member)
                v.kind, v.content = scalar.kind, scalar.content
                continue
            if isinstance(member, list):
                v.children[name] = [_from_json(item) for item in member]
            else:
                v.children[name] = [_from_json(member)]
        return v
    if isinstance(o, list):
        raise JoltFault(FAULT_TYPE_MISMATCH, message="unexpected JSON array")
    if isinstance(o, bool) or o is None or isinstance(o, (int, float, str)):
        if isinstance(o, int) and not isinstance(o, bool) and not values.fits_long(o):
            return Value(values.DOUBLE, float(o))
        return Value.of(o)
    raise JoltFault(FAULT_TYPE_MISMATCH, message=f"bad JSON value {o!r}")


def json_decode(data: bytes) -> Value:
    try:
        obj = _json.loads(data.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise JoltFault(FAULT_TYPE_MISMATCH,
                        message=f"malformed JSON body: {exc}") from None
    if isinstance(obj, list):
        raise JoltFault(FAULT_TYPE_MISMATCH,
                        message="JSON array is not a valid message body")
    return _from_json(obj)


def _xml_escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def _xml_fragment(name: str, v: Value, out: list) -> None:
    out.append(f"<{name}>")
    if v.kind == values.BYTES:
        out.append(base64.b64encode(v.content).decode("ascii"))
    elif v.kind != values.VOID:
        out.append(_xml_escape(values.to_plain_string(v)))
    for cname, vec in v.children.items():
        for item in vec:
            _xml_fragment(cname, item, out)
    out.append(f"</{name}>")


def xml_encode(v: Value, root_tag: str) -> bytes:
    out: list[str] = []
    _xml_fragment(root_tag, v, out)
    return "".join(out).encode("utf-8")


def _from_xml(el) -> Value:
    text = (el.text or "") + "".join(child.tail or "" for child in el)
    v = Value() if text == "" else Value(values.STRING, text)
    for child in el:
        v.children.setdefault(child.tag, []).append(_from_xml(child))
    return v


def xml_decode(data: bytes) -> Value:
    try:
        root = ET.fromstring(data.decode("utf-8"))
    except (ET.ParseError, UnicodeDecodeError) as exc:
        raise JoltFault(FAULT_TYPE_MISMATCH,
                        message=f"malformed XML body: {exc}") from None
    return _from_xml(root)


def xml_root_tag(data: bytes) -> str:
    try:
        return ET.fromstring(data.decode("utf-8")).tag
    except (ET.ParseError, UnicodeDecodeError):
        return ""


def querystring_decode(qs: str, into: Optional[Value] = None,
                       only_missing: bool = False) -> Value:
    v = into if into is not None else Value()
    taken = set(v.children) if only_missing else set()
    for key, raw in parse_qsl(qs, keep_blank_values=True):
        if key in taken:
            continue  # the body already supplied this node
        v.children.setdefault(key, []).append(Value(values.STRING, raw))
    return v


def querystring_encode(v: Value) -> str:
    pairs = []
    for name, vec in v.children.items():
        for item in vec:
            if item.children:
                raise JoltFault(
                    FAULT_TYPE_MISMATCH,
                    message=f"cannot carry nested node {name} in a querystring")
            pairs.append((name, values.to_plain_string(item)))
    return urlencode(pairs)


def multipart_decode(body: bytes, content_type: str) -> Value:
    m = re.search(r'boundary="?([^";]+)"?', content_type)
    if not m:
        raise JoltFault(FAULT_TYPE_MISMATCH, message="multipart without boundary")
    boundary = b"--" + m.group(1).encode("latin-1")
    v = Value()
    for chunk in body.split(boundary)[1:]:
        if chunk.startswith(b"--"):
            break
        chunk = chunk.lstrip(b"\r\n")
        head, sep, payload = chunk.partition(b"\r\n\r\n")
        if not sep:
            continue
        payload = payload.rstrip(b"\r\n")
        headers = head.decode("latin-1", errors="replace")
        name_m = re.search(r'name="([^"]*)"', headers)
        if not name_m:
            continue
        name = name_m.group(1)
        ct_m = re.search(r"(?im)^content-type:\s*(\S+)", headers)
        part_ct = ct_m.group(1).lower() if ct_m else "text/plain"
        if part_ct.startswith("text/") or part_ct in ("application/json",):
            try:
                item = Value(values.STRING, payload.decode("utf-8"))
            except UnicodeDecodeError:
                item = Value(values.BYTES, payload)
        else:
            item = Value(values.BYTES, payload)
        v.children.setdefault(name, []).append(item)
    return v


# -- protocol parameters ---------------------------------------------------------

class HttpParams:
    """Protocol-parameter tree: constants plus variable-bound leaves."""

    def __init__(self, entries: Optional[list[ParamEntry]] = None):
        self.entries = entries or []
        self._static = Value()
        self._vars: dict[tuple, PathExpr] = {}
        for entry in self.entries:
            if entry.constant is not None:
                values.set_scalar(self._static, values.path(*entry.path),
                                  entry.constant.kind, entry.constant.content)
            else:
                self._vars[entry.path] = entry.variable

    @classmethod
    def from_value(cls, v: Value) -> "HttpParams":
        """Build constant-only parameters from a binding value subtree."""
        entries = []

        def walk(node: Value, prefix: tuple):
            if prefix and node.kind != values.VOID:
                entries.append(ParamEntry(prefix, constant=Value(node.kind, node.content)))
            for name, vec in node.children.items():
                for item in vec:
                    walk(item, prefix + (name,))

        walk(v, ())
        return cls(entries)

    def variable(self, *names: str) -> Optional[PathExpr]:
        return self._vars.get(tuple(names))

    def resolve(self, reader: Optional[Callable] = None) -> Value:
        out = self._static.clone()
        for names, _pe in self._vars.items():
            if reader is None:
                continue
            got = reader(tuple(seg.name for seg in _pe.segments))
            if got is not None and got.kind != values.VOID:
                values.set_scalar(out, values.path(*names), got.kind, got.content)
        return out


def cfg_node(cfg: Value, *names: str) -> Value:
    return values.get(cfg, values.path(*names))


def op_cfg(cfg: Value, op: str, *names: str) -> Value:
    """Operation-specific configuration wins over the port-wide one."""
    specific = cfg_node(cfg, "osc", op, *names)
    if specific.kind != values.VOID or specific.children:
        return specific
    return cfg_node(cfg, *names)


def cookie_map(cfg: Value) -> list[tuple[str, str]]:
    node = cfg_node(cfg, "cookies")
    return [(cookie, values.to_plain_string(vec[0]))
            for cookie, vec in node.children.items() if vec]


# -- content negotiation -----------------------------------------------------------

_FORMAT_MIMES = {
    "json": ("application/json", "text/json"),
    "xml": ("application/xml", "text/xml"),
    "html": ("text/html",),
}

FORMAT_CONTENT_TYPE = {
    "json": "application/json",
    "xml": "text/xml",
    "html": "text/html",
    "raw": "application/octet-stream",
}


def _parse_accept(header: str) -> list[tuple[str, float]]:
    out = []
    for part in header.split(","):
        part = part.strip()
        if not part:
            continue
        media, *params = [p.strip() for p in part.split(";")]
        q = 1.0
        for p in params:
            if p.startswith("q="):
                try:
                    q = float(p[2:])
                except ValueError:
                    q = 0.0
        out.append((media.lower(), q))
    return out


def negotiate(accept_header: Optional[str], cfg_format: str) -> str:
    """Pick the response format: explicit Accept wins, then the
    configured fallback, then XML."""
    fallback = cfg_format if cfg_format in ("json", "xml", "html", "raw") else "xml"
    if not accept_header:
        return fallback
    accepted = _parse_accept(accept_header)
    eligible = ["json", "xml"]
    if fallback in ("html", "raw"):
        eligible.append("html")
    best, best_score = None, 0.0
    for fmt in eligible:
        for mime in _FORMAT_MIMES[fmt]:
            major = mime.split("/", 1)[0] + "/*"
            for media, q in accepted:
                if media == mime:
                    score = q * 3
                elif media == major:
                    score = q * 2
                else:
                    continue
                if score > best_score:
                    best, best_score = fmt, score
    if best is None:
        return fallback
    if best == "html" and fallback == "raw":
        return "raw"
    return best


# -- request decoding (server side) ----------------------------------------------

class DecodedRequest:
    __slots__ = ("operation", "payload", "needs_reply", "response_format",
                 "method", "path")

    def __init__(self, operation, payload, needs_reply, response_format,
                 method, path):
        self.operation = operation
        self.payload = payload
        self.needs_reply = needs_reply
        self.response_format = response_format
        self.method = method
        self.path = path


def _decode_body(req: HttpRequest, payload: Value) -> None:
    if not req.body:
        return
    ct = (req.header("Content-Type") or "").lower()
    if "json" in ct:
        decoded = json_decode(req.body)
    elif "xml" in ct:
        decoded = xml_decode(req.body)
    elif "x-www-form-urlencoded" in ct:
        decoded = querystring_decode(req.body.decode("utf-8", errors="replace"))
    elif ct.startswith("multipart/"):
        decoded = multipart_decode(req.body, req.header("Content-Type") or "")
    else:
        if ct.startswith("text/") or not ct:
            try:
                payload.set_scalar(values.STRING, req.body.decode("utf-8"))
                return
            except UnicodeDecodeError:
                pass
        payload.set_scalar(values.BYTES, req.body)
        return
    payload.kind, payload.content = decoded.kind, decoded.content
    payload.children.update(decoded.children)


def decode_request(req: HttpRequest, cfg: Value, lookup: Callable) -> DecodedRequest:
    """Map a wire request to (operation, value); raises faults on errors.

    ``lookup(name)`` returns (kind, request type) or None for unknown
    operations; casting against the request type happens here so the
    engine only ever sees typed values.
    """
    path = unquote(req.path)
    segments = [s for s in path.split("/") if s]
    candidate = segments[0] if segments else ""
    is_default = False
    info = lookup(candidate) if candidate else None
    if info is not None:
        operation = candidate
    else:
        d = cfg_node(cfg, "default", req.method.lower())
        if d.kind == values.VOID:
            d = cfg_node(cfg, "default")
        if d.kind == values.VOID:
            raise JoltFault("OperationNotFound", Value.of(path),
                            f"no operation matches {path}")
        operation = values.to_plain_string(d)
        info = lookup(operation)
        if info is None:
            raise JoltFault("OperationNotFound", Value.of(operation),
                            f"default operation {operation} is not deployed")
        is_default = True
    kind, req_type = info

    payload = Value()
    _decode_body(req, payload)
    querystring_decode(req.query, into=payload, only_missing=True)
    # fragments are not sent by real clients, but when injected raw they
    # decode exactly like querystring parameters
    fragment = req.target.partition("#")[2]
    if fragment:
        querystring_decode(fragment, into=payload, only_missing=True)
    cookie_header = req.header("Cookie") or ""
    if cookie_header:
        jar = {}
        for item in cookie_header.split(";"):
            name, _, val = item.strip().partition("=")
            if name:
                jar[name] = val
        for cookie_name, node_name in cookie_map(cfg):
            if cookie_name in jar and node_name not in payload.children:
                payload.children[node_name] = [Value(values.STRING, jar[cookie_name])]
    if is_default:
        payload.children["requestUri"] = [Value(values.STRING, path)]
    if req_type is not None:
        from . import types as types_mod
        payload = types_mod.cast(payload, req_type)

    fmt = negotiate(req.header("Accept"),
                    values.to_plain_string(cfg_node(cfg, "format")))
    return DecodedRequest(operation, payload, kind == "rr", fmt,
                          req.method, path)


def method_var_writes(params: HttpParams, method: str):
    pe = params.variable("method")
    if pe is None:
        return []
    return [(pe, Value(values.STRING, method.lower()))]


# -- response encoding (server side) ------------------------------------------------

def _fault_body(fault: JoltFault, fmt: str) -> tuple[bytes, str]:
    payload = fault.payload if fault.payload is not None else Value()
    if fmt == "json":
        wrapper = Value.tree(None, fault=fault.name)
        wrapper.children["data"] = [payload.clone()]
        return json_encode(wrapper), FORMAT_CONTENT_TYPE["json"]
    if fmt in ("html", "raw"):
        text = fault.name
        detail = values.to_plain_string(payload)
        if detail:
            text += ": " + detail
        return text.encode("utf-8"), "text/plain"
    return xml_encode(payload, fault.name), FORMAT_CONTENT_TYPE["xml"]


def encode_response(operation: str, outcome, meta, params: HttpParams,
                    reader=None, debug: bool = False) -> HttpResponse:
    """Build the wire response for a normal value or a fault outcome."""
    cfg = params.resolve(reader)
    fmt = meta.response_format or "xml"
    headers: list[tuple[str, str]] = []

    kind_tag, payload = outcome
    if kind_tag == "fault":
        fault: JoltFault = payload
        body, ctype = _fault_body(fault, fmt)
        status = fault_status(fault.name)
        headers.append(("Content-Type", ctype))
        return HttpResponse(status, headers, body)

    value: Value = payload
    # cookies write-back
    for cookie_name, node_name in cookie_map(cfg):
        node = value.first(node_name)
        if node is not None and node.kind != values.VOID:
            headers.append(("Set-Cookie",
                            f"{cookie_name}={values.to_plain_string(node)}; Path=/"))
    max_age = op_cfg(cfg, operation, "cacheControl", "maxAge")
    if max_age.kind != values.VOID:
        headers.append(("Cache-Control",
                        f"max-age={values.to_plain_string(max_age)}"))
    redirect = op_cfg(cfg, operation, "redirect")
    if redirect.kind != values.VOID:
        headers.append(("Location", values.to_plain_string(redirect)))
        return HttpResponse(302, headers, b"")

    status = meta.status
    status_cfg = cfg_node(cfg, "statusCode")
    if status is None and status_cfg.kind != values.VOID:
        try:
            status = int(values.to_plain_string(status_cfg))
        except ValueError:
            status = None

    content_type = op_cfg(cfg, operation, "contentType")
    if content_type.kind != values.VOID:
        ctype = values.to_plain_string(content_type)
        body = (value.content if value.kind == values.BYTES
                else values.to_plain_string(value).encode("utf-8"))
        headers.append(("Content-Type", ctype))
        if status is None:
            status = 200 if (body or value.kind != values.VOID) else 204
        return HttpResponse(status, headers, body)

    if value.is_empty():
        return HttpResponse(status or 204, headers, b"")
    if fmt == "json":
        body = json_encode(value)
    elif fmt == "html":
        body = values.to_plain_string(value).encode("utf-8")
    elif fmt == "raw":
        body = (value.content if value.kind == values.BYTES
                else values.to_plain_string(value).encode("utf-8"))
    else:
        fmt = "xml"
        body = xml_encode(value, operation + "Response")
    headers.append(("Content-Type", FORMAT_CONTENT_TYPE[fmt]))
    return HttpResponse(status or 200, headers, body)


# -- client side ----------------------------------------------------------------

_ALIAS_VAR = re.compile(r"%!\{([^}]+)\}")


def expand_alias(template: str, payload: Value) -> tuple[str, Value]:
    """Substitute ``%!{node}`` segments; used nodes leave the payload."""
    remaining = payload.clone()

    def repl(m):
        name = m.group(1)
        node = remaining.first(name)
        if node is None or node.kind == values.VOID:
            raise JoltFault(FAULT_MISSING_ALIAS_VALUE, Value.of(name),
                            f"alias node {name} missing from message")
        remaining.children.pop(name, None)
        return quote(values.to_plain_string(node), safe="/")

    return _ALIAS_VAR.sub(repl, template), remaining


def encode_request(operation: str, value: Value, params: HttpParams,
                   base_path: str = "/", host: str = "",
                   reader=None) -> HttpRequest:
    cfg = params.resolve(reader)
    payload = value
    alias = op_cfg(cfg, operation, "alias")
    if alias.kind != values.VOID:
        expanded, payload = expand_alias(values.to_plain_string(alias), value)
        path = expanded
    else:
        path = quote(operation)
    if not path.startswith("/"):
        base = base_path if base_path.endswith("/") else base_path + "/"
        path = base + path

    method = values.to_plain_string(op_cfg(cfg, operation, "method")).upper()
    if not method:
        method = "POST" if not payload.is_empty() else "GET"

    fmt = values.to_plain_string(cfg_node(cfg, "format")) or "xml"
    headers: list[tuple[str, str]] = []
    if host:
        headers.append(("Host", host))
    for cookie_name, node_name in cookie_map(cfg):
        node = payload.first(node_name)
        if node is not None and node.kind != values.VOID:
            headers.append(("Cookie", f"{cookie_name}={values.to_plain_string(node)}"))
    accept = {
        "json": "application/json",
        "xml": "application/xml, text/xml",
        "html": "text/html, */*",
        "raw": "*/*",
    }.get(fmt, "*/*")
    headers.append(("Accept", accept))

    body = b""
    if method in ("GET", "HEAD", "DELETE"):
        qs = querystring_encode(payload) if payload.children else ""
        target = path + ("?" + qs if qs else "")
    else:
        target = path
        if not payload.is_empty():
            if fmt == "json":
                body = json_encode(payload)
                headers.append(("Content-Type", "application/json"))
            elif fmt == "html" or fmt == "raw":
                body = (payload.content if payload.kind == values.BYTES
                        else values.to_plain_string(payload).encode("utf-8"))
                headers.append(("Content-Type",
                                "text/html" if fmt == "html" else "application/octet-stream"))
            else:
                body = xml_encode(payload, operation)
                headers.append(("Content-Type", "text/xml"))
    return HttpRequest(method, target, "HTTP/1.1", headers, body)


def decode_response(resp: HttpResponse, operation: str) -> Value:
    """Client-side response transform; faults re-raise as faults."""
    ct = (resp.header("Content-Type") or "").lower()
    if resp.status >= 400:
        raise _parse_fault(resp, ct)
    if resp.status == 204 or not resp.body:
        return Value()
    if "json" in ct:
        return json_decode(resp.body)
    if "xml" in ct:
        return xml_decode(resp.body)
    if ct.startswith("text/") or not ct:
        try:
            return Value(values.STRING, resp.body.decode("utf-8"))
        except UnicodeDecodeError:
            return Value(values.BYTES, resp.body)
    return Value(values.BYTES, resp.body)


def _parse_fault(resp: HttpResponse, ct: str) -> JoltFault:
    if "json" in ct:
        try:
            decoded = json_decode(resp.body)
            name = values.to_plain_string(decoded.first("fault") or Value())
            if name:
                data = decoded.first("data")
                return JoltFault(name, data.clone() if data else None,
                                 f"fault {name} relayed with status {resp.status}")
        except JoltFault:
            pass
    elif "xml" in ct and resp.body:
        tag = xml_root_tag(resp.body)
        if tag and not tag.endswith("Response"):
            return JoltFault(tag, xml_decode(resp.body),
                             f"fault {tag} relayed with status {resp.status}")
    elif ct.startswith("text/") and resp.body:
        text = resp.body.decode("utf-8", errors="replace")
        name = text.split(":", 1)[0].strip()
        if name and " " not in name:
            return JoltFault(name, Value.of(text),
                             f"fault {name} relayed with status {resp.status}")
    return JoltFault(FAULT_IO, Value.of(resp.status),
                     f"unexpected HTTP status {resp.status}")
