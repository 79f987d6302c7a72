"""Port runtime: listeners, output invokers and aggregation forwarding.

Input ports accept connections concurrently and push decoded, cast
messages either into the owning target (the engine, or a native service)
or through an aggregated output port with protocol translation. Output
ports hold the client side: persistent pipelined connections for the
binary protocol, serialized keep-alive connections for HTTP, direct
calls for in-process and builtin locations.
"""

from __future__ import annotations

import asyncio
import logging
from typing import Optional
from urllib.parse import urlsplit

from . import http, sodep, types, values
from .errors import (
    FAULT_BINDING, FAULT_CORRELATION, FAULT_IO, FAULT_PORT_UNBOUND, JoltFault,
    StartupError,
)
from .messages import Message, MessageMeta, ONEWAY, ReplyHandle, RR
from .model import InterfaceDef, PortDef
from .values import Value

log = logging.getLogger("jolt.ports")

# in-process channels; names are process-wide
LOCAL_REGISTRY: dict[str, "Listener"] = {}


def parse_location(uri: str):
    """(scheme, host, port, path) of a port location URI."""
    parts = urlsplit(uri)
    scheme = parts.scheme
    if scheme == "socket":
        if parts.port is None:
            raise StartupError(f"location {uri!r} needs an explicit port")
        return scheme, parts.hostname or "localhost", parts.port, parts.path or "/"
    if scheme in ("local", "builtin"):
        name = parts.netloc or parts.path.lstrip("/")
        return scheme, name, None, "/"
    raise StartupError(f"unsupported location scheme {uri!r}")


class Listener:
    """Serves one input port for a dispatch target.

    The target is the engine runtime or a native service; it provides
    ``route_operation``, ``deliver`` and ``forward``.
    """

    def __init__(self, target, decl: PortDef, location: Optional[str] = None):
        self.target = target
        self.decl = decl
        self.location = location or decl.location
        self.params = http.HttpParams(decl.params)
        self._server: Optional[asyncio.base_events.Server] = None
        self._local_name: Optional[str] = None
        self._conn_tasks: set[asyncio.Task] = set()

    async def start(self) -> None:
        if self.location is None or self.decl.protocol is None:
            raise StartupError(f"input port {self.decl.name} has no binding")
        scheme, host, port, _path = parse_location(self.location)
        if scheme == "local":
            if host in LOCAL_REGISTRY:
                raise StartupError(f"local channel {host!r} already registered")
            LOCAL_REGISTRY[host] = self
            self._local_name = host
            return
        if self.decl.protocol == "http":
            handler = self._handle_http
        elif self.decl.protocol == "sodep":
            handler = self._handle_sodep
        else:
            raise StartupError(f"unsupported protocol {self.decl.protocol!r}")
        try:
            self._server = await asyncio.start_server(
                self._connection_entry(handler), host, port)
        except OSError as exc:
            raise StartupError(
                f"cannot bind {self.decl.name} at {self.location}: {exc}") from exc

    def _connection_entry(self, handler):
        async def entry(reader, writer):
            task = asyncio.current_task()
            self._conn_tasks.add(task)
            try:
                await handler(reader, writer)
            except (asyncio.IncompleteReadError, ConnectionError):
                pass
            except http.WireError as exc:
                log.info("dropping connection on %s: %s", self.decl.name, exc)
            except asyncio.CancelledError:
                pass
            except Exception:
                log.exception("connection handler failed on %s", self.decl.name)
            finally:
                self._conn_tasks.discard(task)
                try:
                    writer.close()
                    await writer.wait_closed()
                except Exception:
                    pass
        return entry

    async def stop(self) -> None:
        if self._local_name is not None:
            LOCAL_REGISTRY.pop(self._local_name, None)
            self._local_name = None
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
        for task in list(self._conn_tasks):
            task.cancel()
        await asyncio.gather(*self._conn_tasks, return_exceptions=True)
        self._conn_tasks.clear()

    # -- shared dispatch ----------------------------------------------------

    def _lookup(self, op: str):
        route = self.target.route_operation(self.decl, op)
        if route is None:
            return None
        _fwd, kind, req_type, _resp = route
        return kind, req_type

    async def dispatch(self, op: str, payload: Value, meta: MessageMeta):
        """Route one typed message.

        Returns ``(outcome, state_reader)`` where outcome is
        ``("ok", value)`` or ``("fault", fault)``; the reader resolves
        variable-bound response parameters against the handling instance.
        """
        route = self.target.route_operation(self.decl, op)
        if route is None:
            return ("fault", JoltFault("OperationNotFound", Value.of(op),
                                       f"no such operation {op}")), None
        forward_port, kind, _req_type, _resp_type = route
        if forward_port is not None:
            try:
                result = await self.target.forward(forward_port, op, payload, kind)
                return ("ok", result if kind == RR else Value()), None
            except JoltFault as f:
                return ("fault", f), None
            except Exception as exc:
                log.warning("forward of %s to %s failed: %s", op, forward_port, exc)
                return ("fault", JoltFault(FAULT_IO, Value.of(str(exc)),
                                           f"forwarding {op} failed")), None
        if kind == RR:
            handle = ReplyHandle()
            msg = Message(op, payload, RR, meta, handle)
            self.target.deliver(msg)
            tag, result, reader = await handle.wait()
            return (tag, result), reader
        msg = Message(op, payload, ONEWAY, meta, None)
        status = self.target.deliver(msg)
        if status != "accepted":
            return ("fault", JoltFault(FAULT_CORRELATION, Value.of(op),
                                       f"no process correlates with {op}")), None
        return ("ok", Value()), None

    # -- local (in-process) -------------------------------------------------

    async def invoke_local(self, op: str, payload: Value, meta: MessageMeta):
        """Entry for local:// and builtin-free in-process invocation."""
        route = self.target.route_operation(self.decl, op)
        if route is None:
            raise JoltFault("OperationNotFound", Value.of(op),
                            f"no such operation {op}")
        _fwd, kind, req_type, _resp = route
        if req_type is not None:
            payload = types.cast(payload, req_type)
        else:
            payload = payload.clone()
        (outcome, val), _reader = await self.dispatch(op, payload, meta)
        if outcome == "fault":
            raise val
        return val.clone() if val is not None else Value()

    # -- http ---------------------------------------------------------------

    def _debug(self) -> bool:
        cfg = self.params.resolve(None)
        return values.truthy(http.cfg_node(cfg, "debug")) or bool(
            getattr(self.target, "debug_http", False))

    async def _handle_http(self, reader, writer) -> None:
        while True:
            request = await http.read_request(reader)
            if request is None:
                return
            debug = self._debug()
            if debug:
                log.info("[%s] http <- %r", self.decl.name,
                         http.serialize_request(request))
            conn_hdr = (request.header("Connection") or "").lower()
            keep_alive = (request.version != "HTTP/1.0" or "keep-alive" in conn_hdr)
            if "close" in conn_hdr:
                keep_alive = False
            response = await self._http_exchange(request)
            data = http.serialize_response(response, keep_alive)
            if debug:
                log.info("[%s] http -> %r", self.decl.name, data)
            writer.write(data)
            await writer.drain()
            if not keep_alive:
                return

    async def _http_exchange(self, request: http.HttpRequest) -> http.HttpResponse:
        cfg = self.params.resolve(None)
        meta = MessageMeta(protocol="http", method=request.method)
        try:
            decoded = http.decode_request(request, cfg, self._lookup)
        except JoltFault as fault:
            meta.response_format = http.negotiate(
                request.header("Accept"),
                values.to_plain_string(http.cfg_node(cfg, "format")))
            return http.encode_response("", ("fault", fault), meta, self.params)
        meta.response_format = decoded.response_format
        meta.target = decoded.path
        meta.var_writes = http.method_var_writes(self.params, request.method)
        outcome, reader = await self.dispatch(decoded.operation, decoded.payload, meta)
        return http.encode_response(decoded.operation, outcome, meta,
                                    self.params, reader)

    # -- sodep ----------------------------------------------------------------

    async def _handle_sodep(self, reader, writer) -> None:
        write_lock = asyncio.Lock()
        pending: set[asyncio.Task] = set()
        try:
            while True:
                try:
                    frame = await sodep.read_frame(reader)
                except sodep.Malformed as exc:
                    log.info("malformed frame on %s: %s", self.decl.name, exc)
                    return
                task = asyncio.ensure_future(
                    self._sodep_serve_frame(frame, writer, write_lock))
                pending.add(task)
                task.add_done_callback(pending.discard)
        finally:
            for t in list(pending):
                t.cancel()

    async def _sodep_serve_frame(self, frame: sodep.Frame, writer, lock) -> None:
        meta = MessageMeta(protocol="sodep", target=frame.resource)
        route = self.target.route_operation(self.decl, frame.operation)
        wants_reply = frame.kind == sodep.RR_REQUEST
        if route is None:
            outcome = ("fault", JoltFault("OperationNotFound",
                                          Value.of(frame.operation)))
        else:
            _fwd, _kind, req_type, _resp = route
            try:
                payload = (types.cast(frame.payload, req_type)
                           if req_type is not None else frame.payload)
                outcome, _reader = await self.dispatch(frame.operation, payload, meta)
            except JoltFault as fault:
                outcome = ("fault", fault)
        if not wants_reply:
            if outcome[0] == "fault":
                log.info("one-way %s rejected: %s", frame.operation, outcome[1])
            return
        if outcome[0] == "ok":
            reply = sodep.Frame(sodep.RESPONSE, frame.message_id,
                                frame.operation, frame.resource, outcome[1])
        else:
            fault = outcome[1]
            reply = sodep.Frame(sodep.FAULT_RESPONSE, frame.message_id,
                                frame.operation, frame.resource,
                                fault.payload or Value(), fault.name)
        async with lock:
            writer.write(sodep.frame_bytes(reply))
            await writer.drain()


class SodepClient:
    """One persistent connection with pipelined requests."""

    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port
        self._reader = None
        self._writer = None
        self._demux_task = None
        self._pending: dict[int, asyncio.Future] = {}
        self._next_id = 1
        self._lock = asyncio.Lock()

    async def _ensure(self) -> None:
        if self._writer is not None and not self._writer.is_closing():
            return
        try:
            self._reader, self._writer = await asyncio.open_connection(
                self.host, self.port)
        except OSError as exc:
            raise JoltFault(FAULT_IO, Value.of(str(exc)),
                            f"cannot connect to {self.host}:{self.port}") from exc
        self._demux_task = asyncio.ensure_future(self._demux())

    async def _demux(self) -> None:
        try:
            while True:
                frame = await sodep.read_frame(self._reader)
                fut = self._pending.pop(frame.message_id, None)
                if fut is None:
                    log.info("dropping response for unknown id %s", frame.message_id)
                    continue
                if not fut.done():
                    fut.set_result(frame)
        except (asyncio.IncompleteReadError, ConnectionError, sodep.Malformed,
                asyncio.CancelledError) as exc:
            pending, self._pending = self._pending, {}
            for fut in pending.values():
                if not fut.done():
                    fut.set_exception(JoltFault(
                        FAULT_IO, Value.of(str(exc)), "connection lost"))

    async def call(self, op: str, payload: Value, kind: str,
                   resource: str = "/") -> Value:
        async with self._lock:
            await self._ensure()
            mid = self._next_id
            self._next_id += 1
            fut = None
            if kind == RR:
                fut = asyncio.get_running_loop().create_future()
                self._pending[mid] = fut
            frame_kind = sodep.RR_REQUEST if kind == RR else sodep.ONE_WAY
            frame = sodep.Frame(frame_kind, mid, op, resource, payload)
            self._writer.write(sodep.frame_bytes(frame))
            await self._writer.drain()
        if fut is None:
            return Value()
        reply = await fut
        if reply.kind == sodep.FAULT_RESPONSE:
            raise JoltFault(reply.fault_name, reply.payload,
                            f"fault {reply.fault_name} from {op}")
        return reply.payload

    async def close(self) -> None:
        if self._demux_task is not None:
            self._demux_task.cancel()
            try:
                await self._demux_task
            except (asyncio.CancelledError, Exception):
                pass
            self._demux_task = None
        if self._writer is not None:
            try:
                self._writer.close()
                await self._writer.wait_closed()
            except Exception:
                pass
            self._writer = None


class HttpClient:
    """Keep-alive client connection; one exchange at a time."""

    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port
        self._reader = None
        self._writer = None
        self._lock = asyncio.Lock()

    async def exchange(self, request: http.HttpRequest,
                       debug: bool = False) -> http.HttpResponse:
        async with self._lock:
            for attempt in (0, 1):
                try:
                    if self._writer is None or self._writer.is_closing():
                        self._reader, self._writer = await asyncio.open_connection(
                            self.host, self.port)
                    data = http.serialize_request(request)
                    if debug:
                        log.info("http -> %r", data)
                    self._writer.write(data)
                    await self._writer.drain()
                    response = await http.read_response(self._reader)
                    if debug:
                        log.info("http <- %s %r", response.status, response.body)
                    conn = (response.header("Connection") or "").lower()
                    if "close" in conn:
                        await self._close_stream()
                    return response
                except (asyncio.IncompleteReadError, ConnectionError, OSError) as exc:
                    await self._close_stream()
                    if attempt:
                        raise JoltFault(FAULT_IO, Value.of(str(exc)),
                                        f"http exchange failed: {exc}") from exc

    async def _close_stream(self) -> None:
        if self._writer is not None:
            try:
                self._writer.close()
                await self._writer.wait_closed()
            except Exception:
                pass
        self._reader = self._writer = None

    async def close(self) -> None:
        await self._close_stream()


class OutputPort:
    """Client side of one declared output port; rebinding is atomic."""

    def __init__(self, runtime, decl: PortDef, location: Optional[str] = None):
        self.runtime = runtime
        self.decl = decl
        self.location = location or decl.location
        self.protocol = decl.protocol
        self.params = http.HttpParams(decl.params)
        self._sodep: Optional[SodepClient] = None
        self._http: Optional[HttpClient] = None
        self._builtin = None

    def rebind(self, binding: Value) -> None:
        location = binding.first("location")
        if location is None or location.kind != values.STRING:
            raise JoltFault(FAULT_BINDING,
                            message="binding needs a string location node")
        proto = binding.first("protocol")
        protocol = self.protocol
        params = self.params
        if proto is not None and proto.kind != values.VOID:
            protocol = values.to_plain_string(proto)
            params = http.HttpParams.from_value(proto)
        old_sodep, self._sodep = self._sodep, None
        old_http, self._http = self._http, None
        self.location = location.content
        self.protocol = protocol
        self.params = params
        self._builtin = None
        for old in (old_sodep, old_http):
            if old is not None:
                asyncio.ensure_future(old.close())

    def _own_types(self, op: str):
        program = getattr(self.runtime, "program", None)
        if program is None:
            return None
        return program.port_operation(self.decl, op)

    async def invoke(self, op: str, arg: Value, kind: str, inst=None) -> Value:
        if self.location is None:
            raise JoltFault(FAULT_PORT_UNBOUND,
                            message=f"output port {self.decl.name} is unbound")
        if (self.protocol is None and self._builtin_name() is None
                and not self.location.startswith("local://")):
            raise JoltFault(FAULT_PORT_UNBOUND,
                            message=f"output port {self.decl.name} has no protocol")
        info = self._own_types(op)
        if info is not None:
            declared_kind, req_type, resp_type = info
            kind = declared_kind
            if req_type is not None:
                arg = types.cast(arg, req_type)
        else:
            resp_type = None
        result = await self._transport(op, arg, kind, inst)
        if kind == RR and resp_type is not None:
            result = types.cast(result, resp_type)
        return result

    def _builtin_name(self) -> Optional[str]:
        if self.location is None:
            return None
        if self.location.startswith("builtin://"):
            return self.location[len("builtin://"):]
        return None

    async def _transport(self, op: str, arg: Value, kind: str, inst) -> Value:
        builtin = self._builtin_name()
        if builtin is not None:
            from . import stdlib
            if self._builtin is None:
                self._builtin = stdlib.create_builtin(builtin, self.runtime)
            return await self._builtin.call(op, arg, inst)
        scheme, host, port, path = parse_location(self.location)
        if scheme == "local":
            listener = LOCAL_REGISTRY.get(host)
            if listener is None:
                raise JoltFault(FAULT_IO, Value.of(host),
                                f"no local channel {host!r}")
            meta = MessageMeta(protocol="local")
            result = await listener.invoke_local(op, arg.clone(), meta)
            return result
        if self.protocol == "sodep":
            if self._sodep is None:
                self._sodep = SodepClient(host, port)
            return await self._sodep.call(op, arg, kind)
        if self.protocol == "http":
            if self._http is None:
                self._http = HttpClient(host, port)
            reader = inst.state_reader() if inst is not None else None
            request = http.encode_request(op, arg, self.params, path,
                                          f"{host}:{port}", reader)
            debug = values.truthy(http.cfg_node(self.params.resolve(reader), "debug")) \
                or bool(getattr(self.runtime, "debug_http", False))
            response = await self._http.exchange(request, debug)
            if kind == ONEWAY:
                return Value()
            return http.decode_response(response, op)
        raise JoltFault(FAULT_IO, message=f"unsupported protocol {self.protocol!r}")

    async def close(self) -> None:
        if self._sodep is not None:
            await self._sodep.close()
        if self._http is not None:
            await self._http.close()


async def transient_invoke(runtime, location: str, protocol: Optional[str],
                           protocol_params: Optional[Value], op: str,
                           arg: Value, kind: str = RR) -> Value:
    """One-shot invocation as if through a freshly declared output port."""
    decl = PortDef(name=f"<transient:{op}>", is_input=False,
                   location=location, protocol=protocol or "sodep")
    port = OutputPort(runtime, decl, location)
    if protocol_params is not None:
        port.params = http.HttpParams.from_value(protocol_params)
    try:
        return await port.invoke(op, arg, kind, None)
    finally:
        await port.close()


class NativeService:
    """A service implemented in the host language behind real ports."""

    name = "native"
    debug_http = False

    def __init__(self):
        self.interfaces: list[InterfaceDef] = []
        self._listeners: list[Listener] = []
        self._tasks: set[asyncio.Task] = set()

    def route_operation(self, decl: PortDef, op: str):
        for iface in self.interfaces:
            kind = iface.kind_of(op)
            if kind:
                return None, kind, iface.request_type(op), iface.response_type(op)
        return None

    async def forward(self, port_name: str, op: str, payload: Value, kind: str):
        raise JoltFault(FAULT_IO, message="native services do not aggregate")

    def deliver(self, msg: Message) -> str:
        task = asyncio.ensure_future(self._run(msg))
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)
        return "accepted"

    async def _run(self, msg: Message) -> None:
        try:
            result = await self.handle(msg.operation, msg.payload, msg.meta)
            if msg.reply is not None:
                msg.reply.complete_ok(result if result is not None else Value())
        except JoltFault as fault:
            if msg.reply is not None:
                msg.reply.complete_fault(fault)
            else:
                log.info("%s: one-way %s faulted: %s", self.name,
                         msg.operation, fault.name)
        except Exception:
            log.exception("%s: handler for %s crashed", self.name, msg.operation)
            if msg.reply is not None:
                msg.reply.complete_fault(JoltFault("InternalError"))

    async def handle(self, op: str, payload: Value, meta: MessageMeta) -> Value:
        raise NotImplementedError

    async def serve(self, decl: PortDef, location: Optional[str] = None) -> Listener:
        listener = Listener(self, decl, location)
        await listener.start()
        self._listeners.append(listener)
        return listener

    async def stop(self) -> None:
        for listener in self._listeners:
            await listener.stop()
        self._listeners.clear()
        for task in list(self._tasks):
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
