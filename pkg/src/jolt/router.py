"""REST front end: uniform-interface routing onto controller operations.

The router is a standalone service. Controllers push a configuration
(``config``) naming explicit routes and resource trees; inbound GET,
POST, PUT and DELETE requests then match URI templates in declaration
order and dispatch, by reflection, to the configured controller
operation with the template variables merged into the payload.
``makeLink`` is the inverse: it builds hrefs that route back to the
same operation.
"""

from __future__ import annotations

from typing import Optional

from . import ports, stdlib, types, values
from .errors import (
    FAULT_CONFIG, FAULT_CORRELATION, FAULT_TYPE_MISMATCH,
    FAULT_UNKNOWN_OPERATION, JoltFault,
)
from .messages import MessageMeta, RR
from .model import InterfaceDef, ParamEntry, PortDef
from .values import Value

_METHODS = ("get", "post", "put", "delete")


class Route:
    __slots__ = ("method", "template", "operation", "location", "protocol",
                 "query_pairs")

    def __init__(self, method: str, template: str, operation: str,
                 location: str, protocol: str):
        self.method = method.lower()
        self.template = template
        self.operation = operation
        self.location = location
        self.protocol = protocol
        _, self.query_pairs = stdlib.split_template(template)

    def __repr__(self):
        return f"Route({self.method.upper()} {self.template} -> {self.operation})"


def _expand_resources(node: Value, parent_item: str, location: str,
                      protocol: str, routes: list) -> None:
    for res in node.vector("resources"):
        name = values.to_plain_string(res.first("name") or Value())
        res_id = values.to_plain_string(res.first("id") or Value())
        template = values.to_plain_string(res.first("template") or Value())
        if not name or not res_id or not template:
            raise JoltFault(FAULT_CONFIG,
                            message="resource needs name, id and template nodes")
        collection = parent_item + template
        item = f"{collection}/{{{res_id}}}"
        routes.extend([
            Route("get", collection, f"{name}_index", location, protocol),
            Route("get", item, f"{name}_show", location, protocol),
            Route("post", collection, f"{name}_create", location, protocol),
            Route("put", item, f"{name}_update", location, protocol),
            Route("delete", item, f"{name}_delete", location, protocol),
        ])
        _expand_resources(res, item, location, protocol, routes)


def compile_config(config: Value) -> tuple[str, list[Route]]:
    """(host, routes) from a configuration value; explicit routes first."""
    host = values.to_plain_string(config.first("host") or Value())
    controller = config.first("controller") or Value()
    default_location = values.to_plain_string(controller.first("location") or Value())
    default_protocol = values.to_plain_string(
        controller.first("protocol") or Value()) or "sodep"
    routes: list[Route] = []
    for route_node in config.vector("routes"):
        method = values.to_plain_string(route_node.first("method") or Value())
        template = values.to_plain_string(route_node.first("template") or Value())
        operation = values.to_plain_string(route_node.first("operation") or Value())
        if method.lower() not in _METHODS or not template or not operation:
            raise JoltFault(FAULT_CONFIG,
                            message="route needs method, template and operation")
        binding = route_node.first("binding") or Value()
        location = values.to_plain_string(
            binding.first("location") or Value()) or default_location
        protocol = values.to_plain_string(
            binding.first("protocol") or Value()) or default_protocol
        routes.append(Route(method, template, operation, location, protocol))
    _expand_resources(config, "", default_location, default_protocol, routes)
    seen = set()
    for route in routes:
        key = (route.method, route.template)
        if key in seen:
            raise JoltFault(FAULT_CONFIG, Value.of(route.template),
                            f"duplicate route {route.method.upper()} {route.template}")
        seen.add(key)
    return host, routes


class Router(ports.NativeService):
    """The routing service itself; speaks http on its input port."""

    name = "router"

    def __init__(self, runtime=None):
        super().__init__()
        self.runtime = runtime
        self.host = ""
        self.routes: list[Route] = []
        web = InterfaceDef("WebIface")
        for m in _METHODS:
            web.request_response[m] = (types.T_UNDEFINED, types.T_UNDEFINED)
        control = InterfaceDef("RouterIface")
        control.request_response["config"] = (types.T_UNDEFINED, types.T_VOID)
        control.request_response["makeLink"] = (types.T_UNDEFINED, types.T_STRING)
        self.interfaces = [web, control]

    # -- operations ----------------------------------------------------------

    async def handle(self, op: str, payload: Value, meta: MessageMeta) -> Value:
        if op == "config":
            self.host, self.routes = compile_config(payload)
            return Value()
        if op == "makeLink":
            return self.make_link(payload)
        if op in _METHODS:
            return await self.dispatch(op, payload, meta)
        raise JoltFault("OperationNotFound", Value.of(op))

    def find_route(self, method: str, uri: str) -> tuple[Optional[Route], Value]:
        for route in self.routes:
            if route.method != method:
                continue
            m = stdlib.template_match(uri, route.template)
            if m.content:
                return route, m
        return None, Value()

    async def dispatch(self, method: str, payload: Value,
                       meta: MessageMeta) -> Value:
        uri = meta.target or values.to_plain_string(
            payload.first("requestUri") or Value())
        route, match = self.find_route(method, uri)
        if route is None:
            raise JoltFault("RouteNotFound", Value.of(uri),
                            f"no route matches {method.upper()} {uri}")
        params = payload.clone()
        params.children.pop("requestUri", None)
        for key, _ in route.query_pairs:
            params.children.pop(key, None)
        for var, vec in match.children.items():
            params.children[var] = [v.clone() for v in vec]
        if not route.location:
            raise JoltFault(FAULT_CONFIG,
                            message="router has no controller binding")
        result = await ports.transient_invoke(
            self.runtime, route.location, route.protocol, None,
            route.operation, params, RR)
        if method == "post" or route.operation.endswith("_create"):
            meta.status = 201
        elif result.is_empty():
            meta.status = 204
        else:
            meta.status = 200
        return result

    def make_link(self, request: Value) -> Value:
        operation = values.to_plain_string(request.first("operation") or Value())
        route = next((r for r in self.routes if r.operation == operation), None)
        if route is None:
            raise JoltFault(FAULT_UNKNOWN_OPERATION, Value.of(operation),
                            f"no route is configured for {operation}")
        params = request.first("params") or Value()
        path = stdlib.template_expand(route.template, params)
        host = self.host
        if host and not host.startswith("http"):
            host = "http://" + host
        return Value(values.STRING, host + path)


DEFAULT_PARAMS = [
    ParamEntry(("default", m), constant=Value(values.STRING, m))
    for m in _METHODS
]


async def start_router(listen: str, runtime=None,
                       extra_params: Optional[list] = None) -> Router:
    """Serve a router on ``listen`` (http for sockets, raw for local://)."""
    router = Router(runtime)
    decl = PortDef(name="RouterInput", is_input=True, location=listen,
                   protocol="http", params=DEFAULT_PARAMS + (extra_params or []),
                   interfaces=[])
    await router.serve(decl)
    return router
