"""REST router: config expansion, dispatch, makeLink, inverse property."""

import asyncio
import random
import string

import pytest

from conftest import free_port, http_request, run
from jolt import engine, parser, ports
from jolt import router as router_mod
from jolt.errors import JoltFault
from jolt.messages import MessageMeta
from jolt.values import Value


def make_config(routes=None, resources=None, host="localhost:0",
                controller="local://rtest_ctl"):
    cfg = Value.tree(None, host=host)
    cfg.children["controller"] = [Value.tree(None, location=controller)]
    if routes:
        cfg.children["routes"] = [
            Value.tree(None, method=m, template=t, operation=op)
            for m, t, op in routes]
    if resources:
        cfg.children["resources"] = resources
    return cfg


def resource(name, rid, template, nested=None):
    node = Value.tree(None, name=name, id=rid, template=template)
    if nested:
        node.children["resources"] = nested
    return node


def test_resource_expansion_covers_crud_and_nesting():
    cfg = make_config(resources=[
        resource("poll", "pid", "/poll",
                 nested=[resource("vote", "vid", "/vote")])])
    _, routes = router_mod.compile_config(cfg)
    as_set = {(r.method, r.template, r.operation) for r in routes}
    assert ("get", "/poll", "poll_index") in as_set
    assert ("get", "/poll/{pid}", "poll_show") in as_set
    assert ("post", "/poll", "poll_create") in as_set
    assert ("put", "/poll/{pid}", "poll_update") in as_set
    assert ("delete", "/poll/{pid}", "poll_delete") in as_set
    assert ("get", "/poll/{pid}/vote", "vote_index") in as_set
    assert ("get", "/poll/{pid}/vote/{vid}", "vote_show") in as_set
    assert ("post", "/poll/{pid}/vote", "vote_create") in as_set


def test_duplicate_route_is_config_error():
    cfg = make_config(routes=[("get", "/a", "x"), ("get", "/a", "y")])
    with pytest.raises(JoltFault) as exc:
        router_mod.compile_config(cfg)
    assert exc.value.name == "ConfigError"


def test_explicit_routes_precede_resource_expansion():
    # /poll/special matches both the explicit route and the expanded
    # /poll/{pid}; declaration order puts the explicit route first
    cfg = make_config(routes=[("get", "/poll/special", "special_show")],
                      resources=[resource("poll", "pid", "/poll")])
    _, routes = router_mod.compile_config(cfg)

    def first_op(uri):
        return next(r.operation for r in routes
                    if r.method == "get"
                    and router_mod.stdlib.template_match(uri, r.template).content)

    assert first_op("/poll/special") == "special_show"
    assert first_op("/poll/7") == "poll_show"


def test_identical_route_templates_rejected_even_across_sources():
    cfg = make_config(routes=[("get", "/poll/{pid}", "special_show")],
                      resources=[resource("poll", "pid", "/poll")])
    with pytest.raises(JoltFault) as exc:
        router_mod.compile_config(cfg)
    assert exc.value.name == "ConfigError"


CONTROLLER = """
interface CtlIface {
RequestResponse:
  poll_index(undefined)(undefined), poll_show(undefined)(undefined),
  poll_create(undefined)(undefined), poll_update(undefined)(undefined),
  poll_delete(undefined)(undefined),
  vote_index(undefined)(undefined), vote_show(undefined)(undefined),
  vote_create(undefined)(undefined), vote_update(undefined)(undefined),
  vote_delete(undefined)(undefined)
}
inputPort In { Location: "local://rtest_ctl" Protocol: sodep Interfaces: CtlIface }
main {
  [ vote_show( request )( response ) {
      response.op = "vote_show";
      response.pid = request.pid;
      response.vid = request.vid
  } ]
  [ poll_show( request )( response ) {
      response.op = "poll_show";
      response.pid = request.pid
  } ]
  [ poll_create( request )( response ) {
      response.op = "poll_create";
      response.question = request.question
  } ]
  [ poll_index( request )( response ) { response.op = "poll_index" } ]
  [ vote_index( request )( response ) { response.op = "vote_index" } ]
  [ vote_create( request )( response ) { response.op = "vote_create" } ]
  [ poll_update( request )( response ) { response.op = "poll_update" } ]
  [ poll_delete( request )( response ) { response.op = "poll_delete" } ]
  [ vote_update( request )( response ) { response.op = "vote_update" } ]
  [ vote_delete( request )( response ) { response.op = "vote_delete" } ]
}
"""


async def start_pair():
    ctl = engine.Runtime(parser.parse_program(CONTROLLER))
    await ctl.start()
    router = router_mod.Router()
    cfg = make_config(resources=[
        resource("poll", "pid", "/poll",
                 nested=[resource("vote", "vid", "/vote")])])
    await router.handle("config", cfg, MessageMeta())
    return ctl, router


def test_dispatch_merges_template_vars():
    async def main():
        ctl, router = await start_pair()
        meta = MessageMeta(method="GET", target="/poll/5/vote/2")
        out = await router.dispatch("get", Value(), meta)
        assert out.first("op").content == "vote_show"
        assert out.first("pid").content == "5"
        assert out.first("vid").content == "2"
        assert meta.status == 200
        await ctl.stop()
    run(main())


def test_dispatch_no_route_404_and_fault_mapping():
    async def main():
        ctl, router = await start_pair()
        with pytest.raises(JoltFault) as exc:
            await router.dispatch("get", Value(), MessageMeta(target="/zzz"))
        assert exc.value.name == "RouteNotFound"
        from jolt import http
        assert http.fault_status("RouteNotFound") == 404
        assert http.fault_status("TypeMismatch") == 400
        assert http.fault_status("CorrelationError") == 404
        await ctl.stop()
    run(main())


def test_controller_never_sees_raw_uris():
    async def main():
        ctl, router = await start_pair()
        payload = Value.tree(None, question="q?")
        payload.children["requestUri"] = [Value.of("/poll")]
        meta = MessageMeta(method="POST", target="/poll")
        out = await router.dispatch("post", payload, meta)
        assert out.first("op").content == "poll_create"
        assert out.first("question").content == "q?"
        assert meta.status == 201  # creation route
        await ctl.stop()
    run(main())


def test_make_link_and_unknown_operation():
    async def main():
        ctl, router = await start_pair()
        router.host = "localhost:9999"
        link = router.make_link(Value.tree(
            None, operation="poll_show", params=Value.tree(None, pid="5")))
        assert link.content == "http://localhost:9999/poll/5"
        with pytest.raises(JoltFault) as exc:
            router.make_link(Value.tree(None, operation="nope"))
        assert exc.value.name == "UnknownOperation"
        await ctl.stop()
    run(main())


def test_router_statelessness_under_shuffle():
    async def main():
        ctl, router = await start_pair()
        requests = [("get", "/poll/1"), ("get", "/poll/1/vote/2"),
                    ("post", "/poll"), ("put", "/poll/3"),
                    ("delete", "/poll/4/vote/0"), ("get", "/poll")]
        baseline = {}
        for method, uri in requests:
            meta = MessageMeta(method=method.upper(), target=uri)
            out = await router.dispatch(method, Value(), meta)
            baseline[(method, uri)] = (out.first("op").content, meta.status)
        rnd = random.Random(3)
        for _ in range(5):
            shuffled = requests[:]
            rnd.shuffle(shuffled)
            for method, uri in shuffled:
                meta = MessageMeta(method=method.upper(), target=uri)
                out = await router.dispatch(method, Value(), meta)
                assert (out.first("op").content, meta.status) == baseline[(method, uri)]
        await ctl.stop()
    run(main())


ECHO_CONTROLLER = """
interface EchoIface { RequestResponse: __OPS__ }
inputPort In { Location: "local://inv_ctl" Protocol: sodep Interfaces: EchoIface }
main {
__BRANCHES__
}
"""


def test_make_link_dispatch_inverse_randomized():
    """makeLink then dispatch reaches the same operation with the same
    params, across 500 randomized configurations."""
    rnd = random.Random(2024)

    async def main():
        checked = 0
        for round_no in range(45):
            ops = [f"op{i}_{round_no}" for i in range(rnd.randint(1, 4))]
            decls = ", ".join(f"{op}(undefined)(undefined)" for op in ops)
            branches = "\n".join(
                "  [ %s( request )( response ) { response << request; "
                "response.op = \"%s\" } ]" % (op, op) for op in ops)
            src = ECHO_CONTROLLER.replace("__OPS__", decls).replace(
                "__BRANCHES__", branches)
            ctl = engine.Runtime(parser.parse_program(src))
            await ctl.start()
            router = router_mod.Router()
            routes = []
            used = set()
            var_pool = ["alpha", "beta", "gamma"]
            for op in ops:
                method = rnd.choice(["get", "post", "put", "delete"])
                n_vars = rnd.randint(0, 2)
                variables = rnd.sample(var_pool, n_vars)
                parts = []
                for i, var in enumerate(variables):
                    parts.append("seg%d%s" % (i, op))
                    parts.append("{%s}" % var)
                if not parts:
                    parts = ["fixed_" + op]
                template = "/" + "/".join(parts)
                if (method, template) in used:
                    continue
                used.add((method, template))
                routes.append((method, template, op))
            cfg = make_config(routes=routes, controller="local://inv_ctl")
            await router.handle("config", cfg, MessageMeta())
            for method, template, op in routes:
                for _draw in range(5):
                    params = Value()
                    expected = {}
                    for piece in template.split("/"):
                        if piece.startswith("{"):
                            var = piece[1:-1]
                            text = "".join(
                                rnd.choice(string.ascii_lowercase + string.digits)
                                for _ in range(rnd.randint(1, 8)))
                            params.children[var] = [Value.of(text)]
                            expected[var] = text
                    href = router.make_link(Value.tree(None, operation=op,
                                                       params=params))
                    # a client dereferences the href: the target is its path
                    from urllib.parse import urlsplit
                    parts = urlsplit(href.content)
                    path = parts.path + (("?" + parts.query) if parts.query else "")
                    meta = MessageMeta(method=method.upper(), target=path)
                    out = await router.dispatch(method, Value(), meta)
                    assert out.first("op").content == op
                    for var, text in expected.items():
                        assert out.first(var).content == text, (template, var)
                    checked += 1
            await ctl.stop()
            ports.LOCAL_REGISTRY.clear()
        assert checked >= 500, f"only {checked} link/dispatch cases"
    run(main(), timeout=120)


def test_router_over_http_end_to_end():
    async def main():
        ctl, router = await start_pair()
        port = free_port()
        from jolt.model import PortDef
        decl = PortDef(name="R", is_input=True,
                       location=f"socket://127.0.0.1:{port}", protocol="http",
                       params=router_mod.DEFAULT_PARAMS, interfaces=[])
        await router.serve(decl)
        resp = await http_request(port, "GET", "/poll/5/vote/2",
                                  headers=[("Accept", "application/json")])
        assert resp.status == 200
        import json
        assert json.loads(resp.body) == {"op": "vote_show", "pid": "5", "vid": "2"}
        resp = await http_request(port, "GET", "/nonexistent")
        assert resp.status == 404
        await router.stop()
        await ctl.stop()
    run(main())
