"""Port runtime: listeners, invokers, aggregation, rebinding."""

import asyncio

import pytest

from conftest import free_port, http_request, run
from jolt import engine, parser, ports, sodep
from jolt.errors import JoltFault, StartupError
from jolt.messages import MessageMeta, RR
from jolt.values import Value


async def start(src, **kw):
    runtime = engine.Runtime(parser.parse_program(src), **kw)
    await runtime.start()
    return runtime


SUM = """
type SumT:void { .x:int .y:int }
interface SumIface { RequestResponse: sum(SumT)(int) }
inputPort In { Location: "__LOC__" Protocol: __PROTO__ Interfaces: SumIface }
main { sum( req )( resp ) { resp = req.x + req.y } }
"""


def sum_src(location, proto):
    return SUM.replace("__LOC__", location).replace("__PROTO__", proto)


def test_http_listener_serves_and_rejects_unknown():
    async def main():
        port = free_port()
        rt = await start(sum_src(f"socket://127.0.0.1:{port}", "http"))
        resp = await http_request(port, "GET", "/sum?x=2&y=3")
        assert resp.status == 200
        assert resp.body == b"<sumResponse>5</sumResponse>"
        resp = await http_request(port, "GET", "/nosuch")
        assert resp.status == 404
        await rt.stop()
    run(main())


def test_double_bind_is_startup_error():
    async def main():
        port = free_port()
        rt = await start(sum_src(f"socket://127.0.0.1:{port}", "http"))
        with pytest.raises(StartupError):
            await start(sum_src(f"socket://127.0.0.1:{port}", "http"))
        await rt.stop()
    run(main())


def test_local_channel_has_no_tcp_listener():
    async def main():
        rt = await start(sum_src("local://only_here", "sodep"))
        listener = ports.LOCAL_REGISTRY["only_here"]
        assert listener._server is None  # in-memory only: nothing bound
        out = await listener.invoke_local("sum", Value.tree(None, x=1, y=2),
                                          MessageMeta())
        assert out.content == 3
        await rt.stop()
        assert "only_here" not in ports.LOCAL_REGISTRY
    run(main())


def test_sodep_invoke_and_concurrent_pipelining():
    client_src = """
type SumT:void {{ .x:int .y:int }}
interface SumIface {{ RequestResponse: sum(SumT)(int) }}
interface FrontIface {{ RequestResponse: twice(undefined)(undefined) }}
outputPort Backend {{ Location: "socket://127.0.0.1:{port}" Protocol: sodep Interfaces: SumIface }}
inputPort In {{ Location: "local://pipel" Protocol: sodep Interfaces: FrontIface }}
main {{
  twice( req )( resp ) {{
    a.x = 1; a.y = 2; b.x = 10; b.y = 20;
    {{ sum@Backend( a )( ra ) | sum@Backend( b )( rb ) }};
    resp = ra + rb
  }}
}}
"""
    async def main():
        port = free_port()
        server = await start(sum_src(f"socket://127.0.0.1:{port}", "sodep"))
        client = await start(client_src.format(port=port))
        out = await ports.LOCAL_REGISTRY["pipel"].invoke_local(
            "twice", Value(), MessageMeta())
        assert out.content == 33
        await client.stop()
        await server.stop()
    run(main())


def test_invoke_on_unbound_port_faults():
    src = """
interface I { RequestResponse: f(undefined)(undefined), go(undefined)(undefined) }
outputPort P { Interfaces: I }
inputPort In { Location: "local://unbound_front" Protocol: sodep Interfaces: I }
main {
  go( req )( resp ) {
    f@P( 1 )( x );
    resp = x
  }
}
"""
    async def main():
        rt = await start(src)
        with pytest.raises(JoltFault) as exc:
            await ports.LOCAL_REGISTRY["unbound_front"].invoke_local(
                "go", Value(), MessageMeta())
        assert exc.value.name == "PortUnbound"
        await rt.stop()
    run(main())


AGG_BACKEND = """
type K: void {{ .userKey: string }}
type PubT: void {{ .userKey: string .bibtex: string }}
interface RISIface {{
RequestResponse: login(undefined)(undefined), list(K)(undefined)
OneWay: addPub(PubT)
}}
inputPort In {{ Location: "socket://127.0.0.1:{port}" Protocol: sodep Interfaces: RISIface }}
cset {{ userKey: addPub.userKey list.userKey }}
main {{
  login( cred )( r ) {{ r.userKey = csets.userKey = new }};
  while ( true ) {{
    [ addPub( pub ) ] {{ mine[#mine] = pub.bibtex }}
    [ list( q )( resp ) {{
        for ( i = 0, i < #mine, i++ ) {{ resp.pub[i] = mine[i] }}
    }} ]
  }}
}}
"""

AGG_FRONT = """
include "file.iol"
type K: void {{ .userKey: string }}
type PubT: void {{ .userKey: string .bibtex: string }}
interface RISIface {{
RequestResponse: login(undefined)(undefined), list(K)(undefined)
OneWay: addPub(PubT)
}}
interface GetIface {{ RequestResponse: get(undefined)(undefined) }}
outputPort RIS {{ Location: "socket://127.0.0.1:{backend}" Protocol: sodep Interfaces: RISIface }}
inputPort WebIn {{
Location: "socket://127.0.0.1:{front}"
Protocol: http {{
  .default.get = "get";
  .cookies.userKeyCookie = "userKey"
}}
Interfaces: GetIface
Aggregates: RIS
}}
main {{
  get( req )( resp ) {{ resp = "file:" + req.requestUri }}
}}
"""


def test_aggregation_transparency_differential():
    """Responses through the aggregator equal direct backend calls."""
    async def main():
        backend_port, front_port = free_port(), free_port()
        backend = await start(AGG_BACKEND.format(port=backend_port))
        front = await start(AGG_FRONT.format(backend=backend_port,
                                             front=front_port))
        # direct sodep call
        client = ports.SodepClient("127.0.0.1", backend_port)
        direct_login = await client.call("login", Value(), RR)
        key_direct = direct_login.first("userKey").content
        await client.call("addPub", Value.tree(None, userKey=key_direct,
                                               bibtex="direct-entry"), "oneway")
        await asyncio.sleep(0.05)
        direct_list = await client.call("list",
                                        Value.tree(None, userKey=key_direct), RR)
        # via aggregator over http
        resp = await http_request(front_port, "POST", "/login",
                                  headers=[("Content-Type", "application/json")],
                                  body=b"{}")
        assert resp.status == 200
        cookies = resp.all_headers("Set-Cookie")
        assert any(c.startswith("userKeyCookie=") for c in cookies)
        key_http = cookies[0].split("=", 1)[1].split(";")[0]
        resp = await http_request(
            front_port, "POST", "/addPub",
            headers=[("Content-Type", "application/json"),
                     ("Cookie", f"userKeyCookie={key_http}")],
            body=b'{"bibtex":"direct-entry"}')
        assert resp.status == 204
        await asyncio.sleep(0.05)
        resp = await http_request(
            front_port, "GET", "/list",
            headers=[("Accept", "application/json"),
                     ("Cookie", f"userKeyCookie={key_http}")])
        assert resp.status == 200
        import json
        via_http = json.loads(resp.body)
        direct_pubs = [v.content for v in direct_list.vector("pub")]
        assert direct_pubs == ["direct-entry"]
        assert via_http == {"pub": "direct-entry"}
        # own operation handled locally, never forwarded
        resp = await http_request(front_port, "GET", "/index.html")
        assert resp.body == b"<getResponse>file:/index.html</getResponse>"
        await client.close()
        await front.stop()
        await backend.stop()
    run(main())


def test_unknown_correlation_direct_http_is_404():
    """On the engine's own http port the rejection is synchronous."""
    direct = AGG_BACKEND.replace("Protocol: sodep", "Protocol: http")

    async def main():
        port = free_port()
        backend = await start(direct.format(port=port))
        resp = await http_request(
            port, "POST", "/addPub",
            headers=[("Content-Type", "application/json")],
            body=b'{"bibtex":"x","userKey":"ghost"}')
        assert resp.status == 404
        assert b"CorrelationError" in resp.body
        await backend.stop()
    run(main())


def test_unknown_correlation_behind_aggregator_is_acked():
    """A forwarded one-way is fire-and-forget: the aggregator can only
    confirm that it sent the message on."""
    async def main():
        backend_port, front_port = free_port(), free_port()
        backend = await start(AGG_BACKEND.format(port=backend_port))
        front = await start(AGG_FRONT.format(backend=backend_port,
                                             front=front_port))
        resp = await http_request(
            front_port, "POST", "/addPub",
            headers=[("Content-Type", "application/json")],
            body=b'{"bibtex":"x","userKey":"ghost"}')
        assert resp.status == 204
        await front.stop()
        await backend.stop()
    run(main())


def test_same_origin_all_traffic_through_aggregator():
    """Clients only ever connect to the aggregator's address."""
    connections = []

    async def main():
        backend_port, front_port = free_port(), free_port()
        backend = await start(AGG_BACKEND.format(port=backend_port))
        front = await start(AGG_FRONT.format(backend=backend_port,
                                             front=front_port))
        resp = await http_request(front_port, "POST", "/login", body=b"")
        assert resp.status == 200
        connections.append(front_port)
        # every client-side URL in this exchange used front_port only;
        # the backend's port never appears in client-visible data
        assert str(backend_port).encode() not in resp.body
        await front.stop()
        await backend.stop()
    run(main())


def test_vertical_modification_config_only():
    """A new backend operation becomes routable after aggregator restart
    with no change to the aggregator's behaviour text."""
    async def main():
        backend_port, front_port = free_port(), free_port()
        src = """
type K: void {{ .userKey: string }}
interface RISIface {{
RequestResponse: ping(undefined)(undefined)
}}
inputPort In {{ Location: "socket://127.0.0.1:{port}" Protocol: sodep Interfaces: RISIface }}
main {{ ping( q )( r ) {{ r = "pong" }} }}
""".format(port=backend_port)
        backend = await start(src)
        front_src = AGG_FRONT.format(backend=backend_port, front=front_port)
        front_src = front_src.replace(
            "RequestResponse: login(undefined)(undefined), list(K)(undefined)\nOneWay: addPub(PubT)",
            "RequestResponse: ping(undefined)(undefined)")
        front = await start(front_src)
        resp = await http_request(front_port, "GET", "/ping")
        assert resp.status == 200 and b"pong" in resp.body
        await front.stop()
        await backend.stop()
    run(main())


def test_rebind_switches_wire_path():
    """A binding from a registry is indistinguishable from static config."""
    captured = []

    async def capture_server(reader, writer):
        data = await reader.readuntil(b"\r\n\r\n")
        first = data.split(b"\r\n")[0].decode()
        captured.append(first)
        body = b"@book{x}"
        writer.write(b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n"
                     b"Content-Length: " + str(len(body)).encode() +
                     b"\r\nConnection: close\r\n\r\n" + body)
        await writer.drain()
        writer.close()

    CLIENT = """
type FetchBib: void {{ .dblpKey: string }}
interface DBLPIface {{ RequestResponse: fetchBib(FetchBib)(string) }}
interface RegistryIface {{ RequestResponse: getBinding(string)(undefined) }}
interface GoIface {{ RequestResponse: go(undefined)(undefined) }}
outputPort DBLP {{ Interfaces: DBLPIface }}
outputPort Registry {{ Location: "local://reg" Protocol: sodep Interfaces: RegistryIface }}
inputPort In {{ Location: "local://rebind_front" Protocol: sodep Interfaces: GoIface }}
main {{
  go( req )( resp ) {{
    getBinding@Registry( "DBLP" )( DBLP );
    r.dblpKey = req.key;
    fetchBib@DBLP( r )( resp )
  }}
}}
"""
    REGISTRY = """
interface RegistryIface {{ RequestResponse: getBinding(string)(undefined) }}
inputPort In {{ Location: "local://reg" Protocol: sodep Interfaces: RegistryIface }}
main {{
  getBinding( name )( binding ) {{
    binding.location = "socket://127.0.0.1:{mock}";
    binding.protocol = "http";
    binding.protocol.osc.fetchBib.alias = "rec/bib2/%!{{dblpKey}}.bib";
    binding.protocol.format = "html"
  }}
}}
"""
    async def main():
        mock_port = free_port()
        server = await asyncio.start_server(capture_server, "127.0.0.1", mock_port)
        registry = await start(REGISTRY.format(mock=mock_port))
        client = await start(CLIENT.format())
        out = await ports.LOCAL_REGISTRY["rebind_front"].invoke_local(
            "go", Value.tree(None, key="books/ph/KernighanR78"), MessageMeta())
        assert out.content == "@book{x}"
        assert captured == ["GET /rec/bib2/books/ph/KernighanR78.bib HTTP/1.1"]
        server.close()
        await server.wait_closed()
        await client.stop()
        await registry.stop()
    run(main())


def test_rebind_twice_last_wins():
    async def main():
        rt = await start("""
interface I { RequestResponse: f(undefined)(undefined) }
outputPort P { Interfaces: I }
main { nullProcess }
""")
        port = rt.output_ports["P"]
        port.rebind(Value.tree(None, location="socket://127.0.0.1:1",
                               protocol="sodep"))
        assert port.location == "socket://127.0.0.1:1"
        port.rebind(Value.tree(None, location="socket://127.0.0.1:2",
                               protocol="sodep"))
        assert port.location == "socket://127.0.0.1:2"
        with pytest.raises(JoltFault):
            port.rebind(Value.tree(None, nonsense=1))
        await rt.stop()
    run(main())


def test_debug_parameter_logs_wire_bytes(caplog):
    import logging

    async def main():
        port = free_port()
        src = sum_src(f"socket://127.0.0.1:{port}", "http").replace(
            "Protocol: http",
            'Protocol: http { .debug = true }')
        rt = await start(src)
        with caplog.at_level(logging.INFO, logger="jolt.ports"):
            resp = await http_request(port, "GET", "/sum?x=1&y=1")
            assert resp.status == 200
        assert any("http <-" in rec.message for rec in caplog.records)
        assert any("http ->" in rec.message for rec in caplog.records)
        await rt.stop()
    run(main())
