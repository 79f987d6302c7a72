"""Benchmark harness: static pages, templated pages, and backend fan-out.

Each scenario builds its servers from generated service sources, drives
them with concurrent in-process clients for a fixed duration, and
reports throughput plus latency percentiles per configuration. Results
go to a CSV (one row per configuration) and, alongside it, a rendered
figure with the throughput and latency curves.
"""

from __future__ import annotations

import asyncio
import csv
import os
import socket
import tempfile
import time
from dataclasses import dataclass
from typing import Optional

from . import engine, http, parser, ports

STATIC_PAGE_BYTES = 1500

CSV_FIELDS = ["scenario", "clients", "services", "duration_s",
              "throughput_rps", "p50_ms", "p99_ms"]


@dataclass
class BenchResult:
    scenario: str
    clients: int
    services: int
    duration_s: float
    throughput_rps: float
    p50_ms: float
    p99_ms: float
    errors: int = 0

    def row(self) -> dict:
        return {
            "scenario": self.scenario,
            "clients": str(self.clients),
            "services": str(self.services),
            "duration_s": f"{self.duration_s:g}",
            "throughput_rps": f"{self.throughput_rps:.1f}",
            "p50_ms": f"{self.p50_ms:.2f}",
            "p99_ms": f"{self.p99_ms:.2f}",
        }


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _percentile(sorted_samples: list[float], pct: float) -> float:
    if not sorted_samples:
        return 0.0
    idx = min(len(sorted_samples) - 1, int(pct / 100.0 * len(sorted_samples)))
    return sorted_samples[idx]


class _Counter:
    __slots__ = ("ok", "errors")

    def __init__(self):
        self.ok = 0
        self.errors = 0


async def _client_loop(host: str, port: int, target: str, deadline: float,
                       latencies: list, counter: _Counter) -> None:
    client = ports.HttpClient(host, port)
    headers = [("Host", f"{host}:{port}")]
    try:
        while time.monotonic() < deadline:
            request = http.HttpRequest("GET", target, headers=list(headers))
            t0 = time.perf_counter()
            try:
                response = await client.exchange(request)
            except Exception:
                counter.errors += 1
                continue
            latencies.append(time.perf_counter() - t0)
            if response.status == 200 and response.body:
                counter.ok += 1
            else:
                counter.errors += 1
    finally:
        await client.close()


async def measure(host: str, port: int, target: str, clients: int,
                  duration: float) -> tuple[float, list[float], _Counter]:
    latencies: list[float] = []
    counter = _Counter()
    deadline = time.monotonic() + duration
    started = time.monotonic()
    tasks = [asyncio.ensure_future(
        _client_loop(host, port, target, deadline, latencies, counter))
        for _ in range(clients)]
    await asyncio.gather(*tasks)
    elapsed = time.monotonic() - started
    return elapsed, latencies, counter


def _result(scenario: str, clients: int, services: int, elapsed: float,
            latencies: list[float], counter: _Counter) -> BenchResult:
    latencies.sort()
    throughput = counter.ok / elapsed if elapsed > 0 else 0.0
    return BenchResult(scenario, clients, services, elapsed, throughput,
                       _percentile(latencies, 50) * 1000.0,
                       _percentile(latencies, 99) * 1000.0,
                       counter.errors)


# -- generated servers -------------------------------------------------------

_STATIC_SERVER = """
include "file.iol"

interface GetIface {{
	RequestResponse: get( undefined )( undefined )
}}

inputPort BenchInput {{
	Location: "socket://127.0.0.1:{port}"
	Protocol: http {{
		.default.get = "get";
		.contentType -> mime
	}}
	Interfaces: GetIface
}}

main {{
	get( req )( resp ) {{
		if ( req.requestUri == "/" ) {{
			req.requestUri = "/index.html"
		}};
		readFile@File( req.requestUri )( resp );
		getMimeType@File( req.requestUri )( mime )
	}}
}}
"""

_TEMPLATE_SERVER = """
include "file.iol"

interface PageIface {{
	RequestResponse: page( undefined )( undefined )
}}

inputPort BenchInput {{
	Location: "socket://127.0.0.1:{port}"
	Protocol: http {{
		.default.get = "page";
		.contentType -> mime
	}}
	Interfaces: PageIface
}}

main {{
	page( req )( resp ) {{
		readFile@File( "/header.html" )( h );
		readFile@File( "/content.html" )( c );
		readFile@File( "/footer.html" )( f );
		resp = h + c + f;
		mime = "text/html"
	}}
}}
"""

_NEWS_SERVER = """
include "time.iol"

interface NewsIface {{
	RequestResponse: getNews( undefined )( undefined )
}}

inputPort NewsInput {{
	Location: "socket://127.0.0.1:{port}"
	Protocol: sodep
	Interfaces: NewsIface
}}

main {{
	getNews( req )( resp ) {{
		sleep@Time( {delay_ms} )();
		resp = "headline from outlet {index}"
	}}
}}
"""

_FRONT_SERVER = """
interface PageIface {{
	RequestResponse: page( undefined )( undefined )
}}

interface CollectIface {{
	RequestResponse: collect( undefined )( undefined )
}}

outputPort Collector {{
	Location: "socket://127.0.0.1:{collector_port}"
	Protocol: sodep
	Interfaces: CollectIface
}}

inputPort FrontInput {{
	Location: "socket://127.0.0.1:{port}"
	Protocol: http {{
		.default.get = "page";
		.contentType -> mime
	}}
	Interfaces: PageIface
}}

main {{
	page( req )( resp ) {{
		collect@Collector( req )( news );
		resp = "<ul>";
		for ( i = 0, i < #news.item, i++ ) {{
			resp = resp + "<li>" + news.item[i] + "</li>"
		}};
		resp = resp + "</ul>";
		mime = "text/html"
	}}
}}
"""


def _collector_source(port: int, news_ports: list[int]) -> str:
    out = ["interface NewsIface {\n\tRequestResponse: getNews( undefined )( undefined )\n}",
           "interface CollectIface {\n\tRequestResponse: collect( undefined )( undefined )\n}"]
    for i, news_port in enumerate(news_ports):
        out.append(
            f'outputPort News{i} {{\n\tLocation: "socket://127.0.0.1:{news_port}"'
            f'\n\tProtocol: sodep\n\tInterfaces: NewsIface\n}}')
    out.append(f'inputPort CollectorInput {{\n\tLocation: "socket://127.0.0.1:{port}"'
               f'\n\tProtocol: sodep\n\tInterfaces: CollectIface\n}}')
    arms = " |\n\t\t".join(
        f"getNews@News{i}( req )( r{i} )" for i in range(len(news_ports)))
    stores = ";\n\t\t".join(
        f"resp.item[{i}] = r{i}" for i in range(len(news_ports)))
    out.append("main {\n\tcollect( req )( resp ) {\n\t\t{ " + arms + " };\n\t\t"
               + stores + "\n\t}\n}")
    return "\n\n".join(out)


def _write_page(path: str, size: int) -> None:
    filler = ("<p>" + "lorem ipsum dolor sit amet " * 4 + "</p>\n")
    body = "<!doctype html>\n<html><head><title>bench</title></head><body>\n"
    while len(body) < size - 20:
        body += filler
    body += "</body></html>\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(body)


async def _start(source: str, root_dir: str = ".") -> engine.Runtime:
    runtime = engine.Runtime(parser.parse_program(source), root_dir=root_dir)
    await runtime.start()
    return runtime


# -- scenarios -----------------------------------------------------------------

async def run_static(clients_list: list[int], duration: float,
                     external: Optional[str] = None) -> list[BenchResult]:
    results = []
    if external:
        host, port = _split_external(external)
        for clients in clients_list:
            elapsed, lat, counter = await measure(host, port, "/index.html",
                                                  clients, duration)
            results.append(_result("static", clients, 0, elapsed, lat, counter))
        return results
    with tempfile.TemporaryDirectory() as www:
        _write_page(os.path.join(www, "index.html"), STATIC_PAGE_BYTES)
        port = free_port()
        runtime = await _start(_STATIC_SERVER.format(port=port), root_dir=www)
        try:
            for clients in clients_list:
                elapsed, lat, counter = await measure("127.0.0.1", port,
                                                      "/index.html", clients,
                                                      duration)
                results.append(_result("static", clients, 0, elapsed, lat, counter))
        finally:
            await runtime.stop()
    return results


async def run_template(clients_list: list[int], duration: float,
                       external: Optional[str] = None) -> list[BenchResult]:
    results = []
    if external:
        host, port = _split_external(external)
        for clients in clients_list:
            elapsed, lat, counter = await measure(host, port, "/page",
                                                  clients, duration)
            results.append(_result("template", clients, 0, elapsed, lat, counter))
        return results
    with tempfile.TemporaryDirectory() as www:
        with open(os.path.join(www, "header.html"), "w") as fh:
            fh.write("<html><head><title>t</title></head><body><nav>menu</nav>\n")
        _write_page(os.path.join(www, "content.html"), STATIC_PAGE_BYTES - 200)
        with open(os.path.join(www, "footer.html"), "w") as fh:
            fh.write("<footer>fin</footer></body></html>\n")
        port = free_port()
        runtime = await _start(_TEMPLATE_SERVER.format(port=port), root_dir=www)
        try:
            for clients in clients_list:
                elapsed, lat, counter = await measure("127.0.0.1", port, "/page",
                                                      clients, duration)
                results.append(_result("template", clients, 0, elapsed, lat, counter))
        finally:
            await runtime.stop()
    return results


async def run_fanout(clients: int, services_list: list[int], delay_ms: int,
                     duration: float,
                     external: Optional[str] = None) -> list[BenchResult]:
    results = []
    if external:
        host, port = _split_external(external)
        for services in services_list:
            elapsed, lat, counter = await measure(host, port, "/page",
                                                  clients, duration)
            results.append(_result("fanout", clients, services, elapsed, lat,
                                   counter))
        return results
    for services in services_list:
        runtimes = []
        try:
            news_ports = [free_port() for _ in range(services)]
            for i, news_port in enumerate(news_ports):
                runtimes.append(await _start(_NEWS_SERVER.format(
                    port=news_port, delay_ms=delay_ms, index=i)))
            collector_port = free_port()
            runtimes.append(await _start(_collector_source(collector_port,
                                                           news_ports)))
            front_port = free_port()
            runtimes.append(await _start(_FRONT_SERVER.format(
                port=front_port, collector_port=collector_port)))
            elapsed, lat, counter = await measure("127.0.0.1", front_port,
                                                  "/page", clients, duration)
            results.append(_result("fanout", clients, services, elapsed, lat,
                                   counter))
        finally:
            for runtime in reversed(runtimes):
                await runtime.stop()
    return results


def _split_external(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


# -- reporting --------------------------------------------------------------------

def write_csv(path: str, results: list[BenchResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for result in results:
            writer.writerow(result.row())


def render_figure(path: str, results: list[BenchResult]) -> None:
    """Throughput and latency curves next to the CSV."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scenario = results[0].scenario if results else ""
    fanout = scenario == "fanout"
    xs = [r.services if fanout else r.clients for r in results]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(xs, [r.throughput_rps for r in results], marker="o")
    ax1.set_xlabel("News services" if fanout else "Clients")
    ax1.set_ylabel("Throughput (pp/s)")
    ax1.set_title(f"{scenario}: throughput")
    ax1.grid(True)
    ax2.plot(xs, [r.p50_ms for r in results], marker="o", label="p50")
    ax2.plot(xs, [r.p99_ms for r in results], marker="s", label="p99")
    ax2.set_xlabel("News services" if fanout else "Clients")
    ax2.set_ylabel("Latency (ms)")
    ax2.set_title(f"{scenario}: latency")
    ax2.legend()
    ax2.grid(True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def figure_path_for(csv_path: str) -> str:
    stem, _ = os.path.splitext(csv_path)
    return stem + ".png"
