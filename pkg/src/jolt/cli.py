"""Command line entry points: run, check, bench, router."""

from __future__ import annotations

import argparse
import asyncio
import logging
import signal
import sys

from . import bench as bench_mod
from . import engine, parser, router
from .errors import JoltError, ParseError, ResolutionError, StartupError

log = logging.getLogger("jolt")

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_BIND = 2


def _build_argparser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="jolt",
                                  description="process-aware web service runtime")
    top.add_argument("-v", "--verbose", action="store_true",
                     help="log at INFO level")
    sub = top.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one or more service files")
    run.add_argument("files", nargs="+", help="service definition (.ol) files")
    run.add_argument("--root", default=".", help="document root for the File service")
    run.add_argument("--debug-http", action="store_true",
                     help="log HTTP wire traffic")
    run.add_argument("--port-override", action="append", default=[],
                     metavar="NAME=URI", help="rebind a declared port by name")
    run.add_argument("--arg", action="append", default=[], dest="args",
                     help="value appended to the program's args vector")

    check = sub.add_parser("check", help="parse and resolve only")
    check.add_argument("file")

    b = sub.add_parser("bench", help="run a benchmark scenario")
    b.add_argument("scenario", choices=["static", "template", "fanout"])
    b.add_argument("--clients", default="10",
                   help="client count or comma list (e.g. 10,50,100)")
    b.add_argument("--services", default="4",
                   help="fan-out width or comma list (fanout only)")
    b.add_argument("--delay-ms", type=int, default=5,
                   help="simulated backend delay per news call (fanout only)")
    b.add_argument("--duration", type=float, default=5.0,
                   help="seconds per configuration")
    b.add_argument("--csv", default=None, help="write results to this CSV file")
    b.add_argument("--no-plot", action="store_true",
                   help="skip rendering the figure next to the CSV")
    b.add_argument("--external-server", default=None, metavar="HOST:PORT",
                   help="drive an already-running server instead of spawning one")

    r = sub.add_parser("router", help="serve the REST router")
    r.add_argument("--listen", required=True,
                   help="listen location, e.g. socket://localhost:8300")
    return top


def _parse_overrides(pairs: list[str]) -> dict:
    overrides = {}
    for pair in pairs:
        name, sep, uri = pair.partition("=")
        if not sep:
            raise SystemExit(f"bad --port-override {pair!r}, expected NAME=URI")
        overrides[name] = uri
    return overrides


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


async def _wait_for_signal() -> None:
    loop = asyncio.get_running_loop()
    stop = loop.create_future()

    def fire():
        if not stop.done():
            stop.set_result(None)

    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, fire)
        except NotImplementedError:
            pass
    await stop


async def _cmd_run(ns) -> int:
    runtimes = []
    try:
        for path in ns.files:
            program = parser.parse_file(path)
            runtimes.append(engine.Runtime(
                program, name=path, root_dir=ns.root, args=ns.args,
                port_overrides=_parse_overrides(ns.port_override),
                debug_http=ns.debug_http))
    except (ParseError, ResolutionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    started = []
    try:
        for runtime in runtimes:
            await runtime.start()
            started.append(runtime)
    except StartupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for runtime in started:
            await runtime.stop()
        return EXIT_BIND
    scripts = [r for r in runtimes if r.script_mode]
    try:
        if scripts and len(scripts) == len(runtimes):
            code = EXIT_OK
            for runtime in scripts:
                fault = await runtime.run_until_script_done()
                if fault is not None:
                    print(f"error: fault {fault.name}: {fault}", file=sys.stderr)
                    code = EXIT_PARSE
            return code
        await _wait_for_signal()
        return EXIT_OK
    finally:
        for runtime in started:
            await runtime.stop()


def _cmd_check(ns) -> int:
    try:
        parser.parse_file(ns.file)
    except (ParseError, ResolutionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    print(f"{ns.file}: ok")
    return EXIT_OK


async def _cmd_bench(ns) -> int:
    clients = _int_list(ns.clients)
    if ns.scenario == "static":
        results = await bench_mod.run_static(clients, ns.duration,
                                             ns.external_server)
    elif ns.scenario == "template":
        results = await bench_mod.run_template(clients, ns.duration,
                                               ns.external_server)
    else:
        services = _int_list(ns.services)
        results = await bench_mod.run_fanout(clients[0], services, ns.delay_ms,
                                             ns.duration, ns.external_server)
    header = ",".join(bench_mod.CSV_FIELDS)
    print(header)
    for result in results:
        print(",".join(result.row()[f] for f in bench_mod.CSV_FIELDS))
    if ns.csv:
        bench_mod.write_csv(ns.csv, results)
        print(f"wrote {ns.csv}")
        if not ns.no_plot:
            figure = bench_mod.figure_path_for(ns.csv)
            bench_mod.render_figure(figure, results)
            print(f"wrote {figure}")
    failures = sum(result.errors for result in results)
    if failures:
        print(f"error: {failures} failed responses", file=sys.stderr)
        return 3
    return EXIT_OK


async def _cmd_router(ns) -> int:
    try:
        service = await router.start_router(ns.listen)
    except StartupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BIND
    print(f"router listening at {ns.listen}")
    try:
        await _wait_for_signal()
    finally:
        await service.stop()
    return EXIT_OK


def main(argv=None) -> int:
    ns = _build_argparser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if (ns.verbose or getattr(ns, "debug_http", False))
        else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if ns.command == "run":
            return asyncio.run(_cmd_run(ns))
        if ns.command == "check":
            return _cmd_check(ns)
        if ns.command == "bench":
            return asyncio.run(_cmd_bench(ns))
        if ns.command == "router":
            return asyncio.run(_cmd_router(ns))
    except KeyboardInterrupt:
        return EXIT_OK
    except JoltError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
