"""Shared test plumbing: event-loop helpers and an independent HTTP client.

The wire-level helpers here deliberately avoid the package's own HTTP
parsing so that byte-level assertions check against an independent
reading of the protocol.
"""

from __future__ import annotations

import asyncio
import socket

import pytest

from jolt import ports


@pytest.fixture(autouse=True)
def _clean_local_registry():
    ports.LOCAL_REGISTRY.clear()
    yield
    ports.LOCAL_REGISTRY.clear()


def run(coro, timeout: float = 60.0):
    """Drive a coroutine to completion with a safety timeout."""
    async def guarded():
        return await asyncio.wait_for(coro, timeout)
    return asyncio.run(guarded())


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class TestResponse:
    __test__ = False

    def __init__(self, status, headers, body):
        self.status = status
        self.headers = headers
        self.body = body

    def header(self, name):
        low = name.lower()
        return next((v for k, v in self.headers if k.lower() == low), None)

    def all_headers(self, name):
        low = name.lower()
        return [v for k, v in self.headers if k.lower() == low]


async def http_request(port, method, target, headers=None, body=b"",
                       host="127.0.0.1") -> TestResponse:
    """Minimal, self-contained HTTP/1.1 exchange over a fresh connection."""
    reader, writer = await asyncio.open_connection(host, port)
    lines = [f"{method} {target} HTTP/1.1", f"Host: {host}:{port}",
             "Connection: close"]
    for k, v in (headers or []):
        lines.append(f"{k}: {v}")
    if body:
        lines.append(f"Content-Length: {len(body)}")
    payload = ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1") + body
    writer.write(payload)
    await writer.drain()
    raw = await reader.read()
    writer.close()
    try:
        await writer.wait_closed()
    except Exception:
        pass
    head, _, rest = raw.partition(b"\r\n\r\n")
    head_lines = head.decode("latin-1").split("\r\n")
    status = int(head_lines[0].split(" ")[1])
    parsed = []
    for line in head_lines[1:]:
        name, _, value = line.partition(":")
        parsed.append((name.strip(), value.strip()))
    return TestResponse(status, parsed, rest)


async def raw_exchange(port, data: bytes, host="127.0.0.1") -> bytes:
    reader, writer = await asyncio.open_connection(host, port)
    writer.write(data)
    await writer.drain()
    out = await reader.read()
    writer.close()
    try:
        await writer.wait_closed()
    except Exception:
        pass
    return out
