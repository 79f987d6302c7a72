"""Message envelopes exchanged between the port layer and the engine."""

from __future__ import annotations

import asyncio
from typing import Callable, Optional

from .errors import JoltFault
from .values import Value

ONEWAY = "oneway"
RR = "rr"


class MessageMeta:
    """Transport facts that travel with a decoded message.

    ``var_writes`` carries protocol-parameter variable bindings (e.g. a
    ``.method -> m`` alias) to be written into the handling instance's
    state when the message is consumed.
    """

    __slots__ = ("protocol", "method", "target", "response_format",
                 "var_writes", "status")

    def __init__(self, protocol: str = "", method: str = "", target: str = "",
                 response_format: str = "", var_writes=None):
        self.protocol = protocol
        self.method = method
        self.target = target
        self.response_format = response_format
        self.var_writes = var_writes or []
        self.status = None  # native handlers may force a response status


# A state reader lets the transport resolve variable-bound protocol
# parameters (like ``.statusCode -> code``) against the instance that
# produced the reply. It maps a tuple of names to a Value.
StateReader = Callable[[tuple], Value]


class ReplyHandle:
    """One-shot channel carrying the reply to a request-response input."""

    def __init__(self):
        self._future: asyncio.Future = asyncio.get_running_loop().create_future()

    @property
    def completed(self) -> bool:
        return self._future.done()

    def complete_ok(self, value: Value, reader: Optional[StateReader] = None):
        if not self._future.done():
            self._future.set_result(("ok", value, reader))

    def complete_fault(self, fault: JoltFault, reader: Optional[StateReader] = None):
        if not self._future.done():
            self._future.set_result(("fault", fault, reader))

    async def wait(self):
        """(outcome, payload, state reader); outcome is 'ok' or 'fault'."""
        return await self._future


class Message:
    """A decoded, cast inbound message ready for correlation routing."""

    __slots__ = ("operation", "payload", "kind", "meta", "reply")

    def __init__(self, operation: str, payload: Value, kind: str = ONEWAY,
                 meta: Optional[MessageMeta] = None,
                 reply: Optional[ReplyHandle] = None):
        self.operation = operation
        self.payload = payload
        self.kind = kind
        self.meta = meta or MessageMeta()
        self.reply = reply

    def __repr__(self):
        return f"Message({self.operation}, kind={self.kind})"
