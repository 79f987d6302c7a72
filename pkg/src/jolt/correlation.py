"""Message correlation: routing inbound messages to process instances.

Each correlation set declares variables bound, per operation, to a path
inside the request message. A live instance owns at most one valuation
per set; an inbound message routes to the instance whose stored values
equal the ones extracted from it.
"""

from __future__ import annotations

import secrets
from typing import Optional

from . import values
from .model import CsetDecl
from .values import Value

START_NEW = "start-new"
NO_ROUTE = "no-route"


def fresh() -> Value:
    """A fresh, URL- and cookie-safe string token (128 bits of entropy)."""
    return Value(values.STRING, secrets.token_urlsafe(16))


def scalar_key(v: Value) -> str:
    """Canonical comparison form of a correlation scalar.

    Values are compared by their string rendering so that, e.g., an int
    arriving over a typeless format still matches the stored token.
    """
    return values.to_plain_string(v)


def extract(operation: str, payload: Value, decls: list[CsetDecl]):
    """Per-cset valuations carried by a message.

    Returns a list of ``(cset_index, (value, ...))`` in declaration
    order; a set is skipped when the operation has no binding for it or
    any bound path is absent from the payload.
    """
    out = []
    for idx, decl in enumerate(decls):
        vals = []
        complete = True
        for var in decl.variables:
            bound = decl.bindings.get((operation, var))
            if bound is None:
                complete = False
                break
            node = values.get_existing(payload, values.path(*bound))
            if node is None or node.kind == values.VOID:
                complete = False
                break
            vals.append(scalar_key(node))
        if complete and vals:
            out.append((idx, tuple(vals)))
    return out


class CorrelationTable:
    """Valuation -> instance id map; at most one live owner per valuation."""

    def __init__(self):
        self._entries: dict[tuple, object] = {}

    def lookup(self, cset_index: int, valuation: tuple) -> Optional[object]:
        return self._entries.get((cset_index, valuation))

    def bind(self, cset_index: int, valuation: tuple, instance_id) -> bool:
        """Register an owner; False when the valuation is already taken."""
        key = (cset_index, valuation)
        if key in self._entries:
            return False
        self._entries[key] = instance_id
        return True

    def release_instance(self, instance_id) -> None:
        dead = [k for k, v in self._entries.items() if v == instance_id]
        for k in dead:
            del self._entries[k]

    def __len__(self):
        return len(self._entries)


def route(valuations, operation: str, table: CorrelationTable,
          start_operations: set) -> tuple[str, Optional[object]]:
    """Routing decision for one message.

    Returns ``("deliver", instance_id)``, ``(START_NEW, None)`` or
    ``(NO_ROUTE, None)``. The first matching valuation in declaration
    order wins; spawning is only allowed for start operations.
    """
    for cset_index, valuation in valuations:
        owner = table.lookup(cset_index, valuation)
        if owner is not None:
            return "deliver", owner
    if operation in start_operations:
        return START_NEW, None
    return NO_ROUTE, None
