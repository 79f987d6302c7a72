"""Fault and diagnostic types shared across the runtime.

A ``JoltFault`` is the application-level fault signal of the workflow
language: it carries a fault name and an optional value payload, travels
up through behaviour execution, and is relayed to request-response
invokers over the wire. Everything else here is tooling diagnostics
(parse errors, resolution errors, startup failures) that never crosses
the network.
"""

from __future__ import annotations


class JoltError(Exception):
    """Base class for all errors raised by the runtime and tooling."""


class JoltFault(JoltError):
    """An application fault: a name plus an optional payload value.

    The payload is a ``values.Value`` (kept untyped here to avoid an
    import cycle); ``None`` means a void payload.
    """

    def __init__(self, name: str, payload=None, message: str = ""):
        super().__init__(message or name)
        self.name = name
        self.payload = payload

    def __repr__(self):
        return f"JoltFault({self.name!r})"


# Well-known fault names used by the runtime itself.
FAULT_TYPE_MISMATCH = "TypeMismatch"
FAULT_CORRELATION = "CorrelationError"
FAULT_IO = "IOError"
FAULT_PORT_UNBOUND = "PortUnbound"
FAULT_BINDING = "BindingError"
FAULT_OVERFLOW = "IntegerOverflow"
FAULT_DIV_ZERO = "DivisionByZero"
FAULT_ALIAS_LOOP = "AliasLoop"
FAULT_CSET_REASSIGN = "CorrelationVariableAlreadySet"
FAULT_CALL_DEPTH = "CallDepthExceeded"
FAULT_MISSING_ALIAS_VALUE = "MissingAliasValue"
FAULT_FILE_NOT_FOUND = "FileNotFound"
FAULT_ACCESS_DENIED = "AccessDenied"
FAULT_TEMPLATE = "TemplateError"
FAULT_MISSING_PARAM = "MissingParam"
FAULT_UNKNOWN_OPERATION = "UnknownOperation"
FAULT_CONFIG = "ConfigError"


class ParseError(JoltError):
    """Syntax error in a service definition, with position information."""

    def __init__(self, message: str, line: int, column: int, expected=None):
        loc = f"{line}:{column}"
        detail = f"{loc}: {message}"
        if expected:
            detail += " (expected " + ", ".join(sorted(expected)) + ")"
        super().__init__(detail)
        self.line = line
        self.column = column
        self.expected = set(expected or ())


class ResolutionError(JoltError):
    """A parsed program references a name that does not resolve."""


class StartupError(JoltError):
    """The runtime could not be brought up (e.g. a port failed to bind)."""
