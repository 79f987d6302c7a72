"""jolt: a process-aware web service runtime.

Services are written in a small workflow language; their processes talk
HTTP and a binary wire protocol, correlate sessions by message content,
aggregate other services behind one address, and route REST traffic onto
controller operations.
"""

from .engine import ManualTimer, Runtime, Timer
from .errors import JoltError, JoltFault, ParseError, ResolutionError, StartupError
from .parser import parse_file, parse_program
from .printer import print_program
from .values import Value

__version__ = "0.1.0"

__all__ = [
    "JoltError", "JoltFault", "ManualTimer", "ParseError", "ResolutionError",
    "Runtime", "StartupError", "Timer", "Value", "parse_file",
    "parse_program", "print_program", "__version__",
]
