"""
Exception types raised by the lab.

Soft conditions (truncation tails, under-resolved bubbles, near-stop records)
travel as metadata and flags instead.
"""
from typing import Any, Dict, Optional


class ConfigError(ValueError):
    """Invalid experiment configuration (unknown key, violated invariant)."""


class UnderResolvedError(ValueError):
    """A requested scale or annulus is below what the grid can resolve."""


class LojParameterError(ValueError):
    """Łojasiewicz parameters outside their admissible range."""


class FlowAbortError(RuntimeError):
    """
    A flow run had to stop on a numerical failure.

    Args:
        message: Human-readable reason
        dump: State summary written next to the run as abort_dump.json
    """

    def __init__(self, message: str, dump: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.dump = dump or {}
