"""Framed distributed system: law-governed middleware and simulation harness."""

from .core import (
    AgentName,
    ControlState,
    FdsError,
    Ruling,
    Term,
    hash_law,
    parse_term,
)
from .hierarchy import Framework, derive_ruling
from .lawlang import LawDoc, parse_law, serialize_law

__all__ = [
    "AgentName",
    "ControlState",
    "FdsError",
    "Framework",
    "LawDoc",
    "Ruling",
    "Term",
    "derive_ruling",
    "hash_law",
    "parse_law",
    "parse_term",
    "serialize_law",
]

__version__ = "0.1.0"
