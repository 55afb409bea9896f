"""Core value types shared by every other module.

Terms, interactive events, ruling operations, per-agent control state and
law identity by hash. Everything here is immutable and side-effect free.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union


class FdsError(Exception):
    """Base class for errors raised by the framework runtime."""


class TermSyntaxError(FdsError):
    pass


class StateError(FdsError):
    """A state update referenced a term that is not there (law bug)."""


TermArg = Union[int, str, "Term"]


@dataclass(frozen=True)
class Term:
    """A ground functional term, e.g. ``changeDelay(50)`` or ``order("x",30)``."""

    functor: str
    args: tuple = ()

    def canonical(self) -> str:
        if not self.args:
            return self.functor
        return "%s(%s)" % (self.functor, ",".join(_render_arg(a) for a in self.args))

    def __str__(self) -> str:
        return self.canonical()


def _render_arg(a: TermArg) -> str:
    if isinstance(a, bool):
        raise TermSyntaxError("boolean term arguments are not supported")
    if isinstance(a, int):
        return str(a)
    if isinstance(a, str):
        return '"%s"' % a.replace("\\", "\\\\").replace('"', '\\"')
    if isinstance(a, Term):
        return a.canonical()
    raise TermSyntaxError("unsupported term argument: %r" % (a,))


def parse_term(text: str) -> Term:
    """Parse the canonical term syntax. Bare lowercase atoms read as strings."""
    term, pos = _parse_term(text, 0)
    pos = _skip_ws(text, pos)
    if pos != len(text):
        raise TermSyntaxError("trailing input at %d in %r" % (pos, text))
    return term


def _skip_ws(s: str, i: int) -> int:
    while i < len(s) and s[i] in " \t":
        i += 1
    return i


def _parse_term(s: str, i: int):
    i = _skip_ws(s, i)
    j = i
    while j < len(s) and (s[j].isalnum() or s[j] == "_"):
        j += 1
    if j == i or not (s[i].isalpha() or s[i] == "_"):
        raise TermSyntaxError("expected functor at %d in %r" % (i, s))
    functor = s[i:j]
    j = _skip_ws(s, j)
    if j >= len(s) or s[j] != "(":
        return Term(functor), j
    args = []
    j += 1
    j = _skip_ws(s, j)
    if j < len(s) and s[j] == ")":
        return Term(functor, ()), j + 1
    while True:
        arg, j = _parse_arg(s, j)
        args.append(arg)
        j = _skip_ws(s, j)
        if j >= len(s):
            raise TermSyntaxError("unterminated term in %r" % s)
        if s[j] == ",":
            j += 1
            continue
        if s[j] == ")":
            return Term(functor, tuple(args)), j + 1
        raise TermSyntaxError("unexpected %r at %d in %r" % (s[j], j, s))


def _parse_arg(s: str, i: int):
    i = _skip_ws(s, i)
    if i >= len(s):
        raise TermSyntaxError("unexpected end of input in %r" % s)
    c = s[i]
    if c == '"':
        return _parse_string(s, i)
    if c.isdigit() or (c == "-" and i + 1 < len(s) and s[i + 1].isdigit()):
        j = i + 1
        while j < len(s) and s[j].isdigit():
            j += 1
        return int(s[i:j]), j
    if not (c.isalpha() or c == "_"):
        raise TermSyntaxError("unexpected %r at %d in %r" % (c, i, s))
    j = i
    while j < len(s) and (s[j].isalnum() or s[j] == "_"):
        j += 1
    k = _skip_ws(s, j)
    if k < len(s) and s[k] == "(":
        return _parse_term(s, i)
    # bare atom: reads as a string
    return s[i:j], j


def _parse_string(s: str, i: int):
    assert s[i] == '"'
    out = []
    j = i + 1
    while j < len(s):
        c = s[j]
        if c == "\\":
            if j + 1 >= len(s):
                break
            out.append(s[j + 1])
            j += 2
            continue
        if c == '"':
            return "".join(out), j + 1
        out.append(c)
        j += 1
    raise TermSyntaxError("unterminated string in %r" % s)


# ---------------------------------------------------------------------------
# agents and law identity


@dataclass(frozen=True)
class AgentName:
    name: str
    division: str = ""

    def __post_init__(self):
        if not self.name:
            raise FdsError("agent name must be non-empty")


def hash_law(canonical_text: str) -> str:
    """One-way digest identifying a law by its canonical text."""
    return hashlib.sha256(canonical_text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# interactive events


@dataclass(frozen=True)
class Adopted:
    cert: Term  # cert(name, division, issuer)

    kind = "adopted"


@dataclass(frozen=True)
class Sent:
    target: AgentName
    payload: Term

    kind = "sent"


@dataclass(frozen=True)
class Arrived:
    sender: AgentName
    sender_law: str
    payload: Term

    kind = "arrived"


@dataclass(frozen=True)
class ObligationDue:
    name: Term

    kind = "obligationDue"


@dataclass(frozen=True)
class ExceptionEvent:
    reason: str

    kind = "exception"


Event = Union[Adopted, Sent, Arrived, ObligationDue, ExceptionEvent]


# ---------------------------------------------------------------------------
# ruling operations


@dataclass(frozen=True)
class Forward:
    target: str
    payload: Term

    op = "forward"


@dataclass(frozen=True)
class Deliver:
    payload: Term
    certified_sender: Optional[str] = None

    op = "deliver"


@dataclass(frozen=True)
class StateReplace:
    old: Term
    new: Term

    op = "replace"


@dataclass(frozen=True)
class StateAdd:
    term: Term

    op = "add"


@dataclass(frozen=True)
class StateRemove:
    term: Term

    op = "remove"


@dataclass(frozen=True)
class ImposeObligation:
    name: Term
    due_in: int

    op = "oblige"


@dataclass(frozen=True)
class RepealObligation:
    name: Term

    op = "repeal"


@dataclass(frozen=True)
class AuditLog:
    record: Optional[Term] = None

    op = "audit"


@dataclass(frozen=True)
class Block:
    reason: str = ""

    op = "block"


Operation = Union[
    Forward,
    Deliver,
    StateReplace,
    StateAdd,
    StateRemove,
    ImposeObligation,
    RepealObligation,
    AuditLog,
    Block,
]


def op_canonical(op: Operation) -> str:
    if isinstance(op, Forward):
        return "forward(%s,%s)" % (_render_arg(op.target), op.payload.canonical())
    if isinstance(op, Deliver):
        return "deliver(%s)" % op.payload.canonical()
    if isinstance(op, StateReplace):
        return "replace %s <- %s" % (op.old.canonical(), op.new.canonical())
    if isinstance(op, StateAdd):
        return "add %s" % op.term.canonical()
    if isinstance(op, StateRemove):
        return "remove %s" % op.term.canonical()
    if isinstance(op, ImposeObligation):
        return "oblige %s in %d" % (op.name.canonical(), op.due_in)
    if isinstance(op, RepealObligation):
        return "repeal %s" % op.name.canonical()
    if isinstance(op, AuditLog):
        return "audit" if op.record is None else "audit %s" % op.record.canonical()
    if isinstance(op, Block):
        return "block(%s)" % _render_arg(op.reason)
    raise FdsError("unknown operation %r" % (op,))


# ---------------------------------------------------------------------------
# control state


class ControlState:
    """The per-agent term set maintained by a controller.

    A functor is single-valued unless the governing law declares it
    set-valued. Overlay terms (``clock``, peer identification) are injected
    per event, shadow the base state, and are never written back.
    """

    __slots__ = ("_terms", "multi", "_overlay")

    def __init__(self, terms: Iterable[Term] = (), multi: frozenset = frozenset(),
                 overlay: Iterable[Term] = ()):
        self.multi = multi
        self._terms = {}
        for t in terms:
            self._insert(self._terms, t)
        self._overlay = {}
        for t in overlay:
            self._overlay.setdefault(t.functor, []).append(t)

    def _insert(self, store, t: Term):
        bucket = store.setdefault(t.functor, [])
        if t.functor not in self.multi and bucket:
            raise StateError("duplicate-term: functor %r is single-valued" % t.functor)
        if t not in bucket:
            bucket.append(t)
            bucket.sort(key=Term.canonical)

    def terms(self):
        """Base (persisted) terms in canonical order."""
        out = []
        for f in sorted(self._terms):
            out.extend(self._terms[f])
        return out

    def lookup(self, functor: str):
        """Visible terms for a functor: overlay shadows base."""
        if functor in self._overlay:
            return list(self._overlay[functor])
        return list(self._terms.get(functor, ()))

    def with_overlay(self, terms: Iterable[Term]) -> "ControlState":
        return ControlState(self.terms(), self.multi, terms)

    def replace(self, old: Term, new: Term) -> "ControlState":
        if old.functor in self._overlay:
            raise StateError("read-only term %r" % old.functor)
        bucket = self._terms.get(old.functor, [])
        if old not in bucket:
            raise StateError("stale-state-update: %s not in state" % old.canonical())
        terms = [t for t in self.terms() if t != old]
        st = ControlState(terms, self.multi, self._flat_overlay())
        st._insert(st._terms, new)
        return st

    def add(self, term: Term) -> "ControlState":
        if term.functor in self._overlay:
            raise StateError("read-only term %r" % term.functor)
        st = ControlState(self.terms(), self.multi, self._flat_overlay())
        st._insert(st._terms, term)
        return st

    def remove(self, term: Term) -> "ControlState":
        bucket = self._terms.get(term.functor, [])
        if term not in bucket:
            raise StateError("stale-state-update: %s not in state" % term.canonical())
        return ControlState([t for t in self.terms() if t != term],
                            self.multi, self._flat_overlay())

    def _flat_overlay(self):
        out = []
        for f in self._overlay:
            out.extend(self._overlay[f])
        return out

    def without_overlay(self) -> "ControlState":
        return ControlState(self.terms(), self.multi)

    def canonical(self) -> str:
        return ";".join(t.canonical() for t in self.terms())

    def __eq__(self, other):
        return isinstance(other, ControlState) and self.canonical() == other.canonical()

    def __repr__(self):
        return "ControlState{%s}" % self.canonical()


@dataclass(frozen=True)
class Ruling:
    """The law's decision for one event: new state plus ordered operations."""

    new_state: ControlState
    ops: tuple = ()

    def blocks(self) -> bool:
        return any(isinstance(o, Block) for o in self.ops)

    def canonical_ops(self) -> str:
        return ";".join(op_canonical(o) for o in self.ops)


def apply_ruling(state: ControlState, ruling: Ruling) -> ControlState:
    """Apply the state-update operations of a ruling, in order.

    Interactive operations (forward, deliver, block, ...) are ignored here;
    they are the controller's business.
    """
    st = state
    for op in ruling.ops:
        if isinstance(op, StateReplace):
            st = st.replace(op.old, op.new)
        elif isinstance(op, StateAdd):
            st = st.add(op.term)
        elif isinstance(op, StateRemove):
            st = st.remove(op.term)
    return st
