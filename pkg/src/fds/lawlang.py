"""Parser and evaluator for the declarative law language.

A law is a list of event-condition-action rules over an agent's control
state. Rules are tried in textual order; the first rule whose pattern
unifies with the event and whose guard holds supplies the ruling. A law
also carries a default directive for unmatched send/arrive events, an
initial control state, set-valued functor declarations, and the meta
permissions that circumscribe subordinate laws.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .core import (
    Adopted,
    Arrived,
    AuditLog,
    Block,
    ControlState,
    Deliver,
    Event,
    FdsError,
    Forward,
    ImposeObligation,
    ObligationDue,
    Operation,
    RepealObligation,
    Ruling,
    Sent,
    StateAdd,
    StateRemove,
    StateReplace,
    Term,
    apply_ruling,
)


class LawSyntaxError(FdsError):
    def __init__(self, msg, line=None, col=None):
        loc = "" if line is None else " at line %d, col %d" % (line, col)
        super().__init__(msg + loc)
        self.line = line
        self.col = col


class GuardError(FdsError):
    """A guard or template referenced something unresolvable (law bug)."""


EVENT_KINDS = {
    "adopted": 1,
    "sent": 3,
    "arrived": 3,
    "obligationDue": 1,
    "exception": 1,
}

META_MODES = ("sealed", "tighten", "default-overridable", "open")

# restrictiveness ranking, most restrictive first
MODE_RANK = {"sealed": 3, "tighten": 2, "default-overridable": 1, "open": 0}


# ---------------------------------------------------------------------------
# AST nodes


@dataclass(frozen=True)
class Var:
    name: str


class _Wildcard:
    def __repr__(self):
        return "_"


WILDCARD = _Wildcard()


@dataclass(frozen=True)
class PTerm:
    """A term pattern/template; args may hold variables or expressions."""

    functor: str
    args: tuple = ()


@dataclass(frozen=True)
class BinExpr:
    op: str  # '+' or '-'
    left: object
    right: object


@dataclass(frozen=True)
class FunctorOf:
    var: Var


@dataclass(frozen=True)
class StateQuery:
    pattern: PTerm


@dataclass(frozen=True)
class Comparison:
    op: str  # == != < <= > >=
    left: object
    right: object


GuardAtom = object  # StateQuery | Comparison


@dataclass(frozen=True)
class TForward:
    target: object = None  # expr or None (event target)
    payload: object = None  # template term or None (event payload)


@dataclass(frozen=True)
class TDeliver:
    payload: object = None


@dataclass(frozen=True)
class TReplace:
    old: PTerm
    new: PTerm


@dataclass(frozen=True)
class TAdd:
    term: PTerm


@dataclass(frozen=True)
class TRemove:
    term: PTerm


@dataclass(frozen=True)
class TOblige:
    name: PTerm
    due_in: object  # expr


@dataclass(frozen=True)
class TRepeal:
    name: PTerm


@dataclass(frozen=True)
class TAudit:
    pass


@dataclass(frozen=True)
class TBlock:
    reason: str = ""


@dataclass(frozen=True)
class GroundRule:
    rule_id: str
    aspect: str
    event_kind: str
    pattern: tuple  # arg patterns, arity fixed by event kind
    guard: tuple  # guard atoms
    ops: tuple  # op templates


@dataclass
class LawDoc:
    name: str
    kind: str  # 'root' | 'delta'
    superior: Optional[str]
    default: Optional[str]  # 'block' | 'pass' | None (inherit)
    multi: frozenset
    init: tuple  # ground Terms
    meta: tuple  # (aspect, mode) pairs, declared order
    rules: tuple  # GroundRules, textual order

    def canonical(self) -> str:
        return serialize_law(self)

    def meta_mode(self, aspect: str) -> Optional[str]:
        """Explicit meta mode for an aspect, honoring '*' suffix patterns."""
        for key, mode in self.meta:
            if aspect_matches(key, aspect):
                return mode
        return None

    def initial_state(self) -> ControlState:
        return ControlState(self.init, self.multi)


def aspect_matches(pattern: str, aspect: str) -> bool:
    if pattern.endswith("*"):
        return aspect.startswith(pattern[:-1])
    return pattern == aspect


# ---------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:\\.|[^"\\])*")
  | (?P<number>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><-|<=|>=|==|!=|[<>+\-*@:(){},;])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # string | number | ident | op
    value: str
    line: int
    col: int
    pos: int


def _tokenize(text: str):
    toks = []
    pos = 0
    line = 1
    col = 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise LawSyntaxError("unexpected character %r" % text[pos], line, col)
        kind = m.lastgroup
        value = m.group()
        if kind not in ("ws", "comment"):
            toks.append(Token(kind, value, line, col, pos))
        nl = value.count("\n")
        if nl:
            line += nl
            col = len(value) - value.rfind("\n")
        else:
            col += len(value)
        pos = m.end()
    return toks


class _Cursor:
    def __init__(self, toks, text):
        self.toks = toks
        self.text = text
        self.i = 0

    def peek(self) -> Optional[Token]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self) -> Token:
        t = self.peek()
        if t is None:
            raise LawSyntaxError("unexpected end of law text")
        self.i += 1
        return t

    def at(self, value: str) -> bool:
        t = self.peek()
        return t is not None and t.value == value

    def accept(self, value: str) -> bool:
        if self.at(value):
            self.i += 1
            return True
        return False

    def expect(self, value: str) -> Token:
        t = self.peek()
        if t is None or t.value != value:
            got = "end of text" if t is None else repr(t.value)
            line = None if t is None else t.line
            col = None if t is None else t.col
            raise LawSyntaxError("expected %r, got %s" % (value, got), line, col)
        self.i += 1
        return t

    def err(self, msg):
        t = self.peek()
        raise LawSyntaxError(msg, t.line if t else None, t.col if t else None)

    def word(self) -> str:
        """A maximal run of adjacent tokens (no intervening whitespace).

        Used for law names, hashes, and aspect keys, which may contain
        '-', ':' and '*' (e.g. ``send:rc``, ``interdivision-send``, ``send:*``).
        """
        t = self.next()
        if t.kind not in ("ident", "number") and t.value not in ("*",):
            raise LawSyntaxError("expected a word", t.line, t.col)
        parts = [t.value]
        end = t.pos + len(t.value)
        while True:
            nxt = self.peek()
            if nxt is None or nxt.pos != end:
                break
            if nxt.kind in ("ident", "number") or nxt.value in ("-", ":", "*"):
                parts.append(nxt.value)
                end = nxt.pos + len(nxt.value)
                self.i += 1
            else:
                break
        return "".join(parts)


def _unquote(raw: str) -> str:
    body = raw[1:-1]
    out = []
    i = 0
    while i < len(body):
        if body[i] == "\\" and i + 1 < len(body):
            out.append(body[i + 1])
            i += 2
        else:
            out.append(body[i])
            i += 1
    return "".join(out)


# ---------------------------------------------------------------------------
# parser


def parse_law(text: str) -> LawDoc:
    cur = _Cursor(_tokenize(text), text)
    cur.expect("law")
    name = cur.word()
    superior = None
    if cur.accept("extends"):
        superior = cur.word()
    default = None
    if cur.accept("default"):
        t = cur.next()
        if t.value not in ("block", "pass"):
            raise LawSyntaxError("default must be 'block' or 'pass'", t.line, t.col)
        default = t.value
    multi = []
    if cur.accept("multi"):
        cur.expect("{")
        while not cur.accept("}"):
            t = cur.next()
            if t.kind != "ident":
                raise LawSyntaxError("expected functor name", t.line, t.col)
            multi.append(t.value)
            if not cur.at("}"):
                cur.expect(";")
    init = []
    if cur.accept("init"):
        cur.expect("{")
        while not cur.accept("}"):
            pt = _parse_pterm(cur)
            init.append(_ground(pt, cur))
            if not cur.at("}"):
                cur.expect(";")
    meta = []
    if cur.accept("meta"):
        cur.expect("{")
        while not cur.accept("}"):
            key = cur.word()
            mode = cur.word()
            if mode not in META_MODES:
                cur.err("unknown meta mode %r" % mode)
            meta.append((key, mode))
            if not cur.at("}"):
                cur.expect(";")
    rules = []
    while cur.accept("rule"):
        rules.append(_parse_rule(cur))
    t = cur.peek()
    if t is not None:
        raise LawSyntaxError("unexpected %r" % t.value, t.line, t.col)
    kind = "root" if superior is None else "delta"
    if kind == "root" and default is None:
        raise LawSyntaxError("root law must declare a default directive")
    doc = LawDoc(
        name=name,
        kind=kind,
        superior=superior,
        default=default,
        multi=frozenset(multi),
        init=tuple(init),
        meta=tuple(meta),
        rules=tuple(rules),
    )
    for rule in doc.rules:
        _check_rule(rule)
    return doc


def _parse_rule(cur: _Cursor) -> GroundRule:
    rule_id = cur.word()
    cur.expect("aspect")
    aspect = cur.word()
    cur.expect("on")
    kind_tok = cur.next()
    kind = kind_tok.value
    if kind not in EVENT_KINDS:
        raise LawSyntaxError("unknown event kind %r" % kind, kind_tok.line, kind_tok.col)
    cur.expect("(")
    pattern = []
    if not cur.at(")"):
        while True:
            pattern.append(_parse_pattern_arg(cur))
            if not cur.accept(","):
                break
    cur.expect(")")
    if len(pattern) != EVENT_KINDS[kind]:
        raise LawSyntaxError(
            "event %s takes %d pattern arguments, got %d"
            % (kind, EVENT_KINDS[kind], len(pattern)),
            kind_tok.line,
            kind_tok.col,
        )
    guard = []
    if cur.accept("when"):
        while True:
            guard.append(_parse_guard_atom(cur))
            if not cur.accept(","):
                break
    cur.expect("do")
    cur.expect("{")
    ops = []
    while not cur.accept("}"):
        ops.append(_parse_op(cur))
        if not cur.at("}"):
            cur.expect(";")
    return GroundRule(rule_id, aspect, kind, tuple(pattern), tuple(guard), tuple(ops))


def _parse_pattern_arg(cur: _Cursor):
    t = cur.peek()
    if t is None:
        cur.err("unexpected end of pattern")
    if t.value == "_":
        cur.next()
        return WILDCARD
    node = _parse_expr(cur)
    _reject_arith(node, cur)
    return node


def _reject_arith(node, cur):
    if isinstance(node, (BinExpr, FunctorOf)):
        cur.err("arithmetic is not allowed in match patterns")
    if isinstance(node, PTerm):
        for a in node.args:
            _reject_arith(a, cur)


def _parse_guard_atom(cur: _Cursor):
    mark = cur.i
    # try a state query first: <pterm> @ CS
    try:
        pt = _parse_pterm(cur)
        if cur.accept("@"):
            cs = cur.next()
            if cs.value != "CS":
                raise LawSyntaxError("state query must end in @CS", cs.line, cs.col)
            return StateQuery(pt)
        cur.i = mark
    except LawSyntaxError:
        cur.i = mark
    left = _parse_expr(cur)
    t = cur.next()
    if t.value not in ("==", "!=", "<", "<=", ">", ">="):
        raise LawSyntaxError("expected comparison operator", t.line, t.col)
    right = _parse_expr(cur)
    return Comparison(t.value, left, right)


def _parse_expr(cur: _Cursor):
    node = _parse_primary(cur)
    while True:
        t = cur.peek()
        if t is not None and t.value in ("+", "-"):
            cur.next()
            right = _parse_primary(cur)
            node = BinExpr(t.value, node, right)
        else:
            return node


def _parse_primary(cur: _Cursor):
    t = cur.peek()
    if t is None:
        cur.err("unexpected end of expression")
    if t.value == "(":
        cur.next()
        node = _parse_expr(cur)
        cur.expect(")")
        return node
    if t.kind == "number":
        cur.next()
        return int(t.value)
    if t.value == "-":
        cur.next()
        n = cur.next()
        if n.kind != "number":
            raise LawSyntaxError("expected number after unary minus", n.line, n.col)
        return -int(n.value)
    if t.kind == "string":
        cur.next()
        return _unquote(t.value)
    if t.kind == "ident":
        if t.value == "functor":
            nxt = cur.toks[cur.i + 1] if cur.i + 1 < len(cur.toks) else None
            if nxt is not None and nxt.value == "(":
                cur.next()
                cur.expect("(")
                v = cur.next()
                if not _is_var_name(v.value):
                    raise LawSyntaxError("functor() takes a variable", v.line, v.col)
                cur.expect(")")
                return FunctorOf(Var(v.value))
        if _is_var_name(t.value):
            cur.next()
            return Var(t.value)
        return _parse_pterm_or_atom(cur)
    cur.err("unexpected %r in expression" % t.value)


def _is_var_name(name: str) -> bool:
    return bool(name) and (name[0].isupper())


def _parse_pterm_or_atom(cur: _Cursor):
    t = cur.next()
    if t.kind != "ident":
        raise LawSyntaxError("expected term or atom", t.line, t.col)
    nxt = cur.peek()
    if nxt is not None and nxt.value == "(" and nxt.pos == t.pos + len(t.value):
        args = []
        cur.next()
        if not cur.at(")"):
            while True:
                a = cur.peek()
                if a is not None and a.value == "_":
                    cur.next()
                    args.append(WILDCARD)
                else:
                    args.append(_parse_expr(cur))
                if not cur.accept(","):
                    break
        cur.expect(")")
        return PTerm(t.value, tuple(args))
    # bare lowercase atom: a string literal
    return t.value


def _parse_pterm(cur: _Cursor) -> PTerm:
    node = _parse_pterm_or_atom(cur)
    if isinstance(node, str):
        return PTerm(node, ())
    if isinstance(node, PTerm):
        return node
    cur.err("expected a term")


def _parse_op(cur: _Cursor):
    t = cur.next()
    kw = t.value
    if kw == "forward":
        if cur.at("("):
            cur.next()
            target = _parse_expr(cur)
            cur.expect(",")
            payload = _parse_expr(cur)
            cur.expect(")")
            return TForward(target, payload)
        return TForward()
    if kw == "deliver":
        if cur.at("("):
            cur.next()
            payload = _parse_expr(cur)
            cur.expect(")")
            return TDeliver(payload)
        return TDeliver()
    if kw == "replace":
        old = _parse_pterm(cur)
        cur.expect("<-")
        new = _parse_pterm(cur)
        return TReplace(old, new)
    if kw == "add":
        return TAdd(_parse_pterm(cur))
    if kw == "remove":
        return TRemove(_parse_pterm(cur))
    if kw == "oblige":
        name = _parse_pterm(cur)
        cur.expect("in")
        due = _parse_expr(cur)
        return TOblige(name, due)
    if kw == "repeal":
        return TRepeal(_parse_pterm(cur))
    if kw == "audit":
        return TAudit()
    if kw == "block":
        if cur.at("("):
            cur.next()
            s = cur.next()
            if s.kind != "string":
                raise LawSyntaxError("block reason must be a string", s.line, s.col)
            cur.expect(")")
            return TBlock(_unquote(s.value))
        return TBlock()
    raise LawSyntaxError("unknown operation %r" % kw, t.line, t.col)


def _ground(pt: PTerm, cur) -> Term:
    args = []
    for a in pt.args:
        if isinstance(a, PTerm):
            args.append(_ground(a, cur))
        elif isinstance(a, (int, str)):
            args.append(a)
        else:
            cur.err("init terms must be ground")
    return Term(pt.functor, tuple(args))


# ---------------------------------------------------------------------------
# static checks


def _check_rule(rule: GroundRule):
    bound = set()
    for a in rule.pattern:
        _collect_vars(a, bound)
    for atom in rule.guard:
        if isinstance(atom, StateQuery):
            _collect_vars(atom.pattern, bound)
        else:
            for side in (atom.left, atom.right):
                for v in _expr_vars(side):
                    if v not in bound:
                        raise LawSyntaxError(
                            "unbound variable %s in guard of rule %s" % (v, rule.rule_id)
                        )
    for op in rule.ops:
        for v in _op_vars(op):
            if v not in bound:
                raise LawSyntaxError(
                    "unbound variable %s in operations of rule %s" % (v, rule.rule_id)
                )
    for op in rule.ops:
        if isinstance(op, TForward) and rule.event_kind not in ("sent", "obligationDue"):
            raise LawSyntaxError(
                "forward is only valid for sent/obligationDue rules (rule %s)" % rule.rule_id
            )
        if isinstance(op, TDeliver) and rule.event_kind not in ("arrived", "obligationDue"):
            raise LawSyntaxError(
                "deliver is only valid for arrived/obligationDue rules (rule %s)" % rule.rule_id
            )
        if isinstance(op, TForward) and rule.event_kind == "obligationDue" and op.target is None:
            raise LawSyntaxError(
                "forward in an obligationDue rule needs explicit target (rule %s)" % rule.rule_id
            )
        if isinstance(op, TDeliver) and rule.event_kind == "obligationDue" and op.payload is None:
            raise LawSyntaxError(
                "deliver in an obligationDue rule needs explicit payload (rule %s)" % rule.rule_id
            )


def _collect_vars(node, acc: set):
    if isinstance(node, Var):
        acc.add(node.name)
    elif isinstance(node, PTerm):
        for a in node.args:
            _collect_vars(a, acc)


def _expr_vars(node):
    if isinstance(node, Var):
        yield node.name
    elif isinstance(node, FunctorOf):
        yield node.var.name
    elif isinstance(node, BinExpr):
        yield from _expr_vars(node.left)
        yield from _expr_vars(node.right)
    elif isinstance(node, PTerm):
        for a in node.args:
            yield from _expr_vars(a)


def _op_vars(op):
    if isinstance(op, TForward):
        if op.target is not None:
            yield from _expr_vars(op.target)
        if op.payload is not None:
            yield from _expr_vars(op.payload)
    elif isinstance(op, TDeliver):
        if op.payload is not None:
            yield from _expr_vars(op.payload)
    elif isinstance(op, TReplace):
        yield from _expr_vars(op.old)
        yield from _expr_vars(op.new)
    elif isinstance(op, (TAdd, TRemove)):
        yield from _expr_vars(op.term)
    elif isinstance(op, TOblige):
        yield from _expr_vars(op.name)
        yield from _expr_vars(op.due_in)
    elif isinstance(op, TRepeal):
        yield from _expr_vars(op.name)


# ---------------------------------------------------------------------------
# canonical serialization


def serialize_law(doc: LawDoc) -> str:
    lines = ["law %s" % doc.name]
    if doc.superior is not None:
        lines.append("extends %s" % doc.superior)
    if doc.default is not None:
        lines.append("default %s" % doc.default)
    if doc.multi:
        lines.append("multi { %s }" % "; ".join(sorted(doc.multi)))
    if doc.init:
        lines.append("init { %s }" % "; ".join(t.canonical() for t in doc.init))
    if doc.meta:
        lines.append("meta { %s }" % "; ".join("%s %s" % km for km in doc.meta))
    for r in doc.rules:
        lines.append(_render_rule(r))
    return "\n".join(lines) + "\n"


def _render_rule(r: GroundRule) -> str:
    head = "rule %s aspect %s on %s(%s)" % (
        r.rule_id,
        r.aspect,
        r.event_kind,
        ",".join(_render_node(a) for a in r.pattern),
    )
    if r.guard:
        head += " when " + ", ".join(_render_atom(a) for a in r.guard)
    body = "; ".join(_render_op(o) for o in r.ops)
    return "%s do { %s }" % (head, body)


def _render_node(node) -> str:
    if node is WILDCARD:
        return "_"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, int):
        return str(node)
    if isinstance(node, str):
        return '"%s"' % node.replace("\\", "\\\\").replace('"', '\\"')
    if isinstance(node, PTerm):
        # zero-argument term patterns keep their parentheses so they do not
        # re-read as bare string atoms
        return "%s(%s)" % (node.functor, ",".join(_render_node(a) for a in node.args))
    if isinstance(node, BinExpr):
        return "(%s %s %s)" % (_render_node(node.left), node.op, _render_node(node.right))
    if isinstance(node, FunctorOf):
        return "functor(%s)" % node.var.name
    raise FdsError("cannot render %r" % (node,))


def _render_atom(atom) -> str:
    if isinstance(atom, StateQuery):
        return "%s@CS" % _render_node(atom.pattern)
    return "%s %s %s" % (_render_node(atom.left), atom.op, _render_node(atom.right))


def _render_op(op) -> str:
    if isinstance(op, TForward):
        if op.target is None:
            return "forward"
        return "forward(%s, %s)" % (_render_node(op.target), _render_node(op.payload))
    if isinstance(op, TDeliver):
        if op.payload is None:
            return "deliver"
        return "deliver(%s)" % _render_node(op.payload)
    if isinstance(op, TReplace):
        return "replace %s <- %s" % (_render_node(op.old), _render_node(op.new))
    if isinstance(op, TAdd):
        return "add %s" % _render_node(op.term)
    if isinstance(op, TRemove):
        return "remove %s" % _render_node(op.term)
    if isinstance(op, TOblige):
        return "oblige %s in %s" % (_render_node(op.name), _render_node(op.due_in))
    if isinstance(op, TRepeal):
        return "repeal %s" % _render_node(op.name)
    if isinstance(op, TAudit):
        return "audit"
    if isinstance(op, TBlock):
        if op.reason:
            return 'block("%s")' % op.reason.replace("\\", "\\\\").replace('"', '\\"')
        return "block"
    raise FdsError("cannot render op %r" % (op,))


# ---------------------------------------------------------------------------
# matching and evaluation


def event_args(event: Event, state: ControlState):
    """Positional view of an event as seen by rule patterns."""
    if isinstance(event, Adopted):
        return "adopted", (event.cert,)
    if isinstance(event, Sent):
        return "sent", (_self_name(state), event.payload, event.target.name)
    if isinstance(event, Arrived):
        return "arrived", (event.sender.name, event.payload, _self_name(state))
    if isinstance(event, ObligationDue):
        return "obligationDue", (event.name,)
    return "exception", (event.reason,)


def _self_name(state: ControlState) -> str:
    for t in state.lookup("name"):
        if t.args and isinstance(t.args[0], str):
            return t.args[0]
    return ""


def match_pattern(pattern: tuple, args: tuple, bindings=None):
    """Unify a rule's pattern with positional event args.

    Returns the (possibly extended) bindings dict, or None on mismatch.
    """
    b = dict(bindings or {})
    for p, v in zip(pattern, args):
        if not _match_node(p, v, b):
            return None
    return b


def _match_node(p, v, b) -> bool:
    if p is WILDCARD:
        return True
    if isinstance(p, Var):
        if p.name in b:
            return b[p.name] == v
        b[p.name] = v
        return True
    if isinstance(p, str):
        # a bare atom matches both the string and the zero-argument term
        if isinstance(v, Term):
            return not v.args and v.functor == p
        return p == v
    if isinstance(p, int):
        return p == v
    if isinstance(p, PTerm):
        if not isinstance(v, Term) or v.functor != p.functor or len(v.args) != len(p.args):
            return False
        return all(_match_node(pa, va, b) for pa, va in zip(p.args, v.args))
    raise GuardError("invalid pattern node %r" % (p,))


def eval_guard(guard: tuple, bindings: dict, state: ControlState):
    """Evaluate a guard conjunction. Returns extended bindings or None.

    State queries backtrack over candidate terms (in canonical order), so a
    later comparison can reject one candidate and the query will try the
    next; the first complete solution wins, deterministically.
    """
    return _guard_from(guard, 0, dict(bindings), state)


def _guard_from(guard: tuple, i: int, b: dict, state: ControlState):
    if i == len(guard):
        return b
    atom = guard[i]
    if isinstance(atom, StateQuery):
        pat = atom.pattern
        for cand in state.lookup(pat.functor):
            if len(cand.args) != len(pat.args):
                continue
            trial = dict(b)
            if all(_match_node(p, v, trial) for p, v in zip(pat.args, cand.args)):
                out = _guard_from(guard, i + 1, trial, state)
                if out is not None:
                    return out
        return None
    if not _eval_comparison(atom, b):
        return None
    return _guard_from(guard, i + 1, b, state)


def _eval_comparison(cmp: Comparison, b: dict) -> bool:
    left = eval_expr(cmp.left, b)
    right = eval_expr(cmp.right, b)
    if cmp.op == "==":
        return left == right
    if cmp.op == "!=":
        return left != right
    if not isinstance(left, int) or not isinstance(right, int):
        raise GuardError("ordering comparison on non-integers: %r %s %r" % (left, cmp.op, right))
    if cmp.op == "<":
        return left < right
    if cmp.op == "<=":
        return left <= right
    if cmp.op == ">":
        return left > right
    return left >= right


def eval_expr(node, b: dict):
    if isinstance(node, int) or isinstance(node, str):
        return node
    if isinstance(node, Var):
        if node.name not in b:
            raise GuardError("unbound variable %s" % node.name)
        return b[node.name]
    if isinstance(node, FunctorOf):
        v = b.get(node.var.name)
        if not isinstance(v, Term):
            raise GuardError("functor() of a non-term value %r" % (v,))
        return v.functor
    if isinstance(node, BinExpr):
        left = eval_expr(node.left, b)
        right = eval_expr(node.right, b)
        if not isinstance(left, int) or not isinstance(right, int):
            raise GuardError("arithmetic on non-integers")
        return left + right if node.op == "+" else left - right
    if isinstance(node, PTerm):
        return instantiate_term(node, b)
    raise GuardError("cannot evaluate %r" % (node,))


def instantiate_term(pt: PTerm, b: dict) -> Term:
    args = []
    for a in pt.args:
        v = eval_expr(a, b)
        args.append(v)
    return Term(pt.functor, tuple(args))


def instantiate_ops(rule: GroundRule, b: dict, event: Event):
    ops = []
    for t in rule.ops:
        if isinstance(t, TForward):
            if t.target is None:
                assert isinstance(event, Sent)
                ops.append(Forward(event.target.name, event.payload))
            else:
                target = eval_expr(t.target, b)
                if not isinstance(target, str):
                    raise GuardError("forward target must be an agent name string")
                payload = eval_expr(t.payload, b)
                if not isinstance(payload, Term):
                    raise GuardError("forward payload must be a term")
                ops.append(Forward(target, payload))
        elif isinstance(t, TDeliver):
            if t.payload is None:
                assert isinstance(event, Arrived)
                ops.append(Deliver(event.payload))
            else:
                payload = eval_expr(t.payload, b)
                if not isinstance(payload, Term):
                    raise GuardError("deliver payload must be a term")
                ops.append(Deliver(payload))
        elif isinstance(t, TReplace):
            ops.append(StateReplace(instantiate_term(t.old, b), instantiate_term(t.new, b)))
        elif isinstance(t, TAdd):
            ops.append(StateAdd(instantiate_term(t.term, b)))
        elif isinstance(t, TRemove):
            ops.append(StateRemove(instantiate_term(t.term, b)))
        elif isinstance(t, TOblige):
            due = eval_expr(t.due_in, b)
            if not isinstance(due, int) or due < 0:
                raise GuardError("obligation due-in must be a non-negative integer")
            ops.append(ImposeObligation(instantiate_term(t.name, b), due))
        elif isinstance(t, TRepeal):
            ops.append(RepealObligation(instantiate_term(t.name, b)))
        elif isinstance(t, TAudit):
            ops.append(AuditLog())
        elif isinstance(t, TBlock):
            ops.append(Block(t.reason or "blocked-by-law"))
        else:
            raise GuardError("unknown op template %r" % (t,))
    return tuple(ops)


def first_match(doc: LawDoc, event: Event, state: ControlState, skip_aspects=()):
    """First rule of ``doc`` that fires for the event, with its ruling.

    Returns (rule, Ruling) or None. ``skip_aspects`` suppresses rules whose
    aspect is sealed higher up (runtime defense in depth).
    """
    kind, args = event_args(event, state)
    for rule in doc.rules:
        if rule.event_kind != kind:
            continue
        if any(aspect_matches(s, rule.aspect) for s in skip_aspects):
            continue
        b = match_pattern(rule.pattern, args)
        if b is None:
            continue
        b = eval_guard(rule.guard, b, state)
        if b is None:
            continue
        ops = instantiate_ops(rule, b, event)
        new_state = apply_ruling(state, Ruling(state, ops)).without_overlay()
        return rule, Ruling(new_state, ops)
    return None


def default_ruling(default: str, event: Event, state: ControlState) -> Ruling:
    """The ruling mandated by a law's default directive for an unmatched event.

    The directive only constrains send/arrive events; adoption, obligations
    and exceptions default to an empty permit.
    """
    base = state.without_overlay()
    if isinstance(event, Sent):
        if default == "block":
            return Ruling(base, (Block("no-rule"),))
        return Ruling(base, (Forward(event.target.name, event.payload),))
    if isinstance(event, Arrived):
        if default == "block":
            return Ruling(base, (Block("no-rule"),))
        return Ruling(base, (Deliver(event.payload),))
    return Ruling(base, ())


def evaluate_law(doc: LawDoc, event: Event, state: ControlState) -> Ruling:
    """Formula-style total evaluation of a single law: one ruling, always."""
    hit = first_match(doc, event, state)
    if hit is not None:
        return hit[1]
    return default_ruling(doc.default or "block", event, state)
