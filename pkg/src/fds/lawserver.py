"""Law server: the authoritative, self-regulating home of published laws.

The server plays two roles. As a plain service it answers law-text and
law-path queries over the envelope request kinds, so a controller can
fetch any law it is asked to enforce. As an L-agent it also accepts
governed maintenance messages (publishing new deltas); whether a given
sender may do that at all is decided by the law the server itself runs
under, not by this code.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

from .core import FdsError, Term
from .hierarchy import Framework, FrameworkError
from .lawlang import parse_law
from .transport import Envelope, make_envelope

SERVER_NAME = "law-server"


class LawServer:
    """Query and maintenance front-end over a framework."""

    def __init__(self, framework: Framework, name: str = SERVER_NAME):
        self.framework = framework
        self.name = name

    # -- plain query protocol (request/response envelope kinds) ------------

    def serve_envelope(self, env: Envelope, now: int = 0) -> Envelope:
        if env.kind == "law-text-request":
            h = _string_arg(env.payload_term(), 0)
            reply = self._text_reply(h)
        elif env.kind == "law-path-request":
            h = _string_arg(env.payload_term(), 0)
            reply = self._path_reply(h)
        else:
            raise FdsError("not a law-server request kind: %s" % env.kind)
        kind = env.kind.replace("request", "response")
        root = self.framework.root
        return make_envelope(kind, self.name, "", (root,) if root else ("-",),
                             env.sender_name, reply, now)

    def _text_reply(self, h: str) -> Term:
        try:
            return Term("lawText", (h, self.framework.get_text(h)))
        except FrameworkError as exc:
            return Term("lawError", (h, str(exc)))

    def _path_reply(self, h: str) -> Term:
        try:
            path = self.framework.resolve_path(h)
        except FrameworkError as exc:
            return Term("lawError", (h, str(exc)))
        return Term("lawPath", (h, Term("path", tuple(path.hashes))))

    # -- governed maintenance and query, as an L-agent ---------------------

    def bind(self, pool, name: str = None):
        self._pool = pool
        if name:
            self.name = name

    def on_deliver(self, sender: str, payload: Term):
        reply = self.handle(payload)
        if reply is not None:
            self._pool.send(self.name, sender, reply)

    def on_blocked(self, target, payload, reason):
        pass

    def handle(self, payload: Term) -> Optional[Term]:
        f = payload.functor
        if f == "lawTextRequest":
            return self._text_reply(_string_arg(payload, 0))
        if f == "lawPathRequest":
            return self._path_reply(_string_arg(payload, 0))
        if f == "publishDelta":
            superior = _string_arg(payload, 0)
            text = _string_arg(payload, 1)
            try:
                doc = parse_law(text)
                h = self.framework.publish_delta(superior, doc)
                return Term("published", (h,))
            except FdsError as exc:
                return Term("publishError", (str(exc),))
        if f == "publishRoot":
            try:
                doc = parse_law(_string_arg(payload, 0))
                h = self.framework.publish_root(doc)
                return Term("published", (h,))
            except FdsError as exc:
                return Term("publishError", (str(exc),))
        return None


def _string_arg(t: Term, i: int) -> str:
    if i >= len(t.args) or not isinstance(t.args[i], str):
        raise FdsError("malformed law-server request: %s" % t.canonical())
    return t.args[i]
