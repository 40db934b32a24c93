"""Exception hierarchy shared by every streetnav module."""

from __future__ import annotations


class StreetNavError(Exception):
    """Base class; the CLI maps any subclass to a nonzero exit code."""


class UnknownNode(StreetNavError, KeyError):
    def __init__(self, node):
        super().__init__(node)
        self.node = node

    def __str__(self) -> str:
        return f"unknown node: {self.node!r}"


class AlreadyTerminated(StreetNavError):
    pass


class DeadEnd(StreetNavError):
    """FORWARD reached a node with no outgoing edges.

    ``state`` holds the terminated arrival state so callers can record it.
    """

    def __init__(self, state):
        super().__init__(f"dead end at node {state.node!r}")
        self.state = state


class ParseError(StreetNavError):
    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class InvariantViolation(StreetNavError):
    def __init__(self, rule: str, detail: str = ""):
        super().__init__(f"{rule}: {detail}" if detail else rule)
        self.rule = rule


class RouteInconsistent(StreetNavError):
    pass


class ConfigError(StreetNavError, ValueError):
    pass


class EmptyDataset(StreetNavError, ValueError):
    pass


class EmptyInput(StreetNavError, ValueError):
    pass


class ShapeMismatch(StreetNavError, ValueError):
    pass


class IndexOutOfRange(StreetNavError, IndexError):
    pass


class InvalidEps(StreetNavError, ValueError):
    pass


class IllegalMove(StreetNavError):
    pass


class Unreachable(StreetNavError):
    pass


class MissingLogits(StreetNavError):
    pass


class ComponentDimMismatch(StreetNavError, ValueError):
    pass
