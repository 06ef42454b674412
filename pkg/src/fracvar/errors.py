"""Exception hierarchy shared by every fracvar module."""

from __future__ import annotations


class FracvarError(Exception):
    """Base class for all library errors."""


class DomainError(FracvarError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ParseError(FracvarError, ValueError):
    """Malformed expression source.

    ``offset`` is the 0-based byte offset into the source at which parsing
    stopped; ``expected`` describes what the parser was looking for.
    """

    def __init__(self, message: str, offset: int, expected: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.expected = expected


class UnknownIdentifier(FracvarError, ValueError):
    """An expression uses a name that was never declared."""

    def __init__(self, names):
        names = sorted(set(names))
        super().__init__("unknown identifier(s): " + ", ".join(names))
        self.names = names


class UnboundVariable(FracvarError, KeyError):
    """Evaluation was attempted without a value for a variable."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unbound variable {self.name!r}"


class EvalError(FracvarError, ArithmeticError):
    """A domain violation during expression evaluation.

    ``kind`` is one of ``Div0``, ``LnNonPositive``, ``SqrtNegative``,
    ``PowDomain`` or ``NonFinite``. When evaluating along a grid, ``index``
    holds the first offending node.
    """

    def __init__(self, kind: str, index: int | None = None, detail: str = ""):
        self.kind = kind
        self.index = index
        self.detail = detail
        super().__init__(self._message())

    def _message(self) -> str:
        msg = self.kind
        if self.detail:
            msg += f" ({self.detail})"
        if self.index is not None:
            msg += f" at node {self.index}"
        return msg

    def at_node(self, index: int) -> "EvalError":
        return EvalError(self.kind, index, self.detail)


class ProblemError(FracvarError, ValueError):
    """A problem description violates one of its structural invariants."""


class KindError(FracvarError, TypeError):
    """Operation requested for a problem kind that does not support it."""


class SingularConstraint(FracvarError):
    """The holonomic constraint cannot be solved for the second variable."""

    def __init__(self, index: int, value: float):
        super().__init__(f"|dg/dx2| = {abs(value):.3g} < 1e-10 at node {index}")
        self.index = index
        self.value = value


class RootFindFailure(FracvarError):
    """Per-node root finding for the holonomic constraint failed."""

    def __init__(self, index: int, detail: str = ""):
        super().__init__(f"no root of the constraint found at node {index}" + (f": {detail}" if detail else ""))
        self.index = index


class NonConvergence(FracvarError):
    """An iterative solver stopped before meeting its tolerances.

    The partially converged :class:`~fracvar.solvers.SolveReport` is attached
    as ``report`` when one is available.
    """

    def __init__(self, iterations: int, grad_norm: float, detail: str = "", report=None):
        msg = f"no convergence after {iterations} iterations (gradient norm {grad_norm:.3e})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.iterations = iterations
        self.grad_norm = grad_norm
        self.report = report


class AbnormalCase(FracvarError):
    """Isoperimetric solve hit an extremal of the constraint functional."""

    def __init__(self, detail: str = "", report=None):
        super().__init__("abnormal isoperimetric case" + (f": {detail}" if detail else ""))
        self.report = report
