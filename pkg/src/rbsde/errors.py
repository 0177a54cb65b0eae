"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class RbsdeError(Exception):
    exit_code = 1
    kind = "error"

    def record(self):
        return {"error": self.kind, "message": str(self), "exit_code": self.exit_code}


class ValidationError(RbsdeError, ValueError):
    exit_code = 2
    kind = "validation"


class SeparationError(ValidationError):
    kind = "separation violation"

    def __init__(self, message, gap=None, node=None, slot=None):
        super().__init__(message)
        self.gap = gap
        self.node = node
        self.slot = slot

    def record(self):
        rec = super().record()
        rec.update(gap=self.gap, node=self.node, slot=self.slot)
        return rec


class ConvergenceError(RbsdeError, RuntimeError):
    exit_code = 3
    kind = "non-convergence"

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])

    def record(self):
        rec = super().record()
        rec["trace"] = self.trace[-20:]
        return rec


class BudgetError(RbsdeError, RuntimeError):
    exit_code = 4
    kind = "oracle size limit"

    def __init__(self, message, count=None, limit=None):
        super().__init__(message)
        self.count = count
        self.limit = limit


class InvariantError(RbsdeError, AssertionError):
    """A computed object failed one of its declared invariants."""

    exit_code = 1
    kind = "invariant violation"
