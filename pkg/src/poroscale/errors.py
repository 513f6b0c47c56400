"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
1 configuration, 2 degeneracy, 3 solver, 4 validity horizon.
"""
from __future__ import annotations


class PoroscaleError(Exception):
    exit_code = 1

    def reason(self) -> str:
        """Single-line machine-parsable reason."""
        msg = " ".join(str(self).split())
        return f"{type(self).__name__}: {msg}"


class ConfigError(PoroscaleError):
    exit_code = 1

    def __init__(self, problems, line: int | None = None):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        self.line = line
        text = "; ".join(self.problems)
        if line is not None:
            text = f"line {line}: {text}"
        super().__init__(text)


# --- degeneracy (exit code 2) ---

class DegeneracyError(PoroscaleError):
    exit_code = 2


class InvalidGeometryError(DegeneracyError):
    pass


class InvalidDeformationError(DegeneracyError):
    pass


class DegenerateGeometryError(DegeneracyError):
    pass


class NoSolutionError(DegeneracyError):
    pass


class DegenerateSampleError(DegeneracyError):
    def __init__(self, msg: str, index: int | None = None):
        super().__init__(msg)
        self.index = index


class ReparametrizationError(DegeneracyError):
    pass


class CoercivityError(DegeneracyError):
    pass


class BandViolationError(DegeneracyError):
    """Porosity left the non-degeneracy band during a macroscopic run."""

    def __init__(self, msg: str, node: int | None = None, t: float | None = None):
        super().__init__(msg)
        self.node = node
        self.t = t


# --- solver failures (exit code 3) ---

class SolverError(PoroscaleError):
    exit_code = 3


class SolverFailureError(SolverError):
    def __init__(self, msg: str, residual_history=None):
        super().__init__(msg)
        self.residual_history = list(residual_history or [])


class NonlinearityError(SolverError):
    pass


class StabilityError(SolverError):
    pass


# --- validity horizon (exit code 4) ---

class ValidityHorizonError(PoroscaleError):
    exit_code = 4


class PathValidityError(ValidityHorizonError):
    pass


class FoldError(ValidityHorizonError):
    pass


class OutOfDomainError(ValidityHorizonError):
    pass


class ExtrapolationError(ValidityHorizonError):
    pass
