"""
Exception hierarchy for the coherent quantum filter toolkit.

Every error carries a human readable message plus optional details, and the
exit code the command line front end reports for it.
"""

from typing import List, Optional


class CQFError(Exception):
    """Base exception for all toolkit errors"""

    exit_code = 1

    def __init__(self, message: str, details: Optional[str] = None):
        self.message = message
        self.details = details
        super().__init__(self.message)


class InputError(CQFError):
    """Invalid user input or inconsistent specification data"""

    exit_code = 1


class NumericalError(CQFError):
    """A numerical precondition or procedure failed"""

    exit_code = 2


class InvalidSpec(InputError):
    """Specification violates one or more type invariants"""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__(
            f"Invalid specification ({len(self.violations)} violation(s))",
            details="; ".join(self.violations),
        )


class DimensionMismatch(InputError):
    """Matrix shapes are incompatible"""


class OddDimension(InputError):
    """A field dimension that must be even is odd"""


class NonFiniteMatrix(InputError):
    """A matrix contains NaN or Inf entries"""


class NotHurwitz(NumericalError):
    """A dynamics matrix is not Hurwitz with the required margin"""

    def __init__(self, which: str, abscissa: float, margin: float):
        self.which = which
        self.abscissa = abscissa
        self.margin = margin
        super().__init__(
            f"{which} matrix is not Hurwitz",
            details=f"spectral abscissa {abscissa:.6g} >= -{margin:.3g}",
        )


class SingularSystem(NumericalError):
    """Linear solve failed"""


class ConvergenceFailure(NumericalError):
    """Eigenvalue iteration did not converge"""


class GenerationFailed(NumericalError):
    """Random instance generator exhausted its rejection budget"""


class NotHurwitzAfterShrink(NumericalError):
    """Finite-difference step could not be shrunk into the Hurwitz region"""


class StepCollapse(NumericalError):
    """Line search step collapsed without an acceptable move"""


class AllStartsFailed(NumericalError):
    """No multistart run converged"""


class Stat1Violated(NumericalError):
    """The first stationarity condition fails, so the closed form does not apply"""
