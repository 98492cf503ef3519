"""Exception hierarchy shared by all adiapump modules."""


class AdiapumpError(Exception):
    """Base class for every error raised by this package."""


class ModelInvalid(AdiapumpError):
    """A model description is malformed or inconsistent."""


class ConfigInvalid(AdiapumpError):
    """A run configuration failed schema validation."""


class BandEdge(AdiapumpError):
    """Energy too close to (or outside) the lead band edges."""


class SingularMatching(AdiapumpError):
    """The scattering linear system is singular (bound state at the energy)."""


class DerivativeUnstable(AdiapumpError):
    """Richardson estimates of dS/ds disagree beyond tolerance."""


class NonUnitaryInput(AdiapumpError):
    """A scattering matrix handed to the BPT integrand is not unitary."""


class QuadratureNotConverged(AdiapumpError):
    """Energy quadrature did not reach the requested accuracy."""


class GridTooCoarse(AdiapumpError):
    """Epoch grid halving changed the cycle charge beyond tolerance."""


class PhaseUnwrapAmbiguous(AdiapumpError):
    """Consecutive samples of arg det S differ by pi or more."""


class AmmeterOutOfRange(AdiapumpError):
    """Ammeter position plus switch width does not fit inside the lead."""


class PlanViolation(AdiapumpError):
    """Propagation plan violates the lead-length truncation bound."""


class LinearSolveFailure(AdiapumpError):
    """Sparse factorization or solve failed during time stepping."""


class BudgetExceeded(AdiapumpError):
    """A run exceeded its wall-time budget and was aborted."""


class UnsupportedFunction(AdiapumpError):
    """A test function violates the low-energy support precondition."""


class EmptyWindow(AdiapumpError):
    """No eigenvalue of the Hamiltonian lies in the requested window."""


class MismatchedRuns(AdiapumpError):
    """Two outputs being compared do not describe the same setup."""
