"""Exception hierarchy.

Every error carries a machine-readable ``code`` so the CLI can report
structured diagnostics without string matching.
"""

from __future__ import annotations


class SpectralError(Exception):
    code = "ERROR"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details

    def to_dict(self) -> dict:
        out = {"code": self.code, "message": str(self)}
        if self.details:
            out["details"] = {k: _plain(v) for k, v in self.details.items()}
        return out


def _plain(v):
    if isinstance(v, complex):
        return [v.real, v.imag]
    try:
        return float(v)
    except (TypeError, ValueError):
        return str(v)


# polyexp
class NonUnitEigenvalueAtZero(SpectralError):
    code = "NON_UNIT_EIGENVALUE_AT_ZERO"


class ResidualCumulant(SpectralError):
    code = "RESIDUAL_CUMULANT"


class InsufficientJetOrder(SpectralError):
    code = "INSUFFICIENT_JET_ORDER"


class NotSolvable(SpectralError):
    code = "NOT_SOLVABLE"


class ImaginaryResidue(SpectralError):
    code = "IMAGINARY_RESIDUE"


class NotLattice(SpectralError):
    code = "NOT_LATTICE"


class UnsupportedTestFunction(SpectralError):
    code = "UNSUPPORTED_TEST_FUNCTION"


# models
class ModelSpecError(SpectralError):
    code = "MODEL_SPEC"


class Reducible(ModelSpecError):
    code = "REDUCIBLE"


class Periodic(ModelSpecError):
    code = "PERIODIC"


class DegeneratePerron(ModelSpecError):
    code = "DEGENERATE_PERRON"


class GridTooCoarse(ModelSpecError):
    code = "GRID_TOO_COARSE"


class NoSpectralGap(ModelSpecError):
    code = "NO_SPECTRAL_GAP"


class RangeTooLarge(ModelSpecError):
    code = "RANGE_TOO_LARGE"


# perturb
class NoConvergence(SpectralError):
    code = "NO_CONVERGENCE"


class NonSimpleDominant(SpectralError):
    code = "NON_SIMPLE_DOMINANT"


class JetDisagreement(SpectralError):
    code = "JET_DISAGREEMENT"


class ZeroVariance(SpectralError):
    code = "ZERO_VARIANCE"


class VarianceMismatch(SpectralError):
    code = "VARIANCE_MISMATCH"


class SlowDecay(SpectralError):
    code = "SLOW_DECAY"


class ProjectionJetFailure(SpectralError):
    code = "PROJECTION_JET_FAILURE"


class IllConditioned(SpectralError):
    code = "ILL_CONDITIONED"


# oracle
class TailBoundExceeded(SpectralError):
    code = "TAIL_BOUND_EXCEEDED"


class ResidualImaginary(SpectralError):
    code = "RESIDUAL_IMAGINARY"


# cli / config
class ConfigError(SpectralError):
    code = "CONFIG_INVALID"


class ConfigMissingSeed(ConfigError):
    code = "CONFIG_MISSING_SEED"
