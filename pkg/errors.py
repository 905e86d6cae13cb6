"""
Exception hierarchy for the hybrid AC/DC network toolkit
Every error raised by the library derives from HybridGridError
"""

from typing import Any, Optional


class HybridGridError(Exception):
    """Base class for all library errors"""


class NetworkError(HybridGridError):
    """A network description violates a structural invariant"""

    def __init__(self, message: str, element: Optional[str] = None):
        """
        Args:
            message: Human readable description
            element: Identifier of the offending bus, line or converter
        """
        self.element = element
        if element is not None:
            message = f"{message} [{element}]"
        super().__init__(message)


class DisconnectedSubsystem(NetworkError):
    pass


class MixedDomainLine(NetworkError):
    pass


class CrossSubsystemLine(NetworkError):
    pass


class DanglingConverter(NetworkError):
    pass


class NonzeroCostAtConverterBus(NetworkError):
    pass


class DisconnectedCommGraph(NetworkError):
    pass


class InvalidParameter(NetworkError):
    pass


class UnknownBus(NetworkError):
    pass


class UnknownSubsystem(NetworkError):
    pass


class ConfigError(HybridGridError):
    """Controller configuration is inconsistent with the network"""


class ModeMismatch(HybridGridError):
    """A controller law was called for a mode it does not belong to"""


class DimensionMismatch(HybridGridError):
    """State vector lengths do not match the network index maps"""


class NegativeDelay(HybridGridError, ValueError):
    pass


class NumericalError(HybridGridError):
    """Integration or equilibrium solve failed"""


class NonFiniteState(NumericalError):
    def __init__(self, time: float, detail: str = ""):
        self.time = time
        msg = f"state diverged at t={time:.6g} s"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SingularJacobian(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, best: Any, residual_norm: float, iterations: int):
        self.best = best
        self.residual_norm = residual_norm
        self.iterations = iterations
        super().__init__(
            f"Newton did not converge after {iterations} iterations "
            f"(residual {residual_norm:.3e})"
        )


class SecurityViolation(NumericalError):
    def __init__(self, point: Any, max_angle: float):
        self.point = point
        self.max_angle = max_angle
        super().__init__(
            f"equilibrium violates |eta| < pi/2 (max |eta| = {max_angle:.4f} rad)"
        )


class ScenarioError(HybridGridError):
    """Scenario document could not be read"""


class ParseError(ScenarioError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SchemaError(ScenarioError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class AllCostsInfinite(ConfigError):
    """No source has a finite cost (Q~ = 0)"""
