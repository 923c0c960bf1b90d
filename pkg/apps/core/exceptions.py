"""Error hierarchy shared by every predpack app.

Each error carries the process exit code the scenario command reports and,
when a specific input is at fault, the dotted name of that field.
"""

EXIT_NUMERICAL_FAILURE = 1
EXIT_CONFIG_ERROR = 2


class PredpackError(Exception):
    exit_code = EXIT_NUMERICAL_FAILURE

    def __init__(self, message, field=None):
        super().__init__(message)
        self.message = message
        self.field = field

    def to_dict(self):
        """Machine-readable error document written next to failed runs"""
        return {
            'error': {
                'type': type(self).__name__,
                'message': self.message,
                'field': self.field,
            }
        }


class ParamError(PredpackError):
    """Invalid or unsupported model coefficients"""
    exit_code = EXIT_CONFIG_ERROR


class GridError(PredpackError):
    """Degenerate geometry, shape mismatch or unsupported spectrum request"""
    exit_code = EXIT_CONFIG_ERROR


class DimensionError(GridError):
    pass


class StepError(PredpackError):
    """Time step rejected too many times"""


class FitError(PredpackError):
    pass


class SpectrumError(PredpackError):
    """Not enough eigenvalues to settle a stability or counting question"""


class ResonanceError(PredpackError):
    pass


class SingularJacobian(PredpackError):
    pass


class NoConvergence(PredpackError):
    pass


class BranchError(PredpackError):
    pass


class InsufficientData(PredpackError):
    pass


class DomainError(PredpackError):
    """Input outside the domain of an identity (e.g. log of a non-positive density)"""
