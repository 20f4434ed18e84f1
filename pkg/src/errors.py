class MartingaleError(ValueError):
    """Base class for every analysis error.

    `code` is stable and machine readable, `field` optionally names the
    offending input (e.g. ``Q[1]``).
    """
    code = 'error'

    def __init__(self, message, field=None):
        super().__init__(message)
        self.message = message
        self.field = field

    def as_dict(self):
        return {'error': self.code, 'message': self.message, 'field': self.field}


class InvalidChain(MartingaleError):
    code = 'invalid_chain'


class NonStochasticRow(MartingaleError):
    code = 'non_stochastic_row'

    def __init__(self, row, deviation):
        super().__init__(f"row {row} sums to 1{deviation:+.3e}", field=f"Q[{row}]")
        self.row = row
        self.deviation = deviation


class NotErgodic(MartingaleError):
    code = 'not_ergodic'


class BadPi(MartingaleError):
    code = 'bad_pi'


class NotMeanZero(MartingaleError):
    code = 'not_mean_zero'


class CrossCheckFailed(MartingaleError):
    code = 'cross_check_failed'


class SingularSolve(MartingaleError):
    code = 'singular_solve'


class NoConvergence(MartingaleError):
    code = 'no_convergence'

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []

    def as_dict(self):
        out = super().as_dict()
        out['contraction_trace'] = self.trace
        return out


class InsufficientHorizon(MartingaleError):
    code = 'insufficient_horizon'


class HorizonExceeded(MartingaleError):
    code = 'horizon_exceeded'


class TailNotCertified(MartingaleError):
    code = 'tail_not_certified'


class RaggedColumns(MartingaleError):
    code = 'ragged_columns'


class ZeroIndex(MartingaleError):
    code = 'zero_index'


class GridTooCoarse(MartingaleError):
    code = 'grid_too_coarse'


class InvalidGrid(MartingaleError):
    code = 'invalid_grid'


class NotConjugateSymmetric(MartingaleError):
    code = 'not_conjugate_symmetric'


class DegenerateKappa(MartingaleError):
    code = 'degenerate_kappa'


class ConfigError(MartingaleError):
    code = 'bad_config'


class DocumentError(MartingaleError):
    code = 'bad_document'
