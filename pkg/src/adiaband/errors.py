class AdiabandError(Exception):
    """Base class for errors raised by the engine."""


class GridMismatchError(AdiabandError):
    pass


class LatticeError(AdiabandError):
    pass


class StencilError(AdiabandError):
    pass


class GapError(AdiabandError):
    """Spectral gap condition violated."""


class ContourError(AdiabandError):
    pass


class QuadratureError(AdiabandError):
    pass


class CompatibilityError(AdiabandError):
    """A proved identity of the recursion failed numerically."""


class RankError(AdiabandError):
    pass


class GaugeObstructionError(AdiabandError):
    pass


class ResolutionError(AdiabandError):
    pass


class FiberDegreeError(AdiabandError):
    pass


class SizeCapError(AdiabandError):
    pass


class ConvergenceError(AdiabandError):
    pass


class BracketError(AdiabandError):
    pass


class FlatCurveError(AdiabandError):
    pass


class WindowError(AdiabandError):
    pass


class FloorError(AdiabandError):
    """All points of a slope fit sit at the numerical floor."""


class ConfigError(AdiabandError):
    pass
