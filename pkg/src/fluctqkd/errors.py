"""Exception types raised across the package."""


class FluctQKDError(Exception):
    """Base class for all package errors."""


class TailTooLarge(FluctQKDError):
    def __init__(self, cutoff, tail_mass, tolerance):
        self.cutoff = cutoff
        self.tail_mass = tail_mass
        self.tolerance = tolerance
        super().__init__(
            f"photon-number cutoff J={cutoff} leaves tail mass {tail_mass:.3e} "
            f"(tolerance {tolerance:.1e}); increase J"
        )


class DegenerateSource(FluctQKDError):
    """A source branch has zero probability, so its ratios are undefined."""


class ConditionViolated(FluctQKDError):
    """The ratio envelope is not nonincreasing in photon number."""


class DegenerateDenominator(FluctQKDError):
    """A bound's denominator vanished (e.g. r_max[1] == r_max[2])."""


class MissingVacuumSource(FluctQKDError):
    """A vacuum-source bound was requested for a protocol with p_0 = 0."""


class GridTooCoarse(FluctQKDError):
    """A fluctuation quadrature grid failed its mass or support self-check."""


class ConfigError(FluctQKDError):
    """Invalid run configuration."""
