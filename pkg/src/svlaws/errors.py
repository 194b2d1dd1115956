"""Semantic exception hierarchy shared by all svlaws modules."""


class SvlawsError(Exception):
    """Base class for all svlaws errors."""


class DomainError(SvlawsError, ValueError):
    """Evaluation requested outside the supported numerical domain
    (inside or too close to the spectral bulk, subcritical signal, ...)."""


class DimensionMismatchError(SvlawsError, ValueError):
    """Inputs with incompatible shapes."""


class DegenerateSampleError(SvlawsError, ValueError):
    """Sample has no usable variation (e.g. constant residuals)."""


class NoOutlierError(SvlawsError):
    """A requested singular value does not separate from the noise bulk."""

    def __init__(self, index, mu, edge):
        self.index = index
        self.mu = mu
        self.edge = edge
        super().__init__(
            f"squared singular value mu[{index}]={mu:.6g} does not exceed "
            f"the bulk edge gate {edge:.6g}; no supercritical outlier"
        )


class NonGaussianLimitError(SvlawsError):
    """The null law is not Gaussian for this vector/noise combination and
    no realized-noise correction path is available."""


class NegativeVarianceError(SvlawsError):
    """A computed limiting variance came out negative; the law is outside
    the validated regime for these cumulants."""


class ConfigError(SvlawsError, ValueError):
    """Invalid experiment or CLI configuration."""
