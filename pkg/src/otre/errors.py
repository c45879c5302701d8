"""Exception types shared across the otre package."""


class OtreError(Exception):
    """Base class for all otre errors."""


class ShapeMismatch(OtreError):
    """Two arrays that must agree in shape do not."""


class TooSmall(OtreError):
    """Image too small for the requested window / scale count."""


class MissingFile(OtreError):
    pass


class UnsupportedFormat(OtreError):
    pass


class CorruptData(OtreError):
    pass


class BadMagic(OtreError):
    """Weight file does not start with the OTRE magic."""


class VersionUnsupported(OtreError):
    pass


class NonFiniteParam(OtreError):
    """A layer record contains NaN or infinite parameters."""


class LipschitzViolation(OtreError):
    """A convolution kernel's spectral norm exceeds the 1-Lipschitz budget."""

    def __init__(self, layer: str, sigma: float):
        self.layer = layer
        self.sigma = sigma
        super().__init__(f"layer {layer!r}: spectral norm {sigma:.6f} > 1")


class EmptyGrid(OtreError):
    """gamma_grid_search called with no candidates."""


class MissingDir(OtreError):
    pass


class MalformedLabels(OtreError):
    """Labels CSV is malformed (bad row or duplicate filename)."""


class UnknownMetric(OtreError):
    pass
