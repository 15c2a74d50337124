"""Exception types shared across the toolkit."""


class PetError(Exception):
    """Base class for all toolkit errors."""


class MissingFile(PetError, FileNotFoundError):
    pass


class BadMagic(PetError, ValueError):
    pass


class DimensionMismatch(PetError, ValueError):
    pass


class OddDimensions(PetError, ValueError):
    pass


class RangeError(PetError, ValueError):
    pass


class IoFailure(PetError, OSError):
    pass


class ParseError(PetError, ValueError):
    pass


class UnresolvedFramePath(PetError, FileNotFoundError):
    pass


class DuplicateParticipant(PetError, ValueError):
    pass


class NonPositiveSigma(PetError, ValueError):
    pass


class NonPositiveGamma(PetError, ValueError):
    pass


class NonPositiveDelta(PetError, ValueError):
    pass


class ImageTooSmall(PetError, ValueError):
    pass


class TooFewMatches(PetError, ValueError):
    pass


class DegenerateSample(PetError, ValueError):
    pass


class EmptyInput(PetError, ValueError):
    pass


class UnpairedParticipants(PetError, ValueError):
    pass


class DegenerateAxis(PetError, ValueError):
    pass


class GridTooFine(PetError, ValueError):
    pass


class TooFewSamples(PetError, ValueError):
    pass


class SingularSystem(PetError, ValueError):
    pass
