"""Exception hierarchy. Every error raised on purpose derives from PCQAError."""


class PCQAError(Exception):
    """Base class for all toolkit errors."""


# point cloud I/O
class MalformedHeader(PCQAError):
    pass


class UnsupportedFormat(PCQAError):
    pass


class TruncatedBody(PCQAError):
    pass


class NonFiniteCoordinate(PCQAError):
    pass


# structural features
class KTooLarge(PCQAError):
    pass


# rating
class OutOfRange(PCQAError):
    pass


class NonFiniteLogit(PCQAError):
    pass


# lmm evaluator
class WrongImageCount(PCQAError):
    pass


class MissingProjection(PCQAError):
    pass


class EndpointUnreachable(PCQAError):
    pass


class MalformedResponse(PCQAError):
    pass


class NoRatingTokenFound(PCQAError):
    pass


class ScoringFailed(PCQAError):
    """A cloud could not be scored; aborts an experiment run."""


# regression
class TooFewSamples(PCQAError):
    pass


class NonFiniteTarget(PCQAError):
    pass


class MalformedModelFile(PCQAError):
    pass


class VersionMismatch(PCQAError):
    pass


# metrics
class ZeroVariance(PCQAError):
    pass


class FitDiverged(PCQAError):
    pass


# harness
class DuplicateName(PCQAError):
    pass


class MosOutOfDeclaredRange(PCQAError):
    pass


class MissingColumn(PCQAError):
    pass


class TooManyFolds(PCQAError):
    pass
