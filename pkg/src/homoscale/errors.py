"""Exception hierarchy shared by every homoscale module.

Each exception carries a stable ``code`` string so the command-line front
end can emit machine-readable error records.
"""


class HomoscaleError(Exception):
    code = "E_HOMOSCALE"


class Singular(HomoscaleError):
    code = "E_SINGULAR"


class SingularResult(Singular):
    code = "E_SINGULAR_RESULT"


class DegeneratePoint(HomoscaleError):
    code = "E_DEGENERATE_POINT"


class DegenerateConfiguration(HomoscaleError):
    code = "E_DEGENERATE_CONFIGURATION"


class GridDegenerate(HomoscaleError):
    code = "E_GRID_DEGENERATE"


class TooSmall(HomoscaleError):
    code = "E_TOO_SMALL"


class SamplingExhausted(HomoscaleError):
    code = "E_SAMPLING_EXHAUSTED"


class DepthMismatch(HomoscaleError):
    code = "E_DEPTH_MISMATCH"


class NoMatches(HomoscaleError):
    code = "E_NO_MATCHES"


class ShapeMismatch(HomoscaleError):
    code = "E_SHAPE_MISMATCH"


class EmptyMask(HomoscaleError):
    code = "E_EMPTY_MASK"


class EmptyInput(HomoscaleError):
    code = "E_EMPTY_INPUT"


class Diverged(HomoscaleError):
    code = "E_DIVERGED"


class ParseError(HomoscaleError):
    code = "E_PARSE"


class ValidationError(ParseError):
    code = "E_VALIDATION"


class MissingFile(HomoscaleError):
    code = "E_MISSING_FILE"
