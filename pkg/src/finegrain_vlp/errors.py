"""Exception types raised across the package."""


class FinegrainError(Exception):
    """Base class for all package errors (CLI maps these to exit code 2)."""


class MissingFile(FinegrainError):
    def __init__(self, filename):
        super().__init__(f"missing file: {filename}")
        self.filename = filename


class ParseError(FinegrainError):
    def __init__(self, file, line, reason):
        super().__init__(f"{file}:{line}: {reason}")
        self.file = file
        self.line = line
        self.reason = reason


class UnknownSynset(FinegrainError, KeyError):
    pass


class EmptyInput(FinegrainError, ValueError):
    pass


class NoCandidate(FinegrainError):
    """No word in the sentence admits a substitution."""


class MissingSpecialToken(FinegrainError):
    pass


class DuplicateToken(FinegrainError):
    pass


class SpanOutOfRange(FinegrainError, IndexError):
    pass


class SpanTruncated(FinegrainError):
    """The replaced word fell past the truncation point."""


class DimensionMismatch(FinegrainError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NonNormalizedInput(FinegrainError, ValueError):
    pass


class NoValidTokens(FinegrainError, ValueError):
    pass


class BatchTooSmall(FinegrainError, ValueError):
    pass


class InvalidTarget(FinegrainError, ValueError):
    pass


class VocabMismatch(FinegrainError, ValueError):
    pass


class MalformedLine(FinegrainError):
    def __init__(self, path, line, reason):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
