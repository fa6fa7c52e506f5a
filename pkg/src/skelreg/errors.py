"""Exception hierarchy shared by all pipeline stages."""


class SkelRegError(Exception):
    """Base class for every error raised by the package."""


class SizeMismatch(SkelRegError):
    pass


class DegenerateConfiguration(SkelRegError):
    pass


class KTooLarge(SkelRegError):
    pass


class EmptyCloud(SkelRegError):
    pass


class TargetTooLarge(SkelRegError):
    pass


class ParseError(SkelRegError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyFile(SkelRegError):
    pass


class IoError(SkelRegError, OSError):
    pass


class SchemaError(SkelRegError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DegenerateCloud(SkelRegError):
    pass


class TooFewPoints(SkelRegError):
    pass


class DegenerateInput(SkelRegError):
    pass


class AmbiguousPairing(SkelRegError):
    pass


class IllConditioned(SkelRegError):
    pass


class CountMismatch(SkelRegError):
    pass


class MissingRib(SkelRegError):
    pass


class InvalidSpec(SkelRegError):
    pass
