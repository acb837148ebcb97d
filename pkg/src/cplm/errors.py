"""Exception types raised across the package."""


class CplmError(Exception):
    """Base class for all package errors."""


class ConfigError(CplmError, ValueError):
    """Invalid configuration value or combination of values."""


class ConfigValidationError(ConfigError):
    """Raised with every violation found, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in self.problems))


class ContractViolation(CplmError, ValueError):
    """A caller broke an operation's precondition."""


class EmptyCorpusError(CplmError, ValueError):
    pass


class CorpusEncodingError(CplmError, UnicodeError):
    def __init__(self, path, line_no, reason):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}: line {line_no} is not valid UTF-8 ({reason})")


class DecodingError(CplmError, ValueError):
    pass


class SequenceLengthError(CplmError, ValueError):
    pass


class VocabularyError(CplmError, ValueError):
    pass


class NumericalError(CplmError, ArithmeticError):
    pass


class BenchmarkParseError(CplmError, ValueError):
    def __init__(self, path, line_no, reason):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")


class CheckpointError(CplmError, IOError):
    pass
