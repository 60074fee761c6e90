"""Exception hierarchy shared by every stage of the pipeline."""


class FlownasError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(FlownasError):
    exit_code = 2


class InputIOError(FlownasError):
    exit_code = 3


class FormatError(FlownasError):
    """Any malformed input file or record."""

    exit_code = 4


# pcap-ingest
class BadMagic(FormatError):
    pass


class TruncatedRecord(FormatError):
    pass


class MalformedHeader(FormatError):
    pass


# session-preproc
class InvalidStrategy(ConfigError):
    pass


class EmptySession(FlownasError):
    pass


class LengthMismatch(FormatError):
    pass


class LabelOutOfRange(FormatError):
    pass


# arch-model
class DegenerateShape(FlownasError):
    exit_code = 2


class ParseError(FormatError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


# search-space / evo-search
class BudgetExhausted(FlownasError):
    exit_code = 5


class CorruptCheckpoint(FormatError):
    pass


# cnn-engine
class ShapeMismatch(FlownasError):
    exit_code = 2


class NonFiniteActivation(FlownasError):
    exit_code = 6


class EmptyDataset(FlownasError):
    exit_code = 2


class DivergedLoss(FlownasError):
    exit_code = 6


# quantizer
class EmptyCalibration(FlownasError):
    exit_code = 2


class NotCalibrated(FlownasError):
    exit_code = 2
