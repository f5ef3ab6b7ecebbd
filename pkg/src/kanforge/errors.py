"""Exception types shared across the package."""


class KanForgeError(Exception):
    pass


class InvalidInputError(KanForgeError, ValueError):
    pass


class InvalidArgumentError(KanForgeError, ValueError):
    pass


class ShapeError(KanForgeError, ValueError):
    pass


class TrainingError(KanForgeError, RuntimeError):
    """Raised when optimization produces a non-finite objective."""


class DatasetFormatError(KanForgeError, ValueError):
    pass


class DatasetParseError(DatasetFormatError):
    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f"line {line}"
            if column is not None:
                loc += f", column {column!r}"
            loc += ": "
        super().__init__(loc + message)
        self.line = line
        self.column = column


class CheckpointError(KanForgeError, ValueError):
    pass
