# shared/errors.py


class DiffSBRError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DiffSBRError, ValueError):
    def __init__(self, primitive: str, *shapes):
        self.primitive = primitive
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{primitive}: incompatible shapes {rendered}")


class GradientError(DiffSBRError, RuntimeError):
    pass


class DataFormatError(DiffSBRError, ValueError):
    def __init__(self, path, line: int | None, reason: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {reason}")


class EmptyDatasetError(DiffSBRError, ValueError):
    pass


class CheckpointError(DiffSBRError, ValueError):
    pass
