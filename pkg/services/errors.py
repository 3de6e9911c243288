"""Error types raised by the domain layer."""
from __future__ import annotations


class StructuralError(ValueError):
    """Input violates a structural precondition of an operation."""


class DimensionError(StructuralError):
    pass


class MissingClassError(StructuralError):
    def __init__(self, label: int, partition: str = "train") -> None:
        super().__init__(f"class {label} has no segments in the {partition} partition")
        self.label = label
        self.partition = partition

    def __reduce__(self):
        return (type(self), (self.label, self.partition))


class EmptySplitError(StructuralError):
    """The selection holdout left one side without examples."""


class PairTrainingError(StructuralError):
    def __init__(self, pair: tuple[int, int], cause: Exception) -> None:
        super().__init__(f"training pair {pair[0]}/{pair[1]} failed: {cause}")
        self.pair = pair
        self.cause = cause

    def __reduce__(self):
        return (type(self), (self.pair, self.cause))


class LayoutMismatchError(StructuralError):
    pass


class DoubleCorrectionError(StructuralError):
    def __init__(self) -> None:
        super().__init__("features are already BBA-corrected; refusing to correct twice")

    def __reduce__(self):
        return (type(self), ())


class MalformedInputError(StructuralError):
    def __init__(self, message: str, line: int | None = None) -> None:
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")
        self.detail = message
        self.line = line

    def __reduce__(self):
        return (type(self), (self.detail, self.line))
