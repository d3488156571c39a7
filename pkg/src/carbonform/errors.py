"""Exception types shared across the package.

Row-level parse problems are reported as :class:`ParseIssue` values, not
exceptions, so that parsing stays total (every input row becomes either a
record or an itemized issue). Exceptions are reserved for contract
violations: missing files, dimension mismatches, degenerate inputs.
"""
from __future__ import annotations

from dataclasses import dataclass


class CarbonformError(Exception):
    """Base class for all package errors."""


class MissingFile(CarbonformError):
    def __init__(self, path: str):
        self.path = str(path)
        super().__init__(f"required file missing: {self.path}")


class DimensionMismatch(CarbonformError):
    pass


class BadFoldCount(CarbonformError):
    pass


class TooFewUnits(CarbonformError):
    pass


class ConstantColumn(CarbonformError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"column has zero variance: {name}")


class EmptyNeighborhood(CarbonformError):
    pass


class MixedHouseholds(CarbonformError):
    pass


class ZeroBuiltUpArea(CarbonformError):
    pass


class AllZeroEffects(CarbonformError):
    pass


class UnknownNeighborhood(CarbonformError):
    def __init__(self, ids):
        self.ids = sorted(str(i) for i in ids)
        super().__init__(f"unknown neighborhood id(s): {', '.join(self.ids)}")


class EmptyTargetSet(CarbonformError):
    def __init__(self, scenario: str):
        self.scenario = scenario
        super().__init__(f"scenario '{scenario}' selects no neighborhoods")


class TooFewNeighborhoods(CarbonformError):
    pass


class PipelineFailure(CarbonformError):
    def __init__(self, run_id: int, cause: Exception):
        self.run_id = run_id
        self.cause = cause
        super().__init__(f"pipeline run {run_id} failed: {cause}")


@dataclass(frozen=True)
class ParseIssue:
    """One rejected input row, with provenance.

    ``kind`` is a stable machine-readable code (e.g. ``unknown_mode``,
    ``dangling_reference``); ``row`` is the 1-based data row number within
    ``source`` (header excluded).
    """

    kind: str
    source: str
    row: int
    message: str

    def __str__(self) -> str:  # pragma: no cover - convenience only
        return f"{self.source}:{self.row}: {self.kind}: {self.message}"
