"""Exception hierarchy shared across the pipeline.

Each family maps to a distinct process exit code so shell callers can
distinguish bad input files from training failures or an infeasible
optimization run (see cli.EXIT_CODES).
"""

from __future__ import annotations


class PromoptError(Exception):
    """Base class for all package errors."""


class SchemaError(PromoptError):
    """A required column is missing from the input file."""

    def __init__(self, column: str, path: str = ""):
        self.column = column
        self.path = path
        super().__init__(f"missing required column {column!r}" + (f" in {path}" if path else ""))


class RowError(PromoptError):
    """A data row failed to parse or violated a field invariant."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class SizingError(PromoptError):
    """A series is too short for the requested split."""


class FeatureError(PromoptError):
    """A feature value violated its declared bounds (names the field)."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"feature {field!r}: {message}")


class TrainingError(PromoptError):
    """Training diverged; carries the last finite state."""

    def __init__(self, message: str, last_params=None, log=None):
        self.last_params = last_params
        self.log = log
        super().__init__(message)


class FitError(PromoptError):
    """Curve fitting cannot proceed (degenerate inputs)."""


class ElasticitySkip(PromoptError):
    """No reference offer can be derived for a consumer-item pair."""

    def __init__(self, consumer_id: str, item_id: str):
        self.consumer_id = consumer_id
        self.item_id = item_id
        super().__init__(f"no reference offer derivable for pair ({consumer_id}, {item_id})")


class InfeasibleError(PromoptError):
    """Retention floor cannot be met at the revenue-optimal assignment."""

    def __init__(self, category: str, achieved: float, required: float, binding_items):
        self.category = category
        self.achieved = achieved
        self.required = required
        self.binding_items = list(binding_items)
        super().__init__(
            f"category {category!r}: retention {achieved:.4f} below floor {required:.4f} "
            f"({len(self.binding_items)} items below cut-off)"
        )


class StageDependencyError(PromoptError):
    """An upstream stage artifact is missing or built from another config."""

    def __init__(self, artifact: str, message: str = ""):
        self.artifact = artifact
        super().__init__(f"missing or stale upstream artifact: {artifact}" + (f" ({message})" if message else ""))
