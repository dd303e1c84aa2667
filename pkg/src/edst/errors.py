"""Exception hierarchy shared across the package."""

from __future__ import annotations


class EdstError(Exception):
    """Base class for all package-specific errors."""


class FormatError(EdstError):
    """A file does not parse against its documented schema."""


class ValidationError(EdstError):
    """Parsed data references something outside the ontology."""


class DataError(EdstError):
    """Gold labels required for the requested operation are missing."""


class InconsistentAssignmentError(EdstError):
    """A state assignment violates the slot/value label coupling rule."""


class SamplingError(EdstError):
    """A minibatch class with positive ratio has no examples."""


class ShapeError(EdstError):
    """Array dimensions do not match the declared parameter shapes."""


class GradCheckError(EdstError):
    """Analytic gradients disagree with finite differences."""
