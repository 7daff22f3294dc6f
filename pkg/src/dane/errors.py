"""Exception types raised across the package.

Everything inherits from :class:`DaneError` so callers can catch one base
type. The command line maps these to exit code 2, except
:class:`NonFiniteLoss` which signals a diverged optimization (exit code 3).
"""

from __future__ import annotations


class DaneError(Exception):
    """Base class for all errors raised by this package."""


class MalformedLine(DaneError):
    """A data file line does not match the expected format."""


class NodeIdOutOfRange(DaneError):
    """An edge or label references a node id outside [0, num_nodes)."""


class FeatureRowMissing(DaneError):
    """A node id in the contiguous range has no feature row."""


class InconsistentFeatureWidth(DaneError):
    """Feature rows within one file disagree on column count."""


class AllNodesIsolated(DaneError):
    """Negative sampling is impossible because every node has degree zero."""


class ShapeMismatch(DaneError):
    """Operands have incompatible shapes for the requested operation."""


class NonFiniteValue(DaneError):
    """A tensor operation produced or received NaN or Inf."""


class DisconnectedLoss(DaneError):
    """Backward was asked to differentiate a value the tape never produced."""


class IndexOutOfRange(DaneError):
    """A row index does not address any row of the given tensor."""


class EmptyInput(DaneError):
    """An operation that needs at least one sample received none."""


class NonFiniteLoss(DaneError):
    """Training aborted because a loss went NaN or Inf.

    Carries the zero-based epoch at which the divergence was detected.
    """

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class SingleClassDegenerate(DaneError):
    """Classifier training needs at least two distinct classes."""


class LabelVocabularyMismatch(DaneError):
    """Source and target label sets do not share one class vocabulary."""


class TransferProtocolError(DaneError):
    """Transfer evaluation was handed the embeddings the classifier was fit on."""


class EmptyBlock(DaneError):
    """A synthetic graph specification would produce a block with no nodes."""
