"""
Custom exception classes for the MMHCO-HAR pipeline.

This module defines a hierarchy of exceptions for the numerical engine, the
event ingestion layer and the trainer. All exceptions inherit from MMHCOError
so that the CLI can catch a single base class and turn it into a non-zero exit
code. Each exception keeps the structured values it was built from as
attributes, and renders a human-readable message from them.
"""

from typing import Optional, Sequence


class MMHCOError(Exception):
    """
    Base exception for the whole package.

    Args:
        detail (str): Human-readable error message.
    """
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ShapeMismatchError(MMHCOError, ValueError):
    """
    Raised when two operands of an operation have incompatible shapes.

    Args:
        op (str): Name of the operation that rejected its inputs.
        left (Sequence[int]): Shape of the first operand.
        right (Sequence[int]): Shape of the second operand.
        hint (Optional[str]): Extra context about what was expected.

    Example:
        >>> raise ShapeMismatchError('add', (2, 3), (3, 2))
    """
    def __init__(self, op: str, left: Sequence[int], right: Sequence[int], hint: Optional[str] = None):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        message = f'{op}: shape mismatch between {self.left} and {self.right}'
        if hint:
            message += f' ({hint})'
        super().__init__(message)


class InvalidParameterError(MMHCOError, ValueError):
    """
    Raised when a scalar argument is outside its admissible range.

    Args:
        name (str): Parameter name.
        value: The rejected value.
        constraint (str): Description of the admissible range.

    Example:
        >>> raise InvalidParameterError('eps', 0.0, 'must be > 0')
    """
    def __init__(self, name: str, value, constraint: str):
        self.name = name
        self.value = value
        self.constraint = constraint
        super().__init__(f'Invalid {name}={value!r}: {constraint}')


class NonFiniteError(MMHCOError):
    """
    Raised by the finite-value validation op when NaN or Inf is found.

    Args:
        where (str): Label of the tensor that was validated.
        count (int): Number of non-finite entries.
    """
    def __init__(self, where: str, count: int):
        self.where = where
        self.count = count
        super().__init__(f'{count} non-finite value(s) found in {where}')


class GradientError(MMHCOError):
    """
    Raised when reverse-mode differentiation cannot proceed.

    Typical causes are a non-scalar loss or a tape that was not recorded.
    """


class LabelError(MMHCOError, ValueError):
    """
    Raised when label tensors violate the one-hot contract.

    Args:
        reason (str): What is wrong with the labels.
    """
    def __init__(self, reason: str):
        super().__init__(f'Invalid labels: {reason}')


class EventParseError(MMHCOError):
    """
    Raised when a raw event file contains a line that cannot be parsed.

    Args:
        path (str): File being parsed.
        line_number (int): 1-based line number of the offending line.
        reason (str): Why the line was rejected.

    Example:
        >>> raise EventParseError('events.csv', 1, "expected 4 fields, got 1: 'abc'")
    """
    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        self.reason = reason
        super().__init__(f'{path}: line {line_number}: {reason}')


class DatasetError(MMHCOError):
    """
    Raised when a dataset directory does not follow the expected layout.
    """


class CheckpointError(MMHCOError):
    """
    Raised when a checkpoint file is truncated, corrupt, or of an unknown version.
    """


class ConfigHashMismatchError(CheckpointError):
    """
    Raised when a checkpoint was produced for a different model architecture.

    Args:
        expected (str): Architecture hash of the requesting configuration.
        found (str): Architecture hash stored in the checkpoint.
    """
    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(
            f'Checkpoint architecture hash {found[:12]} does not match configuration hash {expected[:12]}; '
            'pass force=True to load anyway'
        )


class ClassCountMismatchError(MMHCOError):
    """
    Raised when a checkpoint and a dataset disagree on the number of classes.

    Args:
        checkpoint_classes (int): Class count the model was trained with.
        dataset_classes (int): Class count found in the dataset.
    """
    def __init__(self, checkpoint_classes: int, dataset_classes: int):
        self.checkpoint_classes = checkpoint_classes
        self.dataset_classes = dataset_classes
        super().__init__(
            f'Checkpoint expects {checkpoint_classes} classes but the dataset has {dataset_classes}'
        )


class TrainingDivergedError(MMHCOError):
    """
    Raised when the training loss becomes NaN or infinite.

    Args:
        epoch (int): Epoch in which divergence happened.
        batch_index (int): Index of the offending batch within the epoch.
        loss (float): The non-finite loss value.
        grad_norms (dict[str, float]): Gradient norm per parameter name.

    Example:
        >>> raise TrainingDivergedError(3, 17, float('nan'), {'head.fc.weight': 1e9})
    """
    def __init__(self, epoch: int, batch_index: int, loss: float, grad_norms: dict[str, float]):
        self.epoch = epoch
        self.batch_index = batch_index
        self.loss = loss
        self.grad_norms = dict(grad_norms)
        worst = sorted(self.grad_norms.items(), key=lambda kv: -_sortable(kv[1]))[:5]
        worst_str = ', '.join(f'{name}={norm:.3e}' for name, norm in worst)
        super().__init__(
            f'Loss became {loss} at epoch {epoch}, batch {batch_index}; largest gradient norms: {worst_str}'
        )


def _sortable(value: float) -> float:
    # NaN norms sort first so they show up in the diagnostics
    return float('inf') if value != value else value
