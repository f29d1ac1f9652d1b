"""
Dense row-major tensor backed by a NumPy array.

A Tensor carries its shape, a float32/float64 buffer and, when it was produced
by a differentiable operation while gradient recording is enabled, a reference
to the TapeNode that produced it. Tensors are treated as immutable values:
operations never write into their inputs. Parameters (see autodiff) are the
only tensors whose buffers are updated in place, and only by the optimizer.
"""

from __future__ import annotations

from enum import Enum
from typing import TYPE_CHECKING, Any, Iterable, Sequence

import numpy as np

from app.utils.exceptions import NonFiniteError


if TYPE_CHECKING:
    from app.engine.autodiff import TapeNode


class DType(str, Enum):
    F32 = 'f32'
    F64 = 'f64'

    @property
    def numpy(self) -> np.dtype:
        return np.dtype(np.float32) if self is DType.F32 else np.dtype(np.float64)

    @classmethod
    def of(cls, array: np.ndarray) -> DType:
        return cls.F32 if array.dtype == np.float32 else cls.F64


def resolve_dtype(dtype: DType | str | np.dtype | None) -> np.dtype | None:
    if dtype is None:
        return None
    if isinstance(dtype, DType):
        return dtype.numpy
    if isinstance(dtype, str) and dtype in ('f32', 'f64'):
        return DType(dtype).numpy
    return np.dtype(dtype)


class Tensor:
    """
    Multi-dimensional float array with optional autodiff bookkeeping.

    Args:
        data: Anything `np.asarray` accepts.
        dtype: 'f32', 'f64' or a DType; defaults to the input precision
            (float64 for Python scalars and integer inputs).
        requires_grad: Whether gradients should be accumulated into `.grad`
            when this tensor is a leaf of a recorded graph.
    """

    __slots__ = ('data', 'requires_grad', 'grad', 'node', 'name')

    def __init__(self, data: Any, dtype: DType | str | None = None, requires_grad: bool = False, name: str = ''):
        np_dtype = resolve_dtype(dtype)
        array = np.asarray(data.data if isinstance(data, Tensor) else data)
        if np_dtype is None:
            np_dtype = array.dtype if array.dtype in (np.float32, np.float64) else np.dtype(np.float64)
        self.data: np.ndarray = np.ascontiguousarray(array, dtype=np_dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> DType:
        return DType.of(self.data)

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying buffer."""
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f'item() needs a single-element tensor, got shape {self.shape}')
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype: DType | str) -> Tensor:
        return Tensor(self.data, dtype=dtype)

    def validate_finite(self, where: str = 'tensor') -> Tensor:
        """Raise NonFiniteError if any entry is NaN or infinite."""
        bad = int(np.size(self.data) - np.count_nonzero(np.isfinite(self.data)))
        if bad:
            raise NonFiniteError(where or self.name or 'tensor', bad)
        return self

    def backward(self) -> dict[Tensor, np.ndarray]:
        from app.engine.autodiff import backward

        return backward(self)

    # arithmetic sugar; the functional module holds the differentiable rules

    def __add__(self, other):
        from app.engine import functional as F

        return F.add(self, other)

    def __radd__(self, other):
        from app.engine import functional as F

        return F.add(self, other)

    def __sub__(self, other):
        from app.engine import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from app.engine import functional as F

        return F.add(F.neg(self), other)

    def __mul__(self, other):
        from app.engine import functional as F

        return F.mul(self, other)

    def __rmul__(self, other):
        from app.engine import functional as F

        return F.mul(self, other)

    def __neg__(self):
        from app.engine import functional as F

        return F.neg(self)

    def reshape(self, *shape: int | Sequence[int]) -> Tensor:
        from app.engine import functional as F

        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        from app.engine import functional as F

        return F.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        from app.engine import functional as F

        return F.reduce('sum', self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        from app.engine import functional as F

        return F.reduce('mean', self, axis, keepdims)

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        grad_flag = ', requires_grad=True' if self.requires_grad else ''
        return f'Tensor(shape={self.shape}, dtype={self.dtype.value}{grad_flag})'


def as_tensor(value: Any, dtype: DType | str | None = None) -> Tensor:
    """Wrap `value` in a Tensor unless it already is one."""
    if isinstance(value, Tensor):
        return value if dtype is None or resolve_dtype(dtype) == value.data.dtype else value.astype(dtype)
    return Tensor(value, dtype=dtype)


def zeros(shape: Iterable[int], dtype: DType | str = DType.F64) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), dtype=dtype)


def ones(shape: Iterable[int], dtype: DType | str = DType.F64) -> Tensor:
    return Tensor(np.ones(tuple(shape)), dtype=dtype)


def randn(shape: Iterable[int], rng: np.random.Generator, dtype: DType | str = DType.F64) -> Tensor:
    return Tensor(rng.standard_normal(tuple(shape)), dtype=dtype)
