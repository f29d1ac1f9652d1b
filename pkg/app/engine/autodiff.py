"""
Reverse-mode differentiation.

Every differentiable operation calls `record()` with its inputs, its forward
output and a backward rule. `record()` attaches a TapeNode to the output when
at least one input requires a gradient and recording is enabled, so the tape
is a DAG built in topological order by construction. `backward()` walks it in
reverse and accumulates gradients into leaf tensors.

Recording state lives in a ContextVar, so concurrent forward passes on
different threads or tasks never share a tape.
"""

from __future__ import annotations

import logging

from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from app.engine.tensor import DType, Tensor
from app.utils.exceptions import GradientError, InvalidParameterError, ShapeMismatchError


logger = logging.getLogger(__name__)

_grad_enabled: ContextVar[bool] = ContextVar('grad_enabled', default=True)

BackwardRule = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(eq=False)
class TapeNode:
    """One recorded operation: inputs, backward rule and output shape."""

    op: str
    inputs: tuple[Tensor, ...]
    backward_rule: BackwardRule
    shape: tuple[int, ...]
    saved: dict = field(default_factory=dict)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def record(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward_rule: BackwardRule, **saved) -> Tensor:
    """
    Wrap a forward result in a Tensor and, if needed, attach its TapeNode.

    Args:
        op: Operation identifier used in diagnostics.
        inputs: Tensor operands, in the order the backward rule returns gradients.
        out: Forward value.
        backward_rule: Maps the output gradient to one gradient per input
            (None for inputs that need none).
        **saved: Forward values kept for inspection.

    Returns:
        Tensor: The output, carrying a node when any input requires a gradient.
    """
    result = Tensor(out)
    if _grad_enabled.get() and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result.node = TapeNode(op=op, inputs=tuple(inputs), backward_rule=backward_rule, shape=out.shape, saved=saved)
    return result


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in tensor.node.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """
    Accumulate dLoss/dLeaf into every leaf that requires a gradient.

    Args:
        loss: Scalar tensor produced by recorded operations.

    Returns:
        dict[Tensor, np.ndarray]: Gradient contributed by this pass, per leaf.

    Raises:
        GradientError: If the loss is not a scalar or carries no tape.
    """
    if loss.size != 1:
        raise GradientError(f'backward() needs a scalar loss, got shape {loss.shape}')
    if loss.node is None:
        raise GradientError('loss was not produced by a recorded operation (is no_grad() active?)')

    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    contributed: dict[Tensor, np.ndarray] = {}

    for tensor in reversed(order):
        grad = grads.pop(id(tensor), None)
        if grad is None:
            continue
        node = tensor.node
        if node is None:
            # leaf
            contributed[tensor] = grad
            if tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)
            tensor.grad += grad.astype(tensor.data.dtype, copy=False)
            continue
        input_grads = node.backward_rule(grad)
        for parent, parent_grad in zip(node.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent_grad.shape != parent.shape:
                raise GradientError(
                    f'{node.op}: backward produced gradient of shape {parent_grad.shape} for input {parent.shape}'
                )
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad
    return contributed


class Parameter(Tensor):
    """
    A leaf tensor owned by a module.

    Trainable parameters receive gradients and are updated by the optimizer.
    Non-trainable parameters act as buffers (e.g. BatchNorm running statistics):
    they are saved in checkpoints but no gradient ever reaches them.
    """

    def __init__(self, data, dtype: DType | str | None = None, trainable: bool = True, name: str = ''):
        super().__init__(data, dtype=dtype, requires_grad=trainable, name=name)
        # own the buffer: the optimizer updates it in place
        self.data = self.data.copy()
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> Tensor:
        return Tensor(self.data.copy())

    def assign(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=self.data.dtype)
        if values.shape != self.data.shape:
            raise ShapeMismatchError('assign', values.shape, self.data.shape, f'parameter {self.name!r} has a fixed shape')
        self.data[...] = values

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f'Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype.value}, trainable={self.trainable})'


def sgd_step(params: Iterable[Parameter], lr: float = 0.001, weight_decay: float = 0.0001) -> None:
    """
    Plain SGD with L2 weight decay: p <- p - lr * (grad + weight_decay * p).

    Gradients are zeroed afterwards. Non-trainable parameters are skipped.
    """
    for p in params:
        if not p.trainable:
            continue
        update = p.grad + weight_decay * p.data if weight_decay else p.grad
        p.data -= (lr * update).astype(p.data.dtype, copy=False)
        p.zero_grad()


class SGD:
    """Holds the parameter list and constants for `sgd_step`."""

    def __init__(self, params: Iterable[Parameter], lr: float = 0.001, weight_decay: float = 0.0001):
        if lr <= 0:
            raise InvalidParameterError('lr', lr, 'must be > 0')
        if weight_decay < 0:
            raise InvalidParameterError('weight_decay', weight_decay, 'must be >= 0')
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.weight_decay = weight_decay

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        sgd_step(self.params, self.lr, self.weight_decay)

    def grad_norms(self, names: dict[int, str] | None = None) -> dict[str, float]:
        names = names or {}
        return {names.get(id(p), p.name or f'param_{i}'): float(np.linalg.norm(p.grad)) for i, p in enumerate(self.params)}


def fd_check(
    f: Callable[[], Tensor],
    p: Parameter,
    h: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """
    Compare the analytic gradient of `f` w.r.t. `p` with central differences.

    Args:
        f: Deterministic closure returning a scalar loss computed from `p`.
            Stochastic nodes must be frozen by seeding inside the closure.
        p: Parameter to probe.
        h: Finite-difference step.
        max_coords: Probe only this many coordinates, picked with `seed`.
        seed: Seed for coordinate sampling.

    Returns:
        float: max |analytic - numeric| / max(1, |analytic|) over probed coordinates.

    Raises:
        InvalidParameterError: If h <= 0.
    """
    if h <= 0:
        raise InvalidParameterError('h', h, 'must be > 0')

    loss = f()
    leaves = [t for t in _topological_order(loss) if t.node is None]
    saved = {id(t): (t, None if t.grad is None else t.grad.copy()) for t in leaves}
    saved.setdefault(id(p), (p, p.grad.copy()))
    p.zero_grad()
    backward(loss)
    analytic = p.grad.copy()
    # leave every accumulated gradient as it was before the check
    for leaf, grad in saved.values():
        leaf.grad = grad

    flat = p.data.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and max_coords < flat.size:
        coords = np.sort(np.random.default_rng(seed).choice(flat.size, size=max_coords, replace=False))

    worst = 0.0
    analytic_flat = analytic.reshape(-1)
    with no_grad():
        for i in coords:
            original = flat[i]
            flat[i] = original + h
            up = f().item()
            flat[i] = original - h
            down = f().item()
            flat[i] = original
            numeric = (up - down) / (2.0 * h)
            error = abs(analytic_flat[i] - numeric) / max(1.0, abs(analytic_flat[i]))
            worst = max(worst, float(error))
    logger.debug(f'fd_check on {p.name or p.shape}: {len(coords)} coordinates, max rel. error {worst:.3e}')
    return worst
