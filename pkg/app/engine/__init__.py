"""
Numerical core: float tensors, differentiable operations and reverse-mode autodiff.
"""

from .autodiff import SGD, Parameter, backward, fd_check, no_grad, sgd_step
from .tensor import DType, Tensor

__all__ = ['DType', 'Parameter', 'SGD', 'Tensor', 'backward', 'fd_check', 'no_grad', 'sgd_step']
