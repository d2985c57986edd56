"""Backward pass differentiable approximation with the identity as the backward."""

from typing import Callable

import torch
import torch.nn as nn


def _identity_backward(forward_fn: Callable[[torch.Tensor], torch.Tensor]):
    class Func(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            with torch.no_grad():
                out = forward_fn(x)
            return out.clone() if out is x else out

        @staticmethod
        def backward(ctx, grad_output):
            return grad_output

    return Func


class BPDAWrapper(nn.Module):
    """Runs ``forward_fn`` on the forward pass and passes gradients straight through."""

    def __init__(self, forward_fn: Callable[[torch.Tensor], torch.Tensor]):
        super().__init__()
        self.func = _identity_backward(forward_fn)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.func.apply(x)
