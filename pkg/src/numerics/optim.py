"""Adam optimizer with bias correction and global gradient-norm clipping."""

from __future__ import annotations

import dataclasses
from collections.abc import Sequence

import numpy as np

from src.errors import GradientStateError, ParameterError
from src.numerics.tensor import Tensor


@dataclasses.dataclass
class AdamState:
    """Per-parameter Adam moments and hyperparameters.

    Attributes:
        first_moment (np.ndarray): Running mean of gradients, same shape as the parameter.
        second_moment (np.ndarray): Running mean of squared gradients.
        step_count (int): Number of updates applied so far.
        lr (float): Learning rate.
        beta1 (float): Decay of the first moment.
        beta2 (float): Decay of the second moment.
        eps (float): Denominator guard.
    """

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(
        cls,
        param: Tensor,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> AdamState:
        """Creates a zeroed state matching `param`'s shape."""
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        return cls(
            first_moment=np.zeros_like(param.data),
            second_moment=np.zeros_like(param.data),
            lr=lr,
            beta1=betas[0],
            beta2=betas[1],
            eps=eps,
        )


def adam_step(param: Tensor, state: AdamState) -> tuple[Tensor, AdamState]:
    """Applies one bias-corrected Adam update to `param` in place.

    Args:
        param (Tensor): A leaf tensor whose `grad` has been populated.
        state (AdamState): The parameter's optimizer state, updated in place.

    Returns:
        tuple[Tensor, AdamState]: The same parameter and state objects.

    Raises:
        GradientStateError: If `param.grad` is absent.
    """
    if param.grad is None:
        raise GradientStateError(f"no gradient for parameter of shape {param.shape}")
    g = param.grad
    state.step_count += 1
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * g
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * g * g
    m_hat = state.first_moment / (1 - state.beta1**state.step_count)
    v_hat = state.second_moment / (1 - state.beta2**state.step_count)
    param.data = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param, state


def global_grad_norm(params: Sequence[Tensor]) -> float:
    """L2 norm of all gradients taken together; missing gradients count as zero."""
    total = sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)
    return float(np.sqrt(total))


class Adam:
    """Adam over a fixed list of parameters.

    Example:
        ```python
        optimizer = Adam(model.parameters(), lr=3e-3, clip_grad=1.0)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        ```
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_grad: float | None = None,
    ) -> None:
        """Initializes one AdamState per parameter.

        Args:
            params (Sequence[Tensor]): Leaf tensors to optimize.
            lr (float): Learning rate.
            betas (tuple[float, float]): Moment decay rates.
            eps (float): Denominator guard.
            clip_grad (float | None): Maximum global gradient norm, or None for no clipping.
        """
        if clip_grad is not None and clip_grad <= 0:
            raise ParameterError(f"clip_grad must be positive, got {clip_grad}")
        self.params = list(params)
        self.clip_grad = clip_grad
        self.states = [AdamState.for_param(p, lr, betas, eps) for p in self.params]

    def zero_grad(self) -> None:
        """Clears every parameter's gradient."""
        for p in self.params:
            p.zero_grad()

    def step(self) -> float:
        """Clips gradients if configured and updates every parameter.

        Returns:
            float: The global gradient norm before clipping.
        """
        norm = global_grad_norm(self.params)
        if self.clip_grad is not None and norm > self.clip_grad:
            scale = self.clip_grad / norm
            for p in self.params:
                if p.grad is not None:
                    p.grad = p.grad * scale
        for p, state in zip(self.params, self.states, strict=True):
            adam_step(p, state)
        return norm
