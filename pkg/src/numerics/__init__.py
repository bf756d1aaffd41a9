"""Float64 tensors with reverse-mode gradients and the Adam optimizer."""

from src.numerics.optim import Adam, AdamState, adam_step
from src.numerics.tensor import Tensor, gradcheck, no_grad, topk_mask

__all__ = ["Adam", "AdamState", "Tensor", "adam_step", "gradcheck", "no_grad", "topk_mask"]
