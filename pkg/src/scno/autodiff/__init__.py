"""Tensor math with reverse-mode autodiff, surrogate spikes, AdamW and LR schedules."""

from . import ops
from .gradcheck import gradcheck, max_relative_error, numerical_gradient
from .module import MLP, BatchNorm1d, Linear, Module, count_parameters
from .ops import (
    add, batch_norm, broadcast_to, concat, exp, gelu, lif, linear, matmul, mean, mse_loss,
    mul, relu, reshape, sigmoid, slice_, smooth_mode_active, spike_step, sub, sum_,
    surrogate_derivative, surrogate_forward_mode, tanh, transpose,
)
from .optim import (
    AdamW, CosineSchedule, OptimizerState, PlateauSchedule, adamw_step, make_schedule,
)
from .tensor import (
    GraphError, NonFiniteError, Parameter, Tensor, as_tensor, default_dtype,
    get_default_dtype, is_grad_enabled, no_grad, set_finite_checks,
)

__all__ = [name for name in dir() if not name.startswith("_")]
