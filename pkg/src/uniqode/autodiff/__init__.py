"""Numerical substrate: taped reverse-mode AD, tanh MLPs, Adam."""
from uniqode.autodiff.adam import AdamState, adam_init, adam_step
from uniqode.autodiff.mlp import (
    Mlp,
    init_mlp,
    input_jacobian,
    mlp_forward,
    taped_forward,
    taped_forward_with_tangent,
    taped_params,
    zeros_mlp,
)
from uniqode.autodiff.tape import Tape, Var, backward, grad

__all__ = [
    "AdamState", "Mlp", "Tape", "Var", "adam_init", "adam_step", "backward", "grad",
    "init_mlp", "input_jacobian", "mlp_forward", "taped_forward",
    "taped_forward_with_tangent", "taped_params", "zeros_mlp",
]
