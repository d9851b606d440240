"""Array numerics: taped autodiff, Adam, LR schedule, checkpoints, seeded RNG."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import fd_and_analytic, max_grad_error
from .optim import AdamState, adam_step, lr_at
from .rng import make_rng
from .tensor import (
    DEFAULT_DTYPE,
    Tape,
    Tensor,
    active_tape,
    add,
    backward,
    concat,
    cumsum,
    div,
    exp,
    gather,
    gelu,
    relu,
    layernorm,
    log,
    matmul,
    mean,
    mul,
    neg,
    power,
    reshape,
    slice_,
    softmax,
    softplus,
    sqrt,
    sub,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "DEFAULT_DTYPE",
    "AdamState",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "add",
    "backward",
    "concat",
    "cumsum",
    "div",
    "exp",
    "fd_and_analytic",
    "gather",
    "gelu",
    "relu",
    "layernorm",
    "load_checkpoint",
    "log",
    "lr_at",
    "make_rng",
    "matmul",
    "max_grad_error",
    "mean",
    "mul",
    "neg",
    "power",
    "reshape",
    "save_checkpoint",
    "slice_",
    "softmax",
    "softplus",
    "sqrt",
    "sub",
    "sum_",
    "tanh",
    "transpose",
]
