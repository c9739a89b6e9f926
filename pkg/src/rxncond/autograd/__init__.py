from .tensor import (
    NonFiniteError,
    Tensor,
    add,
    attention,
    backward,
    as_tensor,
    concat,
    div,
    embedding,
    exp,
    get_dtype,
    index,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    parameter,
    precision,
    precision_name,
    relu,
    reshape,
    set_debug,
    set_precision,
    softmax,
    softmax_cross_entropy,
    spmm,
    sub,
    sum_,
    tanh,
    transpose,
)
from .optim import Adam, OneCycleSchedule, ParamStore, step
from .nn import Module

__all__ = [name for name in dir() if not name.startswith("_")]
