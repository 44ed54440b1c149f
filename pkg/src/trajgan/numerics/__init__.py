"""Dense-array math with reverse-mode autodiff, Adam and checkpoint I/O."""
from . import checkpoint
from .optim import AdamState, adam_step, clip_by_global_norm, global_norm, init_bias, init_weight
from .tensor import (
    DimensionError,
    DomainError,
    NonFiniteError,
    NumericsError,
    Tape,
    Tensor,
    UsageError,
    active_tape,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    div,
    exp,
    leaky_relu,
    gmm_log_prob,
    log,
    lstm_cell,
    matmul,
    maximum,
    mean,
    mul,
    relu,
    reshape,
    segment_softmax,
    segment_sum,
    sigmoid,
    slice,
    softmax,
    stack,
    sub,
    sum,
    take,
    tanh,
)

_KINDS = {
    "matmul": matmul, "add": add, "sub": sub, "mul": mul, "div": div,
    "concat": concat, "slice": slice, "tanh": tanh, "sigmoid": sigmoid,
    "relu": relu, "leaky_relu": leaky_relu, "exp": exp, "log": log, "softmax": softmax,
    "sum": sum, "mean": mean,
}


def forward_op(kind, *inputs, **kwargs):
    """Dispatch a primitive by name, e.g. ``forward_op("matmul", a, b)``."""
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise UsageError(f"unknown op kind {kind!r}") from None
    if kind == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)
