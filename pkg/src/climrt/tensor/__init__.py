"""Dense float tensors with eager reverse-mode differentiation."""

from climrt.tensor import ops
from climrt.tensor.core import (
    DimensionError,
    GeometryError,
    GraphError,
    NonFiniteError,
    Tensor,
    TensorError,
    as_tensor,
    backward,
    default_dtype,
    grad_enabled,
    no_grad,
    precision,
)
from climrt.tensor.ops import (
    absolute,
    add,
    bce_with_logits,
    concat,
    conv3d,
    conv_spatial,
    conv_temporal,
    conv_transpose3d,
    count_macs,
    depthwise_conv3d,
    div,
    exp,
    index,
    layer_norm,
    log,
    log_softmax,
    matmul,
    maximum,
    mean,
    minimum,
    mul,
    pool_global,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    stack,
    sub,
    transpose,
)
from climrt.tensor.ops import sum as sum_  # noqa: F401

__all__ = [
    "DimensionError",
    "GeometryError",
    "GraphError",
    "NonFiniteError",
    "Tensor",
    "TensorError",
    "absolute",
    "add",
    "as_tensor",
    "backward",
    "bce_with_logits",
    "concat",
    "conv3d",
    "conv_spatial",
    "conv_temporal",
    "conv_transpose3d",
    "count_macs",
    "default_dtype",
    "depthwise_conv3d",
    "div",
    "exp",
    "grad_enabled",
    "index",
    "layer_norm",
    "log",
    "log_softmax",
    "matmul",
    "maximum",
    "mean",
    "minimum",
    "mul",
    "no_grad",
    "ops",
    "pool_global",
    "precision",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "softmax",
    "stack",
    "sub",
    "transpose",
]
