from .core import DTYPE, Node, Tape, Tensor, as_tensor, is_grad_enabled, no_grad
from .gradcheck import grad_check
from .kernels import (
    bilinear_resize,
    conv2d,
    depthwise_conv2d,
    interp_matrix,
    pad2d,
    pool_channel,
    pool_spatial,
)
from .ops import (
    abs,
    add,
    broadcast_to,
    clamp,
    concat,
    div,
    exp,
    getitem,
    layer_norm,
    log,
    matmul,
    max,
    mean,
    mul,
    neg,
    power,
    relu,
    reshape,
    sigmoid,
    silu,
    softmax,
    softplus,
    sparse_apply,
    sqrt,
    stack,
    sub,
    sum,
    swapaxes,
    take,
    tanh,
    transpose,
)
