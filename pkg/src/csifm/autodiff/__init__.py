from .nn import MLP, LayerNorm, Linear, Module, MultiHeadSelfAttention, TransformerBlock
from .optim import AdamW, AdamWState, adamw_step
from .tensor import (
    GradTape,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    div,
    exp,
    gelu,
    getitem,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    masked_select,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    softmax,
    sub,
    swapaxes,
    transpose,
    tsum,
)
