from .core import DEFAULT_DTYPE, Tensor, backward, grad_enabled, no_grad
from .gradcheck import grad_check
from .nn import Parameter, ParamSet, adam_step, xavier_init
from .ops import (
    BCE_EPS,
    add,
    add_scalar,
    bce_loss,
    broadcast_spatial,
    channel_standardize,
    concat_channels,
    conv2d,
    flatten,
    fully_connected,
    maxpool2d,
    mul,
    mul_scalar,
    region_maxpool,
    relu,
    sigmoid,
    split_channels,
    tensor_mean,
    tensor_sum,
    transposed_conv2d,
    weighted_sum,
)
