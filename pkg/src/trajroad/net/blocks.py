"""Network units and the Dual Enhancement Module.

Units are plain functions over a ParamSet ``P`` and a name prefix, so the
same code runs every branch and every enhancement site.
"""
from dataclasses import dataclass

from ..errors import InvalidGrid, ShapeMismatch
from ..tensor import ops
from ..tensor.core import Tensor


def conv(x, P, name, stride=1, padding=None, dilation=1):
    w = P[name + ".w"]
    k = w.shape[-1]
    if padding is None:
        padding = dilation * (k - 1) // 2
    return ops.conv2d(x, w, P[name + ".b"], stride=stride, padding=padding, dilation=dilation)


def residual_unit(x, P, prefix):
    """relu(conv2(relu(conv1(x))) + x)."""
    y = ops.relu(conv(x, P, prefix + ".conv1"))
    y = conv(y, P, prefix + ".conv2")
    return ops.relu(ops.add(y, x))


INTERIM_RATES = (1, 2, 4, 8)


def interim_unit(x, P, prefix):
    """Cascade of dilated 3x3 convs (rates 1, 2, 4, 8); every stage is added back to x."""
    out, d = x, x
    for r in INTERIM_RATES:
        d = ops.relu(conv(d, P, f"{prefix}.d{r}", dilation=r))
        out = ops.add(out, d)
    return out


def upsampling_unit(x, P, prefix):
    """1x1 reduce to cin/4, 4x4 stride-2 transposed conv, 1x1 expand; relu after each."""
    y = ops.relu(conv(x, P, prefix + ".reduce"))
    y = ops.relu(ops.transposed_conv2d(y, P[prefix + ".up.w"], P[prefix + ".up.b"], stride=2, padding=1))
    return ops.relu(conv(y, P, prefix + ".expand"))


def effective_levels(h, w, levels):
    """Deepest pyramid (capped at ``levels``) whose finest grid still fits in h x w."""
    n = 1
    while n < levels and 2 ** n <= min(h, w):
        n += 1
    return n


def spp_global(L, levels, fc_w, fc_b):
    """Pyramid of region max-pools (1x1, 2x2, 4x4, ...) flattened into an FC layer."""
    h, w = L.shape[2], L.shape[3]
    if 2 ** (levels - 1) > min(h, w):
        raise InvalidGrid(f"{levels}-level pyramid does not fit a {h}x{w} map")
    pooled = [ops.flatten(ops.region_maxpool(L, 2 ** j, 2 ** j)) for j in range(levels)]
    return ops.fully_connected(ops.concat_channels(pooled), fc_w, fc_b)


@dataclass
class DemActivations:
    local_a: Tensor
    local_b: Tensor
    global_a: Tensor
    global_b: Tensor
    gate_local_a: Tensor = None
    gate_global_a: Tensor = None
    gate_local_b: Tensor = None
    gate_global_b: Tensor = None


def _messages(f, P, prefix, levels, mode):
    """Local map, global map and gates extracted from one modality's feature."""
    n, c, h, w = f.shape
    L = conv(f, P, prefix + ".local")
    G = None
    if mode in ("full", "local_global"):
        g = spp_global(L, levels, P[prefix + ".fc.w"], P[prefix + ".fc.b"])
        G = ops.broadcast_spatial(g, h, w)
    theta_l = theta_g = None
    if mode in ("full", "local_gate"):
        gate_in = ops.concat_channels([L, G]) if G is not None else L
        theta_l = ops.sigmoid(conv(gate_in, P, prefix + ".gate_local"))
        if G is not None:
            theta_g = ops.sigmoid(conv(gate_in, P, prefix + ".gate_global"))
    return L, G, theta_l, theta_g


def _inject(f, L, G, theta_l, theta_g):
    out = ops.add(f, ops.mul(theta_l, L) if theta_l is not None else L)
    if G is not None:
        out = ops.add(out, ops.mul(theta_g, G) if theta_g is not None else G)
    return out


def dem_forward(f_a, f_b, P, prefix, levels, mode="full"):
    """Mutual enhancement of a feature pair.

    Each modality's local (3x3 conv) and global (SPP + FC, broadcast) messages
    are gated and added to the other modality's feature.  ``mode`` selects the
    ablation variant: ``full``, ``local``, ``local_gate`` or ``local_global``.
    """
    if f_a.shape != f_b.shape:
        raise ShapeMismatch(f"dem_forward: {f_a.shape} vs {f_b.shape}")
    La, Ga, tla, tga = _messages(f_a, P, prefix + ".a", levels, mode)
    Lb, Gb, tlb, tgb = _messages(f_b, P, prefix + ".b", levels, mode)
    fa_hat = _inject(f_a, Lb, Gb, tlb, tgb)
    fb_hat = _inject(f_b, La, Ga, tla, tga)
    return fa_hat, fb_hat, DemActivations(La, Lb, Ga, Gb, tla, tga, tlb, tgb)
