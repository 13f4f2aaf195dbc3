"""Finite-difference verification suite over every op, block and the full network."""
from dataclasses import dataclass

import numpy as np

from .net.blocks import dem_forward, interim_unit, residual_unit, spp_global, upsampling_unit
from .net.config import NetConfig
from .net.model import forward, init_params
from .tensor import (
    Parameter,
    ParamSet,
    Tensor,
    add,
    add_scalar,
    bce_loss,
    broadcast_spatial,
    channel_standardize,
    concat_channels,
    conv2d,
    flatten,
    fully_connected,
    grad_check,
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

DESK = NetConfig(base_channels=4, input_size=32)
TOL = {64: 1e-4, 32: 1e-3}


@dataclass(frozen=True)
class CheckResult:
    name: str
    bits: int
    error: float
    tolerance: float

    @property
    def ok(self):
        return self.error < self.tolerance


def wide_dtype():
    """Widest float numpy offers here; None when long double is just float64."""
    if np.finfo(np.longdouble).eps < np.finfo(np.float64).eps:
        return np.longdouble
    return None


def _param_set(rng, shapes, dtype, scale=0.5):
    return ParamSet(Parameter(n, Tensor(scale * rng.standard_normal(s), dtype=dtype))
                    for n, s in shapes.items())


def _conv_shapes(prefix, cin, cout, k):
    return {prefix + ".w": (cout, cin, k, k), prefix + ".b": (cout,)}


def _dem_shapes(c, levels):
    shapes = {}
    for src in "ab":
        p = f"d.{src}"
        shapes.update(_conv_shapes(p + ".local", c, c, 3))
        shapes[p + ".fc.w"] = (c, c * sum(4 ** j for j in range(levels)))
        shapes[p + ".fc.b"] = (c,)
        shapes.update(_conv_shapes(p + ".gate_local", 2 * c, c, 1))
        shapes.update(_conv_shapes(p + ".gate_global", 2 * c, c, 1))
    return shapes


def _cases(rng, dtype):
    """(name, f, inputs) triples; every f is scalar valued."""
    def t(*shape, scale=1.0):
        return Tensor(scale * rng.standard_normal(shape), dtype=dtype)

    def proj(*shape):
        return rng.standard_normal(shape)

    R8, R4 = proj(2, 4, 8, 8), proj(2, 4, 4, 4)
    proj_r, proj_fc, proj_spp = proj(2, 4, 3, 2), proj(2, 5), proj(2, 4)
    target = (rng.random((2, 1, 8, 8)) > 0.5).astype(np.float64)
    cases = [
        ("conv2d", lambda x, w, b: weighted_sum(conv2d(x, w, b, stride=2, padding=1), R4),
         [t(2, 4, 8, 8), t(4, 4, 3, 3), t(4)]),
        ("conv2d_dilated", lambda x, w, b: weighted_sum(conv2d(x, w, b, padding=2, dilation=2), R8),
         [t(2, 4, 8, 8), t(4, 4, 3, 3), t(4)]),
        ("transposed_conv2d",
         lambda x, w, b: weighted_sum(transposed_conv2d(x, w, b, stride=2, padding=1), R8),
         [t(2, 4, 4, 4), t(4, 4, 4, 4), t(4)]),
        ("maxpool2d", lambda x: weighted_sum(maxpool2d(x), R4), [t(2, 4, 8, 8)]),
        ("region_maxpool", lambda x: weighted_sum(region_maxpool(x, 3, 2), proj_r), [t(2, 4, 8, 8)]),
        ("relu", lambda x: weighted_sum(relu(x), R8), [t(2, 4, 8, 8)]),
        ("sigmoid", lambda x: weighted_sum(sigmoid(x), R8), [t(2, 4, 8, 8)]),
        ("add", lambda a, b: weighted_sum(add(a, b), R8), [t(2, 4, 8, 8), t(2, 4, 8, 8)]),
        ("mul", lambda a, b: weighted_sum(mul(a, b), R8), [t(2, 4, 8, 8), t(2, 4, 8, 8)]),
        ("add_scalar", lambda a: weighted_sum(add_scalar(a, 0.7), R8), [t(2, 4, 8, 8)]),
        ("mul_scalar", lambda a: weighted_sum(mul_scalar(a, -1.3), R8), [t(2, 4, 8, 8)]),
        ("tensor_sum", lambda a: tensor_sum(mul(a, a)), [t(2, 4, 8, 8)]),
        ("tensor_mean", lambda a: tensor_mean(mul(a, a)), [t(2, 4, 8, 8)]),
        ("weighted_sum", lambda a: weighted_sum(a, R8), [t(2, 4, 8, 8)]),
        ("concat_channels", lambda a, b: weighted_sum(concat_channels([a, b]), R8),
         [t(2, 1, 8, 8), t(2, 3, 8, 8)]),
        ("split_channels",
         lambda a: weighted_sum(split_channels(a, [1, 3])[0], R8[:, :1])
         + weighted_sum(split_channels(a, [1, 3])[1], R8[:, 1:]), [t(2, 4, 8, 8)]),
        ("flatten", lambda a: weighted_sum(flatten(a), R8.reshape(2, -1)), [t(2, 4, 8, 8)]),
        ("fully_connected", lambda v, w, b: weighted_sum(fully_connected(v, w, b), proj_fc),
         [t(2, 12), t(5, 12), t(5)]),
        ("broadcast_spatial", lambda v: weighted_sum(broadcast_spatial(v, 8, 8), R8), [t(2, 4)]),
        ("channel_standardize", lambda a: weighted_sum(channel_standardize(a), R8), [t(2, 4, 8, 8)]),
        ("bce_loss", lambda p: bce_loss(sigmoid(p), target), [t(2, 1, 8, 8)]),
    ]

    res = _param_set(rng, {**_conv_shapes("r.conv1", 4, 4, 3), **_conv_shapes("r.conv2", 4, 4, 3)}, dtype)
    inter = _param_set(rng, {k: v for r in (1, 2, 4, 8) for k, v in _conv_shapes(f"i.d{r}", 4, 4, 3).items()},
                       dtype, 0.3)
    up = _param_set(rng, {**_conv_shapes("u.reduce", 8, 2, 1), **_conv_shapes("u.expand", 2, 4, 1),
                          "u.up.w": (2, 2, 4, 4), "u.up.b": (2,)}, dtype)
    dem = _param_set(rng, _dem_shapes(4, 3), dtype, 0.3)

    def dem_f(fa, fb, *ps):
        ha, hb, _ = dem_forward(fa, fb, dem, "d", 3)
        return weighted_sum(ha, R8) + weighted_sum(hb, R8[::-1])

    cases += [
        ("residual_unit", lambda x, *ps: weighted_sum(residual_unit(x, res, "r"), R8),
         [t(2, 4, 8, 8)] + [res[n] for n in res]),
        ("interim_unit", lambda x, *ps: weighted_sum(interim_unit(x, inter, "i"), R8),
         [t(2, 4, 8, 8)] + [inter[n] for n in inter]),
        ("upsampling_unit", lambda x, *ps: weighted_sum(upsampling_unit(x, up, "u"), R8),
         [t(2, 8, 4, 4)] + [up[n] for n in up]),
        ("spp_global", lambda L, w, b: weighted_sum(spp_global(L, 3, w, b), proj_spp),
         [t(2, 4, 8, 8), t(4, 84), t(4)]),
        ("dem_forward", dem_f, [t(2, 4, 8, 8), t(2, 4, 8, 8)] + [dem[n] for n in dem]),
    ]
    return cases


def full_network_check(seed=0, n_coords=128, config=DESK):
    """64-bit analytic gradient of the whole network against a wide-precision reference.

    Biases are drawn nonzero so that no ReLU is evaluated exactly on its kink.
    """
    rng = np.random.default_rng(seed)
    P = init_params(config, seed=seed, dtype=np.float64)
    for n in P:
        if n.endswith(".b"):
            P[n].data[...] = 0.1 * rng.standard_normal(P[n].shape)
    s = config.input_size
    img = Tensor(rng.random((1, config.in_channels_a, s, s)), dtype=np.float64)
    trj = Tensor(rng.random((1, config.in_channels_b, s, s)), dtype=np.float64)
    R = rng.standard_normal((1, 1, s, s))
    wide = wide_dtype()
    err = grad_check(lambda *ts: weighted_sum(forward(img, trj, P, config), R),
                     [P[n] for n in P] + [img, trj], eps=1e-5,
                     n_coords=n_coords, rng=np.random.default_rng(seed), ref_dtype=wide)
    return CheckResult("full_network", 64, err, TOL[64])


def run_gradient_suite(seed=0, full_network=True, n_coords=64, progress=None):
    """Check every op and block at 64 and 32 bits, then (optionally) the full network.

    32-bit checks keep the analytic gradient in float32 and take the
    reference differences in float64; 64-bit checks use a wide reference
    when the platform has one.
    """
    results = []
    for bits, dtype, ref in ((64, np.float64, wide_dtype()), (32, np.float32, np.float64)):
        rng = np.random.default_rng(seed)
        for name, f, inputs in _cases(rng, dtype):
            err = grad_check(f, inputs, eps=1e-6, n_coords=n_coords,
                             rng=np.random.default_rng(seed), ref_dtype=ref)
            results.append(CheckResult(name, bits, err, TOL[bits]))
            if progress:
                progress(results[-1])
    if full_network:
        results.append(full_network_check(seed))
        if progress:
            progress(results[-1])
    return results
