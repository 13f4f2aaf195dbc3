import math

import numpy as np
import pytest

from trajroad.errors import ConfigError, CorruptCheckpoint, InvalidGrid, ShapeMismatch
from trajroad.net.blocks import (
    dem_forward,
    effective_levels,
    interim_unit,
    residual_unit,
    spp_global,
    upsampling_unit,
)
from trajroad.net.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from trajroad.net.config import NetConfig, config_from_kv, config_to_kv, parse_kv
from trajroad.net.model import forward, init_params, param_specs, site_resolutions, zero_dem
from trajroad.tensor import Parameter, ParamSet, Tensor, grad_check, no_grad, weighted_sum

F64 = np.float64
WIDE = np.longdouble
wide_float = pytest.mark.skipif(np.finfo(WIDE).eps >= np.finfo(F64).eps,
                                reason="long double is no wider than float64 here")


def T(a):
    return Tensor(np.asarray(a, dtype=F64), requires_grad=True, dtype=F64)


def param_set(rng, shapes, scale=0.5):
    return ParamSet(Parameter(n, T(scale * rng.standard_normal(s))) for n, s in shapes.items())


def conv_shapes(prefix, cin, cout, k):
    return {prefix + ".w": (cout, cin, k, k), prefix + ".b": (cout,)}


# units ---------------------------------------------------------------------

def test_residual_unit_zero_weights_is_identity_on_nonnegative():
    rng = np.random.default_rng(0)
    P = param_set(rng, {**conv_shapes("r.conv1", 3, 3, 3), **conv_shapes("r.conv2", 3, 3, 3)}, 0.0)
    x = T(np.abs(rng.standard_normal((2, 3, 6, 6))))
    assert np.array_equal(residual_unit(x, P, "r").data, x.data)


def test_residual_unit_shape_and_gradient():
    rng = np.random.default_rng(1)
    P = param_set(rng, {**conv_shapes("r.conv1", 4, 4, 3), **conv_shapes("r.conv2", 4, 4, 3)})
    x = T(rng.standard_normal((2, 4, 6, 6)))
    assert residual_unit(x, P, "r").shape == x.shape
    R = rng.standard_normal((2, 4, 6, 6))
    err = grad_check(lambda x, *ps: weighted_sum(residual_unit(x, P, "r"), R),
                     [x] + [P[n] for n in P], eps=1e-6)
    assert err < 1e-5


def interim_params(rng, c, scale=0.3):
    shapes = {}
    for r in (1, 2, 4, 8):
        shapes.update(conv_shapes(f"i.d{r}", c, c, 3))
    return param_set(rng, shapes, scale)


def test_interim_unit_zero_weights_identity():
    rng = np.random.default_rng(2)
    P = interim_params(rng, 3, 0.0)
    x = T(rng.standard_normal((1, 3, 4, 4)))
    assert np.array_equal(interim_unit(x, P, "i").data, x.data)


@pytest.mark.parametrize("size", [1, 2, 5, 20])
def test_interim_unit_shape_and_gradient(size):
    rng = np.random.default_rng(3)
    P = interim_params(rng, 2)
    x = T(rng.standard_normal((1, 2, size, size)))
    assert interim_unit(x, P, "i").shape == x.shape
    R = rng.standard_normal((1, 2, size, size))
    err = grad_check(lambda x, *ps: weighted_sum(interim_unit(x, P, "i"), R), [x] + [P[n] for n in P], eps=1e-6)
    assert err < 1e-5


def up_params(rng, cin, cout):
    mid = max(1, cin // 4)
    shapes = {**conv_shapes("u.reduce", cin, mid, 1), **conv_shapes("u.expand", mid, cout, 1),
              "u.up.w": (mid, mid, 4, 4), "u.up.b": (mid,)}
    return param_set(rng, shapes)


def test_upsampling_unit_shape_rule():
    rng = np.random.default_rng(4)
    P = up_params(rng, 64, 32)
    out = upsampling_unit(T(rng.standard_normal((1, 64, 4, 4))), P, "u")
    assert out.shape == (1, 32, 8, 8)


def test_upsampling_unit_gradient():
    rng = np.random.default_rng(5)
    P = up_params(rng, 8, 4)
    x = T(rng.standard_normal((2, 8, 3, 3)))
    R = rng.standard_normal((2, 4, 6, 6))
    err = grad_check(lambda x, *ps: weighted_sum(upsampling_unit(x, P, "u"), R), [x] + [P[n] for n in P], eps=1e-6)
    assert err < 1e-5


# spp_global ----------------------------------------------------------------

def test_spp_feature_length():
    rng = np.random.default_rng(6)
    L = T(rng.standard_normal((1, 2, 8, 8)))
    w = T(rng.standard_normal((2, 42)))
    assert spp_global(L, 3, w, T(np.zeros(2))).shape == (1, 2)
    with pytest.raises(Exception):
        spp_global(L, 3, T(np.ones((2, 40))), T(np.zeros(2)))


def test_spp_single_level_is_global_max():
    rng = np.random.default_rng(7)
    L = T(rng.standard_normal((2, 3, 5, 5)))
    out = spp_global(L, 1, T(np.eye(3)), T(np.zeros(3))).data
    assert np.array_equal(out, L.data.max(axis=(2, 3)))


def test_spp_matches_composition_oracle():
    rng = np.random.default_rng(8)
    for h, w in [(8, 8), (7, 9), (4, 4)]:
        L = rng.standard_normal((2, 3, h, w))
        W = rng.standard_normal((3, 3 * 21))
        b = rng.standard_normal(3)
        feats = []
        for lvl in range(3):
            g = 2 ** lvl
            block = np.zeros((2, 3, g, g))
            for a in range(g):
                for q in range(g):
                    r0, r1 = a * h // g, (a + 1) * h // g
                    c0, c1 = q * w // g, (q + 1) * w // g
                    block[:, :, a, q] = L[:, :, r0:r1, c0:c1].max(axis=(2, 3))
            feats.append(block.reshape(2, -1))
        expect = np.concatenate(feats, axis=1) @ W.T + b
        assert np.allclose(spp_global(T(L), 3, T(W), T(b)).data, expect, atol=1e-6)


def test_spp_invalid_grid_and_levels():
    with pytest.raises(InvalidGrid):
        spp_global(T(np.ones((1, 1, 2, 2))), 3, T(np.ones((1, 21))), T(np.zeros(1)))
    assert effective_levels(16, 16, 3) == 3
    assert effective_levels(2, 2, 3) == 2
    assert effective_levels(1, 1, 3) == 1


def test_spp_gradient():
    rng = np.random.default_rng(9)
    L, W, b = T(rng.standard_normal((2, 2, 8, 8))), T(rng.standard_normal((2, 42))), T(rng.standard_normal(2))
    R = rng.standard_normal((2, 2))
    assert grad_check(lambda L, W, b: weighted_sum(spp_global(L, 3, W, b), R), [L, W, b], eps=1e-6) < 1e-5


# dem_forward ---------------------------------------------------------------

def dem_shapes(c, levels, prefix="d"):
    shapes = {}
    for src in "ab":
        p = f"{prefix}.{src}"
        shapes.update(conv_shapes(p + ".local", c, c, 3))
        shapes[p + ".fc.w"] = (c, c * sum(4 ** j for j in range(levels)))
        shapes[p + ".fc.b"] = (c,)
        shapes.update(conv_shapes(p + ".gate_local", 2 * c, c, 1))
        shapes.update(conv_shapes(p + ".gate_global", 2 * c, c, 1))
    return shapes


def test_dem_zero_params_is_identity():
    rng = np.random.default_rng(10)
    P = param_set(rng, dem_shapes(3, 2), 0.0)
    fa, fb = T(rng.standard_normal((2, 3, 4, 4))), T(rng.standard_normal((2, 3, 4, 4)))
    ha, hb, act = dem_forward(fa, fb, P, "d", 2)
    assert np.array_equal(ha.data, fa.data) and np.array_equal(hb.data, fb.data)
    assert np.all(act.gate_local_a.data == 0.5)


def test_dem_gates_and_global_maps():
    rng = np.random.default_rng(11)
    P = param_set(rng, dem_shapes(4, 3), 0.2)
    fa, fb = T(rng.standard_normal((2, 4, 8, 8))), T(rng.standard_normal((2, 4, 8, 8)))
    ha, hb, act = dem_forward(fa, fb, P, "d", 3)
    assert ha.shape == fa.shape and hb.shape == fb.shape
    for g in (act.gate_local_a, act.gate_global_a, act.gate_local_b, act.gate_global_b):
        assert np.all(g.data > 0) and np.all(g.data < 1)
    for G in (act.global_a, act.global_b):
        assert np.all(G.data == G.data[:, :, :1, :1])


def _sig(z):
    return 1 / (1 + math.exp(-z))


def test_dem_hand_evaluation():
    # one sample, one channel, 2 x 2 maps, two pyramid levels
    fa = [[1.0, 2.0], [3.0, 4.0]]
    fb = [[0.5, -1.0], [2.0, 0.0]]
    k_a = [[0.0, 0.1, 0.0], [0.2, 1.0, -0.3], [0.0, 0.0, 0.5]]
    k_b = [[0.3, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.2, 0.1]]
    bias = {"a": 0.1, "b": -0.2}
    fc = {"a": [0.5, 0.1, -0.2, 0.3, 0.4], "b": [-0.1, 0.2, 0.2, 0.2, 0.2]}
    fcb = {"a": 0.05, "b": 0.0}
    gl = {"a": ([0.7, -0.4], 0.1), "b": ([-0.5, 0.3], 0.2)}
    gg = {"a": ([0.2, 0.6], -0.1), "b": ([0.1, -0.8], 0.0)}
    feats, kernels = {"a": fa, "b": fb}, {"a": k_a, "b": k_b}

    def local(src):
        f, k = feats[src], kernels[src]
        out = [[0.0, 0.0], [0.0, 0.0]]
        for r in range(2):
            for c in range(2):
                acc = bias[src]
                for i in range(3):
                    for j in range(3):
                        rr, cc = r + i - 1, c + j - 1
                        if 0 <= rr < 2 and 0 <= cc < 2:
                            acc += f[rr][cc] * k[i][j]
                out[r][c] = acc
        return out

    msgs = {}
    for src in "ab":
        L = local(src)
        pooled = [max(max(row) for row in L), L[0][0], L[0][1], L[1][0], L[1][1]]
        G = sum(w * v for w, v in zip(fc[src], pooled)) + fcb[src]
        tl = [[_sig(gl[src][0][0] * L[r][c] + gl[src][0][1] * G + gl[src][1]) for c in range(2)] for r in range(2)]
        tg = [[_sig(gg[src][0][0] * L[r][c] + gg[src][0][1] * G + gg[src][1]) for c in range(2)] for r in range(2)]
        msgs[src] = [[tl[r][c] * L[r][c] + tg[r][c] * G for c in range(2)] for r in range(2)]
    expect_a = [[fa[r][c] + msgs["b"][r][c] for c in range(2)] for r in range(2)]
    expect_b = [[fb[r][c] + msgs["a"][r][c] for c in range(2)] for r in range(2)]

    P = ParamSet()
    for src in "ab":
        p = f"d.{src}"
        P.add(Parameter(p + ".local.w", T(np.array(kernels[src]).reshape(1, 1, 3, 3))))
        P.add(Parameter(p + ".local.b", T([bias[src]])))
        P.add(Parameter(p + ".fc.w", T([fc[src]])))
        P.add(Parameter(p + ".fc.b", T([fcb[src]])))
        P.add(Parameter(p + ".gate_local.w", T(np.array(gl[src][0]).reshape(1, 2, 1, 1))))
        P.add(Parameter(p + ".gate_local.b", T([gl[src][1]])))
        P.add(Parameter(p + ".gate_global.w", T(np.array(gg[src][0]).reshape(1, 2, 1, 1))))
        P.add(Parameter(p + ".gate_global.b", T([gg[src][1]])))
    ha, hb, _ = dem_forward(T(np.array(fa).reshape(1, 1, 2, 2)), T(np.array(fb).reshape(1, 1, 2, 2)), P, "d", 2)
    assert np.max(np.abs(ha.data[0, 0] - np.array(expect_a))) < 1e-6
    assert np.max(np.abs(hb.data[0, 0] - np.array(expect_b))) < 1e-6


@wide_float
@pytest.mark.parametrize("mode", ["full", "local", "local_gate", "local_global"])
def test_dem_variants_gradient(mode):
    rng = np.random.default_rng(12)
    shapes = {}
    for src in "ab":
        p = f"d.{src}"
        shapes.update(conv_shapes(p + ".local", 2, 2, 3))
        if mode in ("full", "local_global"):
            shapes[p + ".fc.w"], shapes[p + ".fc.b"] = (2, 2 * 21), (2,)
        if mode in ("full", "local_gate"):
            gin = 4 if mode == "full" else 2
            shapes.update(conv_shapes(p + ".gate_local", gin, 2, 1))
            if mode == "full":
                shapes.update(conv_shapes(p + ".gate_global", gin, 2, 1))
    P = param_set(rng, shapes)
    fa, fb = T(rng.standard_normal((2, 2, 8, 8))), T(rng.standard_normal((2, 2, 8, 8)))
    R1, R2 = rng.standard_normal((2, 2, 8, 8)), rng.standard_normal((2, 2, 8, 8))

    def f(fa, fb, *ps):
        ha, hb, _ = dem_forward(fa, fb, P, "d", 3, mode)
        return weighted_sum(ha, R1) + weighted_sum(hb, R2)

    assert grad_check(f, [fa, fb] + [P[n] for n in P], eps=1e-6, n_coords=96, ref_dtype=WIDE) < 1e-5


def test_dem_shape_mismatch():
    rng = np.random.default_rng(13)
    P = param_set(rng, dem_shapes(2, 1))
    with pytest.raises(ShapeMismatch):
        dem_forward(T(np.ones((1, 2, 4, 4))), T(np.ones((1, 2, 2, 2))), P, "d", 1)


# whole network ---------------------------------------------------------------

TINY = NetConfig(base_channels=4, input_size=32)


def inputs(rng, cfg, n=1, dtype=np.float32):
    s = cfg.input_size
    return (Tensor(rng.random((n, cfg.in_channels_a, s, s)).astype(dtype), dtype=dtype),
            Tensor(rng.random((n, cfg.in_channels_b, s, s)).astype(dtype), dtype=dtype))


@pytest.mark.parametrize("cfg", [
    TINY,
    NetConfig(),
    NetConfig(base_channels=4, input_size=64, res_counts=(2, 1, 3, 1), spp_levels=4),
    NetConfig(base_channels=2, input_size=96, in_channels_b=2),
    TINY.replace(modality="image"),
    TINY.replace(modality="early"),
    TINY.replace(dem_mode="local"),
])
def test_forward_shape_contract(cfg):
    rng = np.random.default_rng(14)
    P = init_params(cfg)
    with no_grad():
        M = forward(*inputs(rng, cfg, n=2), P, cfg)
    assert M.shape == (2, 1, cfg.input_size, cfg.input_size)
    assert np.all(M.data > 0) and np.all(M.data < 1)


def test_site_resolutions_follow_downsampling_ratios():
    cfg = NetConfig(input_size=64)
    assert site_resolutions(cfg) == [16, 8, 4, 2, 4, 8, 16, 32]
    P = init_params(cfg)
    rec = []
    with no_grad():
        forward(*inputs(np.random.default_rng(15), cfg), P, cfg, record=rec)
    assert [a.local_a.shape[2] for a in rec] == [16, 8, 4, 2, 4, 8, 16, 32]
    assert [a.local_a.shape[1] for a in rec] == [8, 16, 32, 64, 32, 16, 8, 8]


def test_config_rejects_bad_input_size():
    with pytest.raises(ConfigError):
        NetConfig(input_size=48)
    with pytest.raises(ConfigError):
        NetConfig(res_counts=(1, 1, 1))


def test_forward_rejects_wrong_input_shape():
    P = init_params(TINY)
    with pytest.raises(ShapeMismatch):
        forward(Tensor(np.zeros((1, 3, 64, 64), np.float32)), Tensor(np.zeros((1, 1, 64, 64), np.float32)), P, TINY)


def test_zero_dem_equals_bypass():
    rng = np.random.default_rng(16)
    P = init_params(NetConfig(seed=3))
    zero_dem(P)
    x = inputs(rng, NetConfig(), n=2)
    with no_grad():
        a = forward(*x, P, NetConfig())
        b = forward(*x, P, NetConfig(), bypass_dem=True)
    assert np.array_equal(a.data, b.data)


def generic_point(cfg, seed):
    """64-bit params with nonzero biases, so no ReLU sits exactly on its kink."""
    rng = np.random.default_rng(seed)
    P = init_params(cfg, seed=seed, dtype=F64)
    for n in P:
        if n.endswith(".b"):
            P[n].data[...] = 0.1 * rng.standard_normal(P[n].shape)
    img, trj = inputs(rng, cfg, dtype=F64)
    return P, img, trj, rng.standard_normal((1, 1, cfg.input_size, cfg.input_size))


@wide_float
@pytest.mark.parametrize("seed", [0, 1])
def test_full_network_gradient_check(seed):
    P, img, trj, R = generic_point(TINY, seed)
    tensors = [P[n] for n in P] + [img, trj]
    err = grad_check(lambda *ts: weighted_sum(forward(img, trj, P, TINY), R), tensors, eps=1e-5,
                     n_coords=128, rng=np.random.default_rng(seed), ref_dtype=WIDE)
    assert err < 1e-4


# config / checkpoints ---------------------------------------------------------

def test_config_kv_round_trip():
    cfg = NetConfig(base_channels=4, res_counts=(3, 3, 5, 2), spp_levels=2, input_size=128, seed=9)
    assert config_from_kv(parse_kv("".join(f"{k}={v}\n" for k, v in config_to_kv(cfg).items()))) == cfg
    assert config_from_kv(parse_kv("base_channels=4\nres_counts=1,2,1,2\n")).res_counts == (1, 2, 1, 2)
    with pytest.raises(ConfigError):
        config_from_kv({"bogus": "1"})


def test_param_names_unique_and_complete():
    for cfg in (NetConfig(), TINY.replace(dem_mode="local_gate"), TINY.replace(modality="image")):
        names = [n for n, _ in param_specs(cfg)]
        assert len(names) == len(set(names))
        assert init_params(cfg).names() == names


def test_checkpoint_round_trip(tmp_path):
    P = init_params(TINY, seed=1)
    path = tmp_path / "a.ckp"
    save_checkpoint(P, path)
    Q = load_checkpoint(path, TINY)
    save_checkpoint(Q, tmp_path / "b.ckp")
    assert path.read_bytes() == (tmp_path / "b.ckp").read_bytes()
    assert Q.names() == P.names()
    rng = np.random.default_rng(18)
    x = inputs(rng, TINY, n=2)
    with no_grad():
        assert np.array_equal(forward(*x, P, TINY).data, forward(*x, Q, TINY).data)


def test_checkpoint_layout():
    P = ParamSet([Parameter("w", Tensor(np.array([[1.5, -2.0]], np.float32)))])
    buf = encode_checkpoint(P)
    assert buf == (b"CKP1" + (1).to_bytes(4, "little") + (1).to_bytes(2, "little") + b"w"
                   + (2).to_bytes(4, "little") + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                   + np.array([1.5, -2.0], "<f4").tobytes())


def test_checkpoint_corruption(tmp_path):
    buf = encode_checkpoint(init_params(TINY))
    with pytest.raises(CorruptCheckpoint):
        decode_checkpoint(buf[:-5])
    with pytest.raises(CorruptCheckpoint):
        decode_checkpoint(b"CKP2" + buf[4:])
    with pytest.raises(CorruptCheckpoint):
        decode_checkpoint(buf + b"\0")


def test_checkpoint_config_mismatch(tmp_path):
    save_checkpoint(init_params(TINY), tmp_path / "c.ckp")
    with pytest.raises(ShapeMismatch):
        load_checkpoint(tmp_path / "c.ckp", NetConfig())
