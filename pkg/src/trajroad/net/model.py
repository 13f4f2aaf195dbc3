"""Two-branch encoder-decoder with cross-modal enhancement at eight sites."""
import numpy as np

from ..errors import ConfigError, ShapeMismatch
from ..tensor import ops
from ..tensor.core import DEFAULT_DTYPE, Tensor
from ..tensor.nn import Parameter, ParamSet, xavier_init
from .blocks import (
    INTERIM_RATES,
    conv,
    dem_forward,
    effective_levels,
    interim_unit,
    residual_unit,
    upsampling_unit,
)


def branch_names(config):
    return {"dual": ("a", "b"), "image": ("a",), "trajectory": ("b",), "early": ("e",)}[config.modality]


def _branch_in_channels(config, br):
    return {"a": config.in_channels_a, "b": config.in_channels_b,
            "e": config.in_channels_a + config.in_channels_b}[br]


def site_resolutions(config):
    """Spatial extent of the features at enhancement sites 1..8."""
    s = config.input_size
    return [s // 4, s // 8, s // 16, s // 32, s // 16, s // 8, s // 4, s // 2]


def site_channels(config):
    c1, c2, c3, c4 = config.stage_channels
    return [c1, c2, c3, c4, c3, c2, c1, c1]


def param_specs(config):
    """Ordered (name, shape) list; 4-d entries are conv kernels, 2-d are FC."""
    specs = []

    def conv_spec(name, cin, cout, k):
        specs.append((name + ".w", (cout, cin, k, k)))
        specs.append((name + ".b", (cout,)))

    chans = config.stage_channels
    head = config.head_channels
    for br in branch_names(config):
        conv_spec(f"{br}.stem", _branch_in_channels(config, br), chans[0], 7)
        for j in range(4):
            if j > 0:
                conv_spec(f"{br}.enc{j + 1}.widen", chans[j - 1], chans[j], 3)
            for r in range(config.res_counts[j]):
                conv_spec(f"{br}.enc{j + 1}.res{r}.conv1", chans[j], chans[j], 3)
                conv_spec(f"{br}.enc{j + 1}.res{r}.conv2", chans[j], chans[j], 3)
        for rate in INTERIM_RATES:
            conv_spec(f"{br}.inter.d{rate}", chans[3], chans[3], 3)
        dec_io = [(chans[3], chans[2]), (chans[2], chans[1]), (chans[1], chans[0]), (chans[0], chans[0])]
        for j, (cin, cout) in enumerate(dec_io):
            mid = max(1, cin // 4)
            p = f"{br}.dec{j + 1}"
            conv_spec(p + ".reduce", cin, mid, 1)
            specs.append((p + ".up.w", (mid, mid, 4, 4)))
            specs.append((p + ".up.b", (mid,)))
            conv_spec(p + ".expand", mid, cout, 1)
        specs.append((f"{br}.head.up.w", (chans[0], head, 4, 4)))
        specs.append((f"{br}.head.up.b", (head,)))
        conv_spec(f"{br}.head.conv", head, head, 3)

    if config.uses_dem:
        mode = config.dem_mode
        res = site_resolutions(config)
        for i, c in enumerate(site_channels(config), 1):
            levels = effective_levels(res[i - 1], res[i - 1], config.spp_levels)
            for src in ("a", "b"):
                p = f"dem{i}.{src}"
                conv_spec(p + ".local", c, c, 3)
                if mode in ("full", "local_global"):
                    specs.append((p + ".fc.w", (c, c * sum(4 ** j for j in range(levels)))))
                    specs.append((p + ".fc.b", (c,)))
                if mode in ("full", "local_gate"):
                    gin = 2 * c if mode == "full" else c
                    conv_spec(p + ".gate_local", gin, c, 1)
                    if mode == "full":
                        conv_spec(p + ".gate_global", gin, c, 1)
    conv_spec("fuse", head * len(branch_names(config)), 1, 1)
    return specs


def _fans(shape):
    if len(shape) == 4:
        k = shape[2] * shape[3]
        return shape[1] * k, shape[0] * k
    return shape[1], shape[0]


def init_params(config, seed=None, dtype=DEFAULT_DTYPE):
    """Xavier-uniform weights, zero biases, drawn in ``param_specs`` order."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = ParamSet()
    for name, shape in param_specs(config):
        if len(shape) == 1:
            t = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
        else:
            t = xavier_init(shape, *_fans(shape), rng, dtype=dtype)
        params.add(Parameter(name, t))
    return params


def zero_dem(params):
    """Zero every DEM parameter in place (messages vanish, gates sit at 0.5)."""
    for p in params.parameters():
        if p.name.startswith("dem"):
            p.tensor.data[...] = 0


def _encode_block(x, P, prefix, j, n_res):
    x = ops.maxpool2d(x)
    if j > 0:
        x = ops.relu(conv(x, P, prefix + ".widen"))
    for r in range(n_res):
        x = residual_unit(x, P, f"{prefix}.res{r}")
    return x


def forward(image, traj, P, config, record=None, bypass_dem=False):
    """Probability map N x 1 x H x W for image (N x Ca x H x W) and heat-map (N x Cb x H x W).

    ``record``, when a list, receives the DemActivations of each site in
    order.  ``bypass_dem`` skips every enhancement site.
    """
    s = config.input_size
    if s % 32:
        raise ConfigError(f"input_size {s} not divisible by 32")
    inputs = {}
    if config.modality != "trajectory":
        # brightness and contrast vary a lot between tiles; the heat-map is already per-tile normalized
        image = ops.channel_standardize(image)
    if config.modality in ("dual", "image"):
        inputs["a"] = image
    if config.modality in ("dual", "trajectory"):
        inputs["b"] = traj
    if config.modality == "early":
        inputs["e"] = ops.concat_channels([image, traj])
    for br, t in inputs.items():
        want = _branch_in_channels(config, br)
        if t.data.ndim != 4 or t.shape[1] != want or t.shape[2:] != (s, s):
            raise ShapeMismatch(f"branch {br}: expected N x {want} x {s} x {s}, got {t.shape}")

    use_dem = config.uses_dem and not bypass_dem
    res = site_resolutions(config)

    def enhance(x, site):
        if not use_dem:
            return x
        levels = effective_levels(res[site - 1], res[site - 1], config.spp_levels)
        fa, fb, act = dem_forward(x["a"], x["b"], P, f"dem{site}", levels, config.dem_mode)
        if record is not None:
            record.append(act)
        return {"a": fa, "b": fb}

    x = {br: ops.relu(conv(t, P, f"{br}.stem", stride=2)) for br, t in inputs.items()}
    skips = []
    for j in range(4):
        x = {br: _encode_block(v, P, f"{br}.enc{j + 1}", j, config.res_counts[j]) for br, v in x.items()}
        x = enhance(x, j + 1)
        skips.append(x)
    x = {br: interim_unit(v, P, f"{br}.inter") for br, v in x.items()}
    for j in range(4):
        x = {br: upsampling_unit(v, P, f"{br}.dec{j + 1}") for br, v in x.items()}
        if j < 3:
            x = {br: ops.add(v, skips[2 - j][br]) for br, v in x.items()}
        x = enhance(x, 5 + j)

    heads = []
    for br, v in x.items():
        y = ops.relu(ops.transposed_conv2d(v, P[f"{br}.head.up.w"], P[f"{br}.head.up.b"], stride=2, padding=1))
        heads.append(ops.relu(conv(y, P, f"{br}.head.conv")))
    return ops.sigmoid(conv(ops.concat_channels(heads), P, "fuse"))
