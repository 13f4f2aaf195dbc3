"""Network configuration and the flat ``key=value`` config format."""
from dataclasses import dataclass, fields

from ..errors import ConfigError

DEM_MODES = ("full", "local", "local_gate", "local_global", "none")
MODALITIES = ("dual", "image", "trajectory", "early")


@dataclass(frozen=True)
class NetConfig:
    in_channels_a: int = 3
    in_channels_b: int = 1
    base_channels: int = 8
    res_counts: tuple = (1, 1, 1, 1)
    spp_levels: int = 3
    input_size: int = 64
    seed: int = 0
    # ablation switches; the defaults give the full two-branch model
    dem_mode: str = "full"
    modality: str = "dual"

    def __post_init__(self):
        object.__setattr__(self, "res_counts", tuple(int(r) for r in self.res_counts))
        self.validate()

    def validate(self):
        if self.input_size <= 0 or self.input_size % 32:
            raise ConfigError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if self.spp_levels < 1:
            raise ConfigError("spp_levels must be >= 1")
        if len(self.res_counts) != 4 or min(self.res_counts) < 1:
            raise ConfigError(f"res_counts needs four counts >= 1, got {self.res_counts}")
        if min(self.in_channels_a, self.in_channels_b, self.base_channels) < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.dem_mode not in DEM_MODES:
            raise ConfigError(f"dem_mode must be one of {DEM_MODES}")
        if self.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}")

    @property
    def stage_channels(self):
        return [self.base_channels * 2 ** j for j in range(4)]

    @property
    def head_channels(self):
        return max(1, self.base_channels // 2)

    @property
    def uses_dem(self):
        return self.modality == "dual" and self.dem_mode != "none"

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return NetConfig(**values)


def parse_kv(text):
    """Parse flat UTF-8 ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv(pairs):
    return "".join(f"{k}={v}\n" for k, v in pairs.items())


def config_from_kv(pairs):
    known = {f.name: f for f in fields(NetConfig)}
    kwargs = {}
    for key, value in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            if key == "res_counts":
                kwargs[key] = tuple(int(v) for v in value.split(","))
            elif key in ("dem_mode", "modality"):
                kwargs[key] = value
            else:
                kwargs[key] = int(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return NetConfig(**kwargs)


def config_to_kv(config):
    out = {}
    for f in fields(config):
        v = getattr(config, f.name)
        out[f.name] = ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
    return out


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return config_from_kv(parse_kv(fh.read()))


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_kv(config_to_kv(config)))
