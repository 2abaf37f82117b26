"""Run configuration: typed sections, strict JSON loading, stable hashing.

The JSON document has exactly four sections (scale, train, sampler, paths);
unknown keys anywhere are rejected so config drift fails loudly instead of
silently using defaults.
"""

import dataclasses
import hashlib
import json

__all__ = ["ConfigError", "ModelScale", "LossWeights", "TrainConfig",
           "SamplerConfig", "Paths", "RunConfig"]


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class ModelScale:
    input_res: int = 64
    base_channels: int = 64
    levels: int = 4
    d_z: int = 32

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError("scale.levels must be >= 1")
        bot = self.input_res // (1 << self.levels)
        if bot * (1 << self.levels) != self.input_res or bot < 4:
            raise ConfigError(
                "scale.input_res must be 2^levels x bottleneck with bottleneck >= 4; "
                "got input_res=%d levels=%d" % (self.input_res, self.levels))
        if self.d_z < 1:
            raise ConfigError("scale.d_z must be >= 1")
        if self.base_channels < 1:
            raise ConfigError("scale.base_channels must be >= 1")

    @property
    def bottleneck_res(self):
        return self.input_res >> self.levels

    def channels(self, level):
        """Width of the encoder tap at `level` (1 = finest, levels = bottleneck).

        Halves per step away from the bottleneck, floor of 8, so base_channels
        is the widest (bottleneck) width.
        """
        if not 1 <= level <= self.levels:
            raise ConfigError("level %d out of range" % level)
        return max(8, self.base_channels >> (self.levels - level))

    def channels_at(self, res):
        return self.channels(self.level_of(res))

    def level_of(self, res):
        r = self.input_res
        for level in range(1, self.levels + 1):
            r >>= 1
            if r == res:
                return level
        raise ConfigError("no encoder tap at resolution %d" % res)

    def tap_resolutions(self):
        """All pyramid resolutions, finest first."""
        return [self.input_res >> l for l in range(1, self.levels + 1)]

    def fine_resolutions(self):
        """Taps served by the sparse resampler (the finest tap, when it exists
        above the coarse attention range)."""
        if self.levels < 2:
            return []
        return [self.input_res >> 1]

    def coarse_resolutions(self):
        """Taps served by full cross-attention, coarsest first."""
        fine = set(self.fine_resolutions())
        return sorted(r for r in self.tap_resolutions() if r not in fine)


@dataclasses.dataclass
class LossWeights:
    lambda_rec: float = 1.0
    lambda_lpips: float = 10.0
    lambda_gan: float = 0.2
    lambda_dist: float = 1.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError("%s must be >= 0" % f.name)


@dataclasses.dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.99
    batch: int = 4
    steps: int = 100
    seed: int = 0
    weights: LossWeights = dataclasses.field(default_factory=LossWeights)
    drop_prob: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("train.lr must be > 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ConfigError("train.drop_prob must be in [0,1]")
        if self.batch < 1:
            raise ConfigError("train.batch must be >= 1")


@dataclasses.dataclass
class SamplerConfig:
    steps: int = 10
    w: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("sampler.steps must be >= 1")


@dataclasses.dataclass
class Paths:
    data_dir: str = None
    run_dir: str = None


_SECTIONS = {"scale": ModelScale, "train": TrainConfig,
             "sampler": SamplerConfig, "paths": Paths}
_NESTED = {TrainConfig: {"weights": LossWeights}}


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError("section %r must be a JSON object" % where)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError("unknown config key(s) %s in %r" % (unknown, where))
    kwargs = {}
    nested = _NESTED.get(cls, {})
    for key, val in doc.items():
        if key in nested:
            val = _build(nested[key], val, where + "." + key)
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError("bad value in %r: %s" % (where, e))


@dataclasses.dataclass
class RunConfig:
    scale: ModelScale = dataclasses.field(default_factory=ModelScale)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    sampler: SamplerConfig = dataclasses.field(default_factory=SamplerConfig)
    paths: Paths = dataclasses.field(default_factory=Paths)

    @staticmethod
    def from_dict(doc):
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = sorted(set(doc) - set(_SECTIONS))
        if unknown:
            raise ConfigError("unknown config section(s) %s" % unknown)
        kwargs = {k: _build(cls, doc[k], k) for k, cls in _SECTIONS.items() if k in doc}
        return RunConfig(**kwargs)

    @staticmethod
    def from_file(path):
        try:
            with open(path) as f:
                doc = json.load(f)
        except FileNotFoundError:
            raise ConfigError("config file not found: %s" % path)
        except json.JSONDecodeError as e:
            raise ConfigError("config is not valid JSON: %s" % e)
        return RunConfig.from_dict(doc)

    def require_path(self, name):
        val = getattr(self.paths, name)
        if not val:
            raise ConfigError("missing config key: paths.%s" % name)
        return val

    def config_hash(self):
        doc = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]
