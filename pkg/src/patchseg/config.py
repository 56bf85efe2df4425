"""Pipeline configuration: TOML files, flag overrides, validation.

Every knob has a documented default; unknown keys are rejected rather than
ignored so typos cannot silently change a run.  The same dictionary shape
is embedded into run manifests, which makes a manifest sufficient to
reproduce its run.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .metrics import DSB_COARSE_THRESHOLDS, DSB_FINE_THRESHOLDS

_THRESHOLD_PRESETS = {
    "fine": DSB_FINE_THRESHOLDS,     # 0.5 : 0.05 : 0.95
    "coarse": DSB_COARSE_THRESHOLDS,  # 0.5 : 0.1 : 0.9
}


class ConfigError(ValueError):
    pass


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("PATCHSEG_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class SynthConfig:
    kind: str = "blobs"                      # blobs | strips | crossing-strips
    size: tuple[int, ...] = (64, 64)
    num_instances: tuple[int, int] = (3, 8)  # inclusive range, or a single int
    semi_axes: tuple[float, float] = (2.5, 7.0)
    width: int = 5
    flip_prob: float = 0.0
    jitter_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("blobs", "strips", "crossing-strips"):
            raise ConfigError(f"synth.kind must be blobs|strips|crossing-strips, got {self.kind!r}")
        self.size = tuple(int(s) for s in _as_seq(self.size))
        if isinstance(self.num_instances, int):
            self.num_instances = (self.num_instances, self.num_instances)
        else:
            self.num_instances = tuple(int(v) for v in self.num_instances)
        self.semi_axes = tuple(float(v) for v in self.semi_axes)

    def shape_params(self) -> dict:
        if self.kind == "blobs":
            return {"num_instances": self.num_instances, "semi_axes": self.semi_axes}
        if self.kind == "strips":
            return {"num_instances": self.num_instances, "width": self.width}
        return {"width": self.width}


@dataclass
class BenchConfig:
    extents: tuple[tuple[int, ...], ...] = ((7, 7), (13, 13))
    sizes: tuple[tuple[int, ...], ...] = ((64, 64), (128, 128))
    kind: str = "strips"
    width: int = 9
    num_instances: tuple[int, int] = (4, 8)
    sparse: bool = True

    def __post_init__(self):
        self.extents = tuple(tuple(int(v) for v in e) for e in self.extents)
        self.sizes = tuple(tuple(int(v) for v in s) for s in self.sizes)


@dataclass
class PipelineConfig:
    extents: tuple[int, ...] = (7, 7)
    t: float = 0.9
    fg_threshold: float = 0.5
    sparse: bool = False
    partitioner: str = "mws"    # mws | cc
    mws_dense: bool = False     # baseline: skip consensus, partition pixels
    thinout: bool = True
    min_instance_size: int = 0
    thresholds: tuple[float, ...] = DSB_FINE_THRESHOLDS
    threads: int = field(default_factory=default_threads)
    seed: int = 0
    input: str | None = None
    output: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def __post_init__(self):
        self.extents = tuple(int(e) for e in _as_seq(self.extents))
        for e in self.extents:
            if e < 1 or e % 2 == 0:
                raise ConfigError(f"extents must be odd, got {self.extents}")
        if not 1 <= len(self.extents) <= 3:
            raise ConfigError("extents must have 1 to 3 axes")
        if not 0.5 <= self.t <= 1.0:
            raise ConfigError(f"t must lie in [0.5, 1.0], got {self.t}")
        if not 0.0 < self.fg_threshold < 1.0:
            raise ConfigError(f"fg_threshold must lie in (0, 1), got {self.fg_threshold}")
        if self.partitioner not in ("mws", "cc"):
            raise ConfigError(f"partitioner must be mws|cc, got {self.partitioner!r}")
        if self.min_instance_size < 0:
            raise ConfigError("min_instance_size must be >= 0")
        if isinstance(self.thresholds, str):
            try:
                self.thresholds = _THRESHOLD_PRESETS[self.thresholds]
            except KeyError:
                raise ConfigError(
                    f"thresholds preset must be one of {sorted(_THRESHOLD_PRESETS)}"
                ) from None
        self.thresholds = tuple(float(v) for v in self.thresholds)
        if not self.thresholds:
            raise ConfigError("thresholds must be non-empty")
        for th in self.thresholds:
            if not 0.0 < th < 1.0:
                raise ConfigError(f"thresholds must lie in (0, 1), got {th}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["extents"] = list(self.extents)
        doc["thresholds"] = list(self.thresholds)
        doc["synth"]["size"] = list(self.synth.size)
        doc["synth"]["num_instances"] = list(self.synth.num_instances)
        doc["synth"]["semi_axes"] = list(self.synth.semi_axes)
        doc["bench"]["extents"] = [list(e) for e in self.bench.extents]
        doc["bench"]["sizes"] = [list(s) for s in self.bench.sizes]
        doc["bench"]["num_instances"] = list(self.bench.num_instances)
        return doc


def _as_seq(value):
    if isinstance(value, (list, tuple)):
        return value
    raise ConfigError(f"expected a list, got {value!r}")


def config_from_dict(data: dict) -> PipelineConfig:
    """Build and validate a config, rejecting unknown keys."""
    data = dict(data)
    kwargs = {}
    known = {f for f in PipelineConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for section, cls in (("synth", SynthConfig), ("bench", BenchConfig)):
        if section in data:
            sub = data.pop(section)
            if not isinstance(sub, dict):
                raise ConfigError(f"[{section}] must be a table")
            sub_known = set(cls.__dataclass_fields__)
            sub_unknown = set(sub) - sub_known
            if sub_unknown:
                raise ConfigError(f"unknown [{section}] keys: {sorted(sub_unknown)}")
            kwargs[section] = cls(**sub)
    kwargs.update(data)
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read a TOML config file (optional) and apply flag overrides on top."""
    data: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key in ("synth", "bench"):
                data.setdefault(key, {}).update(
                    {k: v for k, v in value.items() if v is not None}
                )
            else:
                data[key] = value
    return config_from_dict(data)
