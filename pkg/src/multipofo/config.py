"""Run configuration: a YAML file with nested sections.

Example::

    data:
      synth:
        duration: 35040
        seed: 7
        circuits:
          - circuit_id: campus
            noise_std: 5.0
            components:
              - {period: 48, amplitude: 100.0}
              - {period: 336, amplitude: 100.0}
    split: {train_fraction: 0.75}
    scales:
      - {name: daily, window_len: 48}
      - {name: weekly, window_len: 336}
    train: {stage1_epochs: 50, stage2_epochs: 30, seed: 0}

See README.md for every key and its default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from datetime import timedelta
from pathlib import Path

import yaml

from .data import SplitSpec, TimeSeries, parse_timestamp
from .errors import ConfigError, WindowError
from .multiscale import DEFAULT_WINDOWS, ScaleSpec, check_scales, default_scales
from .nn_core import AdamHyper

SCALE_MIXING = ("pooled", "alternating")


@dataclass
class TrainConfig:
    stage1_epochs: int = 50
    stage2_epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    # head learning rate; None reuses learning_rate
    stage2_learning_rate: float | None = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    masked_reconstruction: bool = False
    target_full_period: bool = False
    scale_mixing: str = "pooled"
    holdout_fraction: float = 0.0
    # "whiten" trains the head on decorrelated latents and folds the result back
    stage2_preconditioning: str = "whiten"
    whiten_rel_cutoff: float = 1e-10

    def __post_init__(self):
        if self.stage1_epochs < 1 or self.stage2_epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0 or (self.stage2_learning_rate is not None and self.stage2_learning_rate < 0):
            raise ConfigError("learning rates must be >= 0")
        if self.scale_mixing not in SCALE_MIXING:
            raise ConfigError(f"scale_mixing must be one of {SCALE_MIXING}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in [0, 1)")
        if self.stage2_preconditioning not in ("whiten", "none"):
            raise ConfigError("stage2_preconditioning must be 'whiten' or 'none'")

    def adam(self, stage: int) -> AdamHyper:
        lr = self.learning_rate
        if stage == 2 and self.stage2_learning_rate is not None:
            lr = self.stage2_learning_rate
        return AdamHyper(lr, self.beta1, self.beta2, self.eps)


@dataclass
class ModelConfig:
    hidden: tuple = (256, 128)
    latent_dim: int = 64
    horizon: int = 1
    one_hot_width: int | None = None
    per_scale_heads: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if len(self.hidden) != 2 or min(self.hidden) < 1 or self.latent_dim < 1:
            raise ConfigError("model.hidden must hold two positive widths and latent_dim must be >= 1")
        if self.horizon != 1:
            raise ConfigError("only horizon 1 (next-period peak) is supported")


@dataclass
class SplitConfig:
    train_end: str | None = None
    test_start: str | None = None
    train_fraction: float = 0.75

    def spec_for(self, series: TimeSeries) -> SplitSpec:
        if self.train_end is None and self.test_start is None:
            return SplitSpec.from_fraction(series, self.train_fraction)
        end = parse_timestamp(self.train_end or self.test_start)
        start = parse_timestamp(self.test_start or self.train_end)
        return SplitSpec(end, start)


@dataclass
class SynthComponentConfig:
    period: float
    amplitude: float
    phase: float = 0.0


@dataclass
class SynthCircuitConfig:
    circuit_id: str = "synthetic"
    components: list = field(default_factory=list)
    base_load: float | None = None
    noise_std: float = 0.0


@dataclass
class SynthConfig:
    duration: int = 35040
    step_minutes: int = 30
    start_time: str = "2015-01-01T00:00:00Z"
    seed: int = 0
    circuits: list = field(default_factory=list)

    def __post_init__(self):
        self.circuits = [
            c if isinstance(c, SynthCircuitConfig) else _build(SynthCircuitConfig, c, "data.synth.circuits")
            for c in self.circuits
        ]
        for c in self.circuits:
            c.components = [
                x if isinstance(x, SynthComponentConfig) else _build(SynthComponentConfig, x, "components")
                for x in c.components
            ]
        if not self.circuits:
            self.circuits = [
                SynthCircuitConfig(
                    "synthetic",
                    [SynthComponentConfig(48, 100.0), SynthComponentConfig(336, 100.0), SynthComponentConfig(1440, 100.0)],
                    None,
                    5.0,
                )
            ]

    def specs(self):
        from .synth import SynthComponent, SynthSpec

        start = parse_timestamp(self.start_time)
        return [
            SynthSpec(
                duration=self.duration,
                components=[SynthComponent(x.period, x.amplitude, x.phase) for x in c.components],
                base_load=c.base_load,
                noise_std=c.noise_std,
                seed=[self.seed, k],
                step=timedelta(minutes=self.step_minutes),
                start_time=start,
                circuit_id=c.circuit_id,
            )
            for k, c in enumerate(self.circuits)
        ]


@dataclass
class OutputConfig:
    out_dir: str | None = None
    checkpoint: str = "model.ckpt"
    train_log: str = "train_log.csv"
    report_json: str = "metrics.json"
    report_csv: str = "metrics.csv"


@dataclass
class RunConfig:
    csv: str | None = None
    synth: SynthConfig | None = None
    split: SplitConfig = field(default_factory=SplitConfig)
    scales: list = field(default_factory=default_scales)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gap_policy: str = "linear"
    groups: dict | None = None
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if (self.csv is None) == (self.synth is None):
            raise ConfigError("exactly one data source (data.csv or data.synth) is required")
        try:
            check_scales(self.scales)
        except WindowError as exc:
            raise ConfigError(f"scales: {exc}") from None
        if self.gap_policy not in ("linear", "forward", "reject"):
            raise ConfigError(f"unknown gap_policy {self.gap_policy!r}")

    @property
    def enabled_scales(self) -> list[ScaleSpec]:
        return check_scales(self.scales)

    def to_dict(self) -> dict:
        d = {
            "data": {"csv": self.csv, "synth": asdict(self.synth) if self.synth else None},
            "split": asdict(self.split),
            "scales": [s.to_dict() for s in self.scales],
            "model": asdict(self.model),
            "train": asdict(self.train),
            "gap_policy": self.gap_policy,
            "groups": self.groups,
            "output": asdict(self.output),
        }
        d["model"]["hidden"] = list(self.model.hidden)
        return d

    def hash(self) -> str:
        """Digest of everything that affects results (output locations excluded)."""
        d = self.to_dict()
        del d["output"]
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _build(cls, raw, section: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {', '.join(sorted(unknown))}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from None


def _scales(raw) -> list[ScaleSpec]:
    if raw is None:
        return default_scales()
    if not isinstance(raw, list):
        raise ConfigError("scales must be a list")
    out = []
    for k, item in enumerate(raw):
        if not isinstance(item, dict) or "name" not in item:
            raise ConfigError(f"scales[{k}] needs at least a name")
        name = item["name"]
        window = item.get("window_len", DEFAULT_WINDOWS.get(name))
        if window is None:
            raise ConfigError(f"scales[{k}] ({name!r}) needs window_len")
        unknown = set(item) - {"name", "window_len", "one_hot_index", "enabled", "stride"}
        if unknown:
            raise ConfigError(f"unknown keys in scales[{k}]: {', '.join(sorted(unknown))}")
        try:
            out.append(
                ScaleSpec(
                    name,
                    int(window),
                    int(item.get("one_hot_index", k)),
                    bool(item.get("enabled", True)),
                    item.get("stride"),
                )
            )
        except WindowError as exc:
            raise ConfigError(str(exc)) from None
    return out


def config_from_dict(raw: dict, base_dir=None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - {"data", "split", "scales", "model", "train", "gap_policy", "groups", "output"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    data = raw.get("data") or {}
    csv_path = data.get("csv")
    if csv_path is not None and base_dir is not None and not Path(csv_path).is_absolute():
        csv_path = str(Path(base_dir) / csv_path)
    synth = _build(SynthConfig, data["synth"], "data.synth") if data.get("synth") is not None else None
    return RunConfig(
        csv=csv_path,
        synth=synth,
        split=_build(SplitConfig, raw.get("split"), "split"),
        scales=_scales(raw.get("scales")),
        model=_build(ModelConfig, raw.get("model"), "model"),
        train=_build(TrainConfig, raw.get("train"), "train"),
        gap_policy=raw.get("gap_policy", "linear"),
        groups=raw.get("groups"),
        output=_build(OutputConfig, raw.get("output"), "output"),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return config_from_dict(raw or {}, base_dir=path.parent)
