"""Synthetic load: a base level plus sinusoids plus Gaussian noise.

``x[t] = base + sum_k A_k * sin(2*pi*t / P_k + phi_k) + noise[t]``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .data import DEFAULT_STEP, TimeSeries
from .errors import ConfigError
from .multiscale import ScaleSpec, future_len
from .nn_core import seed_rng


@dataclass(frozen=True)
class SynthComponent:
    period: float
    amplitude: float
    phase: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    duration: int
    components: list = field(default_factory=list)
    base_load: float | None = None
    noise_std: float = 0.0
    seed: int | list = 0
    step: timedelta = DEFAULT_STEP
    start_time: datetime = datetime(2015, 1, 1, tzinfo=timezone.utc)
    circuit_id: str = "synthetic"

    def __post_init__(self):
        if self.duration < 1:
            raise ConfigError(f"synthetic duration must be >= 1 step, got {self.duration}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        for c in self.components:
            if c.amplitude < 0:
                raise ConfigError(f"component amplitude must be >= 0, got {c.amplitude}")
            if c.period <= 0:
                raise ConfigError(f"component period must be > 0, got {c.period}")
        floor = self.min_base_load
        if self.base_load is None:
            object.__setattr__(self, "base_load", floor)
        elif self.base_load < floor:
            raise ConfigError(
                f"base_load {self.base_load} is below sum of amplitudes + 4*noise_std = {floor}"
            )

    @property
    def min_base_load(self) -> float:
        return sum(c.amplitude for c in self.components) + 4.0 * self.noise_std


def generate(spec: SynthSpec) -> TimeSeries:
    t = np.arange(spec.duration, dtype=np.float64)
    x = np.full(spec.duration, float(spec.base_load))
    for c in spec.components:
        x += c.amplitude * np.sin(2.0 * np.pi * t / c.period + c.phase)
    if spec.noise_std > 0:
        x += seed_rng(spec.seed).normal(0.0, spec.noise_std, size=spec.duration)
    return TimeSeries(spec.circuit_id, spec.start_time, x, spec.step)


def signal_at(spec: SynthSpec, t: int) -> float:
    """Noise-free signal at step ``t``, evaluated one scalar at a time."""
    return spec.base_load + sum(
        c.amplitude * math.sin(2.0 * math.pi * t / c.period + c.phase) for c in spec.components
    )


def oracle_max_targets(
    spec: SynthSpec, scale: ScaleSpec, stride: int | None = None, full_period: bool = False
) -> np.ndarray:
    """Peak of the noise-free signal over each target slice, by dense scalar evaluation.

    Anchors follow the same convention as the windowing code (first anchor at
    ``L - 1``, stepping by ``stride``) but are enumerated here independently.
    """
    if spec.noise_std != 0:
        raise ConfigError("oracle targets need a noise-free spec (noise_std = 0)")
    L = scale.window_len
    stride = stride or scale.effective_stride
    F = future_len(L, full_period)
    out = []
    t = L - 1
    while t + F <= spec.duration - 1:
        out.append(max(signal_at(spec, u) for u in range(t + 1, t + F + 1)))
        t += stride
    return np.array(out)
