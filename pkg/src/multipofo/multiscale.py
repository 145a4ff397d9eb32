"""Per-scale supervised samples: sliding windows, peak targets, padding, scale one-hot.

For a scale with window length ``L`` and anchor ``t`` the input is
``x[t-L+1 .. t]`` and the target is ``max(x[t+1 .. t+L-1])``. That is ``L - 1``
future steps; ``full_period=True`` uses ``L`` future steps instead.
Inputs are zero-padded at the end to ``L_max`` and a one-hot of the scale
index is appended.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, WindowError

# window lengths in 30-minute steps; a month is a fixed 30 days
DEFAULT_WINDOWS = {"daily": 48, "weekly": 336, "monthly": 1440, "yearly": 17520}
DEFAULT_SCALES = ("daily", "weekly", "monthly")


@dataclass(frozen=True)
class ScaleSpec:
    name: str
    window_len: int
    one_hot_index: int
    enabled: bool = True
    stride: int | None = None

    def __post_init__(self):
        if self.window_len < 2:
            raise WindowError(f"scale {self.name!r}: window_len must be >= 2, got {self.window_len}")
        if self.one_hot_index < 0:
            raise WindowError(f"scale {self.name!r}: negative one-hot index")
        if self.stride is not None and self.stride < 1:
            raise WindowError(f"scale {self.name!r}: stride must be >= 1")

    @property
    def effective_stride(self) -> int:
        return self.stride if self.stride is not None else self.window_len

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "window_len": self.window_len,
            "one_hot_index": self.one_hot_index,
            "enabled": self.enabled,
            "stride": self.stride,
        }


def default_scales(names=DEFAULT_SCALES) -> list[ScaleSpec]:
    return [ScaleSpec(name, DEFAULT_WINDOWS[name], i) for i, name in enumerate(names)]


def check_scales(scales) -> list[ScaleSpec]:
    """Return the enabled scales sorted by one-hot index, validating uniqueness."""
    enabled = [s for s in scales if s.enabled]
    if not enabled:
        raise WindowError("no enabled scales")
    seen = {}
    for s in enabled:
        if s.one_hot_index in seen:
            raise WindowError(
                f"scales {seen[s.one_hot_index]!r} and {s.name!r} share one-hot index {s.one_hot_index}"
            )
        seen[s.one_hot_index] = s.name
    names = [s.name for s in enabled]
    if len(set(names)) != len(names):
        raise WindowError(f"duplicate scale names in {names}")
    return sorted(enabled, key=lambda s: s.one_hot_index)


@dataclass(frozen=True)
class TargetSpec:
    horizon: int = 1
    aggregator: str = "max"
    full_period: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.aggregator != "max":
            raise ValueError(f"unsupported aggregator {self.aggregator!r}")


def future_len(window_len: int, full_period: bool = False) -> int:
    return window_len if full_period else window_len - 1


def build_windows(values, scale: ScaleSpec, stride: int | None = None, full_period: bool = False):
    """Slice ``values`` into (inputs, targets, anchors).

    ``inputs`` has shape (n, L), ``targets`` shape (n,), ``anchors`` holds the
    index of the last input step of every window.
    """
    x = np.asarray(values, dtype=np.float64)
    L = scale.window_len
    stride = scale.effective_stride if stride is None else stride
    if stride < 1:
        raise WindowError(f"stride must be >= 1, got {stride}")
    F = future_len(L, full_period)
    required = L + F
    if len(x) < required:
        raise WindowError(
            f"scale {scale.name!r}: series of length {len(x)} is too short, needs at least {required} steps"
        )
    anchors = np.arange(L - 1, len(x) - F, stride)
    inputs = sliding_window_view(x, L)[anchors - L + 1]
    targets = sliding_window_view(x, F)[anchors + 1].max(axis=1)
    return inputs.copy(), targets, anchors


def pad_to_max(window, L_max: int) -> np.ndarray:
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 1:
        raise ShapeError(f"window must be 1-D, got shape {w.shape}")
    if len(w) == 0:
        raise WindowError("cannot pad an empty window")
    if len(w) > L_max:
        raise WindowError(f"window of length {len(w)} exceeds L_max={L_max}")
    out = np.zeros(L_max)
    out[: len(w)] = w
    return out


def one_hot(index: int, size: int) -> np.ndarray:
    if not 0 <= index < size:
        raise WindowError(f"scale index {index} out of range for {size} scales")
    v = np.zeros(size)
    v[index] = 1.0
    return v


def embed(padded, scale: ScaleSpec, I: int) -> np.ndarray:
    padded = np.asarray(padded, dtype=np.float64)
    return np.concatenate([padded, one_hot(scale.one_hot_index, I)])


@dataclass(frozen=True)
class Sample:
    padded_input: np.ndarray
    scale_onehot: np.ndarray
    target: float
    window_len: int
    scale: str
    origin: tuple[str, datetime]

    @property
    def embedded(self) -> np.ndarray:
        return np.concatenate([self.padded_input, self.scale_onehot])


@dataclass
class SampleSet:
    """Column-oriented batch of samples; all values in normalized units."""

    padded: np.ndarray
    onehot: np.ndarray
    targets: np.ndarray
    lengths: np.ndarray
    scale_index: np.ndarray
    circuit_ids: np.ndarray
    anchor_times: list = field(default_factory=list)
    scale_names: tuple = ()

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def L_max(self) -> int:
        return self.padded.shape[1]

    @property
    def I(self) -> int:
        return self.onehot.shape[1]

    @property
    def embedded(self) -> np.ndarray:
        return np.hstack([self.padded, self.onehot])

    @property
    def mask(self) -> np.ndarray:
        """1 where the padded input holds data, 0 on padding."""
        return (np.arange(self.L_max)[None, :] < self.lengths[:, None]).astype(np.float64)

    @property
    def last_period_max(self) -> np.ndarray:
        return np.where(self.mask > 0, self.padded, -np.inf).max(axis=1)

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(
            self.padded[idx],
            self.onehot[idx],
            self.targets[idx],
            self.lengths[idx],
            self.scale_index[idx],
            self.circuit_ids[idx],
            [self.anchor_times[i] for i in np.arange(len(self))[idx]],
            self.scale_names,
        )

    def scale_name(self, index: int) -> str:
        return self.scale_names[index]

    def counts_per_scale(self) -> dict[str, int]:
        return {name: int(np.sum(self.scale_index == i)) for i, name in enumerate(self.scale_names)}

    def __iter__(self):
        for k in range(len(self)):
            yield Sample(
                self.padded[k],
                self.onehot[k],
                float(self.targets[k]),
                int(self.lengths[k]),
                self.scale_names[self.scale_index[k]],
                (str(self.circuit_ids[k]), self.anchor_times[k]),
            )


def layout(scales, I: int | None = None) -> tuple[list[ScaleSpec], int, int]:
    """Enabled scales, ``L_max`` and one-hot width ``I`` for a scale configuration."""
    enabled = check_scales(scales)
    L_max = max(s.window_len for s in enabled)
    width = len(enabled) if I is None else I
    for s in enabled:
        if s.one_hot_index >= width:
            raise WindowError(f"scale {s.name!r} index {s.one_hot_index} does not fit one-hot width {width}")
    return enabled, L_max, width


def build_samples(series_list, scales, I: int | None = None, full_period: bool = False) -> SampleSet:
    """Build padded and embedded samples for every (series, enabled scale).

    ``series_list`` must already be normalized and gap-free; each series is
    windowed on its own so no sample crosses a partition boundary.
    """
    enabled, L_max, width = layout(scales, I)
    names = [""] * width
    for s in enabled:
        names[s.one_hot_index] = s.name

    padded, onehot, targets, lengths, sidx, cids, times = [], [], [], [], [], [], []
    for series in series_list:
        for s in enabled:
            inputs, tgt, anchors = build_windows(series.values, s, full_period=full_period)
            block = np.zeros((len(tgt), L_max))
            block[:, : s.window_len] = inputs
            padded.append(block)
            onehot.append(np.tile(one_hot(s.one_hot_index, width), (len(tgt), 1)))
            targets.append(tgt)
            lengths.append(np.full(len(tgt), s.window_len))
            sidx.append(np.full(len(tgt), s.one_hot_index))
            cids.append(np.full(len(tgt), series.circuit_id, dtype=object))
            times.extend(series.time_at(int(a)) for a in anchors)
    if not padded:
        raise WindowError("no series to build samples from")
    return SampleSet(
        np.vstack(padded),
        np.vstack(onehot),
        np.concatenate(targets),
        np.concatenate(lengths),
        np.concatenate(sidx),
        np.concatenate(cids),
        times,
        tuple(names),
    )
