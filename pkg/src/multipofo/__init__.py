"""Multi-timescale peak-load forecasting with a shared MLP encoder."""

from .config import RunConfig, TrainConfig, load_config
from .data import Scaler, SplitSpec, TimeSeries, fill_gaps, fit_scaler, ingest_csv, split
from .model import MultipofoModel, build_model, encode, freeze_encoder, predict, reconstruct
from .multiscale import ScaleSpec, build_samples, build_windows, default_scales, embed, pad_to_max
from .synth import SynthComponent, SynthSpec, generate
from .training import run_pipeline, train_stage1, train_stage2

__version__ = "0.1.0"
