"""Two-stage training and the end-to-end pipeline.

Stage 1 fits encoder and decoder on reconstruction of the padded inputs.
Stage 2 freezes both and fits only the linear head on the peak targets.
Batch losses are averaged over the batch.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import RunConfig, TrainConfig
from .errors import ContractError, MultipofoError, PipelineError, TrainingError
from .evaluation import MetricsReport, evaluate
from .model import MultipofoModel, build_model, encode, freeze_encoder, params_hash, predict, reconstruct
from .multiscale import SampleSet, build_samples
from .nn_core import IDENTITY, AdamState, DenseLayer, GradientTape, adam_step, backward_stack, forward, init_dense, seed_rng

log = logging.getLogger(__name__)

STAGE1 = "stage1"
STAGE2 = "stage2"


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)
    wall_time: dict = field(default_factory=dict)
    seed: int | None = None
    config_hash: str | None = None

    def add(self, epoch: int, stage: str, loss: float):
        if not np.isfinite(loss):
            raise TrainingError(f"{stage} epoch {epoch}: non-finite loss {loss}")
        self.entries.append((epoch, stage, float(loss)))

    def losses(self, stage: str) -> list[float]:
        return [loss for _, s, loss in self.entries if s == stage]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("epoch", "stage", "loss"))
            for epoch, stage, loss in self.entries:
                writer.writerow((epoch, stage, repr(loss)))

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        with Path(path).open(newline="") as fh:
            return cls([(int(r["epoch"]), r["stage"], float(r["loss"])) for r in csv.DictReader(fh)])


def _batches(samples: SampleSet, config: TrainConfig, rng: np.random.Generator) -> list[np.ndarray]:
    n, bs = len(samples), config.batch_size
    if config.scale_mixing == "pooled":
        order = rng.permutation(n)
        return [order[k : k + bs] for k in range(0, n, bs)]
    per_scale = []
    for i in np.unique(samples.scale_index):
        idx = rng.permutation(np.flatnonzero(samples.scale_index == i))
        per_scale.append([idx[k : k + bs] for k in range(0, len(idx), bs)])
    out = []
    for round_ in range(max(len(b) for b in per_scale)):
        out.extend(b[round_] for b in per_scale if round_ < len(b))
    return out


def _holdout(samples: SampleSet, fraction: float, rng: np.random.Generator):
    if fraction <= 0:
        return samples, None
    order = rng.permutation(len(samples))
    k = max(1, int(round(fraction * len(samples))))
    return samples.subset(np.sort(order[k:])), samples.subset(np.sort(order[:k]))


def reconstruction_loss(model: MultipofoModel, samples: SampleSet, masked: bool = False) -> float:
    """Mean over samples of the squared reconstruction error of the padded input."""
    diff = reconstruct(model, encode(model, samples.embedded)) - samples.padded
    if masked:
        diff = diff * samples.mask
    return float(np.mean(np.sum(diff * diff, axis=1)))


def prediction_loss(model: MultipofoModel, samples: SampleSet) -> float:
    yhat = predict(model, encode(model, samples.embedded), samples.scale_index)[:, 0]
    return float(np.mean((yhat - samples.targets) ** 2))


def train_stage1(model: MultipofoModel, samples: SampleSet, config: TrainConfig, rng=None, log_=None):
    rng = seed_rng(config.seed) if rng is None else rng
    log_ = TrainLog(seed=config.seed) if log_ is None else log_
    if len(samples) == 0:
        raise TrainingError("stage 1 needs at least one sample")
    if model.frozen_encoder or any(layer.frozen for layer in (*model.encoder, *model.decoder)):
        raise ContractError("stage 1 needs an unfrozen encoder and decoder")
    train, held = _holdout(samples, config.holdout_fraction, rng)
    layers = [*model.encoder, *model.decoder]
    hyper = config.adam(1)
    state = AdamState()
    tape = GradientTape()
    X, T = train.embedded, train.padded
    M = train.mask if config.masked_reconstruction else None
    started = time.perf_counter()
    for epoch in range(1, config.stage1_epochs + 1):
        total = 0.0
        for b, idx in enumerate(_batches(train, config, rng)):
            tape.clear()
            rec = reconstruct(model, encode(model, X[idx], tape), tape)
            diff = rec - T[idx]
            if M is not None:
                diff = diff * M[idx]
            loss = float(np.sum(diff * diff)) / len(idx)
            if not np.isfinite(loss):
                raise TrainingError(f"stage 1: non-finite loss at epoch {epoch}, batch {b}")
            backward_stack(layers, 2.0 * diff / len(idx), tape)
            try:
                adam_step(layers, tape, state, hyper)
            except TrainingError as exc:
                raise TrainingError(f"stage 1 epoch {epoch}, batch {b}: {exc}") from None
            total += loss * len(idx)
        log_.add(epoch, STAGE1, total / len(train))
        if held is not None:
            log_.add(epoch, STAGE1 + "-holdout", reconstruction_loss(model, held, config.masked_reconstruction))
        log.debug("stage 1 epoch %d loss %.6g", epoch, total / len(train))
    log_.wall_time[STAGE1] = time.perf_counter() - started
    return model, log_


def whitening(Z: np.ndarray, rel_cutoff: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Mean and projection ``P`` such that ``(Z - mean) @ P`` has identity covariance.

    Directions with variance below ``rel_cutoff`` times the largest are dropped.
    """
    mean = Z.mean(axis=0)
    cov = np.cov(Z - mean, rowvar=False, bias=True).reshape(Z.shape[1], Z.shape[1])
    eigval, eigvec = np.linalg.eigh(cov)
    top = eigval.max() if eigval.size else 0.0
    keep = eigval > max(rel_cutoff * top, 0.0) if top > 0 else np.zeros(len(eigval), dtype=bool)
    return mean, eigvec[:, keep] / np.sqrt(eigval[keep])


def _from_whitened(heads, whitened, starts, mean, P) -> list[DenseLayer]:
    """Heads rebuilt from their whitened form; untouched heads are returned as they were."""
    out = []
    for head, w, w0 in zip(heads, whitened, starts):
        if np.array_equal(w.weights, w0.weights) and np.array_equal(w.bias, w0.bias):
            out.append(head)
            continue
        W = w.weights @ P.T
        out.append(replace(head, weights=W, bias=w.bias - W @ mean))
    return out


def train_stage2(model: MultipofoModel, samples: SampleSet, config: TrainConfig, rng=None, log_=None):
    """Fit the linear head on frozen latents with Adam.

    With ``stage2_preconditioning="whiten"`` Adam works on ``u . ((z - mean) P) + c``,
    where ``P`` whitens the training latents and ``(u, c)`` get a fresh Glorot
    init. The result is mapped back afterwards, so the trained head is
    still ``W z + b`` with ``W = u P^T`` and ``b = c - W mean``.
    """
    rng = seed_rng(config.seed) if rng is None else rng
    log_ = TrainLog(seed=config.seed) if log_ is None else log_
    if not model.frozen_encoder:
        raise ContractError("stage 2 requires freeze_encoder() to be applied first")
    if len(samples) == 0:
        raise TrainingError("stage 2 needs at least one sample")
    frozen_hash = params_hash([*model.encoder, *model.decoder])
    train, held = _holdout(samples, config.holdout_fraction, rng)
    # the encoder is frozen, so latents are computed once
    Z = encode(model, train.embedded)
    Y = train.targets[:, None]
    S = train.scale_index

    if config.stage2_preconditioning == "whiten":
        mean, P = whitening(Z, config.whiten_rel_cutoff)
        feats = (Z - mean) @ P
        # fresh Glorot init in the whitened coordinates
        trainable = [
            init_dense(P.shape[1], head.out_dim, IDENTITY, rng, f"{head.name}.whitened") for head in model.heads
        ]
        starts = [replace(w, weights=w.weights.copy(), bias=w.bias.copy()) for w in trainable]
    else:
        feats, trainable = Z, list(model.heads)

    hyper = config.adam(2)
    state = AdamState()
    tape = GradientTape()
    started = time.perf_counter()
    for epoch in range(1, config.stage2_epochs + 1):
        total = 0.0
        for b, idx in enumerate(_batches(train, config, rng)):
            tape.clear()
            used = []
            loss = 0.0
            for k, layer in enumerate(trainable):
                rows = idx if not model.per_scale_heads else idx[S[idx] == k]
                if len(rows) == 0:
                    continue
                diff = forward(layer, feats[rows], tape) - Y[rows]
                loss += float(np.sum(diff * diff))
                backward_stack([layer], 2.0 * diff / len(idx), tape)
                used.append(layer)
            loss /= len(idx)
            if not np.isfinite(loss):
                raise TrainingError(f"stage 2: non-finite loss at epoch {epoch}, batch {b}")
            try:
                adam_step(used, tape, state, hyper)
            except TrainingError as exc:
                raise TrainingError(f"stage 2 epoch {epoch}, batch {b}: {exc}") from None
            total += loss * len(idx)
        log_.add(epoch, STAGE2, total / len(train))
        if held is not None:
            probe = model
            if config.stage2_preconditioning == "whiten":
                probe = replace(model, heads=_from_whitened(model.heads, trainable, starts, mean, P))
            log_.add(epoch, STAGE2 + "-holdout", prediction_loss(probe, held))
    if config.stage2_preconditioning == "whiten":
        model.heads = _from_whitened(model.heads, trainable, starts, mean, P)
    log_.wall_time[STAGE2] = time.perf_counter() - started
    if params_hash([*model.encoder, *model.decoder]) != frozen_hash:
        raise ContractError("encoder/decoder parameters changed during stage 2")
    return model, log_


@dataclass
class PipelineResult:
    model: MultipofoModel
    report: MetricsReport
    log: TrainLog
    train_samples: SampleSet
    test_samples: SampleSet


def _stage(name):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, PipelineError) and isinstance(exc, (MultipofoError, ValueError)):
                raise PipelineError(name, exc) from exc
            return False

    return _Ctx()


def load_series(config: RunConfig) -> list:
    """Raw series for the configured data source."""
    if config.csv is not None:
        return data_mod.ingest_csv(config.csv)
    from .synth import generate

    return [generate(spec) for spec in config.synth.specs()]


def prepare_samples(series_list, config: RunConfig, scalers=None):
    """Fill gaps, split, fit scalers on training data, normalize and window.

    Returns ``(train_samples, test_samples, scalers)``. Scalers passed in are
    reused for their circuits; missing ones are fitted on the training partition.
    """
    with _stage("fill_gaps"):
        filled = [data_mod.fill_gaps(s, config.gap_policy) for s in series_list]
    with _stage("split"):
        parts = [data_mod.split(s, config.split.spec_for(s)) for s in filled]
    with _stage("scale"):
        scalers = dict(scalers or {})
        for train, _ in parts:
            if train.circuit_id not in scalers:
                scalers[train.circuit_id] = data_mod.fit_scaler(train)
        norm_train = [t.with_values(scalers[t.circuit_id].transform(t.values)) for t, _ in parts]
        norm_test = [t.with_values(scalers[t.circuit_id].transform(t.values)) for _, t in parts]
    with _stage("samples"):
        I = config.model.one_hot_width
        full = config.train.target_full_period
        train_samples = build_samples(norm_train, config.scales, I, full)
        test_samples = build_samples(norm_test, config.scales, I, full)
    return train_samples, test_samples, scalers


def run_pipeline(series_list, config: RunConfig) -> PipelineResult:
    tc = config.train
    train_samples, test_samples, scalers = prepare_samples(series_list, config)
    rng = seed_rng(tc.seed)
    log_ = TrainLog(seed=tc.seed, config_hash=config.hash())
    with _stage("model"):
        model = build_model(
            config.scales,
            rng,
            config.model.hidden,
            config.model.latent_dim,
            config.model.horizon,
            config.model.one_hot_width,
            config.model.per_scale_heads,
        )
        model.scalers = scalers
        model.meta = {"seed": tc.seed, "config_hash": config.hash(), "target_full_period": tc.target_full_period}
    with _stage(STAGE1):
        train_stage1(model, train_samples, tc, rng, log_)
    freeze_encoder(model)
    with _stage(STAGE2):
        train_stage2(model, train_samples, tc, rng, log_)
    with _stage("evaluate"):
        report = evaluate(
            model,
            train_samples,
            test_samples,
            config.groups,
            {"seed": tc.seed, "config_hash": config.hash()},
        )
    return PipelineResult(model, report, log_, train_samples, test_samples)
