"""Holdout-model pretraining, the online selection loop, and sequence replay."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import sequence as seqfile
from .acquisition import (
    AcquisitionKind,
    IrreducibleLossTable,
    ScoreVector,
    current_loss,
    score,
    select_top_k,
)
from .data import DatasetBundle, EpochSchedule, ExampleSet
from .metrics import MetricsRow
from .model import ModelSpec, ModelState, OptimizerConfig, forward, init_params, mean_loss, train_step

log = logging.getLogger(__name__)

# sub-stream tags mixed into the run seed
_SCHEDULE, _DROPOUT, _SCORING, _SHUFFLE = 1, 2, 3, 4


def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


class FingerprintMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TrainLoopConfig:
    large_batch_size: int = 320
    batch_size: int = 32
    total_steps: int = 1500
    kind: AcquisitionKind = AcquisitionKind.REDUCIBLE
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    eval_every: int = 50
    seed: int = 0
    bald_mc_samples: int = 10
    bald_warmup_steps: int = 200
    dump_scores: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", AcquisitionKind(self.kind))
        if self.batch_size < 1 or self.large_batch_size < self.batch_size:
            raise ValueError("need large_batch_size >= batch_size >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")
        if self.eval_every < 1:
            raise ValueError("eval_every must be positive")
        if self.kind is AcquisitionKind.BALD and self.bald_mc_samples < 2:
            raise ValueError("bald_mc_samples must be at least 2")


@dataclass(frozen=True)
class IrreducibleModelConfig:
    spec: ModelSpec
    max_epochs: int = 200
    patience: int = 5
    tolerance: float = 1e-4
    batch_size: int = 32
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be at least 1")


@dataclass
class TrainRunResult:
    rows: list[MetricsRow]
    final_fingerprint: str
    corrupted_frac: np.ndarray  # per step, selected batch
    whitenoise_frac: np.ndarray
    mean_score: np.ndarray
    score_dumps: list[ScoreVector] = field(default_factory=list)
    consumed: list[np.ndarray] = field(default_factory=list)
    sequence_path: str | None = None


def evaluate(model: ModelState, test: ExampleSet) -> float:
    """Argmax accuracy in eval mode; argmax ties resolve to the lowest class index."""
    if len(test) == 0:
        raise ValueError("empty test set")
    logits = forward(model, test.features, mode="eval", cache=False).logits
    return float(np.mean(np.argmax(logits, axis=1) == test.labels))


def train_irreducible_model(cfg: IrreducibleModelConfig, validation: ExampleSet, train: ExampleSet, seed):
    """Fit the holdout model on validation data, then score every training point.

    Training stops once the full validation loss has failed to improve by
    more than ``tolerance`` for ``patience`` consecutive epochs.
    """
    if len(validation) == 0:
        raise ValueError("validation set is empty")
    state = init_params(cfg.spec, seed)
    shuffle, dropout = _rng(seed, _SHUFFLE), _rng(seed, _DROPOUT)
    best, waited, epochs = math.inf, 0, 0
    n = len(validation)
    for epoch in range(cfg.max_epochs):
        perm = shuffle.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            p = perm[lo : lo + cfg.batch_size]
            state, _ = train_step(state, validation.features[p], validation.labels[p], cfg.optimizer, dropout)
        epochs = epoch + 1
        loss = mean_loss(state, validation.features, validation.labels)
        if loss < best - cfg.tolerance:
            best, waited = loss, 0
        else:
            waited += 1
            if waited >= cfg.patience:
                break
    log.info("holdout model stopped after %d epochs (validation loss %.4f)", epochs, best)
    table = IrreducibleLossTable(train.ids, current_loss(state, train), state.fingerprint())
    return state, table


def _step_row(step, model, test, sel: ExampleSet, sel_scores):
    return MetricsRow(
        step,
        evaluate(model, test),
        float(sel.corrupted.mean()),
        float(sel.white_noise.mean()),
        float(np.mean(sel_scores)) if sel_scores is not None else math.nan,
        float(np.max(sel_scores)) if sel_scores is not None else math.nan,
    )


def _is_eval_step(step, cfg):
    return step % cfg.eval_every == 0 or step == cfg.total_steps


def run_selection_loop(cfg: TrainLoopConfig, spec: ModelSpec, bundle: DatasetBundle, irr_table=None, seed=None):
    """Train a model by online batch selection and record the chosen batches.

    Returns ``(state, sequence_file, result)``.
    """
    seed = cfg.seed if seed is None else seed
    kind = cfg.kind
    if kind.needs_irreducible:
        if irr_table is None:
            raise ValueError(f"acquisition kind {kind.value!r} needs an irreducible-loss table")
        irr_table.lookup(bundle.train.ids)
    if kind is AcquisitionKind.BALD and spec.dropout_rate <= 0.0:
        raise ValueError("BALD selection needs a model with dropout")

    train = bundle.train
    state = init_params(spec, seed)
    schedule = EpochSchedule(train.ids, cfg.large_batch_size, cfg.batch_size, _rng(seed, _SCHEDULE))
    dropout, scoring = _rng(seed, _DROPOUT), _rng(seed, _SCORING)

    batches, rows, dumps = [], [], []
    corrupted = np.zeros(cfg.total_steps)
    white = np.zeros(cfg.total_steps)
    sel_mean = np.zeros(cfg.total_steps)
    for t in range(1, cfg.total_steps + 1):
        large = train.take(train.positions(schedule.next_large_batch()))
        step_kind = kind
        if kind is AcquisitionKind.BALD and t <= cfg.bald_warmup_steps:
            step_kind = AcquisitionKind.UNIFORM
        sv = score(step_kind, state, irr_table, large, rng=scoring, step=t, mc_samples=cfg.bald_mc_samples)
        chosen = select_top_k(sv, cfg.batch_size)
        pos = large.positions(chosen)
        sel = large.take(pos)
        sel_scores = sv.scores[pos]
        if cfg.dump_scores and _is_eval_step(t, cfg):
            dumps.append(sv)

        state, _ = train_step(state, sel.features, sel.labels, cfg.optimizer, dropout)
        batches.append(chosen)
        corrupted[t - 1] = sel.corrupted.mean()
        white[t - 1] = sel.white_noise.mean()
        sel_mean[t - 1] = sel_scores.mean()
        if _is_eval_step(t, cfg):
            rows.append(_step_row(t, state, bundle.test, sel, sel_scores))

    header = seqfile.SequenceHeader(bundle.fingerprint, cfg.batch_size, len(batches), kind, seed)
    seq = seqfile.SequenceFile(header, np.array(batches, dtype=np.uint32).reshape(len(batches), cfg.batch_size))
    result = TrainRunResult(rows, state.fingerprint(), corrupted, white, sel_mean, dumps, batches)
    return state, seq, result


def replay_sequence(
    optimizer: OptimizerConfig,
    bundle: DatasetBundle,
    sequence: seqfile.SequenceFile,
    spec: ModelSpec,
    seed,
    eval_every=50,
    irr_table=None,
    probe=None,
):
    """Train a fresh model on recorded batches, in order, without scoring.

    ``probe`` optionally maps a step to ids whose reducible loss under the
    replayed model (before that step's update) is recorded in
    ``result.score_dumps``; this needs ``irr_table``.
    """
    if sequence.header.dataset_fingerprint != bundle.fingerprint:
        raise FingerprintMismatchError(
            f"sequence was recorded on dataset {sequence.header.dataset_fingerprint:016x}, "
            f"this dataset is {bundle.fingerprint:016x}"
        )
    train = bundle.train
    batches = sequence.batches.astype(np.int64)
    if batches.size:
        train.positions(batches.reshape(-1))
    if probe and irr_table is None:
        raise ValueError("probing reducible loss needs an irreducible-loss table")

    state = init_params(spec, seed)
    dropout = _rng(seed, _DROPOUT)
    total = batches.shape[0]
    rows, dumps, consumed = [], [], []
    corrupted = np.zeros(total)
    white = np.zeros(total)
    for t in range(1, total + 1):
        if probe and t in probe:
            pts = train.take(train.positions(probe[t]))
            dumps.append(ScoreVector(pts.ids.copy(), current_loss(state, pts) - irr_table.lookup(pts.ids), AcquisitionKind.REDUCIBLE, t))
        sel = train.take(train.positions(batches[t - 1]))
        state, _ = train_step(state, sel.features, sel.labels, optimizer, dropout)
        consumed.append(batches[t - 1])
        corrupted[t - 1] = sel.corrupted.mean()
        white[t - 1] = sel.white_noise.mean()
        if t % eval_every == 0 or t == total:
            rows.append(_step_row(t, state, bundle.test, sel, None))
    result = TrainRunResult(rows, state.fingerprint(), corrupted, white, np.full(total, np.nan), dumps, consumed)
    return state, result
