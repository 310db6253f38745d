"""Per-point acquisition scores and top-k batch selection.

Higher scores always mean higher priority. Loss-based scores use an
eval-mode forward pass; BALD alone runs stochastic dropout passes.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from ._io import atomic_text
from .data import ExampleSet
from .model import ModelState, forward, softmax_cross_entropy


class AcquisitionKind(str, enum.Enum):
    UNIFORM = "uniform"
    HIGH_LOSS = "high_loss"
    NEG_IRREDUCIBLE = "neg_irreducible"
    REDUCIBLE = "reducible"
    BALD = "bald"

    @property
    def needs_irreducible(self) -> bool:
        return self in (AcquisitionKind.NEG_IRREDUCIBLE, AcquisitionKind.REDUCIBLE)


# stable one-byte tags used by the sequence file header
KIND_TAGS = {
    AcquisitionKind.UNIFORM: 0,
    AcquisitionKind.HIGH_LOSS: 1,
    AcquisitionKind.NEG_IRREDUCIBLE: 2,
    AcquisitionKind.REDUCIBLE: 3,
    AcquisitionKind.BALD: 4,
}


class IrreducibleLossTable:
    """Holdout-model loss for every training id."""

    def __init__(self, ids, losses, source_model_fingerprint=""):
        ids = np.asarray(ids, dtype=np.int64)
        losses = np.asarray(losses, dtype=np.float64)
        if ids.shape != losses.shape:
            raise ValueError("ids and losses must align")
        if not np.all(np.isfinite(losses)):
            raise ValueError("irreducible losses must be finite")
        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        self.losses = losses[order]
        self.source_model_fingerprint = source_model_fingerprint

    def __len__(self):
        return int(self.ids.size)

    def lookup(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        at = np.minimum(np.searchsorted(self.ids, ids), max(self.ids.size - 1, 0))
        if self.ids.size == 0 or np.any(self.ids[at] != ids):
            raise KeyError("irreducible-loss table has no entry for some batch ids")
        return self.losses[at]

    def covers(self, ids) -> bool:
        try:
            self.lookup(ids)
        except KeyError:
            return False
        return True


@dataclass
class ScoreVector:
    ids: np.ndarray
    scores: np.ndarray
    kind: AcquisitionKind
    step: int = 0


def current_loss(model: ModelState, batch: ExampleSet) -> np.ndarray:
    logits = forward(model, batch.features, mode="eval", cache=False).logits
    return softmax_cross_entropy(logits, batch.labels)[0]


def score(kind, model: ModelState, irr_table, batch: ExampleSet, rng=None, step=0, mc_samples=10) -> ScoreVector:
    kind = AcquisitionKind(kind)
    if kind is AcquisitionKind.BALD:
        return score_bald(model, batch, mc_samples, rng, step=step)
    if kind is AcquisitionKind.UNIFORM:
        if rng is None:
            raise ValueError("uniform scoring needs an rng")
        s = rng.random(len(batch))
    elif kind is AcquisitionKind.HIGH_LOSS:
        s = current_loss(model, batch)
    else:
        if irr_table is None:
            raise KeyError(f"{kind.value} scoring needs an irreducible-loss table")
        irr = irr_table.lookup(batch.ids)
        if kind is AcquisitionKind.NEG_IRREDUCIBLE:
            s = -irr
        else:
            s = current_loss(model, batch) - irr
    return ScoreVector(batch.ids.copy(), s, kind, step)


def bald_from_probs(probs) -> np.ndarray:
    """Mutual information from stacked predictive samples ``(T, n, k)``."""
    probs = np.asarray(probs, dtype=np.float64)
    mean = probs.mean(axis=0)
    return _kernels.entropy_rows(mean) - _kernels.entropy_rows(probs).mean(axis=0)


def score_bald(model: ModelState, batch: ExampleSet, mc_samples, rng, step=0) -> ScoreVector:
    if model.spec.dropout_rate <= 0.0:
        raise ValueError("BALD needs a model with dropout")
    if mc_samples < 2:
        raise ValueError("BALD needs at least two MC samples")
    samples = []
    for _ in range(mc_samples):
        logits = forward(model, batch.features, mode="train", rng=rng, cache=False).logits
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        samples.append(e / e.sum(axis=1, keepdims=True))
    return ScoreVector(batch.ids.copy(), bald_from_probs(np.stack(samples)), AcquisitionKind.BALD, step)


def select_top_k(scores: ScoreVector, k) -> np.ndarray:
    """Ids of the k highest scores, ties going to the smaller id."""
    n = scores.ids.size
    if k > n:
        raise ValueError(f"cannot select {k} points from a batch of {n}")
    order = np.lexsort((scores.ids, -scores.scores))
    return scores.ids[order[:k]]


# ---------------------------------------------------------------- dumps

DUMP_HEADER = ["step", "id", "kind", "score"]


def write_score_dump(path, vectors) -> None:
    with atomic_text(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DUMP_HEADER)
        for sv in vectors:
            kind = AcquisitionKind(sv.kind).value
            for i, s in zip(sv.ids.tolist(), sv.scores.tolist()):
                w.writerow([sv.step, i, kind, repr(float(s))])


def read_score_dump(path) -> dict[int, dict[int, float]]:
    """``{step: {id: score}}`` from a dump CSV."""
    out: dict[int, dict[int, float]] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != DUMP_HEADER:
            raise ValueError(f"{path}: expected header {','.join(DUMP_HEADER)}")
        for row in reader:
            out.setdefault(int(row["step"]), {})[int(row["id"])] = float(row["score"])
    return out
