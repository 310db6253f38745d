"""Datasets, corruption, IDX ingestion and large-batch scheduling.

Examples are stored column-wise in :class:`ExampleSet`; an
:class:`ExampleRecord` view is available for single points.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ExampleRecord:
    id: int
    features: np.ndarray
    label: int
    true_label: int
    corrupted: bool = False
    white_noise: bool = False


class ExampleSet:
    """Column store of examples. Arrays are treated as immutable."""

    def __init__(self, ids, features, labels, true_labels=None, corrupted=None, white_noise=None):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        n = self.ids.size
        self.true_labels = self.labels.copy() if true_labels is None else np.asarray(true_labels, dtype=np.int64)
        self.corrupted = np.zeros(n, bool) if corrupted is None else np.asarray(corrupted, dtype=bool)
        self.white_noise = np.zeros(n, bool) if white_noise is None else np.asarray(white_noise, dtype=bool)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError("features must be an (n, d) matrix matching ids")
        for name in ("labels", "true_labels", "corrupted", "white_noise"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        if np.unique(self.ids).size != n:
            raise ValueError("ids must be unique")
        self._pos = None

    def __len__(self):
        return int(self.ids.size)

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])

    def record(self, i: int) -> ExampleRecord:
        return ExampleRecord(
            int(self.ids[i]),
            self.features[i],
            int(self.labels[i]),
            int(self.true_labels[i]),
            bool(self.corrupted[i]),
            bool(self.white_noise[i]),
        )

    def records(self):
        return [self.record(i) for i in range(len(self))]

    @classmethod
    def from_records(cls, records) -> "ExampleSet":
        records = list(records)
        return cls(
            [r.id for r in records],
            np.stack([np.asarray(r.features, dtype=np.float64) for r in records]),
            [r.label for r in records],
            [r.true_label for r in records],
            [r.corrupted for r in records],
            [r.white_noise for r in records],
        )

    def take(self, positions) -> "ExampleSet":
        p = np.asarray(positions, dtype=np.int64)
        return ExampleSet(
            self.ids[p], self.features[p], self.labels[p], self.true_labels[p], self.corrupted[p], self.white_noise[p]
        )

    def positions(self, ids) -> np.ndarray:
        """Row positions for the given ids; raises KeyError for unknown ids."""
        if self._pos is None:
            order = np.argsort(self.ids, kind="stable")
            self._pos = (self.ids[order], order)
        sorted_ids, order = self._pos
        ids = np.asarray(ids, dtype=np.int64)
        at = np.searchsorted(sorted_ids, ids)
        at = np.minimum(at, max(len(self) - 1, 0))
        if len(self) == 0 or np.any(sorted_ids[at] != ids):
            missing = ids[sorted_ids[at] != ids] if len(self) else ids
            raise KeyError(f"unknown example id(s): {missing[:5].tolist()}")
        return order[at]

    def concat(self, other: "ExampleSet") -> "ExampleSet":
        return ExampleSet(
            np.r_[self.ids, other.ids],
            np.vstack([self.features, other.features]),
            np.r_[self.labels, other.labels],
            np.r_[self.true_labels, other.true_labels],
            np.r_[self.corrupted, other.corrupted],
            np.r_[self.white_noise, other.white_noise],
        )

    def fingerprint(self) -> int:
        return fingerprint_examples(self)


def fingerprint_examples(*sets: ExampleSet) -> int:
    """FNV-1a 64 over (id, features, label, true_label), records sorted by id.

    Every field is serialized little-endian: ids and labels as int64,
    features as float64.
    """
    ids = np.concatenate([s.ids for s in sets]) if sets else np.zeros(0, np.int64)
    if not sets or ids.size == 0:
        return _kernels.fnv1a64(b"")
    feats = np.vstack([s.features for s in sets])
    labels = np.concatenate([s.labels for s in sets])
    true_labels = np.concatenate([s.true_labels for s in sets])
    order = np.argsort(ids, kind="stable")
    d = feats.shape[1]
    rec = np.dtype([("id", "<i8"), ("x", "<f8", (d,)), ("y", "<i8"), ("t", "<i8")])
    buf = np.empty(ids.size, dtype=rec)
    buf["id"] = ids[order]
    buf["x"] = feats[order]
    buf["y"] = labels[order]
    buf["t"] = true_labels[order]
    return _kernels.fnv1a64(buf.view(np.uint8).reshape(-1))


@dataclass
class DatasetBundle:
    train: ExampleSet
    validation: ExampleSet
    test: ExampleSet
    num_classes: int

    def __post_init__(self):
        seen = np.concatenate([self.train.ids, self.validation.ids, self.test.ids])
        if np.unique(seen).size != seen.size:
            raise ValueError("train/validation/test splits must be disjoint by id")
        self._fingerprint = None

    @property
    def input_dim(self) -> int:
        return self.train.input_dim

    @property
    def fingerprint(self) -> int:
        if self._fingerprint is None:
            self._fingerprint = fingerprint_examples(self.train, self.validation, self.test)
        return self._fingerprint

    def max_id(self) -> int:
        return int(max(s.ids.max() for s in (self.train, self.validation, self.test) if len(s)))


@dataclass(frozen=True)
class CorruptionConfig:
    label_noise_rate: float = 0.0
    white_noise_fraction: float = 0.0
    seed: int = 0
    corrupt_validation: bool = False

    def __post_init__(self):
        if not 0.0 <= self.label_noise_rate <= 1.0:
            raise ValueError("label_noise_rate must lie in [0, 1]")
        if not 0.0 <= self.white_noise_fraction < 1.0:
            raise ValueError("white_noise_fraction must lie in [0, 1)")


# ------------------------------------------------------------------ IDX


def _read_idx(path, magic, ndim_expected):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    head = 4 + 4 * ndim_expected
    if len(raw) < head:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim_expected, raw[4:head])
    size = math.prod(dims)
    if len(raw) - head != size:
        raise IdxFormatError(f"{path}: payload has {len(raw) - head} bytes, header implies {size}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def load_idx(images_path, labels_path, id_offset=0) -> ExampleSet:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    n = images.shape[0]
    feats = images.reshape(n, -1).astype(np.float64) / 255.0
    return ExampleSet(np.arange(id_offset, id_offset + n), feats, labels.astype(np.int64))


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images ``(n, rows, cols)`` and labels ``(n,)`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


# ------------------------------------------------------------ synthetic


def synth_clusters(num_classes, input_dim, n_per_class, spread, seed, active_fraction=1.0, background=0.0) -> ExampleSet:
    """Isotropic Gaussian blobs around per-class centers, clamped to [0, 1].

    Each center coordinate is uniform on [0, 1] with probability
    ``active_fraction`` and ``background`` otherwise. A sparse center with a
    negative background clamps to exact zeros away from the active
    coordinates, like digit images. Output is ordered class by class with
    ids ``0..n-1``.
    """
    if spread < 0:
        raise ValueError("spread must be non-negative")
    if not 0.0 < active_fraction <= 1.0:
        raise ValueError("active_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    centers = rng.random((num_classes, input_dim))
    centers = np.where(rng.random((num_classes, input_dim)) < active_fraction, centers, background)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    noise = rng.standard_normal((labels.size, input_dim))
    feats = np.clip(centers[labels] + spread * noise, 0.0, 1.0)
    return ExampleSet(np.arange(labels.size), feats, labels)


def synth_latent_digits(
    num_classes, input_dim, n_per_class, seed, latent_dim=16, separation=1.5, density=0.1, offset=-0.3, scale=1.0
) -> ExampleSet:
    """Gaussian classes in a small latent space, rendered as sparse images.

    Latent points are ``separation * c_k + N(0, I)`` with fixed standard
    normal class centers ``c_k``. A fixed sparse non-negative map sends them
    to ``input_dim`` coordinates; ``offset`` below zero leaves most
    coordinates clamped at exactly 0, and class overlap in the latent
    space yields points of graded difficulty.
    """
    if latent_dim < 1 or not 0.0 < density <= 1.0:
        raise ValueError("latent_dim must be positive and density in (0, 1]")
    rng = np.random.default_rng(seed)
    centers = separation * rng.standard_normal((num_classes, latent_dim))
    labels = np.repeat(np.arange(num_classes), n_per_class)
    z = centers[labels] + rng.standard_normal((labels.size, latent_dim))
    render = rng.random((latent_dim, input_dim)) * (rng.random((latent_dim, input_dim)) < density)
    render *= scale / np.sqrt(latent_dim * density)
    feats = np.clip(z @ render + offset, 0.0, 1.0)
    return ExampleSet(np.arange(labels.size), feats, labels)


def split(examples: ExampleSet, n_train, n_val, n_test, seed) -> tuple[ExampleSet, ExampleSet, ExampleSet]:
    need = n_train + n_val + n_test
    if need > len(examples):
        raise ValueError(f"requested {need} examples but only {len(examples)} available")
    perm = np.random.default_rng(seed).permutation(len(examples))
    a, b = n_train, n_train + n_val
    return examples.take(perm[:a]), examples.take(perm[a:b]), examples.take(perm[b:need])


# ----------------------------------------------------------- corruption


def apply_label_noise(examples: ExampleSet, rate, num_classes, seed) -> ExampleSet:
    """Relabel each point with probability ``rate`` to a different class."""
    if num_classes < 2:
        raise ValueError("label noise needs at least two classes")
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n = len(examples)
    hit = rng.random(n) < rate
    shift = rng.integers(1, num_classes, size=n)
    labels = examples.labels.copy()
    labels[hit] = (examples.true_labels[hit] + shift[hit]) % num_classes
    corrupted = examples.corrupted | hit
    return ExampleSet(examples.ids, examples.features, labels, examples.true_labels, corrupted, examples.white_noise)


def white_noise_count(n, fraction) -> int:
    return int(math.floor(fraction * n / (1.0 - fraction) + 0.5))


def inject_white_noise_points(examples: ExampleSet, fraction, num_classes, seed, start_id=None) -> ExampleSet:
    """Append uniform-noise inputs with uniform labels so they make up ``fraction`` of the result."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    count = white_noise_count(len(examples), fraction)
    if count == 0:
        return examples
    rng = np.random.default_rng(seed)
    if start_id is None:
        start_id = int(examples.ids.max()) + 1 if len(examples) else 0
    labels = rng.integers(0, num_classes, size=count)
    noise = ExampleSet(
        np.arange(start_id, start_id + count),
        rng.random((count, examples.input_dim)),
        labels,
        labels,
        np.zeros(count, bool),
        np.ones(count, bool),
    )
    return examples.concat(noise)


def corrupt_bundle(bundle: DatasetBundle, cfg: CorruptionConfig) -> DatasetBundle:
    ss = np.random.SeedSequence(cfg.seed).spawn(3)
    seeds = [int(s.generate_state(1)[0]) for s in ss]
    train = apply_label_noise(bundle.train, cfg.label_noise_rate, bundle.num_classes, seeds[0])
    val = bundle.validation
    if cfg.corrupt_validation:
        val = apply_label_noise(val, cfg.label_noise_rate, bundle.num_classes, seeds[1])
    train = inject_white_noise_points(
        train, cfg.white_noise_fraction, bundle.num_classes, seeds[2], start_id=bundle.max_id() + 1
    )
    return DatasetBundle(train, val, bundle.test, bundle.num_classes)


# ------------------------------------------------------------- schedule


class EpochSchedule:
    """Hands out large batches as consecutive chunks of per-epoch permutations.

    Every id is offered exactly once per epoch.  Chunks hold ``large_batch_size``
    ids except at the end of an epoch: a tail shorter than ``batch_size`` takes
    ids from the chunk before it so both can still fill a selection, or, when
    that chunk has none to spare, is merged into it.
    """

    def __init__(self, ids, large_batch_size, batch_size, rng):
        if batch_size < 1 or large_batch_size < batch_size:
            raise ValueError("need large_batch_size >= batch_size >= 1")
        self.ids = np.asarray(ids, dtype=np.int64)
        if self.ids.size < batch_size:
            raise ValueError("fewer training ids than the batch size")
        self.large_batch_size = int(large_batch_size)
        self.batch_size = int(batch_size)
        self.rng = rng
        self.epoch = -1
        self._perm = np.zeros(0, np.int64)
        self._chunk = 0
        self._cuts = self._chunk_bounds(self.ids.size)

    def _chunk_bounds(self, n) -> list[int]:
        big, small = self.large_batch_size, self.batch_size
        cuts = list(range(0, n, big)) + [n]
        tail = cuts[-1] - cuts[-2]
        if tail < small and len(cuts) > 2:
            if big + tail >= 2 * small:
                cuts[-2] = n - small
            else:
                del cuts[-2]
        return cuts

    def _new_epoch(self):
        self.epoch += 1
        self._perm = self.ids[self.rng.permutation(self.ids.size)]
        self._chunk = 0

    def next_large_batch(self) -> np.ndarray:
        if self.epoch < 0 or self._chunk == len(self._cuts) - 1:
            self._new_epoch()
        lo, hi = self._cuts[self._chunk], self._cuts[self._chunk + 1]
        self._chunk += 1
        return self._perm[lo:hi]


def next_large_batch(schedule: EpochSchedule) -> np.ndarray:
    return schedule.next_large_batch()
