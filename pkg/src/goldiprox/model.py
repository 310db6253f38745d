"""Feed-forward ReLU classifier with analytic gradients and AdamW.

Everything runs in float64 so gradients can be checked against central
finite differences at tight tolerances.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    dropout_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims must be a non-empty list of positive integers")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.num_classes]

    def param_count(self) -> int:
        sizes = self.layer_sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class ModelState:
    """Parameters laid out as ``[W1, b1, W2, b2, ...]`` plus Adam moments.

    ``W`` has shape ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.
    """

    spec: ModelSpec
    params: list[np.ndarray]
    adam_m: list[np.ndarray]
    adam_v: list[np.ndarray]
    step_count: int = 0

    @property
    def weights(self) -> list[np.ndarray]:
        return self.params[0::2]

    @property
    def biases(self) -> list[np.ndarray]:
        return self.params[1::2]

    def fingerprint(self) -> str:
        """Hex digest over the parameter bytes (moments excluded)."""
        h = hashlib.blake2b(digest_size=8)
        for p in self.params:
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    def copy(self) -> "ModelState":
        return ModelState(
            self.spec,
            [p.copy() for p in self.params],
            [m.copy() for m in self.adam_m],
            [v.copy() for v in self.adam_v],
            self.step_count,
        )


@dataclass
class ForwardResult:
    logits: np.ndarray
    # layer inputs (post-dropout) and hidden pre-activations; None when not cached
    inputs: list[np.ndarray] | None = None
    preacts: list[np.ndarray] | None = None
    dropout_masks: list[np.ndarray] = field(default_factory=list)


def init_params(spec: ModelSpec, seed) -> ModelState:
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    zeros = [np.zeros_like(p) for p in params]
    return ModelState(spec, params, zeros, [z.copy() for z in zeros], 0)


def forward(state: ModelState, features, mode="eval", rng=None, cache=True) -> ForwardResult:
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(features, dtype=np.float64)
    spec = state.spec
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"expected features of shape (n, {spec.input_dim}), got {x.shape}")
    drop = mode == "train" and spec.dropout_rate > 0.0
    if drop and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")
    keep = 1.0 - spec.dropout_rate

    inputs, preacts, masks = [], [], []
    a = x
    n_layers = len(state.params) // 2
    for i in range(n_layers):
        W, b = state.params[2 * i], state.params[2 * i + 1]
        inputs.append(a)
        z = a @ W + b
        if i == n_layers - 1:
            a = z
            break
        preacts.append(z)
        a = np.maximum(z, 0.0)
        if drop:
            mask = rng.random(a.shape) < keep
            masks.append(mask)
            a = a * mask / keep
    if not cache:
        return ForwardResult(a)
    return ForwardResult(a, inputs, preacts, masks)


def softmax_cross_entropy(logits, labels):
    """Per-example natural-log cross-entropy and ``softmax - onehot``.

    The gradient is *not* divided by the batch size.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("logits must be (n, k) and labels (n,)")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    loss, probs = _kernels.xent(logits, labels)
    dlogits = probs
    dlogits[np.arange(labels.size), labels] -= 1.0
    return loss, dlogits


def backward(state: ModelState, fwd: ForwardResult, dlogits) -> list[np.ndarray]:
    """Gradients of the *mean* per-example loss, aligned with ``state.params``."""
    if fwd.inputs is None or fwd.preacts is None:
        raise StateError("forward result carries no activation cache")
    n = fwd.logits.shape[0]
    dz = np.asarray(dlogits, dtype=np.float64) / n
    n_layers = len(state.params) // 2
    grads: list[np.ndarray] = [None] * len(state.params)  # type: ignore[list-item]
    keep = 1.0 - state.spec.dropout_rate
    for i in range(n_layers - 1, -1, -1):
        grads[2 * i] = fwd.inputs[i].T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        if i == 0:
            break
        da = dz @ state.params[2 * i].T
        if fwd.dropout_masks:
            da = da * fwd.dropout_masks[i - 1] / keep
        dz = da * (fwd.preacts[i - 1] > 0.0)
    return grads


def adamw_step(state: ModelState, grads, cfg: OptimizerConfig) -> ModelState:
    """One AdamW update with decoupled decay on weight matrices only."""
    if len(grads) != len(state.params):
        raise ShapeError("gradient list does not match parameters")
    t = state.step_count + 1
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    params, ms, vs = [], [], []
    for idx, (p, g, m, v) in enumerate(zip(state.params, grads, state.adam_m, state.adam_v)):
        if g.shape != p.shape:
            raise ShapeError(f"gradient {idx} has shape {g.shape}, expected {p.shape}")
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        if idx % 2 == 0 and cfg.weight_decay:
            p = p * (1.0 - cfg.learning_rate * cfg.weight_decay)
        p = p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        params.append(p)
        ms.append(m)
        vs.append(v)
    return replace(state, params=params, adam_m=ms, adam_v=vs, step_count=t)


def train_step(state: ModelState, features, labels, cfg: OptimizerConfig, rng=None) -> tuple[ModelState, float]:
    """Mini-batch gradient step; returns the new state and the batch mean loss."""
    fwd = forward(state, features, mode="train", rng=rng)
    loss, dlogits = softmax_cross_entropy(fwd.logits, labels)
    grads = backward(state, fwd, dlogits)
    return adamw_step(state, grads, cfg), float(loss.mean())


def mean_loss(state: ModelState, features, labels) -> float:
    logits = forward(state, features, cache=False).logits
    return float(softmax_cross_entropy(logits, labels)[0].mean())


def finite_difference_grad(state: ModelState, features, labels, h=1e-3) -> list[np.ndarray]:
    """Central-difference gradient of the eval-mode mean loss. Test-only oracle."""
    probe = state.copy()
    grads = []
    for p in probe.params:
        g = np.empty_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = mean_loss(probe, features, labels)
            flat[j] = orig - h
            down = mean_loss(probe, features, labels)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric) -> float:
    """Largest per-tensor ``||a - n|| / max(||a||, ||n||)`` over a gradient set."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        if scale == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst
