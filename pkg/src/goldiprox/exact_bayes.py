"""Exact Bayesian inference over a finite hypothesis space.

Used as an oracle for the information quantities behind reducible-loss
selection: pointwise predictive information gain computed two ways, and
its expectation (EPIG) by full enumeration. All quantities are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

MAX_JOINT_OUTCOMES = 1_000_000


class ZeroEvidenceError(ValueError):
    """Observations have zero probability under every hypothesis."""


@dataclass(frozen=True)
class ExactBayesModel:
    """``tables[h, x, y] = p(y | x, h)`` with a prior over hypotheses ``h``."""

    tables: np.ndarray
    prior: np.ndarray

    def __post_init__(self):
        tables = np.asarray(self.tables, dtype=np.float64)
        prior = np.asarray(self.prior, dtype=np.float64)
        object.__setattr__(self, "tables", tables)
        object.__setattr__(self, "prior", prior)
        if tables.ndim != 3 or prior.shape != (tables.shape[0],):
            raise ValueError("tables must be (H, X, K) and prior (H,)")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-12:
            raise ValueError("prior must be a probability vector")
        if np.any(tables < 0) or np.max(np.abs(tables.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("each conditional row must sum to 1")

    @property
    def num_classes(self) -> int:
        return self.tables.shape[2]

    @classmethod
    def random(cls, rng, n_hypotheses, n_inputs, n_classes, concentration=1.0) -> "ExactBayesModel":
        tables = rng.dirichlet(np.full(n_classes, concentration), size=(n_hypotheses, n_inputs))
        tables /= tables.sum(axis=2, keepdims=True)
        prior = rng.dirichlet(np.ones(n_hypotheses))
        prior /= prior.sum()
        return cls(tables, prior)


def _log_lik(model: ExactBayesModel, pairs) -> np.ndarray:
    """log p(pairs | h) for every hypothesis."""
    if not len(pairs):
        return np.zeros(model.prior.size)
    xs, ys = np.asarray(pairs, dtype=np.int64).T
    with np.errstate(divide="ignore"):
        return np.log(model.tables[:, xs, ys]).sum(axis=1)


def _log_posterior(model: ExactBayesModel, observations) -> np.ndarray:
    with np.errstate(divide="ignore"):
        joint = np.log(model.prior) + _log_lik(model, observations)
    z = logsumexp(joint)
    if not np.isfinite(z):
        raise ZeroEvidenceError("observations have zero probability under every hypothesis")
    return joint - z


def exact_posterior(model: ExactBayesModel, observations=()) -> np.ndarray:
    return np.exp(_log_posterior(model, list(observations)))


def pointwise_entropy(model: ExactBayesModel, pairs, given=()) -> float:
    """h(ys | xs, given) = -log p(ys | xs, given) for the joint label assignment."""
    return float(-logsumexp(_log_posterior(model, list(given)) + _log_lik(model, list(pairs))))


def ppig_forward(model, d_t, val_pairs, candidate) -> float:
    """Information the candidate's realized label gives about the validation labels."""
    d_t = list(d_t)
    return pointwise_entropy(model, val_pairs, d_t) - pointwise_entropy(model, val_pairs, d_t + [candidate])


def ppig_symmetric(model, d_t, val_pairs, candidate, approximate=False) -> float:
    """Same quantity via the candidate's own loss before and after seeing the validation set.

    ``approximate=True`` drops ``d_t`` from the second term, giving the
    reducible-loss form used by the production scorer.
    """
    d_t = list(d_t)
    given = list(val_pairs) if approximate else d_t + list(val_pairs)
    return pointwise_entropy(model, [candidate], d_t) - pointwise_entropy(model, [candidate], given)


def _label_assignments(n_labels, k) -> np.ndarray:
    if n_labels == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.meshgrid(*([np.arange(k)] * n_labels), indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def joint_predictive(model, d_t, val_inputs, candidate_x):
    """Joint predictive table ``p(y, y_val | x, x_val, d_t)`` of shape ``(K, K**m)``.

    Returns the table and the enumerated validation label assignments.
    """
    k = model.num_classes
    m = len(val_inputs)
    if k ** (m + 1) > MAX_JOINT_OUTCOMES:
        raise ValueError(f"{k ** (m + 1)} joint outcomes exceed the enumeration cap")
    post = exact_posterior(model, d_t)
    assign = _label_assignments(m, k)
    xv = np.asarray(val_inputs, dtype=np.int64)
    # per-hypothesis probability of each validation assignment: (H, K**m)
    p_val = np.prod(model.tables[:, xv[None, :], assign], axis=2) if m else np.ones((post.size, 1))
    p_y = model.tables[:, candidate_x, :]  # (H, K)
    joint = np.einsum("h,hk,ha->ka", post, p_y, p_val)
    return joint, assign


def epig_expected(model, d_t, val_inputs, candidate_x) -> float:
    """Mutual information between the candidate's label and the validation labels."""
    joint, _ = joint_predictive(model, list(d_t), val_inputs, candidate_x)
    py = joint.sum(axis=1, keepdims=True)
    pv = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * (np.log(joint[nz]) - np.log((py * pv)[nz]))))
