"""Joint age + gender training on a split embedding.

The backbone's embedding is cut into a leading age slice and a trailing
gender slice; each slice gets its own rotating-baseline comparative loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loss import LossConfig, PairBatch, sweep_on_embeddings
from .nn import ShapeError


@dataclass(frozen=True)
class HeadSplit:
    age_dim: int = 70
    gender_dim: int = 10

    def __post_init__(self):
        if self.age_dim < 1 or self.gender_dim < 1:
            raise ValueError("slice widths must be positive")

    @property
    def embedding_dim(self):
        return self.age_dim + self.gender_dim

    def check(self, embedding_dim):
        if embedding_dim != self.embedding_dim:
            raise ShapeError(
                f"split {self.age_dim}+{self.gender_dim} does not match embedding width {embedding_dim}")


@dataclass(frozen=True)
class TaskWeights:
    w_age: float = 1.0
    w_gender: float = 1.0

    def __post_init__(self):
        if self.w_age < 0 or self.w_gender < 0:
            raise ValueError("task weights must be nonnegative")
        if self.w_age == 0 and self.w_gender == 0:
            raise ValueError("task weights cannot both be zero")


def split_embedding(e, split: HeadSplit):
    e = np.asarray(e, dtype=np.float64)
    split.check(e.shape[-1])
    return e[..., :split.age_dim], e[..., split.age_dim:]


def joint_sweep_on_embeddings(emb, age_labels, gender_labels, split: HeadSplit,
                              cfg=LossConfig(), weights=TaskWeights()):
    """Weighted sum of the two slice sweeps; returns (loss, d loss / d emb)."""
    age, gender = split_embedding(emb, split)
    grad = np.zeros_like(np.asarray(emb, dtype=np.float64))
    loss = 0.0
    if weights.w_age:
        la, ga = sweep_on_embeddings(age, age_labels, cfg)
        loss += weights.w_age * la
        grad[:, :split.age_dim] = weights.w_age * ga
    if weights.w_gender:
        lg, gg = sweep_on_embeddings(gender, gender_labels, cfg)
        loss += weights.w_gender * lg
        grad[:, split.age_dim:] = weights.w_gender * gg
    return loss, grad


def joint_loss(batch: PairBatch, backbone, split: HeadSplit, cfg=LossConfig(),
               weights=TaskWeights(), age_labels=None):
    """Multi-task comparative loss; accumulates gradients into ``backbone``.

    ``age_labels`` overrides the same/different rule of the age slice
    (comparator training passes the side of its threshold here).
    """
    if batch.gender is None:
        raise ValueError("multi-task batches need gender labels")
    split.check(backbone.embedding_dim)
    age_labels = batch.age_class if age_labels is None else age_labels
    emb, trace = backbone.forward(batch.inputs)
    loss, grad = joint_sweep_on_embeddings(emb, age_labels, batch.gender, split, cfg, weights)
    backbone.backward(trace, grad)
    return loss


def gender_prototypes(gender_slices, genders):
    """Per-gender mean slice, as an array [2, gender_dim] (row g = gender g)."""
    gender_slices = np.asarray(gender_slices, dtype=np.float64)
    genders = np.asarray(genders)
    protos = []
    for g in (0, 1):
        mask = genders == g
        if not mask.any():
            raise ValueError(f"no training sample with gender {g}; cannot build its prototype")
        protos.append(gender_slices[mask].mean(axis=0))
    return np.stack(protos)


def gender_decode(gender_slice, prototypes):
    """Nearest-prototype gender; ties go to 0. Works on one slice or a batch."""
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if prototypes.ndim != 2 or len(prototypes) != 2:
        raise ValueError("need one prototype for each of the two genders")
    s = np.asarray(gender_slice, dtype=np.float64)
    d0 = np.sum((s - prototypes[0]) ** 2, axis=-1)
    d1 = np.sum((s - prototypes[1]) ** 2, axis=-1)
    out = (d1 < d0).astype(np.int64)
    return int(out) if out.ndim == 0 else out
