"""Energy function, pairwise comparative loss and the rotating-baseline sweep.

For a pair with label ``z`` (1 = same class) and energy ``E`` (Euclidean
distance between embeddings) the loss is

    z * E**2 + (1 - z) * max(0, margin - E)**2

so same-class pairs are pulled together and different-class pairs are pushed
out to at least ``margin``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ShapeError


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")


@dataclass
class PairBatch:
    """A training batch; each element takes one turn as the baseline."""

    inputs: np.ndarray
    age_class: np.ndarray
    gender: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.age_class = np.asarray(self.age_class)
        if self.gender is not None:
            self.gender = np.asarray(self.gender)
        if len(self.inputs) < 2:
            raise ValueError("a comparative batch needs at least 2 samples")
        if len(self.age_class) != len(self.inputs):
            raise ValueError("one age class per input required")
        if self.gender is not None and len(self.gender) != len(self.inputs):
            raise ValueError("one gender label per input required")

    def __len__(self):
        return len(self.inputs)


def energy(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"energy needs equal-dimension embeddings, got {a.shape} and {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def comparison_label(class_a, class_b):
    return int(class_a == class_b)


def comparative_loss(z, e, cfg=LossConfig()):
    if e < 0:
        raise ValueError("energy must be nonnegative")
    if z:
        return float(e) ** 2
    return max(0.0, cfg.margin - e) ** 2


def _pair_weight(z, e, margin):
    """d(loss)/dE divided by E; multiplies (a - b) to give d(loss)/da.

    Same-class: 2 everywhere (E**2 = |a-b|**2 is smooth). Different-class:
    zero on the inactive hinge and at E == 0, where the distance has no
    gradient.
    """
    e = np.asarray(e, dtype=np.float64)
    z = np.asarray(z)
    active = (z == 0) & (e > 0) & (e < margin)
    safe_e = np.where(active, e, 1.0)
    diff_w = np.where(active, -2.0 * (margin - e) / safe_e, 0.0)
    return np.where(z == 1, 2.0, diff_w)


def comparative_loss_grad(z, a, b, cfg=LossConfig()):
    """Gradients of comparative_loss(z, energy(a, b)) w.r.t. a and b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w = float(_pair_weight(z, energy(a, b), cfg.margin))
    ga = w * (a - b)
    return ga, -ga


def sweep_on_embeddings(emb, labels, cfg=LossConfig()):
    """Rotating-baseline loss on precomputed embeddings.

    For every baseline m, average the pair loss of all i != m against it;
    then average those per-baseline means. Returns (loss, d loss / d emb).
    """
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(emb)
    if n < 2:
        raise ValueError("a comparative batch needs at least 2 samples")
    if len(labels) != n:
        raise ShapeError("one label per embedding required")
    diff = emb[:, None, :] - emb[None, :, :]
    e = np.sqrt(np.sum(diff ** 2, axis=-1))
    z = (labels[:, None] == labels[None, :]).astype(np.int64)
    off = ~np.eye(n, dtype=bool)
    same = z * e ** 2
    other = (1 - z) * np.maximum(0.0, cfg.margin - e) ** 2
    scale = 1.0 / (n * (n - 1))
    loss = float(np.sum((same + other)[off]) * scale)

    # Every ordered pair (i, m) touches e_i with +w(e_i - e_m) and e_m with the
    # negative; the weight matrix is symmetric so both roles fold together.
    w = _pair_weight(z, e, cfg.margin) * off * scale
    grad = 2.0 * (w.sum(axis=1)[:, None] * emb - w @ emb)
    return loss, grad


def baseline_sweep_loss(batch: PairBatch, backbone, cfg=LossConfig(), labels=None):
    """Forward the batch, apply the sweep loss, backpropagate into ``backbone``.

    ``labels`` overrides the class used to decide same/different (defaults to
    the batch's age classes). Parameter gradients are accumulated; the
    scalar loss is returned.
    """
    labels = batch.age_class if labels is None else labels
    emb, trace = backbone.forward(batch.inputs)
    loss, g = sweep_on_embeddings(emb, labels, cfg)
    backbone.backward(trace, g)
    return loss
