"""Binary threshold comparators and the ordinal decoders built on them.

Comparator ``k`` answers "is the input younger than class k?" (target 1 iff
y < k). A bank holds one comparator per class 1..K. Its K decisions are
turned into an age by one of three decoders:

* hits: each decision votes for every class consistent with it; the class
  with the most votes wins (ties go to the smaller class).
* ranking: the number of "older-or-equal" decisions.
* dex: the expectation of class ages under the class distribution implied by
  the comparator probabilities.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from .loss import sweep_on_embeddings
from .multitask import gender_decode, gender_prototypes, joint_sweep_on_embeddings
from .nn import Backbone, Param, ShapeError, sgd_step


def binary_target(y, k):
    """1 iff the true class ``y`` is younger than threshold class ``k``."""
    out = np.asarray(y) < k
    return int(out) if out.ndim == 0 else out.astype(np.int64)


class BinaryComparator:
    def __init__(self, backbone: Backbone, threshold: int, head_dim=None, rng=None):
        self.backbone = backbone
        self.threshold = int(threshold)
        self.head_dim = backbone.embedding_dim if head_dim is None else int(head_dim)
        if not 1 <= self.head_dim <= backbone.embedding_dim:
            raise ShapeError(f"head width {self.head_dim} exceeds embedding width {backbone.embedding_dim}")
        rng = np.random.default_rng(threshold) if rng is None else rng
        bound = 1.0 / math.sqrt(self.head_dim)
        self.head_w = Param(rng.uniform(-bound, bound, self.head_dim), name=f"head{threshold}_w")
        self.head_b = Param(np.zeros(1), name=f"head{threshold}_b")

    def head_params(self):
        return [self.head_w, self.head_b]

    def logits(self, emb):
        return emb[..., :self.head_dim] @ self.head_w.value + self.head_b.value[0]

    def forward(self, x):
        """Return (decision, probability, embedding); decision is 1 iff p > 0.5."""
        emb, _ = self.backbone.forward(x)
        p = expit(self.logits(emb))
        decision = (p > 0.5).astype(np.int64)
        if np.ndim(p) == 0:
            return int(decision), float(p), emb
        return decision, p, emb


def comparator_forward(comp: BinaryComparator, x):
    return comp.forward(x)


def bce_with_logits(s, t):
    """Mean binary cross-entropy of logits ``s`` against 0/1 targets, and d/ds."""
    s = np.asarray(s, dtype=np.float64)
    loss = float(np.mean(np.logaddexp(0.0, s) - t * s))
    return loss, (expit(s) - t) / s.size


def _comparative_term(emb, labels, cfg, gender):
    if cfg.multitask:
        return joint_sweep_on_embeddings(emb, labels, gender, cfg.split, cfg.loss, cfg.weights)
    return sweep_on_embeddings(emb, labels, cfg.loss)


def group_loss(backbone, heads, inputs, age_class, cfg, gender=None):
    """Training loss of comparators sharing ``backbone``; accumulates gradients.

    A single comparator k uses BCE of its head against the binary targets
    plus ``cfg.lam`` times the rotating-baseline comparative loss, where two
    samples count as the same class iff they fall on the same side of k.
    With several heads on one backbone the BCE terms are averaged and the
    comparative term compares age classes directly, since per-threshold
    same/different rules would contradict each other on one embedding.
    """
    emb, trace = backbone.forward(inputs)
    grad_emb = np.zeros_like(emb)
    scale = 1.0 / len(heads)
    total = 0.0
    for comp in heads:
        t = binary_target(age_class, comp.threshold)
        bce, ds = bce_with_logits(comp.logits(emb), t)
        ds = ds * scale
        comp.head_w.grad += ds @ emb[:, :comp.head_dim]
        comp.head_b.grad += ds.sum()
        grad_emb[:, :comp.head_dim] += np.outer(ds, comp.head_w.value)
        total += scale * bce
    if cfg.lam > 0:
        labels = binary_target(age_class, heads[0].threshold) if len(heads) == 1 else age_class
        c, g = _comparative_term(emb, labels, cfg, gender)
        total += cfg.lam * c
        grad_emb += cfg.lam * g
    backbone.backward(trace, grad_emb)
    return total


# -- hits matrix and decoders -------------------------------------------------

def hits_from_outputs(decisions):
    """K x K vote matrix; row k marks classes c < k if comparator k said
    "younger", else classes c >= k. Accepts a batch of decision vectors too."""
    d = np.asarray(decisions, dtype=np.int64)
    K = d.shape[-1]
    cls = np.arange(1, K + 1)
    below = cls[None, :] < cls[:, None]
    return np.where(d[..., :, None] == 1, below, ~below).astype(np.int64)


def hits_decode(matrix):
    """Class (1-based) with the largest column sum; smallest class on ties."""
    sums = np.asarray(matrix).sum(axis=-2)
    out = np.argmax(sums, axis=-1) + 1
    return int(out) if np.ndim(out) == 0 else out


def ranking_decode(decisions):
    """Count of "older-or-equal" outputs."""
    d = np.asarray(decisions, dtype=np.int64)
    out = np.sum(1 - d, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def dex_decode(probs, class_ages):
    """Expected age under ``probs`` (rows must sum to 1 within 1e-6)."""
    p = np.asarray(probs, dtype=np.float64)
    ages = np.asarray(class_ages, dtype=np.float64)
    if p.shape[-1] != len(ages):
        raise ShapeError(f"{p.shape[-1]} probabilities for {len(ages)} class ages")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("class probabilities must be nonnegative and sum to 1")
    out = p @ ages
    return float(out) if np.ndim(out) == 0 else out


def class_probabilities(younger_probs):
    """Class distribution implied by comparator outputs P(y < k).

    P(y >= k) is 1 - P(y < k), with P(y >= 1) = 1 and P(y >= K+1) = 0;
    class mass is the difference of consecutive survival values. Negative
    differences (non-monotone comparators) are clipped to zero and the row
    renormalised; an all-zero row becomes uniform.
    """
    p = np.atleast_2d(np.asarray(younger_probs, dtype=np.float64))
    surv = 1.0 - p
    surv[:, 0] = 1.0
    surv = np.concatenate([surv, np.zeros((len(p), 1))], axis=1)
    mass = np.clip(surv[:, :-1] - surv[:, 1:], 0.0, None)
    tot = mass.sum(axis=1, keepdims=True)
    uniform = np.full_like(mass, 1.0 / mass.shape[1])
    mass = np.where(tot > 0, mass / np.where(tot > 0, tot, 1.0), uniform)
    return mass[0] if np.ndim(younger_probs) == 1 else mass


# -- the bank -------------------------------------------------------------------

class ComparatorBank:
    """K comparators with thresholds 1..K plus the label-space metadata."""

    def __init__(self, comparators, class_ages, shared=False, split=None, prototypes=None,
                 decoder="hits", trained=False):
        thresholds = [c.threshold for c in comparators]
        if thresholds != list(range(1, len(comparators) + 1)):
            raise ValueError(f"comparator thresholds must be exactly 1..K in order, got {thresholds}")
        if len(class_ages) != len(comparators):
            raise ValueError("one class age per comparator required")
        self.comparators = list(comparators)
        self.class_ages = [float(a) for a in class_ages]
        self.shared = shared
        self.split = split
        self.prototypes = None if prototypes is None else np.asarray(prototypes, dtype=np.float64)
        self.decoder = decoder
        self.trained = trained
        # key=value text of the RunConfig that produced the bank, if known
        self.run_config = None

    @property
    def K(self):
        return len(self.comparators)

    @property
    def input_shape(self):
        return self.comparators[0].backbone.input_shape

    @property
    def multitask(self):
        return self.split is not None

    @classmethod
    def build(cls, cfg, input_shape=None):
        input_shape = input_shape or (1, cfg.image_size, cfg.image_size)
        split = cfg.split if cfg.multitask else None
        emb_dim = cfg.backbone_embedding_dim
        head_dim = split.age_dim if split else emb_dim

        def make_backbone(rng, seed):
            return Backbone(input_shape, cfg.conv_channels, (cfg.hidden1, cfg.hidden2),
                            emb_dim, seed=seed, rng=rng)

        comps = []
        shared_bb = make_backbone(np.random.default_rng([cfg.seed, 0]), cfg.seed) if cfg.shared_backbone else None
        for k in range(1, cfg.K + 1):
            rng = np.random.default_rng([cfg.seed, k])
            bb = shared_bb if shared_bb is not None else make_backbone(rng, cfg.seed)
            comps.append(BinaryComparator(bb, k, head_dim, rng))
        bank = cls(comps, cfg.class_ages, shared=cfg.shared_backbone, split=split, decoder=cfg.decoder)
        bank.run_config = cfg.to_text()
        return bank

    def backbones(self):
        if self.shared:
            return [self.comparators[0].backbone]
        return [c.backbone for c in self.comparators]

    def params(self):
        out = []
        for bb in self.backbones():
            out.extend(bb.params())
        for c in self.comparators:
            out.extend(c.head_params())
        return out

    def embeddings(self, x):
        """Embedding of ``x`` under each comparator's backbone, a list of K arrays."""
        if self.shared:
            emb, _ = self.comparators[0].backbone.forward(x)
            return [emb] * self.K
        return [c.backbone.forward(x)[0] for c in self.comparators]

    def outputs(self, x):
        """(decisions, probabilities), each [N, K] (or [K] for a single input)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-3:] != self.input_shape:
            raise ShapeError(f"bank expects input {self.input_shape}, got {x.shape}")
        embs = self.embeddings(x)
        p = np.stack([expit(c.logits(e)) for c, e in zip(self.comparators, embs)], axis=-1)
        return (p > 0.5).astype(np.int64), p

    def predict(self, x, decoder=None):
        """Age estimate(s) in age units (``class_ages``)."""
        decoder = decoder or self.decoder
        if not self.trained:
            raise RuntimeError("comparator bank is untrained; train it or load a checkpoint")
        d, p = self.outputs(x)
        ages = np.asarray(self.class_ages)
        if decoder == "hits":
            out = ages[np.asarray(hits_decode(hits_from_outputs(d))) - 1]
        elif decoder == "ranking":
            # rank 0 ("younger than class 1") sits below the label space
            out = ages[np.maximum(np.asarray(ranking_decode(d)), 1) - 1]
        elif decoder == "dex":
            out = np.asarray(dex_decode(class_probabilities(p), ages))
        else:
            raise ValueError(f"unknown decoder {decoder!r}")
        return float(out) if np.ndim(out) == 0 else out

    def gender_features(self, x):
        """Concatenated gender slices of every backbone."""
        if not self.multitask:
            raise RuntimeError("bank was not trained in multi-task mode")
        embs = self.embeddings(x)[:1] if self.shared else self.embeddings(x)
        return np.concatenate([e[..., self.split.age_dim:] for e in embs], axis=-1)

    def predict_gender(self, x):
        if self.prototypes is None:
            raise RuntimeError("no gender prototypes; train the bank in multi-task mode first")
        return gender_decode(self.gender_features(x), self.prototypes)


def predict_age(bank: ComparatorBank, x, decoder="hits"):
    return bank.predict(x, decoder)


def _validate_training_data(bank, inputs, age_class, gender, cfg):
    if len(inputs) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(inputs) < 2:
        raise ValueError("training needs at least 2 samples for comparative batches")
    age_class = np.asarray(age_class)
    if len(age_class) != len(inputs):
        raise ValueError("one age class per input required")
    bad = np.flatnonzero((age_class < 1) | (age_class > bank.K))
    if bad.size:
        raise ValueError(f"sample {bad[0]} has age class {age_class[bad[0]]} outside 1..{bank.K}")
    if cfg.multitask:
        if gender is None:
            raise ValueError("multi-task training needs gender labels")
        gender = np.asarray(gender)
        bad = np.flatnonzero((gender != 0) & (gender != 1))
        if bad.size:
            raise ValueError(f"sample {bad[0]} has gender {gender[bad[0]]}, expected 0 or 1")
    if cfg.multitask != bank.multitask:
        raise ValueError("config multitask flag does not match the bank")


def train_comparator_bank(bank: ComparatorBank, inputs, age_class, cfg, gender=None):
    """Train every comparator with seeded SGD; returns per-epoch mean losses.

    The history is an array [groups, epochs]: one group per comparator, or a
    single group when the backbone is shared.
    """
    _validate_training_data(bank, inputs, age_class, gender, cfg)
    inputs = np.asarray(inputs, dtype=np.float64)
    age_class = np.asarray(age_class)
    gender = None if gender is None else np.asarray(gender)
    n = len(inputs)
    n_batches = max(1, n // cfg.batch_size)

    if bank.shared:
        groups = [(bank.comparators[0].backbone, bank.comparators)]
    else:
        groups = [(c.backbone, [c]) for c in bank.comparators]

    history = np.zeros((len(groups), cfg.epochs))
    for gi, (backbone, heads) in enumerate(groups):
        rng = np.random.default_rng([cfg.seed, 1000 + gi])
        params = backbone.params() + [p for c in heads for p in c.head_params()]
        for epoch in range(cfg.epochs):
            losses = []
            for idx in np.array_split(rng.permutation(n), n_batches):
                g = None if gender is None else gender[idx]
                losses.append(group_loss(backbone, heads, inputs[idx], age_class[idx], cfg, g))
                sgd_step(params, cfg.learning_rate)
            history[gi, epoch] = np.mean(losses)
        if not np.all(np.isfinite(history[gi])):
            raise FloatingPointError(f"training group {gi} produced a non-finite loss")

    if cfg.multitask:
        bank.prototypes = gender_prototypes(bank.gender_features(inputs), gender)
    bank.trained = True
    return history
