"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .comparators import BinaryComparator, group_loss
from .config import RunConfig
from .loss import (LossConfig, PairBatch, baseline_sweep_loss, comparative_loss,
                   comparative_loss_grad, energy)
from .multitask import HeadSplit, TaskWeights, joint_loss
from .nn import (Backbone, Param, conv3x3_backward, conv3x3_forward, dense_backward,
                 dense_forward, relu_backward, relu_forward)

# Relative errors are taken against max(|analytic|, |numeric|, REL_FLOOR) so
# that gradients which are zero up to roundoff do not register as failures.
REL_FLOOR = 1e-6


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    checks: list
    tol: float

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def max_rel_error(self):
        return max((c.max_rel_error for c in self.checks), default=0.0)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def __str__(self):
        lines = [f"{'param':<16} {'max rel err':>12}  status"]
        for c in self.checks:
            lines.append(f"{c.name:<16} {c.max_rel_error:>12.3e}  {'ok' if c.passed else 'FAIL'}")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor=REL_FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(loss_fn, param, step=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``param.value``."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    out = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        fp = loss_fn()
        flat[j] = orig - step
        fm = loss_fn()
        flat[j] = orig
        out[j] = (fp - fm) / (2 * step)
    return grad


def finite_diff_check(loss_fn, params, step=1e-5, tol=1e-4, analytic=None):
    """Compare analytic parameter gradients with central differences.

    ``loss_fn()`` returns a scalar and, as a side effect, accumulates its
    analytic gradient into each ``Param.grad``. Gradients are zeroed before
    and after the check. Pass ``analytic`` (a list of arrays) to check
    externally supplied gradients instead.
    """
    if step <= 0 or tol <= 0:
        raise ValueError("step and tol must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss_fn()
    if analytic is None:
        analytic = [p.grad.copy() for p in params]
    checks = []
    for i, (p, a) in enumerate(zip(params, analytic)):
        num = numeric_grad(loss_fn, p, step)
        err = float(relative_error(a, num).max()) if num.size else 0.0
        checks.append(ParamCheck(p.name or f"param{i}", err, err < tol))
    for p in params:
        p.zero_grad()
    return GradCheckReport(checks, tol)


def gradient_suite(seed, step=1e-5, tol=1e-4):
    """Finite-difference check of every layer and loss on tiny random nets.

    Returns a list of (check name, GradCheckReport). Inputs are uniform in
    [-1, 1]; one call exercises a single seed.
    """
    rng = np.random.default_rng(seed)
    u = lambda *shape: rng.uniform(-1.0, 1.0, size=shape)  # noqa: E731
    results = []

    def check(name, loss_fn, params):
        results.append((name, finite_diff_check(loss_fn, params, step, tol)))

    # single layers, loss = <layer output, fixed random weights>
    x = Param(u(2, 2, 5, 5), "input")
    k, b = Param(u(3, 2, 3, 3), "conv_w"), Param(u(3), "conv_b")
    r = u(2, 3, 3, 3)

    def conv_loss():
        out = conv3x3_forward(x.value, k, b)
        x.grad += conv3x3_backward(x.value, k, b, r)
        return float(np.sum(out * r))
    check("conv3x3", conv_loss, [k, b, x])

    xd = Param(u(3, 6), "input")
    w, bd = Param(u(4, 6), "dense_w"), Param(u(4), "dense_b")
    rd = u(3, 4)

    def dense_loss():
        out = dense_forward(xd.value, w, bd)
        xd.grad += dense_backward(xd.value, w, bd, rd)
        return float(np.sum(out * rd))
    check("dense", dense_loss, [w, bd, xd])

    xr = Param(u(10), "input")
    rr = u(10)

    def relu_loss():
        xr.grad += relu_backward(xr.value, rr)
        return float(np.sum(relu_forward(xr.value) * rr))
    check("relu", relu_loss, [xr])

    # full backbone
    shape = (1, 6, 6)
    bb = Backbone(shape, 2, (5, 4), 4, rng=rng)
    xb = Param(u(3, *shape), "input")
    rb = u(3, 4)

    def backbone_loss():
        emb, trace = bb.forward(xb.value)
        xb.grad += bb.backward(trace, rb)
        return float(np.sum(emb * rb))
    check("backbone", backbone_loss, bb.params() + [xb])

    # pairwise comparative loss, both labels
    cfg = LossConfig(margin=1.0)
    for z in (0, 1):
        a, c = Param(0.3 * u(4), "a"), Param(0.3 * u(4), "b")

        def pair_loss(z=z, a=a, c=c):
            ga, gb = comparative_loss_grad(z, a.value, c.value, cfg)
            a.grad += ga
            c.grad += gb
            return comparative_loss(z, energy(a.value, c.value), cfg)
        check(f"pair_loss_z{z}", pair_loss, [a, c])

    # rotating-baseline sweep on a 4-sample batch
    batch = PairBatch(u(4, *shape), np.array([1, 1, 2, 3]), np.array([0, 1, 1, 0]))
    check("baseline_sweep", lambda: baseline_sweep_loss(batch, bb, cfg), bb.params())

    # comparator: BCE head alone and with the comparative term
    comp = BinaryComparator(Backbone(shape, 2, (5, 4), 4, rng=rng), 2, rng=rng)
    comp_params = comp.backbone.params() + comp.head_params()
    for lam in (0.0, 0.5):
        rc = RunConfig(K=3, lam=lam, margin=1.0)
        check(f"comparator_lam{lam:g}",
              lambda rc=rc: group_loss(comp.backbone, [comp], batch.inputs, batch.age_class, rc),
              comp_params)

    # multi-task: joint slice loss and the full comparator objective
    split = HeadSplit(3, 2)
    mbb = Backbone(shape, 2, (5, 4), split.embedding_dim, rng=rng)
    weights = TaskWeights(1.0, 0.7)
    check("joint_loss", lambda: joint_loss(batch, mbb, split, cfg, weights), mbb.params())
    mcomp = BinaryComparator(mbb, 2, head_dim=split.age_dim, rng=rng)
    mcfg = RunConfig(K=3, lam=0.5, multitask=True, age_dim=3, gender_dim=2, w_gender=0.7)
    check("multitask_comparator",
          lambda: group_loss(mbb, [mcomp], batch.inputs, batch.age_class, mcfg, batch.gender),
          mbb.params() + mcomp.head_params())

    # shared backbone, several heads
    sbb = Backbone(shape, 2, (5, 4), 4, rng=rng)
    heads = [BinaryComparator(sbb, t, rng=rng) for t in (1, 2, 3)]
    scfg = RunConfig(K=3, lam=0.5, shared_backbone=True)
    check("shared_heads",
          lambda: group_loss(sbb, heads, batch.inputs, batch.age_class, scfg),
          sbb.params() + [p for h in heads for p in h.head_params()])
    return results
