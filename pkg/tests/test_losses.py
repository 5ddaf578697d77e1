"""Loss terms are checked against naive per-point reimplementations: plain
Python loops over the batch, one network call per point, no vectorization."""

import math

import numpy as np
import pytest
import torch

from neuralcmf.errors import DataError, NumericalError
from neuralcmf.field_network import init_network
from neuralcmf.geometry import DIVERGE_HI, DIVERGE_LO, normalize_time
from neuralcmf.losses import (LossWeights, PointBatch, cycle_consistency_loss,
                              image_loss, motion_consistency_loss,
                              regularization_loss, total_loss)

T = 4
W = LossWeights()


def perturbed_net64(seed=7, head_scale=0.05):
    """f64 network jittered away from the neutral init so motion is nonzero.

    Hidden weights keep their natural scale (multiplicative jitter) and the
    heads get small uniform weights, which yields moderate per-step motion:
    some cycle chains stay in the box and some leave it.
    """
    net = init_network(seed=0, dtype=torch.float64)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.mul_(1.0 + 0.1 * torch.randn(p.shape, generator=g, dtype=p.dtype))
        for head in (net.intensity_head, net.fwd_head, net.bwd_head):
            head.weight.uniform_(-head_scale, head_scale, generator=g)
            head.bias.uniform_(-0.1, 0.1, generator=g)
    return net


def make_batch(n=16, seed=3, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    X = 0.05 + 0.9 * torch.rand((n, 3), generator=g, dtype=dtype)
    t = torch.randint(0, T, (n,), generator=g)
    target = torch.rand((n,), generator=g, dtype=dtype)
    return PointBatch(X=X, t=t, target=target, period_T=T)


def val(x):
    return float(x.detach())


def point_sample(net, x, t_norm):
    with torch.no_grad():
        s = net(torch.as_tensor(x, dtype=net.dtype).reshape(1, 3), float(t_norm))
    return (float(s.intensity[0]), s.m_fwd[0].numpy().astype(np.float64),
            s.m_bwd[0].numpy().astype(np.float64))


def outside_sq(p):
    over = np.clip(p - DIVERGE_HI, 0.0, None) + np.clip(DIVERGE_LO - p, 0.0, None)
    return float(np.sum(over ** 2))


def oracle_image(net, batch):
    vals = []
    for i in range(len(batch)):
        o, _, _ = point_sample(net, batch.X[i].numpy(),
                               normalize_time(float(batch.t[i]), T))
        vals.append((o - float(batch.target[i])) ** 2)
    return float(np.mean(vals))


def oracle_motion(net, batch, w):
    total = 0.0
    for sign in (1, -1):
        ints, coords = [], []
        for i in range(len(batch)):
            x = batch.X[i].numpy()
            t = float(batch.t[i])
            o, mf, mb = point_sample(net, x, normalize_time(t, T))
            xi = x + (mf if sign == 1 else mb)
            o2, mf2, mb2 = point_sample(net, xi, normalize_time(t + sign, T))
            ints.append((o2 - o) ** 2)
            ret = mb2 if sign == 1 else mf2
            coords.append(float(np.sum((xi + ret - x) ** 2)))
        total += w.alpha1 * np.mean(ints) + w.alpha2 * np.mean(coords)
    return float(total)


def oracle_cycle(net, batch, w):
    total = 0.0
    n_diverged = 0
    for sign, direction in ((1, "fwd"), (-1, "bwd")):
        vals = []
        for i in range(len(batch)):
            x = batch.X[i].numpy()
            t = float(batch.t[i])
            o_base, mf, mb = point_sample(net, x, normalize_time(t, T))
            m = mf if sign == 1 else mb
            pos = x + m
            msum = m.copy()
            pen = outside_sq(pos)
            diverged = pen > 0
            for k in range(1, T):
                _, mf_k, mb_k = point_sample(net, pos, normalize_time(t + sign * k, T))
                m = mf_k if sign == 1 else mb_k
                msum = msum + m
                pos = pos + m
                step = outside_sq(pos)
                pen += step
                diverged = diverged or step > 0
            if diverged:
                vals.append(pen)
                n_diverged += 1
            else:
                closure = w.alpha2 * float(np.sum(msum ** 2))
                if direction == "fwd":
                    o_end, _, _ = point_sample(net, pos, normalize_time(t, T))
                    closure += w.alpha1 * (o_end - o_base) ** 2
                vals.append(closure)
        total += float(np.mean(vals))
    return total, n_diverged


def oracle_reg(net, batch):
    vals = []
    for i in range(len(batch)):
        _, mf, mb = point_sample(net, batch.X[i].numpy(),
                                 normalize_time(float(batch.t[i]), T))
        vals.append(float(np.sum(np.abs(mf + mb)) + np.sum(np.abs(mf))
                          + np.sum(np.abs(mb))))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Term-by-term oracle agreement
# ---------------------------------------------------------------------------

def test_image_loss_matches_oracle():
    net, batch = perturbed_net64(), make_batch()
    assert math.isclose(val(image_loss(net, batch)),
                        oracle_image(net, batch), rel_tol=1e-12)


def test_motion_loss_matches_oracle():
    net, batch = perturbed_net64(), make_batch()
    assert math.isclose(val(motion_consistency_loss(net, batch, W)),
                        oracle_motion(net, batch, W), rel_tol=1e-12)


def test_cycle_loss_matches_oracle_both_branches():
    net, batch = perturbed_net64(), make_batch(n=24)
    expected, n_diverged = oracle_cycle(net, batch, W)
    # the jitter scale is chosen so both the closure and the out-of-box
    # penalty branches are exercised
    assert 0 < n_diverged < 2 * len(batch)
    assert math.isclose(val(cycle_consistency_loss(net, batch, W)),
                        expected, rel_tol=1e-12)


def test_reg_loss_matches_oracle():
    net, batch = perturbed_net64(), make_batch()
    assert math.isclose(val(regularization_loss(net, batch)),
                        oracle_reg(net, batch), rel_tol=1e-12)


def test_all_terms_zero_at_neutral_init(fresh_net64):
    # zero heads: constant intensity 0.5 and exactly zero motion
    batch = make_batch()
    assert val(motion_consistency_loss(fresh_net64, batch, W)) == 0.0
    assert val(cycle_consistency_loss(fresh_net64, batch, W)) == 0.0
    assert val(regularization_loss(fresh_net64, batch)) == 0.0
    expected_img = float(((0.5 - batch.target) ** 2).mean())
    assert math.isclose(val(image_loss(fresh_net64, batch)), expected_img,
                        rel_tol=1e-15)


def test_terms_are_batch_size_invariant():
    net, batch = perturbed_net64(), make_batch(n=8)
    double = PointBatch(X=torch.cat([batch.X, batch.X]),
                        t=torch.cat([batch.t, batch.t]),
                        target=torch.cat([batch.target, batch.target]),
                        period_T=T)
    for fn in (lambda b: image_loss(net, b),
               lambda b: motion_consistency_loss(net, b, W),
               lambda b: cycle_consistency_loss(net, b, W),
               lambda b: regularization_loss(net, b)):
        assert math.isclose(val(fn(batch)), val(fn(double)), rel_tol=1e-12)


# ---------------------------------------------------------------------------
# Total loss assembly
# ---------------------------------------------------------------------------

def test_total_combines_terms_with_cycle_subset():
    net, batch = perturbed_net64(), make_batch(n=16)
    total, bd = total_loss(net, batch, W)
    n_sub = math.ceil(16 * 0.125)
    expected = (W.alpha1 * val(image_loss(net, batch))
                + val(motion_consistency_loss(net, batch, W))
                + val(cycle_consistency_loss(net, batch.head(n_sub), W))
                + W.alpha3 * val(regularization_loss(net, batch)))
    assert math.isclose(val(total), expected, rel_tol=1e-12)
    assert math.isclose(bd.total, val(total), rel_tol=1e-15)
    assert math.isclose(bd.cycle,
                        val(cycle_consistency_loss(net, batch.head(n_sub), W)),
                        rel_tol=1e-12)


def test_total_loss_toggles():
    net, batch = perturbed_net64(), make_batch()
    total, bd = total_loss(net, batch, W, use_motion=False, use_cycle=False,
                           use_reg=False)
    assert bd.motion == 0.0 and bd.cycle == 0.0 and bd.reg == 0.0
    assert math.isclose(val(total), W.alpha1 * bd.image, rel_tol=1e-15)
    total2, bd2 = total_loss(net, batch, W, use_motion=False)
    assert bd2.motion == 0.0 and bd2.cycle > 0.0 and bd2.reg > 0.0
    assert math.isclose(val(total2),
                        W.alpha1 * bd2.image + bd2.cycle + W.alpha3 * bd2.reg,
                        rel_tol=1e-12)


def test_total_loss_gradients_flow(fresh_net64):
    net = perturbed_net64()
    batch = make_batch(n=8)
    batch.X.requires_grad_(True)
    total, _ = total_loss(net, batch, W)
    total.backward()
    # the graph reaches both the sampling positions (pose path) and every
    # network parameter
    assert torch.isfinite(batch.X.grad).all() and batch.X.grad.abs().sum() > 0
    for p in net.parameters():
        assert p.grad is not None and torch.isfinite(p.grad).all()


def test_weights_and_batch_validation():
    with pytest.raises(DataError):
        LossWeights(alpha1=-0.1)
    empty = PointBatch(X=torch.zeros((0, 3)), t=torch.zeros((0,), dtype=torch.long),
                       target=torch.zeros((0,)), period_T=T)
    with pytest.raises(DataError):
        total_loss(perturbed_net64(), empty, W)


def test_non_finite_loss_raises(fresh_net):
    with torch.no_grad():
        fresh_net.intensity_head.bias.fill_(float("nan"))
    batch = make_batch(dtype=torch.float32)
    with pytest.raises(NumericalError):
        total_loss(fresh_net, batch, W)


def test_physics_batch_restricts_position_gradients_to_image_term():
    net = perturbed_net64()
    batch = make_batch(n=8)
    batch.X.requires_grad_(True)
    detached = PointBatch(X=batch.X.detach(), t=batch.t, target=batch.target,
                          period_T=batch.period_T)

    total, _ = total_loss(net, batch, W, physics_batch=detached)
    total.backward()
    g_split = batch.X.grad.clone()

    batch.X.grad = None
    (W.alpha1 * image_loss(net, batch)).backward()
    g_image = batch.X.grad.clone()

    batch.X.grad = None
    full, _ = total_loss(net, batch, W)
    full.backward()
    g_full = batch.X.grad.clone()

    # same loss value, but the position (pose) gradient carries only the
    # data term; the full graph adds motion/cycle/reg contributions
    assert val(total) == val(full)
    assert torch.allclose(g_split, g_image, rtol=0, atol=1e-15)
    assert not torch.allclose(g_full, g_image, rtol=0, atol=1e-9)
