"""Physics-informed training losses evaluated on sampled point batches.

Every term is a mean over batch points (not a sum), so magnitudes are batch
size invariant and the default weights stay interpretable. All terms keep the
computation graph through advected positions: the network is evaluated at
network-produced points and the gradients flow through the chain.
"""

import math
from dataclasses import dataclass

import torch

from ._validation import require
from .errors import NumericalError
from .geometry import DIVERGE_HI, DIVERGE_LO, normalize_time


@dataclass
class LossWeights:
    """Weights of the intensity (alpha1), coordinate (alpha2), and
    regularization (alpha3) terms."""

    alpha1: float = 1.0
    alpha2: float = 0.1
    alpha3: float = 0.01

    def __post_init__(self):
        require(self.alpha1 >= 0 and self.alpha2 >= 0 and self.alpha3 >= 0,
                f"loss weights must be >= 0, got {self}")


@dataclass
class LossBreakdown:
    image: float
    motion: float
    cycle: float
    reg: float
    total: float


@dataclass
class PointBatch:
    """One training batch: world points, frame indices, target intensities."""

    X: torch.Tensor        # (N, 3), may carry pose gradients in 2D mode
    t: torch.Tensor        # (N,) integer frames
    target: torch.Tensor   # (N,) supervision intensities in [0, 1]
    period_T: int

    def __len__(self):
        return int(self.X.shape[0])

    def head(self, n):
        return PointBatch(self.X[:n], self.t[:n], self.target[:n], self.period_T)


def _base(net, batch):
    return net(batch.X, normalize_time(batch.t.to(batch.X.dtype), batch.period_T))


def _slice_sample(sample, n):
    return type(sample)(sample.intensity[:n], sample.m_fwd[:n], sample.m_bwd[:n])


def image_loss(net, batch, base=None):
    """Mean squared error between predicted and observed intensity."""
    b = base if base is not None else _base(net, batch)
    return ((b.intensity - batch.target) ** 2).mean()


def motion_consistency_loss(net, batch, weights, base=None):
    """Single-step consistency in both time directions.

    For i in {+1, -1}: the intensity at the advected point X + m at t + i must
    match the intensity at (X, t), and the opposite-direction motion there
    must return to X.
    """
    b = base if base is not None else _base(net, batch)
    tf = batch.t.to(batch.X.dtype)
    total = batch.X.new_zeros(())
    for sign, m_out in ((1, b.m_fwd), (-1, b.m_bwd)):
        Xi = batch.X + m_out
        si = net(Xi, normalize_time(tf + sign, batch.period_T))
        m_return = si.m_bwd if sign == 1 else si.m_fwd
        intensity_term = ((si.intensity - b.intensity) ** 2).mean()
        round_trip = Xi + m_return - batch.X
        coord_term = (round_trip ** 2).sum(dim=-1).mean()
        total = total + weights.alpha1 * intensity_term + weights.alpha2 * coord_term
    return total


def _outside_sq(p):
    # squared distance to the divergence box, zero inside it
    over = (p - DIVERGE_HI).clamp_min(0.0) + (DIVERGE_LO - p).clamp_min(0.0)
    return (over ** 2).sum(dim=-1)


def _cycle_chain(net, batch, base_m, direction):
    """Compose T single-frame moves; returns (endpoint, motion sum,
    out-of-box penalty, diverged mask)."""
    sign = 1 if direction == "fwd" else -1
    tf = batch.t.to(batch.X.dtype)
    pos = batch.X + base_m
    msum = base_m
    pen = _outside_sq(pos)
    diverged = pen > 0
    for k in range(1, batch.period_T):
        sample = net(pos, normalize_time(tf + sign * k, batch.period_T))
        m = sample.m_fwd if direction == "fwd" else sample.m_bwd
        msum = msum + m
        pos = pos + m
        step_pen = _outside_sq(pos)
        pen = pen + step_pen
        diverged = diverged | (step_pen > 0)
    return pos, msum, pen, diverged


def cycle_consistency_loss(net, batch, weights, base=None):
    """Full-cycle closure: after T composed moves the intensity must be
    restored and the summed motion along each composed path must vanish.

    Samples whose path leaves the divergence box contribute their accumulated
    squared distance to the box instead of the closure terms, which keeps
    their gradients informative rather than dropping them.
    """
    b = base if base is not None else _base(net, batch)
    t_norm = normalize_time(batch.t.to(batch.X.dtype), batch.period_T)
    total = batch.X.new_zeros(())
    for direction, base_m in (("fwd", b.m_fwd), ("bwd", b.m_bwd)):
        end, msum, pen, diverged = _cycle_chain(net, batch, base_m, direction)
        closure = weights.alpha2 * (msum ** 2).sum(dim=-1)
        if direction == "fwd":
            # t + T wraps to the same normalized time, so reuse t_norm
            o_end = net(end, t_norm).intensity
            closure = closure + weights.alpha1 * (o_end - b.intensity) ** 2
        total = total + torch.where(diverged, pen, closure).mean()
    return total


def regularization_loss(net, batch, base=None):
    """L1 penalty |m_fwd + m_bwd| + |m_fwd| + |m_bwd|, averaged over points."""
    b = base if base is not None else _base(net, batch)
    l1 = ((b.m_fwd + b.m_bwd).abs().sum(dim=-1)
          + b.m_fwd.abs().sum(dim=-1)
          + b.m_bwd.abs().sum(dim=-1))
    return l1.mean()


def _check_term(name, value):
    if not torch.isfinite(value):
        raise NumericalError(f"loss term '{name}' is non-finite ({float(value.detach())})")
    return value


def total_loss(net, batch, weights, use_motion=True, use_cycle=True, use_reg=True,
               cycle_fraction=0.125, physics_batch=None):
    """Weighted total alpha1 * image + motion + cycle + alpha3 * reg.

    The cycle term runs on the leading cycle_fraction of the batch (already a
    uniform sample), since each of its samples costs T network evaluations.
    Disabled terms are reported as 0 and excluded from the graph.

    physics_batch, when given, is the batch variant used for the motion,
    cycle, and regularization terms. The 2D trainer passes the same points
    with pose gradients detached: poses are observation parameters and must
    be driven by the data term alone, otherwise the field priors drag view
    planes toward low-motion regions regardless of alignment.

    Returns:
        (total as a scalar tensor, LossBreakdown of detached floats).
    """
    require(len(batch) >= 1, "batch must be non-empty")
    base = _base(net, batch)
    zero = batch.X.new_zeros(())
    image = _check_term("image", image_loss(net, batch, base=base))
    pbatch = batch if physics_batch is None else physics_batch
    pbase = base if physics_batch is None else _base(net, pbatch)
    motion = zero
    if use_motion:
        motion = _check_term("motion", motion_consistency_loss(net, pbatch, weights, base=pbase))
    cycle = zero
    if use_cycle:
        n_sub = max(1, math.ceil(len(pbatch) * cycle_fraction))
        cycle = _check_term("cycle", cycle_consistency_loss(
            net, pbatch.head(n_sub), weights, base=_slice_sample(pbase, n_sub)))
    reg = zero
    if use_reg:
        reg = _check_term("reg", regularization_loss(net, pbatch, base=pbase))
    total = _check_term("total", weights.alpha1 * image + motion + cycle + weights.alpha3 * reg)
    breakdown = LossBreakdown(image=float(image.detach()), motion=float(motion.detach()),
                              cycle=float(cycle.detach()), reg=float(reg.detach()),
                              total=float(total.detach()))
    return total, breakdown
