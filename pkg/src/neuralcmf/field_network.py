"""Dual-stream sinusoidal coordinate network with intensity and motion heads.

The field maps a space-time query (X, t_norm) to an intensity in (0, 1) and a
pair of inter-frame displacement vectors in (-1, 1)^3. A static stream sees X
only, a dynamic stream sees (X, t_norm); their 32-long features are
concatenated and mixed by one aggregation layer before the three heads.
"""

import math
from typing import NamedTuple

import numpy as np
import torch
from torch import nn

from .errors import DataError, NumericalError

OMEGA0 = 30.0
HIDDEN = 64
FEATURE = 32


class FieldSample(NamedTuple):
    intensity: torch.Tensor   # (N,) in (0, 1)
    m_fwd: torch.Tensor       # (N, 3) in (-1, 1), displacement to t + 1
    m_bwd: torch.Tensor       # (N, 3) in (-1, 1), displacement to t - 1


class Sine(nn.Module):
    def __init__(self, w0=OMEGA0):
        super().__init__()
        self.w0 = w0

    def forward(self, x):
        return torch.sin(self.w0 * x)


def expected_param_count():
    """Closed-form parameter count of the fixed architecture."""
    def lin(i, o):
        return i * o + o
    stream = lambda d_in: lin(d_in, HIDDEN) + 2 * lin(HIDDEN, HIDDEN) + lin(HIDDEN, FEATURE)
    heads = lin(2 * FEATURE, 1) + 2 * lin(2 * FEATURE, 3)
    return stream(3) + stream(4) + lin(2 * FEATURE, 2 * FEATURE) + heads


def _sine_stack(d_in, w0):
    # 4 sine-activated layers: d_in -> 64 -> 64 -> 64 -> 32
    return nn.Sequential(
        nn.Linear(d_in, HIDDEN), Sine(w0),
        nn.Linear(HIDDEN, HIDDEN), Sine(w0),
        nn.Linear(HIDDEN, HIDDEN), Sine(w0),
        nn.Linear(HIDDEN, FEATURE), Sine(w0),
    )


class FieldNetwork(nn.Module):
    def __init__(self, seed=0, omega0=OMEGA0, dtype=torch.float32):
        super().__init__()
        self.seed = int(seed)
        self.omega0 = float(omega0)
        self.static_stream = _sine_stack(3, self.omega0)
        self.dynamic_stream = _sine_stack(4, self.omega0)
        self.aggregation = nn.Sequential(nn.Linear(2 * FEATURE, 2 * FEATURE), Sine(self.omega0))
        self.intensity_head = nn.Linear(2 * FEATURE, 1)
        self.fwd_head = nn.Linear(2 * FEATURE, 3)
        self.bwd_head = nn.Linear(2 * FEATURE, 3)
        self.to(dtype)
        self._init_weights()
        n = sum(p.numel() for p in self.parameters())
        assert n == expected_param_count(), f"parameter count {n} != {expected_param_count()}"

    def _init_weights(self):
        gen = torch.Generator().manual_seed(self.seed)
        with torch.no_grad():
            for stream in (self.static_stream, self.dynamic_stream):
                first = True
                for layer in stream:
                    if isinstance(layer, nn.Linear):
                        _siren_uniform_(layer, self.omega0, first, gen)
                        first = False
            _siren_uniform_(self.aggregation[0], self.omega0, False, gen)
            for head in (self.intensity_head, self.fwd_head, self.bwd_head):
                head.weight.zero_()
                head.bias.zero_()

    @property
    def dtype(self):
        return self.intensity_head.weight.dtype

    def forward(self, X, t_norm):
        """Evaluate the field at a batch of space-time queries.

        X: (N, 3); t_norm: scalar or (N,) in [0, 1).
        """
        t = torch.as_tensor(t_norm, dtype=X.dtype, device=X.device)
        if t.dim() == 0:
            t = t.expand(X.shape[0])
        st = self.static_stream(X)
        dy = self.dynamic_stream(torch.cat([X, t.unsqueeze(-1)], dim=-1))
        h = self.aggregation(torch.cat([st, dy], dim=-1))
        intensity = torch.sigmoid(self.intensity_head(h)).squeeze(-1)
        m_fwd = torch.tanh(self.fwd_head(h))
        m_bwd = torch.tanh(self.bwd_head(h))
        return FieldSample(intensity, m_fwd, m_bwd)


def _siren_uniform_(linear, w0, first, generator):
    # first layer: +-1/fan_in; deeper layers: +-sqrt(6/fan_in)/w0
    fan_in = linear.in_features
    bound = 1.0 / fan_in if first else math.sqrt(6.0 / fan_in) / w0
    linear.weight.uniform_(-bound, bound, generator=generator)
    linear.bias.uniform_(-bound, bound, generator=generator)


def init_network(seed, omega0=OMEGA0, dtype=torch.float32):
    """Freshly initialized network; two calls with one seed agree bitwise.

    Heads start at zero, so the first evaluation anywhere yields intensity
    0.5 and zero motion.
    """
    return FieldNetwork(seed=seed, omega0=omega0, dtype=dtype)


def eval_field(net, X, t_norm):
    """Evaluate the field at one point or a batch, accepting numpy or torch.

    Pure function of (parameters, X, t_norm); no hidden state. Returns a
    FieldSample of tensors shaped (N,) / (N, 3) (N = 1 for a single point).
    """
    Xt = torch.as_tensor(np.atleast_2d(np.asarray(X, dtype=np.float64)) if not torch.is_tensor(X) else X,
                         dtype=net.dtype)
    if Xt.dim() == 1:
        Xt = Xt.unsqueeze(0)
    return net(Xt, t_norm)


def eval_batch_with_param_grads(net, objective):
    """Gradient of a scalar objective with respect to every parameter.

    The objective is a callable taking the network and returning a scalar
    tensor; it may chain evaluations at advected points and multiple times,
    and the partials accumulate through every evaluation.

    Returns:
        (loss value as float, dict of parameter name -> gradient tensor).
    """
    for p in net.parameters():
        p.grad = None
    loss = objective(net)
    if not torch.isfinite(loss):
        raise NumericalError(f"objective evaluated to a non-finite value: {float(loss)}")
    loss.backward()
    grads = {}
    for name, p in net.named_parameters():
        grads[name] = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
    return float(loss.detach()), grads


def coord_jacobian(net, X, t_norm):
    """Spatial Jacobian of the forward-motion head, J[a, b] = d m_a / d X_b.

    Args:
        net: FieldNetwork.
        X: (3,) point or (N, 3) batch (numpy or torch).
        t_norm: scalar or (N,) normalized time.

    Returns:
        numpy array of shape (3, 3) for a single point, else (N, 3, 3).
    """
    single = (not torch.is_tensor(X) and np.ndim(X) == 1) or (torch.is_tensor(X) and X.dim() == 1)
    Xt = torch.as_tensor(np.atleast_2d(np.asarray(X, dtype=np.float64)) if not torch.is_tensor(X) else X,
                         dtype=net.dtype)
    if Xt.dim() == 1:
        Xt = Xt.unsqueeze(0)
    Xt = Xt.detach().clone().requires_grad_(True)
    sample = net(Xt, t_norm)
    rows = []
    for a in range(3):
        # points are independent, so the gradient of the component sum
        # recovers each point's own row
        g, = torch.autograd.grad(sample.m_fwd[:, a].sum(), Xt, retain_graph=(a < 2))
        rows.append(g)
    J = torch.stack(rows, dim=1).detach().cpu().numpy()
    return J[0] if single else J


def flatten_params(net):
    """All parameters as one flat float vector, in registration order."""
    return np.concatenate([p.detach().cpu().numpy().ravel() for p in net.parameters()])


def load_flat_params_(net, flat):
    """Inverse of flatten_params; writes values into the network in place."""
    # np.frombuffer views are read-only; copy so torch never wraps one
    flat = np.array(flat, copy=True)
    total = sum(p.numel() for p in net.parameters())
    if flat.size != total:
        raise DataError(f"parameter vector length {flat.size} != expected {total}")
    offset = 0
    with torch.no_grad():
        for p in net.parameters():
            n = p.numel()
            chunk = flat[offset:offset + n].reshape(tuple(p.shape))
            p.copy_(torch.as_tensor(chunk, dtype=p.dtype))
            offset += n
    return net
