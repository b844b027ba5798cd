"""GRU with an element-wise attention gate on its input.

Per step, with ``s`` the logistic sigmoid::

    a   = s(x W_xa + h W_ha + b_a)          # same width as x
    x~  = a * x
    r   = s(x~ W_xr + h W_hr + b_r)
    z   = s(x~ W_xz + h W_hz + b_z)
    h'  = tanh(x~ W_xh + (r * h) W_hh + b_h)
    h_t = z * h + (1 - z) * h'

A whole layer is unrolled inside one graph node with an explicit
backpropagation-through-time pass, which keeps long sequences cheap.
"""

from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np

from .autograd import Module, Parameter, Tensor, ops
from .autograd.nn import xavier_uniform
from .autograd.tensor import as_tensor, make_result
from .errors import ConfigurationError, ContractError

GATES = ("r", "z", "h")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


class EleAttGRULayer(Module):
    """One recurrent layer; all units share a single attention gate.

    ``force_attention_ones`` pins ``a = 1`` so the layer reduces to a plain GRU.
    """

    def __init__(self, input_dim: int, units: int, rng: np.random.Generator):
        super().__init__()
        if input_dim < 1 or units < 1:
            raise ConfigurationError("input_dim and units must be positive")
        self.input_dim, self.units = input_dim, units
        self.W_xa = Parameter(xavier_uniform(rng, (input_dim, input_dim)))
        self.W_ha = Parameter(xavier_uniform(rng, (input_dim, units)).T)
        self.b_a = Parameter(np.zeros(input_dim))
        for g in GATES:
            setattr(self, f"W_x{g}", Parameter(xavier_uniform(rng, (units, input_dim)).T))
            setattr(self, f"W_h{g}", Parameter(xavier_uniform(rng, (units, units)).T))
            setattr(self, f"b_{g}", Parameter(np.zeros(units)))
        self.force_attention_ones = False

    def _param_list(self) -> List[Parameter]:
        return [self.W_xa, self.W_ha, self.b_a,
                self.W_xr, self.W_hr, self.b_r,
                self.W_xz, self.W_hz, self.b_z,
                self.W_xh, self.W_hh, self.b_h]

    def forward(self, xs, h0=None, lengths: Optional[Sequence[int]] = None) -> Tensor:
        """Run over ``xs[B, L, D]`` (or ``[L, D]``) and return every hidden state.

        ``lengths`` freezes each sequence's state after its last valid step, so
        ``out[:, -1]`` is the state at the true end.
        """
        return run_layer(self, xs, h0, lengths)

    def step(self, x_t, h_prev) -> Tensor:
        return cell_step(self, x_t, h_prev)


def cell_step(layer: EleAttGRULayer, x_t, h_prev) -> Tensor:
    """Single step; ``x_t`` is ``[D]`` or ``[B, D]``, ``h_prev`` matches with ``N``."""
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    if x_t.ndim == 1:
        out = run_layer(layer, ops.reshape(x_t, (1, 1, -1)), ops.reshape(h_prev, (1, -1)))
        return ops.reshape(out, (layer.units,))
    out = run_layer(layer, ops.reshape(x_t, (x_t.shape[0], 1, x_t.shape[1])), h_prev)
    return ops.reshape(out, (x_t.shape[0], layer.units))


def run_layer(layer: EleAttGRULayer, xs, h0=None, lengths: Optional[Sequence[int]] = None) -> Tensor:
    xs = as_tensor(xs)
    squeeze = xs.ndim == 2
    if squeeze:
        xs = ops.reshape(xs, (1,) + xs.shape)
    if xs.ndim != 3 or xs.shape[2] != layer.input_dim:
        raise ContractError(f"expected input [B, L, {layer.input_dim}], got {xs.shape}")
    B, L, D = xs.shape
    N = layer.units
    if L < 1:
        raise ContractError("sequence length must be at least 1")
    if h0 is None:
        h0 = Tensor._wrap(np.zeros((B, N)))
    h0 = as_tensor(h0)
    if squeeze and h0.ndim == 1:
        h0 = ops.reshape(h0, (1, N))
    if h0.shape != (B, N):
        raise ContractError(f"initial state must be [{B}, {N}], got {h0.shape}")
    mask = None
    if lengths is not None:
        lengths = np.asarray(lengths)
        if lengths.shape != (B,) or lengths.min() < 1:
            raise ContractError("lengths must be one positive length per sequence")
        mask = (np.arange(L)[None, :] < lengths[:, None]).astype(np.float64)

    params = layer._param_list()
    (Wxa, Wha, ba, Wxr, Whr, br, Wxz, Whz, bz, Wxh, Whh, bh) = [p.data for p in params]
    force = layer.force_attention_ones
    X = xs.data
    H = np.empty((B, L, N))
    cache = []
    h = h0.data
    for t in range(L):
        x = X[:, t]
        if force:
            a = np.ones_like(x)
        else:
            a = _sigmoid(x @ Wxa + h @ Wha + ba)
        xt = a * x
        r = _sigmoid(xt @ Wxr + h @ Whr + br)
        z = _sigmoid(xt @ Wxz + h @ Whz + bz)
        rh = r * h
        n = np.tanh(xt @ Wxh + rh @ Whh + bh)
        hn = z * h + (1 - z) * n
        if mask is not None:
            m = mask[:, t:t + 1]
            hn = m * hn + (1 - m) * h
        cache.append((h, a, xt, r, z, rh, n))
        h = hn
        H[:, t] = h

    def backward(gH):
        grads = [np.zeros_like(p) for p in (Wxa, Wha, ba, Wxr, Whr, br, Wxz, Whz, bz, Wxh, Whh, bh)]
        gWxa, gWha, gba, gWxr, gWhr, gbr, gWxz, gWhz, gbz, gWxh, gWhh, gbh = grads
        gX = np.zeros_like(X)
        dh = np.zeros((B, N))
        for t in range(L - 1, -1, -1):
            h_prev, a, xt, r, z, rh, n = cache[t]
            x = X[:, t]
            dh = dh + gH[:, t]
            if mask is not None:
                m = mask[:, t:t + 1]
                dhn = m * dh
                dprev = (1 - m) * dh
            else:
                dhn = dh
                dprev = 0.0
            dz = dhn * (h_prev - n)
            dprev = dprev + dhn * z
            dn_pre = dhn * (1 - z) * (1 - n * n)
            gWxh += xt.T @ dn_pre
            gWhh += rh.T @ dn_pre
            gbh += dn_pre.sum(0)
            drh = dn_pre @ Whh.T
            dr_pre = drh * h_prev * r * (1 - r)
            dprev = dprev + drh * r
            dz_pre = dz * z * (1 - z)
            gWxz += xt.T @ dz_pre
            gWhz += h_prev.T @ dz_pre
            gbz += dz_pre.sum(0)
            gWxr += xt.T @ dr_pre
            gWhr += h_prev.T @ dr_pre
            gbr += dr_pre.sum(0)
            dxt = dn_pre @ Wxh.T + dz_pre @ Wxz.T + dr_pre @ Wxr.T
            dprev = dprev + dz_pre @ Whz.T + dr_pre @ Whr.T
            dx = dxt * a
            if not force:
                da_pre = dxt * x * a * (1 - a)
                gWxa += x.T @ da_pre
                gWha += h_prev.T @ da_pre
                gba += da_pre.sum(0)
                dx = dx + da_pre @ Wxa.T
                dprev = dprev + da_pre @ Wha.T
            gX[:, t] = dx
            dh = dprev
        return [gX, dh] + grads

    out = make_result(H, [xs, h0] + params, backward)
    if squeeze:
        out = ops.reshape(out, (L, N))
    return out


class EleAttGRUStack(Module):
    """Stacked layers; parameters are named ``eleatt_gru/<layer>/<matrix>``."""

    def __init__(self, input_dim: int, units: int, layers: int, rng: np.random.Generator):
        super().__init__()
        if layers < 1:
            raise ConfigurationError(f"need at least one layer, got {layers}")
        self.units = units
        self.eleatt_gru = [EleAttGRULayer(input_dim if i == 0 else units, units, rng)
                           for i in range(layers)]

    @property
    def layers(self) -> List[EleAttGRULayer]:
        return self.eleatt_gru

    def forward(self, xs, h0: Optional[Sequence] = None, lengths=None) -> Tensor:
        out = xs
        for i, layer in enumerate(self.eleatt_gru):
            out = layer(out, None if h0 is None else h0[i], lengths)
        return out

    def forward_states(self, xs, h0: Optional[Sequence] = None, lengths=None) -> List[Tensor]:
        """Outputs of every layer (the last entry equals :meth:`forward`)."""
        states, out = [], xs
        for i, layer in enumerate(self.eleatt_gru):
            out = layer(out, None if h0 is None else h0[i], lengths)
            states.append(out)
        return states


def build_encoder(input_dim: int, units: int = 128, layers: int = 2,
                  rng: Optional[np.random.Generator] = None) -> EleAttGRUStack:
    return EleAttGRUStack(input_dim, units, layers, rng or np.random.default_rng(0))


def build_decoder(input_dim: int, units: int = 128,
                  rng: Optional[np.random.Generator] = None) -> EleAttGRUStack:
    """Single-layer recurrent decoder; its input is the previous-token embedding plus context."""
    return EleAttGRUStack(input_dim, units, 1, rng or np.random.default_rng(0))
