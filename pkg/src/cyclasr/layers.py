"""Neural building blocks shared by the ASR, TTE and LM models.

All layers work on batched arrays: sequences are ``(B, T, D)`` with a
``lengths`` vector, and padded positions never influence valid outputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor, parameter
from .errors import ConfigError, InputError, ShapeError

INIT_SCALE = 0.1


def uniform(rng: np.random.Generator, shape, scale: float = INIT_SCALE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


class Module:
    """Container whose Tensor attributes (and nested modules) are parameters."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    def zero_(self) -> None:
        """Set every parameter to zero (handy for closed-form checks)."""
        for p in self.parameters():
            p.data[...] = 0.0


def _param(data, name):
    return parameter(data, name=name)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.w = _param(uniform(rng, (n_in, n_out)), "w")
        if bias:
            self.b = _param(np.zeros(n_out), "b")

    def __call__(self, x):
        y = ag.as_tensor(x) @ self.w
        return y + self.b if hasattr(self, "b") else y


class LSTM(Module):
    """Single LSTM layer; gate order is input, forget, output, candidate."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        self.n_hidden = n_hidden
        self.wx = _param(uniform(rng, (n_in, 4 * n_hidden)), "wx")
        self.wh = _param(uniform(rng, (n_hidden, 4 * n_hidden)), "wh")
        b = np.zeros(4 * n_hidden)
        b[n_hidden:2 * n_hidden] = 1.0
        self.b = _param(b, "b")

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, 2 * self.n_hidden)))

    def project(self, x) -> Tensor:
        """Input-to-gate pre-activations (bias included) for a whole sequence."""
        return ag.as_tensor(x) @ self.wx + self.b

    def step(self, zx: Tensor, hc: Tensor) -> Tensor:
        return ag.lstm_cell(zx, hc, self.wh)

    def run(self, zx_seq: Tensor, hc: Tensor | None = None) -> Tensor:
        """Unroll over ``(B, T, 4H)`` pre-activations; returns hidden states ``(B, T, H)``."""
        batch, steps = zx_seq.shape[0], zx_seq.shape[1]
        hc = self.initial_state(batch) if hc is None else hc
        outs = []
        for t in range(steps):
            hc = ag.lstm_cell(zx_seq[:, t], hc, self.wh)
            outs.append(hc)
        return ag.stack(outs, axis=1)[..., :self.n_hidden]


def lstm_step(x, h, c, p: LSTM) -> tuple[Tensor, Tensor]:
    """One LSTM recurrence step; returns ``(h', c')``."""
    x, h, c = ag.as_tensor(x), ag.as_tensor(h), ag.as_tensor(c)
    n = p.n_hidden
    if h.shape[-1] != n or c.shape[-1] != n or x.shape[-1] != p.wx.shape[0]:
        raise ShapeError(f"lstm_step: x {x.shape}, h {h.shape}, c {c.shape} vs cell size {n}")
    out = ag.lstm_cell(x @ p.wx + p.b, ag.concat([h, c], axis=-1), p.wh)
    return out[..., :n], out[..., n:]


def reversal_index(lengths: np.ndarray, steps: int) -> np.ndarray:
    """Per-row permutation that reverses each sequence inside its own length."""
    idx = np.tile(np.arange(steps), (len(lengths), 1))
    for row, n in enumerate(lengths):
        idx[row, :n] = np.arange(n - 1, -1, -1)
    return idx


def length_mask(lengths: np.ndarray, steps: int) -> np.ndarray:
    return np.arange(steps)[None, :] < np.asarray(lengths)[:, None]


class BLSTM(Module):
    """Bidirectional LSTM layer, optionally keeping every second output frame."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, subsample: bool = False):
        self.fwd = LSTM(n_in, n_hidden, rng)
        self.bwd = LSTM(n_in, n_hidden, rng)
        self.subsample = subsample

    def __call__(self, x: Tensor, lengths: np.ndarray) -> tuple[Tensor, np.ndarray]:
        steps = x.shape[1]
        full = bool(np.all(lengths == steps))
        rev = reversal_index(lengths, steps)
        hf = self.fwd.run(self.fwd.project(x))
        hb = ag.take_along(self.bwd.run(self.bwd.project(ag.take_along(x, rev))), rev)
        out = ag.concat([hf, hb], axis=-1)
        if not full:
            out = out * length_mask(lengths, steps)[..., None]
        if self.subsample:
            out = out[:, ::2]
            lengths = (lengths + 1) // 2
        return out, lengths


def blstm_encode(seq, layers: Sequence[BLSTM], lengths=None) -> tuple[Tensor, np.ndarray]:
    """Run a stack of BLSTM layers over ``(T, D)`` or ``(B, T, D)`` input.

    Returns ``(states, lengths)`` where each subsampling layer maps a length
    ``n`` to ``ceil(n / 2)``.
    """
    x = ag.as_tensor(seq)
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    lengths = np.full(x.shape[0], x.shape[1]) if lengths is None else np.asarray(lengths)
    factor = 2 ** sum(1 for layer in layers if layer.subsample)
    if lengths.min() < factor:
        raise InputError(f"sequence of length {int(lengths.min())} is shorter than subsampling factor {factor}")
    for layer in layers:
        x, lengths = layer(x, lengths)
    if single:
        x = x.reshape(x.shape[1], x.shape[2])
    return x, lengths


def subsampled_length(n: int, n_subsample: int) -> int:
    for _ in range(n_subsample):
        n = (n + 1) // 2
    return n


@dataclass
class AttentionState:
    """Previous attention weights and their running sum, both ``(B, T)``."""

    prev: Tensor
    accum: Tensor

    @classmethod
    def initial(cls, lengths: np.ndarray, steps: int) -> "AttentionState":
        mask = length_mask(lengths, steps)
        prev = mask / np.asarray(lengths, dtype=float)[:, None]
        return cls(Tensor(prev), Tensor(np.zeros(mask.shape)))


class LocationAttention(Module):
    """Additive attention with convolutional location features.

    ``mode="plain"`` convolves the previous weight vector; ``mode="accumulated"``
    convolves the sum of all previous weight vectors.
    """

    def __init__(self, n_query: int, n_key: int, n_att: int, n_filters: int, width: int,
                 rng: np.random.Generator):
        if width % 2 == 0:
            raise ConfigError(f"attention filter width must be odd, got {width}")
        self.wq = _param(uniform(rng, (n_query, n_att)), "wq")
        self.wk = _param(uniform(rng, (n_key, n_att)), "wk")
        self.b = _param(np.zeros(n_att), "b")
        self.conv = _param(uniform(rng, (width, 1, n_filters)), "conv")
        self.wf = _param(uniform(rng, (n_filters, n_att)), "wf")
        self.v = _param(uniform(rng, (n_att,)), "v")

    def prepare(self, keys: Tensor) -> tuple[Tensor, Tensor]:
        """Per-utterance precomputation: projected keys and the fused location kernel."""
        width, _, n_filters = self.conv.shape
        kernel = (self.conv.reshape(width, n_filters) @ self.wf).reshape(width, 1, -1)
        return keys @ self.wk + self.b, kernel

    def __call__(self, query, keys: Tensor, state: AttentionState, mask=None, mode: str = "plain",
                 prepared=None):
        if keys.shape[1] == 0:
            raise InputError("attention over an empty key sequence")
        if state.prev.shape[-1] != keys.shape[1]:
            raise ShapeError(f"attention state covers {state.prev.shape[-1]} positions, keys {keys.shape[1]}")
        kproj, kernel = prepared if prepared is not None else self.prepare(keys)
        batch, steps = keys.shape[0], keys.shape[1]
        if mode == "plain":
            src = state.prev
        elif mode == "accumulated":
            src = state.accum
        else:
            raise ConfigError(f"unknown attention mode {mode!r}")
        loc = ag.conv1d(src.reshape(batch, steps, 1), kernel)
        q = (ag.as_tensor(query) @ self.wq).reshape(batch, 1, -1)
        scores = ((kproj + q + loc).tanh() @ self.v)
        weights = scores.softmax(axis=-1, mask=mask)
        context = (weights.reshape(batch, 1, steps) @ keys).reshape(batch, keys.shape[2])
        return weights, context, AttentionState(weights, state.accum + weights)


def location_attention(query, keys, state: AttentionState, att: LocationAttention, mode: str = "plain"):
    """Single-utterance convenience wrapper: ``query (Hq,)``, ``keys (T, Hk)``."""
    keys = ag.as_tensor(keys)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise InputError("attention needs a non-empty (T, H) key matrix")
    q = ag.as_tensor(query).reshape(1, -1)
    w, ctx, st = att(q, keys.reshape(1, *keys.shape), state, mode=mode)
    return w.reshape(keys.shape[0]), ctx.reshape(keys.shape[1]), st


class Conv1d(Module):
    """Same-padded 1-D convolution over ``(B, L, C)``; odd widths only."""

    def __init__(self, n_in: int, n_out: int, width: int, rng: np.random.Generator):
        if width % 2 == 0:
            raise ConfigError(f"conv1d kernel width must be odd, got {width}")
        self.w = _param(uniform(rng, (width, n_in, n_out)), "w")
        self.b = _param(np.zeros(n_out), "b")

    def __call__(self, x):
        return ag.conv1d(x, self.w, self.b)


def conv1d(seq, kernel, bias=None):
    """Same-length convolution of an ``(L, C)`` sequence with a ``(K, C, C')`` kernel."""
    kernel = np.asarray(kernel.data if isinstance(kernel, Tensor) else kernel)
    if kernel.shape[0] % 2 == 0:
        raise ConfigError(f"conv1d kernel width must be odd, got {kernel.shape[0]}")
    return ag.conv1d(seq, kernel, bias)


class LayerNorm(Module):
    def __init__(self, n: int, eps: float = 1e-5):
        self.gain = _param(np.ones(n), "gain")
        self.bias = _param(np.zeros(n), "bias")
        self.eps = eps

    def __call__(self, x):
        centred = x - x.mean(axis=-1, keepdims=True)
        var = (centred * centred).mean(axis=-1, keepdims=True)
        return centred / (var + self.eps).sqrt() * self.gain + self.bias


def stochastic_regularizer(x, kind: str, rate: float, rng: np.random.Generator | None,
                           frozen: bool = False, prev=None):
    """Dropout (inverted scaling) or zoneout (carry units over from ``prev``)."""
    if kind == "dropout":
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        if frozen or rate == 0.0:
            return x
        keep = rng.random(x.shape) >= rate
        return x * (keep / (1.0 - rate))
    if kind == "zoneout":
        if not 0.0 <= rate <= 1.0:
            raise ConfigError(f"zoneout rate must lie in [0, 1], got {rate}")
        if prev is None:
            raise ConfigError("zoneout needs the previous recurrent state")
        if frozen or rate == 0.0:
            return x
        carry = rng.random(x.shape) < rate
        return ag.where(carry, prev, x)
    raise ConfigError(f"unknown regulariser {kind!r}")


def dropout(x, rate, rng, frozen=False):
    return stochastic_regularizer(x, "dropout", rate, rng, frozen)
