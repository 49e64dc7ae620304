"""Tacotron2-style text-to-encoder (TTE) model.

Instead of spectrogram frames the decoder predicts the ASR encoder state
sequence plus a per-frame end-of-sequence probability. Outputs pass through
``tanh`` so they share the (-1, 1) range of the LSTM encoder states they
imitate.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor, no_grad
from .errors import ConfigError, InputError
from .layers import (
    BLSTM, LSTM, AttentionState, Conv1d, LayerNorm, Linear, LocationAttention, Module, length_mask,
    stochastic_regularizer, uniform,
)
from .optim import Adam
from .vocab import Vocab

BCE_CLAMP = 1e-12


@dataclass
class TTEConfig:
    out_dim: int
    emb_dim: int = 16
    enc_conv_layers: int = 2
    enc_conv_channels: int = 32
    conv_width: int = 5
    enc_units: int = 16
    att_dim: int = 32
    att_filters: int = 4
    att_width: int = 5
    prenet_units: int = 32
    dec_units: int = 64
    dec_layers: int = 1
    postnet_layers: int = 3
    postnet_channels: int = 32
    dropout: float = 0.5
    zoneout: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TTEConfig":
        return cls(**d)


@dataclass
class TTEPrediction:
    """Pre-postnet states, post-postnet states ``(B, T', H)`` and stop probabilities ``(B, T')``."""

    before: Tensor
    after: Tensor
    stop_probs: Tensor
    lengths: np.ndarray

    def __len__(self) -> int:
        return self.before.shape[1]


class TTEModel(Module):
    def __init__(self, config: TTEConfig, vocab: Vocab, rng: np.random.Generator):
        c = config
        if c.postnet_layers < 1 or c.enc_conv_layers < 0 or c.dec_layers < 1:
            raise ConfigError("TTE needs at least one postnet and one decoder layer")
        self.config = config
        self.vocab = vocab
        self.embed = ag.parameter(uniform(rng, (len(vocab), c.emb_dim)), "embed")
        convs, norms, n_in = [], [], c.emb_dim
        for _ in range(c.enc_conv_layers):
            convs.append(Conv1d(n_in, c.enc_conv_channels, c.conv_width, rng))
            norms.append(LayerNorm(c.enc_conv_channels))
            n_in = c.enc_conv_channels
        self.enc_convs, self.enc_norms = convs, norms
        self.enc_lstm = BLSTM(n_in, c.enc_units, rng)
        self.att = LocationAttention(c.dec_units, 2 * c.enc_units, c.att_dim, c.att_filters, c.att_width, rng)
        self.prenet = [Linear(c.out_dim, c.prenet_units, rng), Linear(c.prenet_units, c.prenet_units, rng)]
        self.decoder = [LSTM(2 * c.enc_units + c.prenet_units if i == 0 else c.dec_units, c.dec_units, rng)
                        for i in range(c.dec_layers)]
        self.proj = Linear(c.dec_units, c.out_dim, rng)
        post, post_norms, n_in = [], [], c.dec_units
        for i in range(c.postnet_layers):
            last = i == c.postnet_layers - 1
            post.append(Conv1d(n_in, c.out_dim if last else c.postnet_channels, c.conv_width, rng))
            if not last:
                post_norms.append(LayerNorm(c.postnet_channels))
            n_in = c.postnet_channels
        self.postnet, self.post_norms = post, post_norms
        self.stop = Linear(c.dec_units, 1, rng)

    # encoder ------------------------------------------------------------
    def encode(self, tokens, lengths=None, training: bool = False, rng=None) -> Tensor:
        """Character ids ``(B, L)`` (or one sequence) to encoder states ``(B, L, 2U)``."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None]
        if tokens.size == 0 or tokens.shape[1] == 0:
            raise InputError("TTE input must contain at least one token")
        if tokens.min() < 0 or tokens.max() >= len(self.vocab):
            raise InputError(f"unknown token id in TTE input (vocabulary size {len(self.vocab)})")
        lengths = np.full(len(tokens), tokens.shape[1]) if lengths is None else np.asarray(lengths)
        mask = length_mask(lengths, tokens.shape[1])[..., None]
        full = bool(mask.all())
        x = ag.embedding(self.embed, tokens)
        if not full:
            x = x * mask
        for conv, norm in zip(self.enc_convs, self.enc_norms):
            x = norm(conv(x)).relu()
            x = stochastic_regularizer(x, "dropout", self.config.dropout, rng, frozen=not training)
            if not full:
                x = x * mask
        out, _ = self.enc_lstm(x, lengths)
        return out

    def _prenet(self, x, rng, active: bool):
        for lin in self.prenet:
            x = stochastic_regularizer(lin(x).relu(), "dropout", self.config.dropout, rng, frozen=not active)
        return x

    def _postnet(self, q, frame_mask, training, rng):
        # padded frames must not leak into valid ones through the convolutions
        x = q if frame_mask is None else q * frame_mask
        last = len(self.postnet) - 1
        for i, conv in enumerate(self.postnet):
            x = conv(x)
            if i < last:
                x = self.post_norms[i](x).tanh()
                x = stochastic_regularizer(x, "dropout", self.config.dropout, rng, frozen=not training)
            if frame_mask is not None:
                x = x * frame_mask
        return x

    def _decoder_step(self, inp, hcs, training, rng):
        new = []
        for layer, hc in zip(self.decoder, hcs):
            hc_next = ag.lstm_cell(inp @ layer.wx + layer.b, hc, layer.wh)
            if training:
                hc_next = stochastic_regularizer(hc_next, "zoneout", self.config.zoneout, rng, prev=hc)
            new.append(hc_next)
            inp = hc_next[:, :layer.n_hidden]
        return inp, new

    def _outputs(self, q, frame_mask, training, rng):
        proj = self.proj(q)
        before = proj.tanh()
        after = (proj + self._postnet(q, frame_mask, training, rng)).tanh()
        stop = self.stop(q).sigmoid()
        return before, after, stop.reshape(stop.shape[0], stop.shape[1])

    # teacher-forced decoding --------------------------------------------
    def decode_teacher_forced(self, tokens, targets, token_lengths=None, frame_lengths=None,
                              training: bool = False, rng=None) -> TTEPrediction:
        """Predict exactly ``T'`` frames, feeding the true previous encoder state to the prenet.

        ``targets`` is the ASR encoder state array ``(B, T', H)`` (constant).
        """
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None]
        tgt = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
        if tgt.ndim == 2:
            tgt = tgt[None]
        batch, n_frames = tgt.shape[0], tgt.shape[1]
        if n_frames < 1:
            raise InputError("TTE targets must have at least one frame")
        if tgt.shape[2] != self.config.out_dim or len(tokens) != batch:
            raise InputError(f"target shape {tgt.shape} does not match model/out_dim {self.config.out_dim}")
        token_lengths = np.full(batch, tokens.shape[1]) if token_lengths is None else np.asarray(token_lengths)
        frame_lengths = np.full(batch, n_frames) if frame_lengths is None else np.asarray(frame_lengths)
        if training and rng is None:
            raise ConfigError("training mode needs a random generator")

        enc = self.encode(tokens, token_lengths, training, rng)
        prev = np.concatenate([np.zeros((batch, 1, tgt.shape[2])), tgt[:, :-1]], axis=1)
        v = self._prenet(Tensor(prev), rng, active=training)
        key_mask = length_mask(token_lengths, tokens.shape[1])
        att_state = AttentionState.initial(token_lengths, tokens.shape[1])
        prepared = self.att.prepare(enc)
        hcs = [layer.initial_state(batch) for layer in self.decoder]
        n_q = self.config.dec_units
        qs = []
        for t in range(n_frames):
            _, ctx, att_state = self.att(hcs[-1][:, :n_q], enc, att_state, mask=key_mask, mode="accumulated",
                                         prepared=prepared)
            q, hcs = self._decoder_step(ag.concat([ctx, v[:, t]], axis=-1), hcs, training, rng)
            qs.append(q)
        q = ag.stack(qs, axis=1)
        frame_mask = None if bool(np.all(frame_lengths == n_frames)) else length_mask(frame_lengths, n_frames)[..., None]
        before, after, stop = self._outputs(q, frame_mask, training, rng)
        if before.shape[1] != n_frames:
            raise AssertionError("teacher-forced prediction length differs from the target length")
        return TTEPrediction(before, after, stop, frame_lengths)

    # free running -------------------------------------------------------
    def free_run(self, tokens, stop_threshold: float = 0.75, max_frames: int = 200, rng=None,
                 frozen: bool = False) -> TTEPrediction:
        """Autoregressive generation for one character sequence.

        The prenet keeps dropout active (unless ``frozen``) and consumes the
        model's previous pre-postnet frame. Generation halts after the first
        frame whose stop probability exceeds ``stop_threshold``.
        """
        if not 0 < stop_threshold < 1:
            raise ConfigError(f"stop threshold must lie in (0, 1), got {stop_threshold}")
        if max_frames < 1:
            raise ConfigError("max_frames must be >= 1")
        if rng is None and not frozen:
            rng = np.random.default_rng()
        tokens = np.asarray(tokens)[None]
        with no_grad():
            enc = self.encode(tokens)
            att_state = AttentionState.initial(np.array([tokens.shape[1]]), tokens.shape[1])
            prepared = self.att.prepare(enc)
            hcs = [layer.initial_state(1) for layer in self.decoder]
            prev = Tensor(np.zeros((1, self.config.out_dim)))
            n_q = self.config.dec_units
            qs = []
            for _ in range(max_frames):
                v = self._prenet(prev, rng, active=not frozen)
                _, ctx, att_state = self.att(hcs[-1][:, :n_q], enc, att_state, mode="accumulated",
                                             prepared=prepared)
                q, hcs = self._decoder_step(ag.concat([ctx, v], axis=-1), hcs, False, rng)
                qs.append(q)
                prev = self.proj(q).tanh()
                if float(self.stop(q).sigmoid().data[0, 0]) > stop_threshold:
                    break
            before, after, stop = self._outputs(ag.stack(qs, axis=1), None, False, rng)
        return TTEPrediction(before, after, stop, np.array([len(qs)]))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def tte_utterance_losses(pred: TTEPrediction, targets, frame_lengths=None) -> Tensor:
    """Reconstruction loss per utterance ``(B,)``.

    MSE and L1 terms (after and before the postnet) are means over the valid
    ``T' * H`` elements; the stop term is the mean binary cross-entropy over
    the valid frames, with labels 1 on the final frame only.
    """
    tgt = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    if tgt.ndim == 2:
        tgt = tgt[None]
    if tgt.shape != pred.before.shape:
        raise InputError(f"prediction {pred.before.shape} and target {tgt.shape} differ in shape")
    batch, n_frames, dim = tgt.shape
    lengths = np.full(batch, n_frames) if frame_lengths is None else np.asarray(frame_lengths)
    mask = length_mask(lengths, n_frames)
    labels = (np.arange(n_frames)[None, :] >= (lengths[:, None] - 1)).astype(float)
    elem = (ag.squared_error(pred.after, tgt) + ag.squared_error(pred.before, tgt)
            + ag.abs_error(pred.after, tgt) + ag.abs_error(pred.before, tgt))
    recon = (elem * mask[..., None]).sum(axis=(1, 2)) / (lengths * dim).astype(float)
    p = pred.stop_probs.clip(BCE_CLAMP, 1.0 - BCE_CLAMP)
    bce = -(p.log() * labels + (1.0 - p).log() * (1.0 - labels))
    stop = (bce * mask).sum(axis=1) / lengths.astype(float)
    return recon + stop


def tte_loss(pred: TTEPrediction, targets, frame_lengths=None) -> Tensor:
    """Scalar reconstruction loss summed over the utterances in the batch."""
    return tte_utterance_losses(pred, targets, frame_lengths).sum()


def stop_labels(n_frames: int) -> np.ndarray:
    labels = np.zeros(n_frames)
    labels[-1] = 1.0
    return labels


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _pad(seqs, fill=0):
    lengths = np.array([len(s) for s in seqs])
    out = np.full((len(seqs), lengths.max()), fill, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lengths


def _pad_states(states):
    lengths = np.array([len(s) for s in states])
    out = np.zeros((len(states), lengths.max(), states[0].shape[1]))
    for i, s in enumerate(states):
        out[i, :len(s)] = s
    return out, lengths


def mean_tte_loss(model: TTEModel, pairs, batch_size: int = 16) -> float:
    """Deterministic mean per-utterance loss over ``(token ids, states)`` pairs."""
    total = 0.0
    with no_grad():
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i:i + batch_size]
            tok, tl = _pad([c for c, _ in chunk])
            st, sl = _pad_states([h for _, h in chunk])
            pred = model.decode_teacher_forced(tok, st, tl, sl)
            total += float(tte_utterance_losses(pred, st, sl).data.sum())
    return total / len(pairs)


def tte_train(model: TTEModel, pairs, epochs: int = 30, batch_size: int = 10, lr: float = 3e-3,
              clip_norm: float = 5.0, rng: np.random.Generator | None = None, optimizer: Adam | None = None,
              log=None) -> list[float]:
    """Fit the TTE on ``(token ids, encoder states)`` pairs.

    Returns the deterministic mean training loss before training and after
    each epoch (``epochs + 1`` values).
    """
    if not pairs:
        raise InputError("TTE training set is empty")
    rng = np.random.default_rng(0) if rng is None else rng
    pairs = sorted(pairs, key=lambda p: -len(p[1]))
    opt = optimizer or Adam(model.parameters(), lr=lr, clip_norm=clip_norm)
    curve = [mean_tte_loss(model, pairs)]
    starts = list(range(0, len(pairs), batch_size))
    for epoch in range(epochs):
        for b in rng.permutation(len(starts)):
            chunk = pairs[starts[b]:starts[b] + batch_size]
            tok, tl = _pad([c for c, _ in chunk])
            st, sl = _pad_states([h for _, h in chunk])
            with Tape() as tape:
                pred = model.decode_teacher_forced(tok, st, tl, sl, training=True, rng=rng)
                loss = tte_loss(pred, st, sl) / len(chunk)
                grads = tape.backward(loss, opt.params)
            opt.step(grads)
        curve.append(mean_tte_loss(model, pairs))
        if log is not None:
            log(f"tte epoch {epoch + 1}: loss {curve[-1]:.4f}")
    return curve
