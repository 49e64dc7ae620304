"""Attention-based encoder-decoder speech recogniser.

The posterior over a character sequence factorises left to right; each step
attends over the BLSTM encoder states with location-aware attention, updates a
single-layer LSTM decoder and emits a softmax over ``<eos>`` plus characters.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad
from .errors import ConfigError, InputError
from .layers import (
    BLSTM, LSTM, AttentionState, Linear, LocationAttention, Module, blstm_encode, length_mask, uniform,
)
from .vocab import Vocab


@dataclass
class ASRConfig:
    feat_dim: int
    enc_units: int = 32
    subsample: tuple = (True, True)
    dec_units: int = 32
    emb_dim: int = 16
    att_dim: int = 32
    att_filters: int = 4
    att_width: int = 5
    cmvn: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["subsample"] = list(self.subsample)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ASRConfig":
        d = dict(d)
        d["subsample"] = tuple(bool(x) for x in d.get("subsample", (True, True)))
        return cls(**d)


@dataclass
class EncoderStates:
    """Encoder output ``(B, T', H)`` with valid lengths; ``stop_labels`` mark the last frame."""

    states: Tensor
    lengths: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return length_mask(self.lengths, self.states.shape[1])

    @property
    def stop_labels(self) -> np.ndarray:
        steps = self.states.shape[1]
        return (np.arange(steps)[None, :] >= (self.lengths[:, None] - 1)).astype(float)

    def __len__(self) -> int:
        return self.states.shape[0]

    def select(self, i: int) -> "EncoderStates":
        """Single utterance ``i`` trimmed to its own length (data only, no graph)."""
        n = int(self.lengths[i])
        return EncoderStates(Tensor(self.states.data[i:i + 1, :n]), np.array([n]))

    def detach(self) -> "EncoderStates":
        return EncoderStates(self.states.detach(), self.lengths)


@dataclass
class Hypothesis:
    tokens: list
    score: float
    per_step_scores: list = field(default_factory=list)


def length_bounds(n_frames: int, min_ratio: float, max_ratio: float) -> tuple[int, int]:
    """Allowed number of characters (before ``<eos>``) for ``n_frames`` encoder frames."""
    return int(min_ratio * n_frames), int(max_ratio * n_frames)


class ASRModel(Module):
    def __init__(self, config: ASRConfig, vocab: Vocab, rng: np.random.Generator):
        self.config = config
        self.vocab = vocab
        c = config
        layers, n_in = [], c.feat_dim
        for flag in c.subsample:
            layers.append(BLSTM(n_in, c.enc_units, rng, subsample=flag))
            n_in = 2 * c.enc_units
        self.encoder = layers
        self.embed = ag.parameter(uniform(rng, (len(vocab), c.emb_dim)), "embed")
        self.att = LocationAttention(c.dec_units, 2 * c.enc_units, c.att_dim, c.att_filters, c.att_width, rng)
        self.decoder = LSTM(c.emb_dim + 2 * c.enc_units, c.dec_units, rng)
        self.out = Linear(c.dec_units, vocab.n_out, rng)

    @property
    def state_dim(self) -> int:
        return 2 * self.config.enc_units

    @property
    def subsample_factor(self) -> int:
        return 2 ** sum(bool(f) for f in self.config.subsample)

    # encoder ------------------------------------------------------------
    def encode(self, feats, lengths=None) -> EncoderStates:
        """Encode one ``(T, D)`` utterance or a padded ``(B, T, D)`` batch."""
        x = np.asarray(feats.data if isinstance(feats, Tensor) else feats, dtype=ag.get_default_dtype())
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.config.feat_dim:
            raise InputError(f"expected features of width {self.config.feat_dim}, got shape {x.shape}")
        lengths = np.full(x.shape[0], x.shape[1]) if lengths is None else np.asarray(lengths)
        if self.config.cmvn:
            x = utterance_cmvn(x, lengths)
        states, out_lengths = blstm_encode(x, self.encoder, lengths)
        return EncoderStates(states, out_lengths)

    # decoder ------------------------------------------------------------
    def initial_decoder_state(self, enc: EncoderStates):
        batch, steps = enc.states.shape[0], enc.states.shape[1]
        return self.decoder.initial_state(batch), AttentionState.initial(enc.lengths, steps)

    def _step(self, prev_ids, hc, att_state, enc: EncoderStates, prepared, mask, temperature: float = 1.0):
        n = self.config.dec_units
        emb = ag.embedding(self.embed, prev_ids)
        _, ctx, att_state = self.att(hc[:, :n], enc.states, att_state, mask=mask, mode="plain",
                                     prepared=prepared)
        zx = ag.concat([emb, ctx], axis=-1) @ self.decoder.wx + self.decoder.b
        hc = ag.lstm_cell(zx, hc, self.decoder.wh)
        logits = self.out(hc[:, :n])
        if temperature != 1.0:
            logits = logits / temperature
        return logits.log_softmax(axis=-1), hc, att_state

    def decode_step(self, prev_ids, dec_state, att_state, enc: EncoderStates):
        """One decoder step; returns ``(probs (B, V), dec_state', att_state')``.

        ``probs`` ranges over ``<eos>`` followed by the characters.
        """
        prev_ids = np.atleast_1d(np.asarray(prev_ids))
        if prev_ids.min() < 0 or prev_ids.max() >= len(self.vocab):
            raise InputError(f"token id out of range: {prev_ids}")
        logp, hc, att_state = self._step(prev_ids, dec_state, att_state, enc, self.att.prepare(enc.states),
                                         enc.mask)
        return logp.exp(), hc, att_state

    # training objective -------------------------------------------------
    def token_logprobs(self, enc: EncoderStates, targets: np.ndarray) -> Tensor:
        """Teacher-forced log-probabilities ``(B, L)`` of padded target ids."""
        targets = np.asarray(targets)
        batch, steps = targets.shape
        prev = np.concatenate([np.full((batch, 1), self.vocab.sos_id), targets[:, :-1]], axis=1)
        prev = np.where(prev == self.vocab.pad_id, self.vocab.eos_id, prev)
        out_idx = np.clip(targets - self.vocab.offset, 0, None)
        hc, att_state = self.initial_decoder_state(enc)
        prepared = self.att.prepare(enc.states)
        mask = enc.mask
        picks = []
        for t in range(steps):
            logp, hc, att_state = self._step(prev[:, t], hc, att_state, enc, prepared, mask)
            picks.append(ag.pick(logp, out_idx[:, t]))
        return ag.stack(picks, axis=1)

    def utterance_nll(self, enc: EncoderStates, targets: np.ndarray) -> Tensor:
        """Per-utterance negative log-likelihood ``(B,)``; padding positions are ignored."""
        targets = np.asarray(targets)
        lp = self.token_logprobs(enc, targets)
        return -(lp * (targets != self.vocab.pad_id)).sum(axis=1)

    def supervised_loss(self, feats, targets, lengths=None) -> Tensor:
        """Sum over the batch of ``-log p(C | X)`` with ground-truth history.

        ``targets`` is one id sequence ending in ``<eos>`` or a list of them.
        """
        targets = _pad_targets(targets, self.vocab)
        if len(targets) != (1 if np.ndim(feats) == 2 else np.shape(feats)[0]):
            raise InputError("number of transcripts does not match number of utterances")
        enc = self.encode(feats, lengths)
        return self.utterance_nll(enc, targets).sum()

    def teacher_forced_accuracy(self, feats, targets, lengths=None) -> tuple[int, int]:
        """Correct and total next-token predictions given ground-truth history."""
        targets = _pad_targets(targets, self.vocab)
        with no_grad():
            enc = self.encode(feats, lengths)
            batch, steps = targets.shape
            prev = np.concatenate([np.full((batch, 1), self.vocab.sos_id), targets[:, :-1]], axis=1)
            prev = np.where(prev == self.vocab.pad_id, self.vocab.eos_id, prev)
            hc, att_state = self.initial_decoder_state(enc)
            prepared = self.att.prepare(enc.states)
            correct = 0
            for t in range(steps):
                logp, hc, att_state = self._step(prev[:, t], hc, att_state, enc, prepared, enc.mask)
                valid = targets[:, t] != self.vocab.pad_id
                guess = logp.data.argmax(axis=-1) + self.vocab.offset
                correct += int(np.sum((guess == targets[:, t]) & valid))
        return correct, int(np.sum(targets != self.vocab.pad_id))

    # decoding -------------------------------------------------------------
    def beam_search(self, feats, beam: int = 20, min_ratio: float = 0.2, max_ratio: float = 0.8,
                    lm=None, lm_weight: float = 0.0) -> list[Hypothesis]:
        """Length-constrained beam search over one utterance.

        ``<eos>`` is only allowed once a hypothesis has ``int(min_ratio * T')``
        characters; at ``int(max_ratio * T')`` characters it is appended with a
        zero score. With ``lm`` supplied each step scores
        ``log p_asr + lm_weight * log p_lm``. Hypotheses come back best first,
        exact ties ordered by token ids.
        """
        _check_search_args(beam, min_ratio, max_ratio)
        with no_grad():
            enc = self.encode(feats)
            return self._beam_search(enc, beam, min_ratio, max_ratio, lm, lm_weight)

    def _beam_search(self, enc, beam, min_ratio, max_ratio, lm, lm_weight):
        n_frames = int(enc.lengths[0])
        min_len, max_len = length_bounds(n_frames, min_ratio, max_ratio)
        eos, off = self.vocab.eos_id, self.vocab.offset
        kproj, kernel = self.att.prepare(enc.states)
        hc, att_state = self.initial_decoder_state(enc)
        live = [Hypothesis([], 0.0, [])]
        prev_ids = np.array([self.vocab.sos_id])
        lm_state = lm.initial_state(1) if lm is not None else None
        finished: list[Hypothesis] = []
        while live:
            rows = len(live)
            states = EncoderStates(Tensor(np.repeat(enc.states.data, rows, axis=0)), np.repeat(enc.lengths, rows))
            prepared = (Tensor(np.repeat(kproj.data, rows, axis=0)), kernel)
            logp, hc_new, att_new = self._step(prev_ids, hc, att_state, states, prepared, states.mask)
            scores = logp.data
            if lm is not None:
                lm_logp, lm_new = lm.step(lm_state, prev_ids)
                scores = scores + lm_weight * lm_logp.data
            cands = []
            for r, hyp in enumerate(live):
                n = len(hyp.tokens)
                if n >= max_len:
                    cands.append((hyp.score, hyp.tokens + [eos], r, eos, 0.0))
                    continue
                for k in range(scores.shape[1]):
                    tok = k + off
                    if tok == eos and n < min_len:
                        continue
                    s = float(scores[r, k])
                    cands.append((hyp.score + s, hyp.tokens + [tok], r, tok, s))
            cands.sort(key=lambda c: (-c[0], c[1]))
            kept = cands[:beam]
            next_live, keep_rows, next_ids = [], [], []
            for score, toks, r, tok, s in kept:
                hyp = Hypothesis(toks, score, live[r].per_step_scores + [s])
                if tok == eos:
                    finished.append(hyp)
                else:
                    next_live.append(hyp)
                    keep_rows.append(r)
                    next_ids.append(tok)
            live = next_live
            if not live:
                break
            if finished:
                best_done = max(h.score for h in finished)
                if best_done > max(h.score for h in live):
                    break
            sel = np.asarray(keep_rows)
            hc = Tensor(hc_new.data[sel])
            att_state = AttentionState(Tensor(att_new.prev.data[sel]), Tensor(att_new.accum.data[sel]))
            if lm is not None:
                lm_state = lm.select_state(lm_new, sel)
            prev_ids = np.asarray(next_ids)
        finished.sort(key=lambda h: (-h.score, h.tokens))
        return finished[:beam]

    def greedy_decode(self, feats, min_ratio: float = 0.2, max_ratio: float = 0.8) -> Hypothesis:
        """Step-by-step argmax under the same length constraints as beam search."""
        with no_grad():
            enc = self.encode(feats)
            min_len, max_len = length_bounds(int(enc.lengths[0]), min_ratio, max_ratio)
            hc, att_state = self.initial_decoder_state(enc)
            prepared = self.att.prepare(enc.states)
            prev = np.array([self.vocab.sos_id])
            toks, steps = [], []
            while len(toks) < max_len:
                logp, hc, att_state = self._step(prev, hc, att_state, enc, prepared, enc.mask)
                scores = logp.data[0].copy()
                if len(toks) < min_len:
                    scores[0] = -np.inf
                k = int(np.argmax(scores))
                toks.append(k + self.vocab.offset)
                steps.append(float(scores[k]))
                if k == 0:
                    break
                prev = np.array([k + self.vocab.offset])
            if not toks or toks[-1] != self.vocab.eos_id:
                toks.append(self.vocab.eos_id)
                steps.append(0.0)
        return Hypothesis(toks, float(sum(steps)), steps)

    # sampling -------------------------------------------------------------
    def sample_batch(self, enc: EncoderStates, n: int, rng: np.random.Generator, temperature: float = 1.0,
                     max_ratio: float = 0.8) -> tuple[list[list[int]], Tensor]:
        """Draw ``n`` ancestral samples per utterance of ``enc``.

        Returns token lists (utterance-major, each ending in ``<eos>``) and the
        differentiable ``sum log p`` per sample, shape ``(B * n,)``. Samples
        that reach ``int(max_ratio * T')`` characters get ``<eos>`` appended
        without contributing to the log-probability.
        """
        if n < 1:
            raise ConfigError(f"number of samples must be >= 1, got {n}")
        if temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {temperature}")
        batch = len(enc)
        rows = np.repeat(np.arange(batch), n)
        states = EncoderStates(ag.take(enc.states, rows), enc.lengths[rows])
        max_len = np.array([int(max_ratio * int(m)) for m in states.lengths])
        hc, att_state = self.initial_decoder_state(states)
        prepared = self.att.prepare(states.states)
        mask = states.mask
        tokens = [[] for _ in rows]
        active = max_len > 0
        prev = np.full(len(rows), self.vocab.sos_id)
        picks, masks = [], []
        t = 0
        while active.any():
            logp, hc, att_state = self._step(prev, hc, att_state, states, prepared, mask, temperature)
            cdf = np.cumsum(np.exp(logp.data), axis=-1)
            u = rng.random(len(rows))
            k = np.minimum((cdf < u[:, None] * cdf[:, -1:]).sum(axis=-1), cdf.shape[1] - 1)
            picks.append(ag.pick(logp, k))
            masks.append(active.copy())
            ids = k + self.vocab.offset
            for r in np.flatnonzero(active):
                tokens[r].append(int(ids[r]))
            t += 1
            active = active & (ids != self.vocab.eos_id) & (t < max_len)
            prev = np.where(ids == self.vocab.eos_id, self.vocab.eos_id, ids)
        for toks in tokens:
            if not toks or toks[-1] != self.vocab.eos_id:
                toks.append(self.vocab.eos_id)
        if not picks:
            return tokens, Tensor(np.zeros(len(rows)))
        logp_sum = (ag.stack(picks, axis=1) * np.stack(masks, axis=1)).sum(axis=1)
        return tokens, logp_sum

    def sample_sequences(self, feats, n: int = 5, temperature: float = 1.0, max_ratio: float = 0.8,
                         rng: np.random.Generator | None = None) -> list[tuple[list[int], Tensor]]:
        """``n`` samples for one utterance as ``(tokens, log-prob tensor)`` pairs."""
        rng = np.random.default_rng() if rng is None else rng
        enc = self.encode(feats)
        tokens, logp = self.sample_batch(enc, n, rng, temperature, max_ratio)
        return [(toks, logp[i]) for i, toks in enumerate(tokens)]

    def sequence_logprob(self, enc: EncoderStates, tokens: Sequence[int], max_ratio: float = 0.8) -> Tensor:
        """``log p(C | X)`` of one sequence under the sampler's truncation rule.

        The final ``<eos>`` counts only when the sequence is shorter than the
        maximum length (otherwise it was appended, not drawn).
        """
        tokens = list(tokens)
        max_len = int(max_ratio * int(enc.lengths[0]))
        n_chars = len(tokens) - 1
        lp = self.token_logprobs(enc, np.asarray([tokens]))
        if n_chars >= max_len:
            if n_chars == 0:
                return Tensor(np.zeros(()))
            return lp[0, :n_chars].sum()
        return lp[0].sum()


def utterance_cmvn(x: np.ndarray, lengths: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Per-utterance mean and variance normalisation over the valid frames (padding stays zero)."""
    mask = length_mask(lengths, x.shape[1])[..., None]
    n = np.maximum(lengths, 1)[:, None, None]
    mean = (x * mask).sum(axis=1, keepdims=True) / n
    var = (((x - mean) * mask) ** 2).sum(axis=1, keepdims=True) / n
    return (x - mean) / np.sqrt(var + eps) * mask


def _check_search_args(beam, min_ratio, max_ratio):
    if beam < 1:
        raise ConfigError(f"beam must be >= 1, got {beam}")
    if not 0 <= min_ratio < max_ratio:
        raise ConfigError(f"length ratios must satisfy 0 <= min < max, got {min_ratio}, {max_ratio}")


def _pad_targets(targets, vocab: Vocab) -> np.ndarray:
    if len(targets) and np.ndim(targets[0]) == 0:
        targets = [targets]
    if not len(targets):
        raise InputError("no transcripts given")
    for seq in targets:
        if len(seq) == 0:
            raise InputError("empty transcript")
        if int(seq[-1]) != vocab.eos_id:
            raise InputError("transcripts must end with <eos>")
        vocab.check_ids(seq)
    width = max(len(s) for s in targets)
    out = np.full((len(targets), width), vocab.pad_id, dtype=np.int64)
    for i, seq in enumerate(targets):
        out[i, :len(seq)] = seq
    return out

