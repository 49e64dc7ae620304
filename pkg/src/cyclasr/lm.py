"""Character-level LSTM language model for shallow fusion."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor, no_grad
from .errors import InputError
from .layers import LSTM, Linear, Module, uniform
from .optim import Adam
from .vocab import Vocab


@dataclass
class LMConfig:
    emb_dim: int = 16
    units: int = 64
    layers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LMConfig":
        return cls(**d)


class CharLM(Module):
    """Predicts the next output token (``<eos>`` or a character) from the history."""

    def __init__(self, config: LMConfig, vocab: Vocab, rng: np.random.Generator):
        self.config = config
        self.vocab = vocab
        self.embed = ag.parameter(uniform(rng, (len(vocab), config.emb_dim)), "embed")
        self.lstm = [LSTM(config.emb_dim if i == 0 else config.units, config.units, rng)
                     for i in range(config.layers)]
        self.out = Linear(config.units, vocab.n_out, rng)

    def initial_state(self, batch: int) -> list[Tensor]:
        return [layer.initial_state(batch) for layer in self.lstm]

    def step(self, state: list[Tensor], tokens) -> tuple[Tensor, list[Tensor]]:
        """Consume ``tokens (B,)``; return next-token log-probabilities ``(B, V)`` and the new state."""
        tokens = np.atleast_1d(np.asarray(tokens))
        if tokens.min() < 0 or tokens.max() >= len(self.vocab):
            raise InputError(f"token id out of range for LM: {tokens}")
        x = ag.embedding(self.embed, tokens)
        new = []
        for layer, hc in zip(self.lstm, state):
            hc = ag.lstm_cell(x @ layer.wx + layer.b, hc, layer.wh)
            new.append(hc)
            x = hc[:, :layer.n_hidden]
        return self.out(x).log_softmax(axis=-1), new

    @staticmethod
    def select_state(state: list[Tensor], rows) -> list[Tensor]:
        return [Tensor(s.data[rows]) for s in state]

    def token_logprobs(self, targets: np.ndarray) -> Tensor:
        """Teacher-forced ``(B, L)`` log-probabilities of padded target ids (ending in ``<eos>``)."""
        batch, steps = targets.shape
        prev = np.concatenate([np.full((batch, 1), self.vocab.sos_id), targets[:, :-1]], axis=1)
        prev = np.where(prev == self.vocab.pad_id, self.vocab.eos_id, prev)
        out_idx = np.clip(targets - self.vocab.offset, 0, None)
        x = ag.embedding(self.embed, prev)
        for layer in self.lstm:
            x = layer.run(layer.project(x))
        logp = self.out(x).log_softmax(axis=-1)
        return ag.pick(logp, out_idx)

    def utterance_nll(self, targets: np.ndarray) -> Tensor:
        targets = np.asarray(targets)
        return -(self.token_logprobs(targets) * (targets != self.vocab.pad_id)).sum(axis=1)

    def sentence_logprob(self, text: str) -> float:
        """Whole-sequence log-probability of ``text`` followed by ``<eos>``."""
        with no_grad():
            ids = np.asarray([self.vocab.encode(text)])
            return float(self.token_logprobs(ids).data.sum())

    def perplexity(self, texts, batch_size: int = 32) -> float:
        nll, count = 0.0, 0
        with no_grad():
            for i in range(0, len(texts), batch_size):
                ids, _ = _pad([self.vocab.encode(t) for t in texts[i:i + batch_size]])
                nll += float(self.utterance_nll(ids).data.sum())
                count += int((ids != self.vocab.pad_id).sum())
        return float(np.exp(nll / count))


def lm_step(lm: CharLM, state, token):
    """Incremental scoring: ``(log-prob distribution, state')`` after feeding ``token``."""
    return lm.step(state, token)


def _pad(seqs):
    lengths = [len(s) for s in seqs]
    out = np.zeros((len(seqs), max(lengths)), dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, np.asarray(lengths)


def lm_train(lm: CharLM, texts, epochs: int = 10, batch_size: int = 32, lr: float = 3e-3,
             clip_norm: float = 5.0, rng: np.random.Generator | None = None, max_steps: int | None = None,
             log=None, optimizer: Adam | None = None) -> list[float]:
    """Minimise next-token cross-entropy; returns training perplexity per epoch."""
    if not texts:
        raise InputError("language-model corpus is empty")
    rng = np.random.default_rng(0) if rng is None else rng
    opt = optimizer or Adam(lm.parameters(), lr=lr, clip_norm=clip_norm)
    encoded = [lm.vocab.encode(t) for t in texts]
    curve, steps = [], 0
    for epoch in range(epochs):
        order = rng.permutation(len(encoded))
        for i in range(0, len(order), batch_size):
            ids, _ = _pad([encoded[j] for j in order[i:i + batch_size]])
            with Tape() as tape:
                n_tok = int((ids != lm.vocab.pad_id).sum())
                loss = lm.utterance_nll(ids).sum() / n_tok
                grads = tape.backward(loss, opt.params)
            opt.step(grads)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        curve.append(lm.perplexity(texts))
        if log is not None:
            log(f"lm epoch {epoch + 1}: perplexity {curve[-1]:.3f}")
        if max_steps is not None and steps >= max_steps:
            break
    return curve
