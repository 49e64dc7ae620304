"""Supervised ASR training, corpus decoding and validation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asr import ASRModel
from .autograd import Tape, no_grad
from .data import Utterance, batchify
from .errors import InputError
from .metrics import ScoreReport, score_corpus
from .optim import Adam


def supervised_step(asr: ASRModel, batch, opt: Adam, weight: float = 1.0) -> float:
    """One cross-entropy update on a padded batch; returns the mean per-utterance loss."""
    targets = [asr.vocab.encode(t) for t in batch.texts]
    with Tape() as tape:
        loss = asr.supervised_loss(batch.feats, targets, batch.feat_lengths) * (weight / len(batch))
        grads = tape.backward(loss, opt.params)
    opt.step(grads)
    return float(loss.data) / weight if weight else 0.0


def train_supervised(asr: ASRModel, paired, epochs: int = 20, batch_size: int = 10, lr: float = 3e-3,
                     clip_norm: float = 5.0, rng: np.random.Generator | None = None, val=None,
                     optimizer: Adam | None = None, log=None) -> list[float]:
    """Teacher-forced cross-entropy training; returns the mean training loss per epoch.

    With ``val`` the parameters of the epoch with the best validation
    teacher-forced accuracy are restored at the end.
    """
    if not paired:
        raise InputError("paired training set is empty")
    rng = np.random.default_rng(0) if rng is None else rng
    opt = optimizer or Adam(asr.parameters(), lr=lr, clip_norm=clip_norm)
    batches = batchify(paired, batch_size, asr.vocab)
    curve, best = [], (-1.0, None)
    for epoch in range(epochs):
        losses = [supervised_step(asr, batches[b], opt) for b in rng.permutation(len(batches))]
        curve.append(float(np.mean(losses)))
        msg = f"sup epoch {epoch + 1}: loss {curve[-1]:.4f}"
        if val:
            acc = validation_accuracy(asr, val)
            msg += f" val_acc {acc:.4f}"
            if acc > best[0]:
                best = (acc, {k: v.copy() for k, v in asr.state_dict().items()})
        if log is not None:
            log(msg)
    if best[1] is not None:
        asr.load_state_dict(best[1])
    return curve


def validation_accuracy(asr: ASRModel, utts, batch_size: int = 32) -> float:
    correct = total = 0
    for batch in batchify(utts, batch_size, asr.vocab):
        targets = [asr.vocab.encode(t) for t in batch.texts]
        c, n = asr.teacher_forced_accuracy(batch.feats, targets, batch.feat_lengths)
        correct, total = correct + c, total + n
    return correct / total


@dataclass
class Decoded:
    text: str
    score: float


def decode_corpus(asr: ASRModel, utts, beam: int = 20, min_ratio: float = 0.2, max_ratio: float = 0.8,
                  lm=None, lm_weight: float = 0.0) -> dict[str, Decoded]:
    """Best hypothesis per utterance (``beam=1`` runs the cheaper greedy decoder)."""
    out = {}
    with no_grad():
        for u in utts:
            if beam == 1 and lm is None:
                hyp = asr.greedy_decode(u.features, min_ratio, max_ratio)
            else:
                hyp = asr.beam_search(u.features, beam, min_ratio, max_ratio, lm=lm, lm_weight=lm_weight)[0]
            out[u.id] = Decoded(asr.vocab.decode(hyp.tokens), hyp.score)
    return out


def evaluate(asr: ASRModel, utts: list[Utterance], beam: int = 20, min_ratio: float = 0.2,
             max_ratio: float = 0.8, lm=None, lm_weight: float = 0.0) -> ScoreReport:
    """Corpus WER report (CER also filled in) for labelled utterances."""
    hyps = decode_corpus(asr, utts, beam, min_ratio, max_ratio, lm, lm_weight)
    return score_corpus({k: v.text for k, v in hyps.items()}, {u.id: u.text for u in utts}, unit="word")
