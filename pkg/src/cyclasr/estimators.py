"""scikit-learn style wrappers around the recogniser, TTE and language model.

The estimators accept ragged inputs (lists of ``(T, D)`` matrices and lists of
strings), so they follow the ``fit``/``predict``/``score`` and
``get_params``/``set_params`` conventions without being usable inside
scikit-learn's array-based pipelines or cross-validation splitters.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .asr import ASRConfig, ASRModel
from .autograd import no_grad
from .cycle import ScheduleConfig, train_alternating
from .data import Utterance
from .lm import CharLM, LMConfig, lm_train
from .metrics import score_corpus
from .training import decode_corpus, train_supervised
from .tte import TTEConfig, TTEModel, tte_train
from .validation import (
    check_consistent_length, check_feature_list, check_random_state, check_texts,
)
from .vocab import Vocab


def _vocab_for(texts, chars):
    if chars is not None:
        return Vocab(chars)
    return Vocab(sorted(set("".join(texts))))


def _utts(X, y=None, prefix="u"):
    return [Utterance(f"{prefix}{i:05d}", x, None if y is None else y[i]) for i, x in enumerate(X)]


class ASRTranscriber(BaseEstimator):
    """Attention encoder-decoder recogniser trained with teacher-forced cross-entropy.

    Parameters
    ----------
    chars : str, optional
        Character inventory; inferred from the training transcripts if omitted.
    epochs, lr, batch_size : training settings.
    beam, min_ratio, max_ratio : decoding settings used by :meth:`predict`.
    random_state : int or Generator
    """

    def __init__(self, chars=None, enc_units=32, dec_units=32, emb_dim=16, att_dim=32, epochs=100, lr=3e-3,
                 batch_size=10, beam=20, min_ratio=0.2, max_ratio=0.8, random_state=0):
        self.chars = chars
        self.enc_units = enc_units
        self.dec_units = dec_units
        self.emb_dim = emb_dim
        self.att_dim = att_dim
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.beam = beam
        self.min_ratio = min_ratio
        self.max_ratio = max_ratio
        self.random_state = random_state

    def _build(self, feat_dim, texts):
        self.vocab_ = _vocab_for(texts, self.chars)
        cfg = ASRConfig(feat_dim, enc_units=self.enc_units, dec_units=self.dec_units, emb_dim=self.emb_dim,
                        att_dim=self.att_dim)
        self.rng_ = check_random_state(self.random_state)
        self.model_ = ASRModel(cfg, self.vocab_, self.rng_)
        self.n_features_in_ = feat_dim

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_feature_list(X)
        y = check_texts(y)
        check_consistent_length(X, y)
        self._build(X[0].shape[1], y)
        val = _utts(check_feature_list(X_val, self.n_features_in_), check_texts(y_val, self.vocab_), "v") \
            if X_val is not None else None
        self.loss_curve_ = train_supervised(self.model_, _utts(X, y), self.epochs, self.batch_size, self.lr,
                                            rng=self.rng_, val=val)
        return self

    def predict(self, X, lm=None, lm_weight=0.0) -> list[str]:
        check_is_fitted(self, "model_")
        X = check_feature_list(X, self.n_features_in_)
        model = lm.model_ if isinstance(lm, CharLanguageModel) else lm
        hyps = decode_corpus(self.model_, _utts(X), self.beam, self.min_ratio, self.max_ratio, model, lm_weight)
        return [hyps[f"u{i:05d}"].text for i in range(len(X))]

    def transform(self, X) -> list[np.ndarray]:
        """Encoder state sequences ``(T', H)`` for each utterance."""
        check_is_fitted(self, "model_")
        X = check_feature_list(X, self.n_features_in_)
        with no_grad():
            return [self.model_.encode(x).states.data[0].copy() for x in X]

    def score(self, X, y) -> float:
        """``1 - WER`` on labelled data (higher is better)."""
        y = check_texts(y)
        hyps = self.predict(X)
        check_consistent_length(hyps, y)
        report = score_corpus({str(i): h for i, h in enumerate(hyps)}, {str(i): t for i, t in enumerate(y)})
        return 1.0 - report.wer


class TextToEncoder(BaseEstimator, TransformerMixin):
    """Text-to-encoder model: learns to reproduce encoder state sequences from text.

    ``fit(texts, states)`` trains teacher-forced; ``transform(texts)``
    generates states free-running.
    """

    def __init__(self, chars=None, prenet_units=8, enc_units=16, dec_units=64, epochs=100, lr=3e-3,
                 batch_size=10, dropout=0.5, zoneout=0.1, stop_threshold=0.75, max_frames=200, random_state=0):
        self.chars = chars
        self.prenet_units = prenet_units
        self.enc_units = enc_units
        self.dec_units = dec_units
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.dropout = dropout
        self.zoneout = zoneout
        self.stop_threshold = stop_threshold
        self.max_frames = max_frames
        self.random_state = random_state

    def fit(self, X, y):
        texts = check_texts(X)
        states = check_feature_list(y)
        check_consistent_length(texts, states)
        self.vocab_ = _vocab_for(texts, self.chars)
        self.rng_ = check_random_state(self.random_state)
        self.n_outputs_ = states[0].shape[1]
        cfg = TTEConfig(self.n_outputs_, prenet_units=self.prenet_units, enc_units=self.enc_units,
                        dec_units=self.dec_units, dropout=self.dropout, zoneout=self.zoneout)
        self.model_ = TTEModel(cfg, self.vocab_, self.rng_)
        pairs = [(self.vocab_.encode(t), h) for t, h in zip(texts, states)]
        self.loss_curve_ = tte_train(self.model_, pairs, self.epochs, self.batch_size, self.lr, rng=self.rng_)
        return self

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        texts = check_texts(X, self.vocab_)
        return [self.model_.free_run(self.vocab_.encode(t), self.stop_threshold, self.max_frames,
                                     rng=self.rng_).after.data[0].copy() for t in texts]

    def predict(self, X) -> list[np.ndarray]:
        return self.transform(X)


class CharLanguageModel(BaseEstimator):
    """Character LSTM language model used for shallow fusion."""

    def __init__(self, chars=None, emb_dim=16, units=64, epochs=10, lr=3e-3, batch_size=32, random_state=0):
        self.chars = chars
        self.emb_dim = emb_dim
        self.units = units
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y=None):
        texts = check_texts(X)
        self.vocab_ = _vocab_for(texts, self.chars)
        self.rng_ = check_random_state(self.random_state)
        self.model_ = CharLM(LMConfig(self.emb_dim, self.units), self.vocab_, self.rng_)
        self.perplexity_curve_ = lm_train(self.model_, texts, self.epochs, self.batch_size, self.lr, rng=self.rng_)
        return self

    def perplexity(self, X) -> float:
        check_is_fitted(self, "model_")
        return self.model_.perplexity(check_texts(X, self.vocab_))

    def score(self, X, y=None) -> float:
        """Negative per-token cross-entropy (higher is better)."""
        return -float(np.log(self.perplexity(X)))


class CycleConsistencyASR(BaseEstimator):
    """Full semi-supervised recipe: supervised pre-training, TTE fitting, then
    alternating paired / unpaired updates (``mode`` as in :func:`train_alternating`).
    """

    def __init__(self, chars=None, mode="cycle", sup_epochs=100, tte_epochs=100, cycle_epochs=6, n_samples=5,
                 lr=1e-3, ce_weight=0.1, beam=20, tte_prenet_units=8, random_state=0):
        self.chars = chars
        self.mode = mode
        self.sup_epochs = sup_epochs
        self.tte_epochs = tte_epochs
        self.cycle_epochs = cycle_epochs
        self.n_samples = n_samples
        self.lr = lr
        self.ce_weight = ce_weight
        self.beam = beam
        self.tte_prenet_units = tte_prenet_units
        self.random_state = random_state

    def fit(self, X, y, X_unpaired=None, X_val=None, y_val=None, y_unpaired=None):
        X = check_feature_list(X)
        y = check_texts(y)
        check_consistent_length(X, y)
        self.asr_ = ASRTranscriber(self.chars, epochs=self.sup_epochs, beam=self.beam,
                                   random_state=self.random_state).fit(X, y, X_val, y_val)
        rng = self.asr_.rng_
        vocab = self.asr_.vocab_
        states = self.asr_.transform(X)
        self.tte_ = TTEModel(TTEConfig(states[0].shape[1], prenet_units=self.tte_prenet_units), vocab, rng)
        self.tte_curve_ = tte_train(self.tte_, [(vocab.encode(t), h) for t, h in zip(y, states)],
                                    self.tte_epochs, rng=rng)
        self.tte_.freeze()
        unpaired = _utts(check_feature_list(X_unpaired, self.asr_.n_features_in_), y_unpaired, "x") \
            if X_unpaired is not None else []
        val = _utts(check_feature_list(X_val), check_texts(y_val), "v") if X_val is not None else None
        sched = ScheduleConfig(epochs=self.cycle_epochs, n_samples=self.n_samples, lr=self.lr,
                               ce_weight=self.ce_weight, beam=self.beam)
        _, self.metrics_ = train_alternating(self.asr_.model_, _utts(X, y), unpaired, self.mode, sched,
                                             tte=self.tte_, val=val, rng=rng)
        return self

    def predict(self, X, lm=None, lm_weight=0.0) -> list[str]:
        check_is_fitted(self, "asr_")
        return self.asr_.predict(X, lm, lm_weight)

    def score(self, X, y) -> float:
        check_is_fitted(self, "asr_")
        return self.asr_.score(X, y)
