"""Cycle-consistency training of the recogniser through a frozen TTE model.

For an unpaired utterance ``X`` the recogniser draws ``N`` transcripts
``C^n``; the TTE reconstructs the encoder states ``H(X)`` from each one and the
reconstruction loss ``L_n`` acts as a (constant) reward in the score-function
estimator::

    grad = 1/N * sum_n (L_n - B_n) * grad log p(C^n | X)

``B_n`` is the mean loss of the other ``N - 1`` samples, which keeps the
estimate unbiased while centring the weights.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .asr import ASRModel, EncoderStates
from .autograd import Tape, Tensor, no_grad
from .data import Utterance, batchify
from .errors import ConfigError, ContractError, InputError
from .metrics import EpochMetrics, MetricsLog
from .optim import Adam
from .training import evaluate, supervised_step, validation_accuracy
from .tte import TTEModel, tte_utterance_losses

logger = logging.getLogger(__name__)

MODES = ("cycle", "ce1", "ce5", "oracle", "supervised")
_MODE_ALIASES = {"ce_1best": "ce1", "ce_ksample": "ce5", "one_best": "ce1", "k_sample": "ce5"}


def baseline_value(losses, kind: str = "leave_one_out") -> np.ndarray:
    """Per-sample baselines for one utterance's ``N`` sample losses.

    ``leave_one_out`` gives sample ``n`` the mean of the other losses (0 when
    ``N == 1``); ``mean`` gives every sample the in-batch mean.
    """
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        raise InputError("baseline needs at least one loss")
    n = losses.size
    if kind == "mean":
        return np.full(n, losses.mean())
    if kind != "leave_one_out":
        raise ConfigError(f"unknown baseline {kind!r}")
    if n == 1:
        return np.zeros(1)
    return (losses.sum() - losses) / (n - 1)


def reinforce_weights(losses: np.ndarray, kind: str = "leave_one_out") -> np.ndarray:
    """``T(C^n, X) = L_n - B_n`` row by row for a ``(B, N)`` loss matrix.

    A single sample is its own baseline, so ``N == 1`` yields zero weights.
    """
    losses = np.atleast_2d(losses)
    if losses.shape[1] == 1:
        return np.zeros_like(losses)
    return losses - np.stack([baseline_value(row, kind) for row in losses])


@dataclass
class CycleBatchResult:
    """Outcome of one cycle step on a batch; loss-shaped arrays are ``(B, N)``."""

    losses: np.ndarray
    baselines: np.ndarray
    weights: np.ndarray
    value: float
    grads: dict
    samples: list = field(default_factory=list)

    @property
    def mean_loss(self) -> float:
        return float(self.losses.mean())


def _check_frozen(tte: TTEModel):
    if any(p.requires_grad for p in tte.parameters()):
        raise ContractError("the TTE model must be frozen (call tte.freeze()) before cycle training")


def _pad(seqs, fill=0):
    lengths = np.array([len(s) for s in seqs])
    out = np.full((len(seqs), lengths.max()), fill, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lengths


def consistency_losses(tte: TTEModel, samples, enc: EncoderStates, rows: np.ndarray) -> np.ndarray:
    """TTE reconstruction loss of each sampled transcript against its utterance's states.

    The TTE runs deterministically (teacher forced, dropout off) and nothing
    here is recorded for differentiation.
    """
    with no_grad():
        tokens, token_lengths = _pad(samples)
        targets = enc.states.data[rows]
        frame_lengths = enc.lengths[rows]
        pred = tte.decode_teacher_forced(tokens, targets, token_lengths, frame_lengths)
        return tte_utterance_losses(pred, targets, frame_lengths).data.copy()


def cycle_step(feats, asr: ASRModel, tte: TTEModel, n: int = 5, rng: np.random.Generator | None = None,
               lengths=None, baseline: str = "leave_one_out", temperature: float = 1.0,
               max_ratio: float = 0.8, reduction: str = "mean") -> CycleBatchResult:
    """REINFORCE gradient of the expected reconstruction loss for a batch of utterances.

    The encoder runs once; its states serve both as the sampler's memory and,
    detached, as the reconstruction target. ``reduction`` combines the
    per-utterance estimates by ``mean`` or ``sum``.
    """
    if n < 1:
        raise ConfigError(f"number of samples must be >= 1, got {n}")
    if reduction not in ("mean", "sum"):
        raise ConfigError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    _check_frozen(tte)
    rng = np.random.default_rng() if rng is None else rng
    params = asr.parameters()
    with Tape() as tape:
        enc = asr.encode(feats, lengths)
        samples, logp = asr.sample_batch(enc, n, rng, temperature, max_ratio)
        batch = len(enc)
        rows = np.repeat(np.arange(batch), n)
        losses = consistency_losses(tte, samples, enc, rows).reshape(batch, n)
        baselines = losses - reinforce_weights(losses, baseline)
        weights = losses - baselines
        scale = 1.0 / n / (batch if reduction == "mean" else 1)
        surrogate = (logp * (weights.reshape(-1) * scale)).sum()
        grads = tape.backward(surrogate, params)
    return CycleBatchResult(losses, baselines, weights, float(surrogate.data), grads, samples)


def pseudo_labels(feats, asr: ASRModel, mode: str, k: int = 5, rng=None, lengths=None, beam: int = 20,
                  min_ratio: float = 0.2, max_ratio: float = 0.8) -> list[tuple[int, list[int]]]:
    """``(utterance index, token ids)`` targets for the CE baselines."""
    mode = _MODE_ALIASES.get(mode, mode)
    feats = np.asarray(feats)
    if feats.ndim == 2:
        feats = feats[None]
    lengths = np.full(len(feats), feats.shape[1]) if lengths is None else np.asarray(lengths)
    out = []
    with no_grad():
        if mode == "ce1":
            for i in range(len(feats)):
                x = feats[i, :lengths[i]]
                hyp = asr.greedy_decode(x, min_ratio, max_ratio) if beam == 1 else \
                    asr.beam_search(x, beam, min_ratio, max_ratio)[0]
                out.append((i, hyp.tokens))
        elif mode == "ce5":
            if k < 1:
                raise ConfigError(f"k must be >= 1, got {k}")
            rng = np.random.default_rng() if rng is None else rng
            enc = asr.encode(feats, lengths)
            samples, _ = asr.sample_batch(enc, k, rng, max_ratio=max_ratio)
            out = [(j // k, s) for j, s in enumerate(samples)]
        else:
            raise ConfigError(f"unknown pseudo-label mode {mode!r}")
    return out


def pseudo_label_ce_step(feats, asr: ASRModel, mode: str = "ce1", k: int = 5, weight: float = 0.1,
                         rng=None, lengths=None, beam: int = 20, min_ratio: float = 0.2,
                         max_ratio: float = 0.8) -> Tensor:
    """``weight`` times the mean cross-entropy against the recogniser's own hypotheses.

    Must be called under an active tape to obtain gradients. Empty
    hypotheses (only ``<eos>``) are skipped with a warning.
    """
    labels = pseudo_labels(feats, asr, mode, k, rng, lengths, beam, min_ratio, max_ratio)
    kept = [(i, toks) for i, toks in labels if len(toks) > 1]
    if len(kept) < len(labels):
        logger.warning("skipped %d empty pseudo-label(s)", len(labels) - len(kept))
    if not kept or weight == 0:
        return Tensor(np.zeros(()))
    feats = np.asarray(feats)
    if feats.ndim == 2:
        feats = feats[None]
    lengths = np.full(len(feats), feats.shape[1]) if lengths is None else np.asarray(lengths)
    idx = np.array([i for i, _ in kept])
    targets = [toks for _, toks in kept]
    return asr.supervised_loss(feats[idx], targets, lengths[idx]) * (weight / len(kept))


# ---------------------------------------------------------------------------
# alternating schedule
# ---------------------------------------------------------------------------


@dataclass
class ScheduleConfig:
    """Alternating paired/unpaired training schedule.

    ``paired_steps`` supervised batches are followed by ``unpaired_steps``
    mode-specific batches; one epoch is one pass over the unpaired set.
    """

    epochs: int = 6
    batch_size: int = 10
    paired_steps: int = 1
    unpaired_steps: int = 1
    n_samples: int = 5
    lr: float = 1e-3
    sup_lr: float = 1e-3
    clip_norm: float = 5.0
    ce_weight: float = 0.1
    baseline: str = "leave_one_out"
    beam: int = 20
    val_beam: int = 1
    min_ratio: float = 0.2
    max_ratio: float = 0.8
    temperature: float = 1.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.paired_steps < 1 or self.unpaired_steps < 1:
            raise ConfigError("interleave ratio components must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class _StepSize:
    """A view of a shared optimiser that applies its own step size."""

    def __init__(self, opt: Adam, lr: float):
        self.opt, self.lr, self.params = opt, lr, opt.params

    def step(self, grads: dict) -> float:
        self.opt.lr = self.lr
        return self.opt.step(grads)


class _SplitAdam:
    """Supervised and unpaired updates with their own step sizes but one set of moment estimates.

    Sharing the second moments matters for the score-function updates: an
    optimiser that only ever saw those noisy gradients would rescale them to
    full-size steps, whereas here they are normalised by the scale of the
    supervised gradients as well.
    """

    def __init__(self, params, sup_lr, lr, clip_norm):
        base = Adam(params, lr=sup_lr, clip_norm=clip_norm)
        self.sup, self.unp = _StepSize(base, sup_lr), _StepSize(base, lr)


def _unpaired_update(asr, tte, batch, mode, sched: ScheduleConfig, opt: _StepSize, rng) -> float:
    """Returns the mean consistency loss for ``cycle`` mode and NaN otherwise."""
    if mode == "cycle":
        res = cycle_step(batch.feats, asr, tte, sched.n_samples, rng, batch.feat_lengths, sched.baseline,
                         sched.temperature, sched.max_ratio)
        opt.step(res.grads)
        return res.mean_loss
    if mode == "oracle":
        supervised_step(asr, batch, opt)
        return float("nan")
    with Tape() as tape:
        loss = pseudo_label_ce_step(batch.feats, asr, mode, sched.n_samples, sched.ce_weight, rng,
                                    batch.feat_lengths, sched.beam, sched.min_ratio, sched.max_ratio)
        grads = tape.backward(loss, opt.params)
    opt.step(grads)
    return float("nan")


def train_alternating(asr: ASRModel, paired: list[Utterance], unpaired: list[Utterance], mode: str = "cycle",
                      schedule: ScheduleConfig | None = None, tte: TTEModel | None = None, val=None,
                      rng: np.random.Generator | None = None, log=None) -> tuple[ASRModel, MetricsLog]:
    """Interleave supervised steps on ``paired`` with mode-specific steps on ``unpaired``.

    ``mode`` is ``cycle`` (REINFORCE through the frozen TTE), ``ce1``/``ce5``
    (weighted CE on the 1-best or on sampled pseudo-labels), ``oracle``
    (full-weight CE on the true transcripts of ``unpaired``) or
    ``supervised`` (the unpaired steps are skipped, which makes it the control
    with the same number of paired updates). The returned model carries the
    parameters of the epoch with the best validation teacher-forced accuracy.
    """
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ConfigError(f"unknown training mode {mode!r}; expected one of {MODES}")
    sched = schedule or ScheduleConfig()
    if asr is None:
        raise ConfigError("a pre-trained ASR model is required")
    if mode == "cycle":
        if tte is None:
            raise ConfigError("cycle mode requires a pre-trained TTE model")
        _check_frozen(tte)
    if not paired:
        raise InputError("paired set is empty")
    if mode == "oracle" and any(u.text is None for u in unpaired):
        raise InputError("oracle mode needs the true transcripts of the unpaired set")
    rng = np.random.default_rng(0) if rng is None else rng
    vocab = asr.vocab
    params = asr.parameters()
    opts = _SplitAdam(params, sched.sup_lr, sched.lr, sched.clip_norm)
    paired_batches = batchify(paired, sched.batch_size, vocab)
    unpaired = list(unpaired)
    metrics = MetricsLog()
    best = (-np.inf, None)
    tte_params = [p.data.copy() for p in tte.parameters()] if tte is not None else []
    p_order = iter(())
    for epoch in range(1, sched.epochs + 1):
        unpaired_batches = batchify(unpaired, sched.batch_size, vocab, rng=rng) if unpaired else []
        n_rounds = max(1, -(-len(unpaired_batches) // sched.unpaired_steps)) if unpaired_batches \
            else -(-len(paired_batches) // sched.paired_steps)
        cycle_losses = []
        u_iter = iter(unpaired_batches)
        for _ in range(n_rounds):
            for _ in range(sched.paired_steps):
                b = next(p_order, None)
                if b is None:
                    p_order = iter(rng.permutation(len(paired_batches)).tolist())
                    b = next(p_order)
                supervised_step(asr, paired_batches[b], opts.sup)
            for _ in range(sched.unpaired_steps):
                batch = next(u_iter, None)
                if batch is None or mode == "supervised":
                    break
                cycle_losses.append(_unpaired_update(asr, tte, batch, mode, sched, opts.unp, rng))
        row = EpochMetrics(epoch, float(np.nanmean(cycle_losses)) if mode == "cycle" and cycle_losses
                           else float("nan"))
        if val:
            row.val_acc = validation_accuracy(asr, val)
            report = evaluate(asr, val, sched.val_beam, sched.min_ratio, sched.max_ratio)
            row.val_cer, row.val_wer = report.cer, report.wer
            if row.val_acc > best[0]:
                best = (row.val_acc, {k: v.copy() for k, v in asr.state_dict().items()})
        metrics.append(row)
        if log is not None:
            log(f"{mode} epoch {epoch}: consistency {row.cycle_loss:.4f} val_acc {row.val_acc:.4f} "
                f"val_cer {row.val_cer:.4f} val_wer {row.val_wer:.4f}")
    if best[1] is not None:
        asr.load_state_dict(best[1])
    if tte is not None and not all(np.array_equal(a, p.data) for a, p in zip(tte_params, tte.parameters())):
        raise ContractError("TTE parameters changed during cycle training")
    return asr, metrics
