import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cyclasr.autograd import Tape, no_grad
from cyclasr.cycle import (
    ScheduleConfig, baseline_value, consistency_losses, cycle_step, pseudo_label_ce_step, pseudo_labels,
    reinforce_weights, train_alternating,
)
from cyclasr.data import batchify, strip_text
from cyclasr.errors import ConfigError, ContractError, InputError
from cyclasr.tte import tte_utterance_losses

from conftest import small_asr, small_tte, tiny_pair

losses_strategy = st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=8)


def test_leave_one_out_values():
    np.testing.assert_allclose(baseline_value([1.0, 2.0, 6.0]), [4.0, 3.5, 1.5])
    np.testing.assert_allclose(baseline_value([1.0, 2.0, 6.0], "mean"), [3.0, 3.0, 3.0])
    np.testing.assert_array_equal(baseline_value([5.0]), [0.0])
    with pytest.raises(ConfigError):
        baseline_value([1.0, 2.0], "median")
    with pytest.raises(InputError):
        baseline_value([])


@given(losses_strategy, st.sampled_from(["leave_one_out", "mean"]))
def test_weights_are_centred(losses, kind):
    w = reinforce_weights(np.array([losses]), kind)
    assert abs(w.sum()) < 1e-9 * max(1.0, np.abs(losses).sum())


@given(losses_strategy)
def test_leave_one_out_baseline_ignores_own_loss(losses):
    if len(losses) < 2:
        return
    b = baseline_value(losses)
    for n in range(len(losses)):
        others = losses[:n] + losses[n + 1:]
        assert b[n] == pytest.approx(np.mean(others), abs=1e-9)


def test_single_sample_has_zero_weight():
    np.testing.assert_array_equal(reinforce_weights(np.array([[3.0]])), [[0.0]])


def test_cycle_step_requires_frozen_tte():
    asr, tte, feats = tiny_pair(0)
    tte.unfreeze()
    with pytest.raises(ContractError):
        cycle_step(feats, asr, tte, 3, np.random.default_rng(0))


def test_cycle_step_gradient_is_weighted_score_function():
    asr, tte, feats = tiny_pair(1)
    res = cycle_step(feats, asr, tte, 4, np.random.default_rng(0), max_ratio=1.0)
    # recompute sum_n w_n * grad log p(C^n) / N from the returned samples
    params = asr.parameters()
    with Tape() as tape:
        enc = asr.encode(feats)
        total = sum(asr.sequence_logprob(enc, s, max_ratio=1.0) * (w / 4)
                    for s, w in zip(res.samples, res.weights[0]))
        expect = tape.backward(total, params)
    for p in params:
        np.testing.assert_allclose(res.grads[p], expect[p], atol=1e-12)
    assert res.weights.shape == res.losses.shape == (1, 4)
    assert abs(res.weights.sum()) < 1e-12


def test_cycle_step_leaves_tte_untouched():
    asr, tte, feats = tiny_pair(2)
    before = [p.data.copy() for p in tte.parameters()]
    res = cycle_step(feats, asr, tte, 3, np.random.default_rng(0))
    assert all(p not in res.grads for p in tte.parameters())
    assert all(np.array_equal(a, p.data) for a, p in zip(before, tte.parameters()))


def test_consistency_losses_match_single_utterance_loss():
    asr, tte, _ = tiny_pair(3)
    rng = np.random.default_rng(0)
    feats = np.zeros((2, 3, 2))
    feats[0] = rng.normal(size=(3, 2))
    feats[1, :2] = rng.normal(size=(2, 2))
    enc = asr.encode(feats, np.array([3, 2]))
    v = asr.vocab
    samples = [v.encode("ab"), v.encode("b"), v.encode("")]
    rows = np.array([0, 1, 1])
    got = consistency_losses(tte, samples, enc, rows)
    with no_grad():
        for s, r, g in zip(samples, rows, got):
            n = enc.lengths[r]
            tgt = enc.states.data[r, :n]
            assert g == pytest.approx(tte_utterance_losses(tte.decode_teacher_forced(s, tgt), tgt).item(), abs=1e-9)


def test_pseudo_labels(tiny_spec, tiny_utts):
    asr = small_asr(tiny_spec.vocab(), seed=0)
    x = tiny_utts[0].features
    one = pseudo_labels(x, asr, "ce1", beam=2)
    assert one == [(0, asr.beam_search(x, 2)[0].tokens)]
    five = pseudo_labels(x, asr, "ce5", k=5, rng=np.random.default_rng(0))
    assert len(five) == 5 and all(i == 0 and s[-1] == asr.vocab.eos_id for i, s in five)
    with pytest.raises(ConfigError):
        pseudo_labels(x, asr, "ce7")


def test_pseudo_label_loss_is_weighted_mean_ce(tiny_spec, tiny_utts):
    asr = small_asr(tiny_spec.vocab(), seed=0, dec_units=6)
    x = tiny_utts[1].features
    label = pseudo_labels(x, asr, "ce1", beam=1, min_ratio=0.5)[0][1]
    with no_grad():
        loss = pseudo_label_ce_step(x, asr, "ce1", weight=0.1, beam=1, min_ratio=0.5).item()
        ref = asr.supervised_loss(x, label).item()
    assert loss == pytest.approx(0.1 * ref, rel=1e-12)
    assert pseudo_label_ce_step(x, asr, "ce1", weight=0.0, beam=1).item() == 0.0


def test_schedule_validation():
    with pytest.raises(ConfigError):
        ScheduleConfig(n_samples=0)
    with pytest.raises(ConfigError):
        ScheduleConfig(paired_steps=0)
    with pytest.raises(ConfigError):
        ScheduleConfig(epochs=0)


@pytest.fixture
def setup(tiny_spec):
    from cyclasr.data import synth_generate
    utts = synth_generate(tiny_spec, 12, (1, 2), seed=7)
    asr = small_asr(tiny_spec.vocab(), seed=0)
    tte = small_tte(tiny_spec.vocab(), asr.state_dim, seed=1)
    tte.freeze()
    return asr, tte, utts[:4], utts[4:10], utts[10:]


SCHED = ScheduleConfig(epochs=2, batch_size=3, n_samples=2, beam=2, val_beam=1)


@pytest.mark.parametrize("mode", ["cycle", "ce1", "ce5", "oracle", "supervised", "ce_1best"])
def test_train_alternating_modes(setup, mode):
    asr, tte, paired, unpaired, val = setup
    data = unpaired if mode == "oracle" else strip_text(unpaired)
    before = [p.data.copy() for p in tte.parameters()]
    _, log = train_alternating(asr, paired, data, mode, SCHED, tte=tte, val=val, rng=np.random.default_rng(0))
    assert len(log) == 2
    cyc = log.column("cycle_loss")
    assert all(np.isfinite(cyc)) if mode == "cycle" else all(np.isnan(cyc))
    assert all(0 <= a <= 1 for a in log.column("val_acc"))
    assert all(np.array_equal(a, p.data) for a, p in zip(before, tte.parameters()))


def test_train_alternating_is_seeded(setup):
    asr, tte, paired, unpaired, val = setup
    start = {k: v.copy() for k, v in asr.state_dict().items()}
    runs = []
    for _ in range(2):
        asr.load_state_dict(start)
        train_alternating(asr, paired, strip_text(unpaired), "cycle", SCHED, tte=tte, rng=np.random.default_rng(3))
        runs.append({k: v.copy() for k, v in asr.state_dict().items()})
    assert all(np.array_equal(runs[0][k], runs[1][k]) for k in start)


def test_train_alternating_checks(setup):
    asr, tte, paired, unpaired, val = setup
    with pytest.raises(ConfigError):
        train_alternating(asr, paired, unpaired, "dual", SCHED, tte=tte)
    with pytest.raises(ConfigError):
        train_alternating(asr, paired, unpaired, "cycle", SCHED)
    with pytest.raises(InputError):
        train_alternating(asr, paired, strip_text(unpaired), "oracle", SCHED)
    with pytest.raises(InputError):
        train_alternating(asr, [], unpaired, "ce1", SCHED)
    tte.unfreeze()
    with pytest.raises(ContractError):
        train_alternating(asr, paired, unpaired, "cycle", SCHED, tte=tte)


def test_unpaired_batches_drive_epoch_length(setup):
    asr, tte, paired, unpaired, val = setup
    assert len(batchify(unpaired, SCHED.batch_size)) == 2
