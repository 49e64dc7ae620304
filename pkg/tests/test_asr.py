import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cyclasr.asr import ASRConfig, ASRModel, length_bounds, utterance_cmvn
from cyclasr.autograd import Tensor, grad_check, no_grad
from cyclasr.errors import ConfigError, InputError
from cyclasr.vocab import Vocab

from conftest import all_sequences, randomize, small_asr, tiny_pair


@pytest.fixture
def asr(vocab):
    return randomize(small_asr(vocab, seed=4), np.random.default_rng(4), 0.4)


def _feats(rng, *lengths, dim=4):
    return [rng.normal(size=(n, dim)) for n in lengths]


def test_supervised_loss_gradients(vocab):
    asr = randomize(small_asr(vocab, seed=1, subsample=(True,)), np.random.default_rng(1), 0.5)
    x = np.random.default_rng(2).normal(size=(5, 4))
    target = vocab.encode("ab")
    report = grad_check(lambda: asr.supervised_loss(x, target), asr.parameters(), numeric="extended")
    assert report.passed(1e-4), report.errors


def test_batched_loss_equals_sum_of_unbatched(asr, vocab):
    rng = np.random.default_rng(0)
    xs = _feats(rng, 9, 6, 8)
    texts = ["ab", "b", "a ba"]
    batch = np.zeros((3, 9, 4))
    for i, x in enumerate(xs):
        batch[i, :len(x)] = x
    with no_grad():
        batched = asr.supervised_loss(batch, [vocab.encode(t) for t in texts], np.array([9, 6, 8])).item()
        single = sum(asr.supervised_loss(x, vocab.encode(t)).item() for x, t in zip(xs, texts))
    assert abs(batched - single) < 1e-9


def test_encoder_lengths_follow_subsampling(asr):
    enc = asr.encode(np.zeros((9, 4)))
    assert enc.states.shape == (1, 3, asr.state_dim) and enc.lengths[0] == 3
    with pytest.raises(InputError):
        asr.encode(np.zeros((9, 5)))


@given(st.floats(0.3, 3.0), st.floats(-2, 2))
def test_cmvn_removes_speaker_affine(scale, offset):
    x = np.random.default_rng(1).normal(size=(1, 7, 3))
    a = utterance_cmvn(x, np.array([7]))
    b = utterance_cmvn(x * scale + offset, np.array([7]))
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_cmvn_leaves_padding_zero():
    x = np.ones((2, 4, 2)) * 5
    out = utterance_cmvn(x, np.array([4, 2]))
    assert not out[1, 2:].any()


def test_decode_step_is_a_distribution(asr, vocab):
    enc = asr.encode(np.random.default_rng(0).normal(size=(8, 4)))
    hc, att = asr.initial_decoder_state(enc)
    p, _, _ = asr.decode_step([vocab.sos_id], hc, att, enc)
    assert p.shape == (1, vocab.n_out)
    assert p.data.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InputError):
        asr.decode_step([99], hc, att, enc)


def test_teacher_forced_accuracy_counts(asr, vocab):
    x = np.random.default_rng(0).normal(size=(8, 4))
    correct, total = asr.teacher_forced_accuracy(x, vocab.encode("ab"))
    assert total == 3 and 0 <= correct <= 3


@pytest.mark.parametrize("seed", range(10))
def test_beam_one_equals_greedy(seed, vocab):
    model = randomize(small_asr(vocab, seed=seed), np.random.default_rng(seed), 1.0)
    x = np.random.default_rng(100 + seed).normal(size=(12, 4))
    greedy = model.greedy_decode(x, 0.0, 0.8)
    best = model.beam_search(x, 1, 0.0, 0.8)[0]
    assert best.tokens == greedy.tokens
    assert best.score == pytest.approx(greedy.score, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_exhaustive_beam_matches_enumeration(seed):
    asr, _, feats = tiny_pair(seed, scale=1.5)
    enc = asr.encode(feats)
    with no_grad():
        scores = {tuple(s): asr.sequence_logprob(enc, s, max_ratio=1.0).item()
                  for s in all_sequences(asr.vocab, 2)}
    best = max(scores, key=scores.get)
    hyps = asr.beam_search(feats, beam=16, min_ratio=0.0, max_ratio=1.0)
    assert tuple(hyps[0].tokens) == best
    assert hyps[0].score == pytest.approx(scores[best], abs=1e-12)
    # every finished hypothesis carries its exact sequence score
    for h in hyps:
        assert h.score == pytest.approx(scores[tuple(h.tokens)], abs=1e-12)


def test_length_constraints_respected(asr):
    x = np.random.default_rng(0).normal(size=(20, 4))
    n_frames = int(asr.encode(x).lengths[0])
    lo, hi = length_bounds(n_frames, 0.4, 0.6)
    for h in asr.beam_search(x, 4, 0.4, 0.6):
        assert lo <= len(h.tokens) - 1 <= hi
        assert h.tokens[-1] == asr.vocab.eos_id
    g = asr.greedy_decode(x, 0.4, 0.6)
    assert lo <= len(g.tokens) - 1 <= hi


def test_beam_arguments_validated(asr):
    x = np.zeros((8, 4))
    with pytest.raises(ConfigError):
        asr.beam_search(x, 0)
    with pytest.raises(ConfigError):
        asr.beam_search(x, 2, 0.8, 0.2)


def test_lm_weight_zero_equals_plain_decoding(asr, tiny_lm):
    x = np.random.default_rng(5).normal(size=(16, 4))
    plain = asr.beam_search(x, 3)
    fused = asr.beam_search(x, 3, lm=tiny_lm, lm_weight=0.0)
    assert [h.tokens for h in plain] == [h.tokens for h in fused]
    np.testing.assert_allclose([h.score for h in plain], [h.score for h in fused])


def test_fused_score_is_log_linear(asr, tiny_lm):
    x = np.random.default_rng(5).normal(size=(16, 4))
    h = asr.beam_search(x, 3, lm=tiny_lm, lm_weight=0.7)[0]
    enc = asr.encode(x)
    with no_grad():
        asr_lp = asr.sequence_logprob(enc, h.tokens, max_ratio=0.8).item()
        lm_lp = tiny_lm.token_logprobs(np.asarray([h.tokens])).data[0]
    n_frames = int(enc.lengths[0])
    scored = lm_lp if len(h.tokens) - 1 < int(0.8 * n_frames) else lm_lp[:-1]
    assert h.score == pytest.approx(asr_lp + 0.7 * scored.sum(), abs=1e-9)


def test_samples_end_with_eos_and_match_sequence_logprob():
    asr, _, feats = tiny_pair(3)
    enc = asr.encode(feats)
    toks, logp = asr.sample_batch(enc, 20, np.random.default_rng(0), max_ratio=1.0)
    assert logp.shape == (20,)
    for t, lp in zip(toks, logp.data):
        assert t[-1] == asr.vocab.eos_id and len(t) - 1 <= 2
        assert lp == pytest.approx(asr.sequence_logprob(enc, t, max_ratio=1.0).item(), abs=1e-12)


def test_sampling_frequencies_follow_model():
    asr, _, feats = tiny_pair(5)
    enc = asr.encode(feats)
    seqs = all_sequences(asr.vocab, 2)
    with no_grad():
        p = np.array([np.exp(asr.sequence_logprob(enc, s, max_ratio=1.0).item()) for s in seqs])
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    toks, _ = asr.sample_batch(enc, 20000, np.random.default_rng(1), max_ratio=1.0)
    counts = np.array([sum(t == s for t in toks) for s in seqs])
    se = np.sqrt(p * (1 - p) / 20000)
    assert np.all(np.abs(counts / 20000 - p) < 5 * se + 1e-12)


def test_sampler_argument_checks():
    asr, _, feats = tiny_pair(0)
    enc = asr.encode(feats)
    with pytest.raises(ConfigError):
        asr.sample_batch(enc, 0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        asr.sample_batch(enc, 2, np.random.default_rng(0), temperature=0)


def test_config_round_trip():
    cfg = ASRConfig(7, subsample=(True, False, True), cmvn=False)
    assert ASRConfig.from_dict(cfg.to_dict()) == cfg


def test_mismatched_target_count(asr, vocab):
    with pytest.raises(InputError):
        asr.supervised_loss(np.zeros((2, 8, 4)), [vocab.encode("a")])
