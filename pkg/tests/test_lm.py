import numpy as np
import pytest

from cyclasr.autograd import grad_check, no_grad
from cyclasr.errors import InputError
from cyclasr.lm import CharLM, LMConfig, _pad, lm_step, lm_train
from cyclasr.vocab import Vocab

from conftest import randomize


@pytest.fixture
def lm():
    return randomize(CharLM(LMConfig(emb_dim=3, units=4), Vocab("ab "), np.random.default_rng(0)),
                     np.random.default_rng(0), 0.6)


def test_step_loss_gradients(lm):
    v = lm.vocab

    def f():
        state = lm.initial_state(2)
        logp, state = lm_step(lm, state, [v.sos_id, v.sos_id])
        logp2, _ = lm_step(lm, state, v.encode("ab", eos=False))
        return -(logp[0, 1] + logp[1, 2] + logp2[0, 0] + logp2[1, 1])

    report = grad_check(f, lm.parameters(), numeric="extended")
    assert report.passed(1e-4), report.errors


def test_sequence_loss_gradients(lm):
    ids, _ = _pad([lm.vocab.encode("ab a"), lm.vocab.encode("b")])
    report = grad_check(lambda: lm.utterance_nll(ids).sum(), lm.parameters(), numeric="extended")
    assert report.passed(1e-4), report.errors


def test_incremental_steps_match_teacher_forcing(lm):
    ids = lm.vocab.encode("ba b")
    with no_grad():
        full = lm.token_logprobs(np.asarray([ids])).data[0]
        state, prev, inc = lm.initial_state(1), lm.vocab.sos_id, []
        for tok in ids:
            logp, state = lm.step(state, [prev])
            inc.append(logp.data[0, tok - lm.vocab.offset])
            prev = tok
    np.testing.assert_allclose(full, inc, atol=1e-12)


def test_batched_nll_equals_unbatched(lm):
    texts = ["ab", "b a b", "a"]
    ids, _ = _pad([lm.vocab.encode(t) for t in texts])
    with no_grad():
        batched = lm.utterance_nll(ids).data
        single = [lm.utterance_nll(np.asarray([lm.vocab.encode(t)])).item() for t in texts]
    np.testing.assert_allclose(batched, single, atol=1e-9, rtol=0)


def test_uniform_model_perplexity():
    lm = CharLM(LMConfig(emb_dim=2, units=3), Vocab("abc"), np.random.default_rng(0))
    lm.zero_()
    # zero weights give a uniform next-token distribution over <eos> and 3 characters
    assert lm.perplexity(["abc", "a"]) == pytest.approx(4.0)
    assert lm.sentence_logprob("ab") == pytest.approx(3 * np.log(0.25))


def test_training_lowers_perplexity():
    texts = ["ab ab", "ab", "ab ab ab"] * 10
    lm = CharLM(LMConfig(emb_dim=4, units=8), Vocab("ab "), np.random.default_rng(0))
    before = lm.perplexity(texts)
    curve = lm_train(lm, texts, epochs=25, batch_size=10, lr=1e-2, rng=np.random.default_rng(1))
    assert curve[-1] < 0.5 * before
    assert curve[-1] == pytest.approx(lm.perplexity(texts))


def test_errors(lm):
    with pytest.raises(InputError):
        lm_train(lm, [])
    with pytest.raises(InputError):
        lm.step(lm.initial_state(1), [42])
    with pytest.raises(InputError):
        lm.sentence_logprob("xyz")


def test_config_round_trip():
    cfg = LMConfig(5, 7, 2)
    assert LMConfig.from_dict(cfg.to_dict()) == cfg
