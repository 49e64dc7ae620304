import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cyclasr.data import synth_generate
from cyclasr.estimators import ASRTranscriber, CharLanguageModel, CycleConsistencyASR, TextToEncoder

SMALL = dict(enc_units=3, dec_units=4, emb_dim=3, att_dim=3, batch_size=4, beam=2)


@pytest.fixture
def xy(tiny_spec):
    utts = synth_generate(tiny_spec, 8, (1, 2), seed=5)
    return [u.features for u in utts], [u.text for u in utts]


def test_params_and_clone():
    est = ASRTranscriber(epochs=3, beam=4)
    assert est.get_params()["beam"] == 4
    other = clone(est).set_params(beam=1)
    assert other.beam == 1 and est.beam == 4
    with pytest.raises(NotFittedError):
        est.predict([np.zeros((4, 4))])


def test_transcriber_round_trip(xy):
    X, y = xy
    est = ASRTranscriber(chars="abc ", epochs=2, **SMALL).fit(X, y)
    hyps = est.predict(X)
    assert len(hyps) == len(X) and all(isinstance(h, str) for h in hyps)
    assert set("".join(hyps)) <= set("abc ")
    assert est.score(X, y) <= 1.0
    states = est.transform(X[:2])
    assert states[0].shape[1] == 2 * SMALL["enc_units"]
    with pytest.raises(Exception):
        est.predict([np.zeros((4, 7))])
    with pytest.raises(Exception):
        est.fit(X, y[:-1])


def test_seeded_fits_agree(xy):
    X, y = xy
    a = ASRTranscriber(epochs=2, random_state=3, **SMALL).fit(X, y)
    b = ASRTranscriber(epochs=2, random_state=3, **SMALL).fit(X, y)
    assert a.loss_curve_ == b.loss_curve_


def test_text_to_encoder_and_lm(xy):
    X, y = xy
    states = ASRTranscriber(epochs=1, **SMALL).fit(X, y).transform(X)
    tte = TextToEncoder(prenet_units=2, enc_units=2, dec_units=4, epochs=2, max_frames=6).fit(y, states)
    out = tte.transform(y[:2])
    assert all(o.shape[1] == states[0].shape[1] and 1 <= len(o) <= 6 for o in out)
    lm = CharLanguageModel(emb_dim=3, units=4, epochs=2).fit(y)
    assert lm.perplexity(y) > 1.0
    assert lm.score(y) == pytest.approx(-np.log(lm.perplexity(y)))


def test_cycle_estimator_fits(xy):
    X, y = xy
    est = CycleConsistencyASR(chars="abc ", sup_epochs=1, tte_epochs=1, cycle_epochs=1, n_samples=2, beam=2)
    est.fit(X[:4], y[:4], X_unpaired=X[4:], X_val=X[:2], y_val=y[:2])
    assert len(est.metrics_) == 1
    assert len(est.predict(X[:2])) == 2
