import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cyclasr.asr import ASRConfig, ASRModel
from cyclasr.data import SynthSpec, synth_generate
from cyclasr.lm import CharLM, LMConfig
from cyclasr.tte import TTEConfig, TTEModel
from cyclasr.vocab import Vocab

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# acceptance results collected by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'} | {detail}")


def small_asr(vocab, seed=0, feat_dim=4, **kw):
    cfg = dict(enc_units=3, dec_units=4, emb_dim=3, att_dim=3, att_filters=2, att_width=3)
    cfg.update(kw)
    return ASRModel(ASRConfig(feat_dim, **cfg), vocab, np.random.default_rng(seed))


def small_tte(vocab, out_dim, seed=0, **kw):
    cfg = dict(emb_dim=3, enc_conv_layers=1, enc_conv_channels=3, conv_width=3, enc_units=2, att_dim=3,
               att_filters=2, att_width=3, prenet_units=3, dec_units=4, postnet_layers=2, postnet_channels=3)
    cfg.update(kw)
    return TTEModel(TTEConfig(out_dim, **cfg), vocab, np.random.default_rng(seed))


def randomize(model, rng, scale=0.5):
    """Replace every parameter with non-zero random values (keeps ReLUs off their kink)."""
    for p in model.parameters():
        p.data[...] = rng.uniform(-scale, scale, p.shape)
    return model


@pytest.fixture
def vocab():
    return Vocab("ab ")


@pytest.fixture
def tiny_spec():
    return SynthSpec(letters="abc", feat_dim=4, dur_min=2, dur_max=3, noise_std=0.05, speaker_offset_std=0.3)


@pytest.fixture
def tiny_utts(tiny_spec):
    return synth_generate(tiny_spec, 6, (1, 2), seed=3)


@pytest.fixture
def tiny_lm():
    return CharLM(LMConfig(emb_dim=3, units=4), Vocab("ab "), np.random.default_rng(1))


def all_sequences(vocab, max_chars):
    """Every output sequence with at most ``max_chars`` characters, each ending in ``<eos>``."""
    chars = [vocab.offset + 1 + k for k in range(len(vocab.chars))]
    out, frontier = [], [[]]
    for n in range(max_chars + 1):
        out += [s + [vocab.eos_id] for s in frontier]
        if n < max_chars:
            frontier = [s + [c] for s in frontier for c in chars]
    return out


def tiny_pair(seed=0, scale=1.0):
    """Two-character recogniser with T'=2 encoder frames and a matching frozen TTE.

    With ``max_ratio=1.0`` at most two characters can be emitted, so the
    output space has exactly seven sequences.
    """
    vocab = Vocab("ab")
    rng = np.random.default_rng(seed)
    asr = ASRModel(ASRConfig(2, enc_units=1, subsample=(False,), dec_units=2, emb_dim=1, att_dim=1, att_filters=1,
                             att_width=1, cmvn=False), vocab, rng)
    randomize(asr, rng, scale)
    tte = small_tte(vocab, asr.state_dim, seed=seed + 1, dec_units=3, prenet_units=2)
    randomize(tte, rng, 0.5)
    tte.freeze()
    feats = rng.normal(size=(2, 2))
    return asr, tte, feats
