import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from cyclasr import checkpoint as ck
from cyclasr.config import RunConfig, coerce, dump_config, load_config, parse_config_text
from cyclasr.errors import ConfigError, FormatError

from conftest import small_asr, small_tte

tensor_dicts = st.dictionaries(
    st.text("abcxyz/_", min_size=1, max_size=6),
    arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=3), elements=st.floats(allow_nan=False)),
    max_size=4)


@given(tensor_dicts, st.dictionaries(st.text(max_size=4), st.integers() | st.text(max_size=4), max_size=3))
def test_serialisation_round_trip_is_byte_identical(tensors, meta):
    buf = ck.dumps(tensors, meta)
    back, meta2 = ck.loads(buf)
    assert meta2 == meta
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].shape == np.shape(tensors[k])
        np.testing.assert_array_equal(back[k], tensors[k])
    assert ck.dumps(back, meta2) == buf


def test_model_files_round_trip(tmp_path, tiny_spec):
    vocab = tiny_spec.vocab()
    for kind, model in (("asr", small_asr(vocab, 3)), ("tte", small_tte(vocab, 6, 4))):
        path = tmp_path / f"{kind}.ckpt"
        ck.save_model(path, model, kind, extra_meta={"note": "x"})
        again, _, meta = ck.load_model(path, kind)
        assert meta["note"] == "x"
        ck.save_model(tmp_path / "again.ckpt", again, kind, extra_meta={"note": "x"})
        assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()
    with pytest.raises(FormatError, match="expected a lm"):
        ck.load_model(tmp_path / "tte.ckpt", "lm")


def test_rng_state_round_trip():
    rng = np.random.default_rng(5)
    rng.normal(size=3)
    other = ck.restore_rng(ck.rng_state(rng))
    assert np.array_equal(rng.normal(size=4), other.normal(size=4))


@pytest.mark.parametrize("mutate, message", [
    (lambda b: b"XXXXXXXX" + b[8:], "magic"),
    (lambda b: b[:8] + struct.pack("<I", 9) + b[12:], "version"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"\0", "trailing"),
    (lambda b: b[:20] + b"\xff" + b[21:], "metadata"),
])
def test_corrupt_files_are_rejected(tmp_path, mutate, message):
    good = ck.dumps({"w": np.arange(3.0)}, {"kind": "asr"})
    path = tmp_path / "bad.ckpt"
    path.write_bytes(mutate(good))
    with pytest.raises(FormatError, match=message):
        ck.load(path)


def test_unknown_model_kind(tmp_path):
    ck.save(tmp_path / "m.ckpt", {}, {"kind": "vocoder"})
    with pytest.raises(FormatError, match="unknown model kind"):
        ck.load_model(tmp_path / "m.ckpt")


def test_config_file_parsing(tmp_path):
    text = "# run\nbeam = 4   # narrower\n\ncycle_lr=0.01\nbaseline = mean\n"
    assert parse_config_text(text) == {"beam": 4, "cycle_lr": 0.01, "baseline": "mean"}
    path = tmp_path / "run.cfg"
    path.write_text(text)
    cfg = load_config(path, beam=7, seed=None)
    assert (cfg.beam, cfg.cycle_lr, cfg.baseline, cfg.seed) == (7, 0.01, "mean", 0)


@pytest.mark.parametrize("text, message", [
    ("beam 4", ":1: expected"),
    ("\nnot_a_key = 1", ":2: unknown"),
    ("beam = wide", "cannot parse"),
])
def test_config_errors(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config_text(text)


def test_config_validation_and_overrides():
    with pytest.raises(ConfigError):
        RunConfig(min_ratio=0.9, max_ratio=0.8)
    with pytest.raises(ConfigError):
        RunConfig(baseline="median")
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig().updated(bogus=1)
    with pytest.raises(ConfigError):
        coerce("bogus", "1")


def test_dump_and_reload_is_identity(tmp_path):
    cfg = RunConfig(beam=3, cycle_lr=5e-4, baseline="mean")
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_describe_lists_every_key_with_default():
    text = RunConfig.describe()
    for k, v in RunConfig().to_dict().items():
        assert f"{k} = {v!r}" in text
