import json
import subprocess
import sys

import pytest

from cyclasr.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from cyclasr.metrics import read_transcripts

SMALL = """\
n_paired = 6
n_unpaired = 6
n_text = 12
n_val = 3
n_eval = 3
letters = abc
feat_dim = 4
dur_min = 2
dur_max = 3
words_min = 1
words_max = 2
enc_units = 4
dec_units = 6
emb_dim = 3
att_dim = 4
att_filters = 2
att_width = 3
tte_enc_units = 3
tte_conv_channels = 4
tte_prenet_units = 3
tte_dec_units = 6
tte_postnet_channels = 4
lm_units = 6
lm_epochs = 2
sup_epochs = 3
tte_epochs = 2
cycle_epochs = 1
batch_size = 3
n_samples = 2
beam = 3
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    c = ["--config", str(cfg), "--threads", "1", "--quiet"]
    data = root / "data"
    assert main(["gen-data", "--out", str(data), *c]) == EXIT_OK
    assert main(["train-sup", "--data", str(data), "--out", str(root / "asr.ckpt"), *c]) == EXIT_OK
    assert main(["train-tte", "--data", str(data), "--asr", str(root / "asr.ckpt"), "--out", str(root / "tte.ckpt"),
                 *c]) == EXIT_OK
    assert main(["train-lm", "--data", str(data), "--out", str(root / "lm.ckpt"), *c]) == EXIT_OK
    return root, c


def _decode(root, c, name, *extra, model="asr.ckpt"):
    out = root / name
    assert main(["decode", "--asr", str(root / model), "--input", str(root / "data" / "eval.jsonl"),
                 "--out", str(out), "--force", *c, *extra]) == EXIT_OK
    return out


def test_gen_data_layout(work):
    root, _ = work
    names = {p.name for p in (root / "data").iterdir()}
    assert {"paired.jsonl", "unpaired.jsonl", "unpaired_ref.jsonl", "text.txt", "val.jsonl", "eval.jsonl",
            "vocab.txt", "config.txt"} <= names
    assert '"text"' not in (root / "data" / "unpaired.jsonl").read_text()


def test_refuses_to_overwrite_without_force(work, capsys):
    root, c = work
    assert main(["gen-data", "--out", str(root / "data"), *c]) == EXIT_USAGE
    assert "--force" in capsys.readouterr().err


def test_cycle_and_baselines(work):
    root, c = work
    for mode in ("cycle", "ce1", "oracle"):
        curves = root / f"{mode}.csv"
        args = ["train-cycle", "--data", str(root / "data"), "--asr", str(root / "asr.ckpt"), "--mode", mode,
                "--out", str(root / f"{mode}.ckpt"), "--curves", str(curves), "--force", *c]
        if mode == "cycle":
            args += ["--tte", str(root / "tte.ckpt")]
        assert main(args) == EXIT_OK
        assert curves.read_text().startswith("epoch,cycle_loss,val_acc,val_cer,val_wer")
    assert main(["train-cycle", "--data", str(root / "data"), "--asr", str(root / "asr.ckpt"),
                 "--out", str(root / "x.ckpt"), *c]) == EXIT_USAGE


def test_beam_one_is_greedy_and_zero_weight_is_plain(work):
    root, c = work
    from cyclasr.checkpoint import load_model
    from cyclasr.data import load_utterances

    asr = load_model(root / "asr.ckpt", "asr")[0]
    greedy = {u.id: asr.vocab.decode(asr.greedy_decode(u.features).tokens)
              for u in load_utterances(root / "data" / "eval.jsonl")}
    assert read_transcripts(_decode(root, c, "b1.tsv", "--beam", "1")) == greedy
    plain = _decode(root, c, "plain.tsv").read_text()
    assert _decode(root, c, "w0.tsv", "--lm", str(root / "lm.ckpt"), "--lm-weight", "0").read_text() == plain


def test_runs_are_deterministic(work):
    root, c = work
    a = _decode(root, c, "d1.tsv").read_bytes()
    assert main(["train-sup", "--data", str(root / "data"), "--out", str(root / "asr2.ckpt"), *c]) == EXIT_OK
    assert (root / "asr2.ckpt").read_bytes() == (root / "asr.ckpt").read_bytes()
    assert _decode(root, c, "d2.tsv", model="asr2.ckpt").read_bytes() == a


def test_resume_matches_uninterrupted_run(work):
    root, c = work
    data = str(root / "data")
    assert main(["train-sup", "--data", data, "--out", str(root / "r.ckpt"), "--epochs", "2", *c]) == EXIT_OK
    assert main(["train-sup", "--data", data, "--out", str(root / "r.ckpt"), "--epochs", "3", "--resume",
                 *c]) == EXIT_OK
    assert (root / "r.ckpt").read_bytes() == (root / "asr.ckpt").read_bytes()
    assert main(["train-sup", "--data", data, "--out", str(root / "r.ckpt"), "--resume", "--set", "sup_lr=0.1",
                 *c]) == EXIT_USAGE


def test_score_command(work, tmp_path, capsys):
    root, c = work
    hyp = _decode(root, c, "s.tsv")
    js = tmp_path / "score.json"
    assert main(["score", "--hyp", str(hyp), "--ref", str(root / "data" / "eval.jsonl"), "--json", str(js)]) == 0
    assert "WER%" in capsys.readouterr().out
    assert json.loads(js.read_text())["unit"] == "word"


def test_data_errors_exit_2(work, tmp_path):
    root, c = work
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert main(["score", "--hyp", str(bad), "--ref", str(bad)]) == EXIT_DATA
    assert main(["decode", "--asr", str(bad), "--input", str(bad), "--out", str(tmp_path / "o"), *c]) == EXIT_DATA
    assert main(["train-sup", "--data", str(tmp_path), "--out", str(tmp_path / "m"), *c]) == EXIT_DATA


def test_usage_errors_exit_1(work):
    root, c = work
    assert main(["decode", "--asr", "x", "--input", "y", "--out", str(root / "z"), "--set", "nokey=1"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["train-sup"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == EXIT_USAGE


def test_help_shows_defaults():
    out = subprocess.run([sys.executable, "-m", "cyclasr.cli", "train-cycle", "--help"], capture_output=True,
                         text=True, check=True).stdout
    assert "beam = 20" in out and "cycle_epochs = 6" in out
