"""Command-line entry point: ``cyclasr <command> [flags]``.

Commands
--------
gen-data     write the synthetic splits, vocabulary and config into a directory
train-sup    supervised ASR pre-training on the paired split
train-tte    fit the text-to-encoder model on the pre-trained ASR encoder states
train-lm     character LM on the text-only split
train-cycle  alternating paired / unpaired training (cycle, ce1, ce5, oracle, supervised)
decode       beam-search decoding, optionally with LM shallow fusion
score        CER/WER of a hypothesis file against references
reproduce    the full multi-seed benchmark with its acceptance gates

Exit status: 0 success, 1 usage or configuration error, 2 data or file-format
error, 3 an acceptance gate failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchmark
from .asr import ASRModel
from .checkpoint import load, load_model, restore_rng, rng_state, save, save_model
from .config import RunConfig, dump_config, load_config, parse_config_text
from .cycle import MODES, train_alternating
from .data import load_texts, load_utterances, save_texts, save_utterances, strip_text
from .errors import ConfigError, CyclasrError, FormatError, InputError
from .lm import CharLM, LMConfig, lm_train
from .metrics import (
    EpochMetrics, MetricsLog, export_curves, format_decoding, read_transcripts, score_corpus,
)
from .optim import Adam
from .training import decode_corpus, evaluate, train_supervised, validation_accuracy
from .tte import TTEModel, tte_train
from .vocab import Vocab

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GATE = 0, 1, 2, 3

logger = logging.getLogger("cyclasr")


class UsageError(CyclasrError):
    """Bad command-line usage detected after parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

# stream ids for np.random.default_rng([seed, stream]); keeps commands independent
_STREAM = {"asr_init": 1, "sup": 2, "tte_init": 3, "tte": 4, "lm_init": 5, "lm": 6, "cycle": 7}


def _rng(cfg: RunConfig, stream: str) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, _STREAM[stream]])


def _config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        overrides.update(parse_config_text(f"{key} = {raw}", "--set"))
    for key in ("seed", "threads"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    return load_config(args.config, **overrides)


def _check_out(path: Path, force: bool, resume: bool = False) -> None:
    if path.exists() and not (force or resume):
        raise UsageError(f"{path} exists; pass --force to overwrite")


def _data_file(data_dir, name: str) -> Path:
    path = Path(data_dir) / name
    if not path.exists():
        raise FileNotFoundError(f"{path} not found (run gen-data first)")
    return path


def _vocab(data_dir) -> Vocab:
    return Vocab.load(_data_file(data_dir, "vocab.txt"))


def _write_simple_curve(path: Path, column: str, values) -> None:
    path.write_text("epoch," + column + "\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(values, 1)),
                    encoding="utf-8")


def _say(args):
    return (lambda msg: print(msg, file=sys.stderr)) if not args.quiet else None


# ---------------------------------------------------------------------------
# resumable epoch loop
# ---------------------------------------------------------------------------


def _state_path(out: Path) -> Path:
    return out.with_name(out.name + ".state")


def _run_epochs(args, cfg: RunConfig, kind: str, model, opt: Adam, epochs: int, run_epoch, rng, select_best):
    """Call ``run_epoch(rng) -> dict`` ``epochs`` times, checkpointing after each epoch.

    The training state (parameters, optimiser moments, RNG state, best
    parameters and the curve) goes to ``<out>.state`` so ``--resume`` continues
    exactly where an interrupted run stopped.
    """
    out = Path(args.out)
    state_file = _state_path(out)
    start, rows, best_score, best = 0, [], -np.inf, None
    if args.resume and state_file.exists():
        tensors, meta = load(state_file)
        if meta.get("kind") != kind or meta.get("run_config") != {k: v for k, v in cfg.to_dict().items()
                                                                   if not k.endswith("epochs")}:
            raise ConfigError(f"{state_file} was written by a different command or configuration")
        model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model/")})
        opt.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("opt/")})
        if any(k.startswith("best/") for k in tensors):
            best = {k[5:]: v for k, v in tensors.items() if k.startswith("best/")}
        rng.bit_generator.state = restore_rng(meta["rng"]).bit_generator.state
        start, rows, best_score = meta["epoch"], meta["rows"], meta["best_score"]
        logger.info("resuming %s from epoch %d", kind, start)
    say = _say(args)
    for epoch in range(start + 1, epochs + 1):
        row = run_epoch(rng)
        row["epoch"] = epoch
        rows.append(row)
        if select_best and row["val_acc"] > best_score:
            best_score = row["val_acc"]
            best = {k: v.copy() for k, v in model.state_dict().items()}
        if say:
            say(f"{kind} epoch {epoch}: " + " ".join(f"{k} {v:.4f}" for k, v in row.items() if k != "epoch"))
        tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
        tensors.update({f"opt/{k}": v for k, v in opt.state_dict().items()})
        if best is not None:
            tensors.update({f"best/{k}": v for k, v in best.items()})
        run_cfg = {k: v for k, v in cfg.to_dict().items() if not k.endswith("epochs")}
        save(state_file, tensors, {"kind": kind, "epoch": epoch, "rows": rows, "best_score": best_score,
                                   "rng": rng_state(rng), "run_config": run_cfg})
    if select_best and best is not None:
        model.load_state_dict(best)
    save_model(out, model, kind, extra_meta={"curve": rows, "seed": cfg.seed})
    return rows


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    marker = out / "vocab.txt"
    _check_out(marker, args.force)
    out.mkdir(parents=True, exist_ok=True)
    spec, corpus = benchmark.corpus_for(cfg, cfg.seed)
    save_utterances(corpus["paired"], out / "paired.jsonl")
    save_utterances(strip_text(corpus["unpaired"]), out / "unpaired.jsonl")
    save_utterances(corpus["unpaired"], out / "unpaired_ref.jsonl")
    save_texts([u.text for u in corpus["text"]], out / "text.txt")
    save_utterances(corpus["val"], out / "val.jsonl")
    save_utterances(corpus["eval"], out / "eval.jsonl")
    spec.vocab().save(marker)
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    counts = ", ".join(f"{k} {len(v)}" for k, v in corpus.items())
    print(f"wrote {out}: {counts}")
    return EXIT_OK


def cmd_train_sup(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    _check_out(out, args.force, args.resume)
    vocab = _vocab(args.data)
    paired = load_utterances(_data_file(args.data, "paired.jsonl"))
    val = load_utterances(_data_file(args.data, "val.jsonl"))
    asr = ASRModel(benchmark.asr_config(cfg), vocab, _rng(cfg, "asr_init"))
    opt = Adam(asr.parameters(), lr=cfg.sup_lr, clip_norm=cfg.clip_norm)
    epochs = args.epochs or cfg.sup_epochs

    def run_epoch(rng):
        loss = train_supervised(asr, paired, 1, cfg.batch_size, cfg.sup_lr, cfg.clip_norm, rng, optimizer=opt)[0]
        report = evaluate(asr, val, cfg.val_beam, cfg.min_ratio, cfg.max_ratio)
        return {"loss": loss, "val_acc": validation_accuracy(asr, val), "val_cer": report.cer, "val_wer": report.wer}

    rows = _run_epochs(args, cfg, "asr", asr, opt, epochs, run_epoch, _rng(cfg, "sup"), select_best=True)
    if args.curves:
        log = MetricsLog()
        for r in rows:
            log.append(EpochMetrics(r["epoch"], float("nan"), r["val_acc"], r["val_cer"], r["val_wer"]))
        export_curves(log, args.curves)
    print(f"wrote {out} (best val_acc {max(r['val_acc'] for r in rows):.4f})")
    return EXIT_OK


def _encoder_pairs(asr: ASRModel, utts):
    return benchmark.encoder_pairs(asr, utts)


def cmd_train_tte(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    _check_out(out, args.force, args.resume)
    asr, _, _ = load_model(args.asr, "asr")
    paired = load_utterances(_data_file(args.data, "paired.jsonl"))
    pairs = _encoder_pairs(asr, paired)
    tte = TTEModel(benchmark.tte_config(cfg, asr.state_dim), asr.vocab, _rng(cfg, "tte_init"))
    opt = Adam(tte.parameters(), lr=cfg.tte_lr, clip_norm=cfg.clip_norm)
    epochs = args.epochs or cfg.tte_epochs

    def run_epoch(rng):
        curve = tte_train(tte, pairs, 1, cfg.batch_size, cfg.tte_lr, cfg.clip_norm, rng, optimizer=opt)
        return {"loss": curve[-1]}

    rows = _run_epochs(args, cfg, "tte", tte, opt, epochs, run_epoch, _rng(cfg, "tte"), select_best=False)
    if args.curves:
        _write_simple_curve(Path(args.curves), "tte_loss", [r["loss"] for r in rows])
    print(f"wrote {out} (final TTE loss {rows[-1]['loss']:.4f})")
    return EXIT_OK


def cmd_train_lm(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    _check_out(out, args.force, args.resume)
    vocab = _vocab(args.data)
    texts = load_texts(Path(args.text) if args.text else _data_file(args.data, "text.txt"))
    if not texts:
        raise InputError("language-model corpus is empty")
    lm = CharLM(LMConfig(units=cfg.lm_units), vocab, _rng(cfg, "lm_init"))
    opt = Adam(lm.parameters(), lr=cfg.lm_lr, clip_norm=cfg.clip_norm)
    epochs = args.epochs or cfg.lm_epochs

    def run_epoch(rng):
        return {"perplexity": lm_train(lm, texts, 1, lr=cfg.lm_lr, clip_norm=cfg.clip_norm, rng=rng,
                                       optimizer=opt)[-1]}

    rows = _run_epochs(args, cfg, "lm", lm, opt, epochs, run_epoch, _rng(cfg, "lm"), select_best=False)
    if args.curves:
        _write_simple_curve(Path(args.curves), "perplexity", [r["perplexity"] for r in rows])
    print(f"wrote {out} (training perplexity {rows[-1]['perplexity']:.3f})")
    return EXIT_OK


def cmd_train_cycle(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    _check_out(out, args.force)
    if args.epochs:
        cfg = cfg.updated(cycle_epochs=args.epochs)
    asr, _, _ = load_model(args.asr, "asr")
    tte = None
    if args.tte:
        tte, _, _ = load_model(args.tte, "tte")
        tte.freeze()
    elif args.mode == "cycle":
        raise UsageError("--mode cycle requires --tte")
    paired = load_utterances(_data_file(args.data, "paired.jsonl"))
    val = load_utterances(_data_file(args.data, "val.jsonl"))
    name = "unpaired_ref.jsonl" if args.mode == "oracle" else "unpaired.jsonl"
    unpaired = load_utterances(_data_file(args.data, name))
    if args.mode != "oracle":
        unpaired = strip_text(unpaired)
    _, log = train_alternating(asr, paired, unpaired, args.mode, benchmark.schedule_for(cfg), tte=tte, val=val,
                               rng=_rng(cfg, "cycle"), log=_say(args))
    save_model(out, asr, "asr", extra_meta={"mode": args.mode, "seed": cfg.seed})
    if args.curves:
        export_curves(log, args.curves, plot=args.plot)
    print(f"wrote {out} ({args.mode}, {len(log)} epochs)")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    _check_out(out, args.force)
    asr, _, _ = load_model(args.asr, "asr")
    lm = load_model(args.lm, "lm")[0] if args.lm else None
    if lm is not None and lm.vocab != asr.vocab:
        raise FormatError("LM and ASR vocabularies differ")
    beam = args.beam if args.beam is not None else cfg.beam
    weight = args.lm_weight if args.lm_weight is not None else (cfg.lm_weight if lm is not None else 0.0)
    if beam < 1:
        raise UsageError("--beam must be >= 1")
    utts = load_utterances(args.input)
    if any(u.features is None for u in utts):
        raise InputError(f"{args.input}: every record needs features to be decoded")
    hyps = decode_corpus(asr, utts, beam, cfg.min_ratio, cfg.max_ratio, lm if weight else None, weight)
    out.write_text("".join(format_decoding(k, v.text, v.score) + "\n" for k, v in hyps.items()), encoding="utf-8")
    print(f"wrote {len(hyps)} hypotheses to {out}")
    return EXIT_OK


def _references(path) -> dict[str, str]:
    path = Path(path)
    if path.suffix == ".jsonl":
        refs = {u.id: u.text for u in load_utterances(path)}
        if any(t is None for t in refs.values()):
            raise InputError(f"{path}: references need transcripts")
        return refs
    return read_transcripts(path)


def cmd_score(args) -> int:
    report = score_corpus(read_transcripts(args.hyp), _references(args.ref), unit=args.unit)
    print(report.format_table())
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    if (out / "results.json").exists() and not args.force:
        raise UsageError(f"{out} already holds results; pass --force to overwrite")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed, cfg.seed + 1, cfg.seed + 2]
    modes = tuple(args.modes.split(",")) if args.modes else benchmark.TABLE1_MODES
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise UsageError(f"unknown mode(s): {', '.join(unknown)}")
    results, g1, g2 = benchmark.reproduce(cfg, seeds, modes, with_lm=not args.no_lm, out_dir=out,
                                          log=_say(args))
    print(benchmark.format_table(results, ("baseline",) + modes))
    print(benchmark.format_gates(g1))
    if g2:
        print()
        print(benchmark.format_table(results, ("baseline", "baseline+lm", "cycle", "cycle+lm")))
        print(benchmark.format_gates(g2))
    return EXIT_OK if all(g.passed for g in g1 + g2) else EXIT_GATE


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    epilog = "configuration keys (set with --config FILE or --set key=value; flags win):\n" + RunConfig.describe()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
    common.add_argument("--seed", type=int, help="master random seed (default 0)")
    common.add_argument("--threads", type=int, help="worker cap; runs are sequential so 1 is bitwise reproducible")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--quiet", action="store_true", help="no per-epoch progress on stderr")

    parser = _Parser(prog="cyclasr", description="Cycle-consistency training for end-to-end speech recognition "
                     "on a synthetic corpus.", formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help, description=help, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "generate the synthetic splits")
    p.add_argument("--out", required=True, help="output directory")

    for name, func, help, extra in (
        ("train-sup", cmd_train_sup, "supervised ASR pre-training", ()),
        ("train-tte", cmd_train_tte, "train the text-to-encoder model", ("asr",)),
        ("train-lm", cmd_train_lm, "train the character language model", ("text",)),
    ):
        p = add(name, func, help)
        p.add_argument("--data", required=True, help="directory written by gen-data")
        p.add_argument("--out", required=True, help="output checkpoint")
        p.add_argument("--epochs", type=int, help="override the configured epoch count")
        p.add_argument("--resume", action="store_true", help="continue from <out>.state")
        p.add_argument("--curves", help="write the learning curve CSV here")
        if "asr" in extra:
            p.add_argument("--asr", required=True, help="pre-trained ASR checkpoint")
        if "text" in extra:
            p.add_argument("--text", help="text corpus (default: <data>/text.txt)")

    p = add("train-cycle", cmd_train_cycle, "alternating training with unpaired audio")
    p.add_argument("--data", required=True, help="directory written by gen-data")
    p.add_argument("--asr", required=True, help="pre-trained ASR checkpoint")
    p.add_argument("--tte", help="trained TTE checkpoint (required for --mode cycle)")
    p.add_argument("--mode", default="cycle", choices=MODES)
    p.add_argument("--out", required=True, help="output ASR checkpoint")
    p.add_argument("--epochs", type=int, help="override cycle_epochs")
    p.add_argument("--curves", help="write epoch, cycle_loss, val_acc, val_cer, val_wer CSV here")
    p.add_argument("--plot", action="store_true", help="also render a PNG next to the CSV (best effort)")

    p = add("decode", cmd_decode, "transcribe a dataset file")
    p.add_argument("--asr", required=True, help="ASR checkpoint")
    p.add_argument("--input", required=True, help="dataset file (.jsonl) with features")
    p.add_argument("--out", required=True, help="hypothesis file: id TAB text TAB score")
    p.add_argument("--beam", type=int, help="beam width (1 = greedy)")
    p.add_argument("--lm", help="LM checkpoint for shallow fusion")
    p.add_argument("--lm-weight", type=float, help="fusion weight (default lm_weight when --lm is given)")

    p = add("score", cmd_score, "score hypotheses against references")
    p.add_argument("--hyp", required=True, help="hypothesis file (id TAB text)")
    p.add_argument("--ref", required=True, help="reference file (id TAB text) or dataset .jsonl")
    p.add_argument("--unit", default="word", choices=("word", "char"))
    p.add_argument("--json", help="also write the report as JSON")

    p = add("reproduce", cmd_reproduce, "run the multi-seed benchmark and check the gates")
    p.add_argument("--out", required=True, help="output directory for tables, curves and results.json")
    p.add_argument("--seeds", help="comma-separated seeds (default: seed, seed+1, seed+2)")
    p.add_argument("--modes", help="comma-separated training modes (default cycle,ce1,ce5,oracle)")
    p.add_argument("--no-lm", action="store_true", help="skip the LM-fusion comparison")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"cyclasr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, InputError, OSError, json.JSONDecodeError) as exc:
        print(f"cyclasr {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
