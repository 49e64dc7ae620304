"""Desk-scale reproduction: training-method comparison and LM-fusion comparison.

One seed runs the whole pipeline on a fresh synthetic corpus: supervised
pre-training on the paired split, TTE fitting on the resulting encoder states,
then each alternating-training mode from the same starting point, each scored
on the evaluation split. ``summarize`` aggregates seeds and applies the
directional gates.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .asr import ASRConfig, ASRModel
from .autograd import no_grad
from .config import RunConfig
from .cycle import ScheduleConfig, train_alternating
from .data import SynthSpec, strip_text, synth_corpus
from .lm import CharLM, LMConfig, lm_train
from .metrics import MetricsLog, ScoreReport, export_curves
from .training import evaluate, train_supervised
from .tte import TTEConfig, TTEModel, tte_train

TABLE1_MODES = ("cycle", "ce1", "ce5", "oracle")
ROW_LABELS = {
    "baseline": "baseline (paired only)",
    "cycle": "cycle-consistency loss",
    "ce1": "CE loss (1 best)",
    "ce5": "CE loss (5 samples)",
    "oracle": "oracle (all transcripts)",
    "supervised": "paired CE only (control)",
}


def synth_spec(cfg: RunConfig) -> SynthSpec:
    return SynthSpec(letters=cfg.letters, feat_dim=cfg.feat_dim, dur_min=cfg.dur_min, dur_max=cfg.dur_max,
                     noise_std=cfg.noise_std, speaker_offset_std=cfg.speaker_offset_std, world_seed=cfg.world_seed)


def corpus_for(cfg: RunConfig, seed: int):
    sizes = {"paired": cfg.n_paired, "unpaired": cfg.n_unpaired, "text": cfg.n_text, "val": cfg.n_val,
             "eval": cfg.n_eval}
    spec = synth_spec(cfg)
    return spec, synth_corpus(spec, seed=seed, sizes=sizes, len_range=(cfg.words_min, cfg.words_max))


def asr_config(cfg: RunConfig) -> ASRConfig:
    return ASRConfig(cfg.feat_dim, enc_units=cfg.enc_units, dec_units=cfg.dec_units, emb_dim=cfg.emb_dim,
                     att_dim=cfg.att_dim, att_filters=cfg.att_filters, att_width=cfg.att_width)


def tte_config(cfg: RunConfig, out_dim: int) -> TTEConfig:
    return TTEConfig(out_dim, enc_units=cfg.tte_enc_units, enc_conv_channels=cfg.tte_conv_channels,
                     prenet_units=cfg.tte_prenet_units, dec_units=cfg.tte_dec_units,
                     postnet_channels=cfg.tte_postnet_channels, dropout=cfg.dropout, zoneout=cfg.zoneout)


def schedule_for(cfg: RunConfig) -> ScheduleConfig:
    return ScheduleConfig(epochs=cfg.cycle_epochs, batch_size=cfg.batch_size, paired_steps=cfg.paired_steps,
                          unpaired_steps=cfg.unpaired_steps, n_samples=cfg.n_samples, lr=cfg.cycle_lr,
                          sup_lr=cfg.alt_sup_lr, clip_norm=cfg.clip_norm, ce_weight=cfg.ce_weight,
                          baseline=cfg.baseline, beam=cfg.beam, val_beam=cfg.val_beam, min_ratio=cfg.min_ratio,
                          max_ratio=cfg.max_ratio)


def encoder_pairs(asr: ASRModel, utts):
    with no_grad():
        return [(asr.vocab.encode(u.text), asr.encode(u.features).states.data[0].copy()) for u in utts]


@dataclass
class SeedResult:
    seed: int
    reports: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    tte_curve: list = field(default_factory=list)
    lm_curve: list = field(default_factory=list)
    seconds: dict = field(default_factory=dict)

    def wer(self, row: str) -> float:
        return self.reports[row].wer

    def to_dict(self) -> dict:
        return {"seed": self.seed,
                "reports": {k: {"cer": r.cer, "wer": r.wer, "sub": r.substitutions, "ins": r.insertions,
                                "del": r.deletions, "ref": r.ref_length} for k, r in self.reports.items()},
                "tte_curve": self.tte_curve, "lm_curve": self.lm_curve, "seconds": self.seconds}


def run_seed(cfg: RunConfig, seed: int, modes=TABLE1_MODES, with_lm: bool = True, log=None) -> SeedResult:
    say = log or (lambda msg: None)
    res = SeedResult(seed)
    spec, corpus = corpus_for(cfg, seed)
    vocab = spec.vocab()
    rng = np.random.default_rng(seed)
    decode = dict(beam=cfg.beam, min_ratio=cfg.min_ratio, max_ratio=cfg.max_ratio)

    t0 = time.perf_counter()
    asr = ASRModel(asr_config(cfg), vocab, rng)
    train_supervised(asr, corpus["paired"], cfg.sup_epochs, cfg.batch_size, cfg.sup_lr, cfg.clip_norm, rng,
                     val=corpus["val"])
    res.reports["baseline"] = evaluate(asr, corpus["eval"], **decode)
    res.seconds["pretrain"] = time.perf_counter() - t0
    say(f"seed {seed} baseline: CER {res.reports['baseline'].cer:.3f} WER {res.reports['baseline'].wer:.3f}")

    t0 = time.perf_counter()
    tte = TTEModel(tte_config(cfg, asr.state_dim), vocab, rng)
    res.tte_curve = tte_train(tte, encoder_pairs(asr, corpus["paired"]), cfg.tte_epochs, cfg.batch_size,
                              cfg.tte_lr, cfg.clip_norm, rng)
    tte.freeze()
    res.seconds["tte"] = time.perf_counter() - t0
    say(f"seed {seed} TTE loss {res.tte_curve[0]:.3f} -> {res.tte_curve[-1]:.3f}")

    start = {k: v.copy() for k, v in asr.state_dict().items()}
    trained = {}
    sched = schedule_for(cfg)
    for k, mode in enumerate(modes):
        t0 = time.perf_counter()
        asr.load_state_dict(start)
        unpaired = corpus["unpaired"] if mode == "oracle" else strip_text(corpus["unpaired"])
        _, curve = train_alternating(asr, corpus["paired"], unpaired, mode, sched, tte=tte, val=corpus["val"],
                                     rng=np.random.default_rng([seed, k]))
        res.curves[mode] = curve
        res.reports[mode] = evaluate(asr, corpus["eval"], **decode)
        trained[mode] = {n: v.copy() for n, v in asr.state_dict().items()}
        res.seconds[mode] = time.perf_counter() - t0
        say(f"seed {seed} {mode}: CER {res.reports[mode].cer:.3f} WER {res.reports[mode].wer:.3f}")

    if with_lm:
        t0 = time.perf_counter()
        lm = CharLM(LMConfig(units=cfg.lm_units), vocab, np.random.default_rng([seed, 99]))
        res.lm_curve = lm_train(lm, [u.text for u in corpus["text"]], cfg.lm_epochs, lr=cfg.lm_lr,
                                clip_norm=cfg.clip_norm, rng=np.random.default_rng([seed, 100]))
        for row in ("baseline", "cycle"):
            if row == "baseline":
                asr.load_state_dict(start)
            elif "cycle" in trained:
                asr.load_state_dict(trained["cycle"])
            else:
                continue
            res.reports[f"{row}+lm"] = evaluate(asr, corpus["eval"], lm=lm, lm_weight=cfg.lm_weight, **decode)
        res.seconds["lm"] = time.perf_counter() - t0
        if "cycle+lm" in res.reports:
            say(f"seed {seed} cycle+LM: WER {res.reports['cycle+lm'].wer:.3f}")
    return res


# ---------------------------------------------------------------------------
# aggregation and gates
# ---------------------------------------------------------------------------


@dataclass
class Gate:
    name: str
    passed: bool
    detail: str


def table1_gates(results: list[SeedResult], min_gain: float = 0.05) -> list[Gate]:
    """Directional Table-1 checks on medians over seeds."""
    gates = []
    rows = ("baseline",) + tuple(m for m in TABLE1_MODES if m in results[0].reports)
    med = {r: float(np.median([s.wer(r) for s in results])) for r in rows}
    if "cycle" in med:
        gains = [(s.wer("baseline") - s.wer("cycle")) / max(s.wer("baseline"), 1e-12) for s in results]
        g = float(np.median(gains))
        gates.append(Gate("cycle improves on baseline", g >= min_gain,
                          f"median relative WER gain {100 * g:.1f}% (need >= {100 * min_gain:.0f}%)"))
    if "cycle" in med and "ce1" in med:
        gates.append(Gate("cycle <= CE 1-best", med["cycle"] <= med["ce1"],
                          f"median WER cycle {100 * med['cycle']:.1f}% vs CE 1-best {100 * med['ce1']:.1f}%"))
    if "oracle" in med:
        others = {r: v for r, v in med.items() if r != "oracle"}
        gates.append(Gate("oracle lowest", all(med["oracle"] < v for v in others.values()),
                          f"median WER oracle {100 * med['oracle']:.1f}% vs best other "
                          f"{100 * min(others.values()):.1f}%"))
    return gates


def table2_gates(results: list[SeedResult], max_degradation: float = 0.02, min_improved: int = 2) -> list[Gate]:
    """LM fusion must not degrade any seed by more than 2% relative and must help on 2 seeds."""
    rel = [(s.wer("cycle+lm") - s.wer("cycle")) / max(s.wer("cycle"), 1e-12) for s in results
           if "cycle+lm" in s.reports]
    if not rel:
        return []
    worst = max(rel)
    improved = sum(r < 0 for r in rel)
    return [
        Gate("fusion degrades <= 2%", worst <= max_degradation, f"worst relative WER change {100 * worst:+.1f}%"),
        Gate("fusion helps on >= 2 seeds", improved >= min_improved, f"improved on {improved}/{len(rel)} seeds"),
    ]


def format_table(results: list[SeedResult], rows) -> str:
    rows = [r for r in rows if r in results[0].reports]
    seeds = [s.seed for s in results]
    head = f"{'method':<30}{'CER%':>7}{'WER%':>7}  " + "  ".join(f"WER s{s}" for s in seeds)
    lines = [head, "-" * len(head)]
    for r in rows:
        cer = np.median([s.reports[r].cer for s in results])
        wer = np.median([s.reports[r].wer for s in results])
        per = "  ".join(f"{100 * s.reports[r].wer:>6.1f}" for s in results)
        label = ROW_LABELS.get(r, r.replace("+lm", " + LM fusion"))
        if r.endswith("+lm"):
            label = ROW_LABELS[r[:-3]].split(" (")[0] + " + LM fusion"
        lines.append(f"{label:<30}{100 * cer:>7.1f}{100 * wer:>7.1f}  {per}")
    lines.append("(CER/WER columns are medians over seeds)")
    return "\n".join(lines)


def format_gates(gates: list[Gate]) -> str:
    return "\n".join(f"[{'PASS' if g.passed else 'FAIL'}] {g.name}: {g.detail}" for g in gates)


def write_outputs(results: list[SeedResult], out_dir, gates1, gates2) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t1 = format_table(results, ("baseline",) + TABLE1_MODES) + "\n\n" + format_gates(gates1) + "\n"
    (out / "table1.txt").write_text(t1, encoding="utf-8")
    if gates2:
        t2 = format_table(results, ("baseline", "baseline+lm", "cycle", "cycle+lm")) + "\n\n" + \
            format_gates(gates2) + "\n"
        (out / "table2.txt").write_text(t2, encoding="utf-8")
    for s in results:
        for mode, curve in s.curves.items():
            if isinstance(curve, MetricsLog) and len(curve):
                export_curves(curve, out / f"curve_{mode}_seed{s.seed}.csv")
    summary = {"seeds": [s.to_dict() for s in results],
               "gates": [{"name": g.name, "passed": g.passed, "detail": g.detail} for g in gates1 + gates2]}
    (out / "results.json").write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")


def reproduce(cfg: RunConfig, seeds=(0, 1, 2), modes=TABLE1_MODES, with_lm: bool = True, out_dir=None, log=None):
    """Run every seed; returns ``(results, table-1 gates, table-2 gates)``."""
    results = [run_seed(cfg, s, modes, with_lm, log) for s in seeds]
    gates1 = table1_gates(results)
    gates2 = table2_gates(results) if with_lm else []
    if out_dir is not None:
        write_outputs(results, out_dir, gates1, gates2)
    return results, gates1, gates2
