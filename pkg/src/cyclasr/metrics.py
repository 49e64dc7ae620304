"""Levenshtein scoring (CER/WER), transcript files and learning-curve export."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError, InputError

logger = logging.getLogger(__name__)


def edit_distance(ref: Sequence, hyp: Sequence) -> tuple[int, int, int, int]:
    """Unit-cost Levenshtein alignment of ``hyp`` against ``ref``.

    Returns ``(distance, substitutions, insertions, deletions)``. When several
    alignments are optimal the backtrace prefers a substitution (or match)
    over a deletion, and a deletion over an insertion.
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        r = ref[i - 1]
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (r != hyp[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    i, j = n, m
    s = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += int(ref[i - 1] != hyp[j - 1])
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return int(d[n, m]), s, ins, dels


def words(text: str) -> list[str]:
    return [w for w in text.split(" ") if w]


@dataclass
class ScoreReport:
    """Corpus-level error counts for ``unit`` plus both error rates (as fractions)."""

    unit: str
    substitutions: int
    insertions: int
    deletions: int
    ref_length: int
    cer: float
    wer: float

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self) -> float:
        return self.cer if self.unit == "char" else self.wer

    def format_table(self) -> str:
        head = f"{'unit':<6}{'sub':>6}{'ins':>6}{'del':>6}{'ref':>7}{'CER%':>8}{'WER%':>8}"
        row = (f"{self.unit:<6}{self.substitutions:>6}{self.insertions:>6}{self.deletions:>6}"
               f"{self.ref_length:>7}{100 * self.cer:>8.1f}{100 * self.wer:>8.1f}")
        return head + "\n" + row

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _totals(hyps: Mapping[str, str], refs: Mapping[str, str], split) -> tuple[int, int, int, int]:
    s = i = d = n = 0
    for uid, ref in refs.items():
        r = split(ref)
        if uid not in hyps:
            logger.warning("no hypothesis for %s; counted as full deletion", uid)
            d += len(r)
            n += len(r)
            continue
        _, s1, i1, d1 = edit_distance(r, split(hyps[uid]))
        s, i, d, n = s + s1, i + i1, d + d1, n + len(r)
    return s, i, d, n


def score_corpus(hyps: Mapping[str, str], refs: Mapping[str, str], unit: str = "word") -> ScoreReport:
    """Corpus error rates: total edits over total reference length."""
    if unit not in ("char", "word"):
        raise InputError(f"unit must be 'char' or 'word', got {unit!r}")
    if not refs:
        raise InputError("reference corpus is empty")
    cs, ci, cd, cn = _totals(hyps, refs, list)
    ws, wi, wd, wn = _totals(hyps, refs, words)
    cer = (cs + ci + cd) / cn if cn else float(cs + ci + cd > 0)
    wer = (ws + wi + wd) / wn if wn else float(ws + wi + wd > 0)
    if unit == "char":
        return ScoreReport(unit, cs, ci, cd, cn, cer, wer)
    return ScoreReport(unit, ws, wi, wd, wn, cer, wer)


# ---------------------------------------------------------------------------
# transcript files: "id<TAB>text" per line
# ---------------------------------------------------------------------------


def read_transcripts(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise FormatError(f"{path}:{lineno}: expected 'id<TAB>text'")
        out[parts[0]] = parts[1]
    return out


def write_transcripts(items: Mapping[str, str], path) -> None:
    Path(path).write_text("".join(f"{k}\t{v}\n" for k, v in items.items()), encoding="utf-8")


def format_decoding(uid: str, text: str, score: float) -> str:
    return f"{uid}\t{text}\t{score:.6f}"


# ---------------------------------------------------------------------------
# learning curves
# ---------------------------------------------------------------------------

CURVE_COLUMNS = ("epoch", "cycle_loss", "val_acc", "val_cer", "val_wer")


@dataclass
class EpochMetrics:
    epoch: int
    cycle_loss: float = float("nan")
    val_acc: float = float("nan")
    val_cer: float = float("nan")
    val_wer: float = float("nan")


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)

    def append(self, row: EpochMetrics) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.rows]


def export_curves(log: MetricsLog, path, plot: bool = False) -> Path:
    """Write one CSV row per epoch (columns in ``CURVE_COLUMNS``); optionally a PNG next to it."""
    if not len(log):
        raise InputError("metrics log is empty")
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for r in log.rows:
            w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in CURVE_COLUMNS[1:]])
    if plot:
        try:
            _plot_curves(log, path.with_suffix(".png"))
        except Exception as exc:  # plotting must never change the outcome
            logger.warning("could not render learning curve: %s", exc)
    return path


def read_curves(path) -> MetricsLog:
    log = MetricsLog()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CURVE_COLUMNS:
            raise FormatError(f"{path}: unexpected header {header}")
        for row in reader:
            log.append(EpochMetrics(int(row[0]), *(float(x) for x in row[1:])))
    return log


def _plot_curves(log: MetricsLog, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax1 = plt.subplots(figsize=(5, 3.2))
    epochs = log.column("epoch")
    ax1.plot(epochs, log.column("cycle_loss"), "o-", color="tab:blue")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("consistency loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, log.column("val_acc"), "s--", color="tab:red")
    ax2.set_ylabel("validation accuracy", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
