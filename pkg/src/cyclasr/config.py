"""Run configuration: documented defaults, flat ``key = value`` files, flag overrides."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


def _opt(default, help: str, source: str = "desk-scale choice"):
    return field(default=default, metadata={"help": help, "source": source})


@dataclass
class RunConfig:
    # reproducibility
    seed: int = _opt(0, "master random seed")
    threads: int = _opt(1, "worker cap; execution is sequential, so 1 is the only effective value")
    # synthetic corpus
    n_paired: int = _opt(50, "paired (audio + text) utterances")
    n_unpaired: int = _opt(200, "audio-only utterances")
    n_text: int = _opt(300, "text-only sentences for the language model")
    n_val: int = _opt(100, "validation utterances")
    n_eval: int = _opt(100, "evaluation utterances")
    letters: str = _opt("abcdefgh", "character inventory (space is added as word separator)")
    feat_dim: int = _opt(12, "feature dimension")
    dur_min: int = _opt(5, "minimum frames per character")
    dur_max: int = _opt(7, "maximum frames per character")
    noise_std: float = _opt(0.05, "frame noise standard deviation")
    speaker_offset_std: float = _opt(0.5, "per-utterance speaker offset deviation")
    words_min: int = _opt(2, "minimum words per utterance")
    words_max: int = _opt(3, "maximum words per utterance")
    world_seed: int = _opt(0, "seed of the prototypes, lexicon and word bigrams")
    # ASR model
    enc_units: int = _opt(32, "ASR encoder BLSTM cells per direction")
    dec_units: int = _opt(32, "ASR decoder LSTM cells")
    emb_dim: int = _opt(16, "character embedding size")
    att_dim: int = _opt(32, "attention projection size")
    att_filters: int = _opt(4, "location-attention convolution filters")
    att_width: int = _opt(5, "location-attention convolution width (odd)")
    # TTE model
    tte_enc_units: int = _opt(16, "TTE encoder BLSTM cells per direction")
    tte_conv_channels: int = _opt(32, "TTE encoder convolution channels")
    tte_prenet_units: int = _opt(8, "TTE prenet width (a narrow bottleneck)")
    tte_dec_units: int = _opt(64, "TTE decoder LSTM cells")
    tte_postnet_channels: int = _opt(32, "TTE postnet channels")
    dropout: float = _opt(0.5, "TTE dropout rate", "reference recipe: dropout probability 0.5")
    zoneout: float = _opt(0.1, "TTE decoder zoneout rate", "reference recipe: zoneout probability 0.1")
    stop_threshold: float = _opt(0.75, "TTE free-running stop threshold", "reference recipe: threshold 0.75")
    # language model
    lm_units: int = _opt(64, "LM LSTM cells")
    lm_epochs: int = _opt(30, "LM training epochs")
    lm_lr: float = _opt(1e-2, "LM learning rate")
    # pre-training
    batch_size: int = _opt(10, "minibatch size for every trainer")
    clip_norm: float = _opt(5.0, "global gradient-norm clip")
    sup_epochs: int = _opt(100, "supervised ASR pre-training epochs")
    sup_lr: float = _opt(3e-3, "supervised pre-training learning rate")
    tte_epochs: int = _opt(200, "TTE training epochs")
    tte_lr: float = _opt(3e-3, "TTE learning rate")
    # alternating training
    cycle_epochs: int = _opt(6, "epochs over the unpaired set", "reference recipe: 6th-epoch model")
    cycle_lr: float = _opt(1e-3, "step size for unpaired updates")
    alt_sup_lr: float = _opt(1e-3, "step size for paired updates during alternating training")
    n_samples: int = _opt(5, "samples per utterance (also k for ce5)", "reference recipe: five sampled sequences")
    ce_weight: float = _opt(0.1, "pseudo-label CE weight", "reference recipe: CE loss weighted by 0.1")
    baseline: str = _opt("leave_one_out", "REINFORCE baseline: leave_one_out or mean")
    paired_steps: int = _opt(1, "paired batches per round")
    unpaired_steps: int = _opt(1, "unpaired batches per round")
    # decoding
    beam: int = _opt(20, "beam width", "reference recipe: beam size 20")
    min_ratio: float = _opt(0.2, "minimum output length / encoder length", "reference recipe: 0.2")
    max_ratio: float = _opt(0.8, "maximum output length / encoder length", "reference recipe: 0.8")
    lm_weight: float = _opt(0.3, "shallow-fusion weight")
    val_beam: int = _opt(1, "beam width for per-epoch validation decoding")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dur_min < 1 or self.dur_max < self.dur_min:
            raise ConfigError("duration range must satisfy 1 <= dur_min <= dur_max")
        if not 1 <= self.words_min <= self.words_max:
            raise ConfigError("word range must satisfy 1 <= words_min <= words_max")
        if self.beam < 1 or self.n_samples < 1 or self.batch_size < 1:
            raise ConfigError("beam, n_samples and batch_size must be >= 1")
        if not 0 <= self.min_ratio < self.max_ratio:
            raise ConfigError("length ratios must satisfy 0 <= min_ratio < max_ratio")
        if not 0 < self.stop_threshold < 1:
            raise ConfigError("stop_threshold must lie in (0, 1)")
        if self.baseline not in ("leave_one_out", "mean"):
            raise ConfigError("baseline must be leave_one_out or mean")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def updated(self, **overrides) -> "RunConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(sorted(unknown))}")
        return RunConfig(**{**self.to_dict(), **overrides})

    @classmethod
    def describe(cls) -> str:
        """One line per key with default and provenance, used in ``--help`` text."""
        lines = []
        for f in fields(cls):
            lines.append(f"  {f.name} = {f.default!r}: {f.metadata['help']} [{f.metadata['source']}]")
        return "\n".join(lines)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key: str, raw: str):
    kind = _TYPES.get(key)
    if kind is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment; blank lines are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        try:
            out[key] = coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def load_config(path=None, **overrides) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (flags win)."""
    values = parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig().updated(**values)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
