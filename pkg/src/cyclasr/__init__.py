"""Cycle-consistency training for attention-based speech recognition, in numpy.

The package contains a small reverse-mode autodiff engine, an attention
encoder-decoder recogniser, a text-to-encoder (TTE) synthesis model, a
character language model, REINFORCE-based cycle training, a synthetic corpus
generator, CER/WER scoring and a command-line driver.
"""
from .asr import ASRConfig, ASRModel
from .config import RunConfig, load_config
from .cycle import MODES, ScheduleConfig, cycle_step, train_alternating
from .data import SynthSpec, Utterance, batchify, synth_corpus, synth_generate
from .errors import (
    ConfigError, ContractError, CyclasrError, FormatError, GradientCheckError, InputError, ShapeError,
    StateError,
)
from .estimators import ASRTranscriber, CharLanguageModel, CycleConsistencyASR, TextToEncoder
from .lm import CharLM, LMConfig, lm_train
from .metrics import ScoreReport, edit_distance, score_corpus
from .training import evaluate, train_supervised
from .tte import TTEConfig, TTEModel, tte_train
from .vocab import Vocab

__version__ = "0.1.0"

__all__ = [
    "ASRConfig", "ASRModel", "ASRTranscriber", "CharLM", "CharLanguageModel", "ConfigError", "ContractError",
    "CycleConsistencyASR", "CyclasrError", "FormatError", "GradientCheckError", "InputError", "LMConfig", "MODES",
    "RunConfig", "ScheduleConfig", "ScoreReport", "ShapeError", "StateError", "SynthSpec", "TTEConfig", "TTEModel",
    "TextToEncoder", "Utterance", "Vocab", "batchify", "cycle_step", "edit_distance", "evaluate", "lm_train",
    "load_config", "score_corpus", "synth_corpus", "synth_generate", "train_alternating", "train_supervised",
    "tte_train",
]
