"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .errors import InputError
from .vocab import Vocab


def check_feature_list(X, feat_dim: int | None = None, min_frames: int = 1) -> list[np.ndarray]:
    """Validate a sequence of ``(T, D)`` feature matrices (ragged ``T`` allowed)."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if X is None or len(X) == 0:
        raise InputError("expected a non-empty list of feature matrices")
    out = []
    for i, x in enumerate(X):
        try:
            arr = check_array(x, dtype=np.float64, ensure_min_samples=min_frames)
        except ValueError as exc:
            raise InputError(f"utterance {i}: {exc}") from None
        if feat_dim is not None and arr.shape[1] != feat_dim:
            raise InputError(f"utterance {i}: expected {feat_dim} features per frame, got {arr.shape[1]}")
        out.append(arr)
    widths = {a.shape[1] for a in out}
    if len(widths) != 1:
        raise InputError(f"feature matrices disagree in width: {sorted(widths)}")
    return out


def check_texts(y, vocab: Vocab | None = None, allow_empty: bool = False) -> list[str]:
    if isinstance(y, str):
        y = [y]
    if y is None or len(y) == 0:
        raise InputError("expected a non-empty list of transcripts")
    texts = []
    for i, t in enumerate(y):
        if not isinstance(t, str):
            raise InputError(f"transcript {i} is not a string")
        if not t and not allow_empty:
            raise InputError(f"transcript {i} is empty")
        if vocab is not None:
            vocab.encode(t)
        texts.append(t)
    return texts


def check_consistent_length(*seqs) -> None:
    lengths = {len(s) for s in seqs if s is not None}
    if len(lengths) > 1:
        raise InputError(f"inputs have inconsistent numbers of items: {sorted(lengths)}")


def check_random_state(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
