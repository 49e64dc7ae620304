"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic     8 bytes  b"CYCASRCK"
    version   uint32
    meta_len  uint64, followed by that many bytes of UTF-8 JSON (sorted keys)
    count     uint32
    per tensor, in name order:
        name_len uint32, name (UTF-8)
        ndim     uint32, shape as ndim x uint64
        values   float64 little-endian, row-major

Because the JSON is canonical and tensors are written in sorted order,
``save(load(f))`` reproduces ``f`` byte for byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"CYCASRCK"
VERSION = 1


def _canonical_json(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = _canonical_json(meta or {})
    parts += [struct.pack("<Q", len(blob)), blob, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")  # keeps 0-d shapes, unlike ascontiguousarray
        key = name.encode("utf-8")
        parts += [struct.pack("<I", len(key)), key, struct.pack("<I", arr.ndim)]
        parts += [struct.pack("<Q", d) for d in arr.shape]
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    view = memoryview(buf)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("checkpoint is truncated")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(8)) != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<Q", take(8))
    try:
        meta = json.loads(bytes(take(meta_len)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint metadata: {exc}") from None
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = bytes(take(n)).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(bytes(take(8 * size)), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(view):
        raise FormatError("trailing bytes after checkpoint payload")
    return tensors, meta


def save(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        return loads(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# model helpers
# ---------------------------------------------------------------------------


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def save_model(path, model, kind: str, extra_tensors: dict | None = None, extra_meta: dict | None = None) -> None:
    """Write ``model`` (ASR, TTE or LM) with its configuration and vocabulary."""
    tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    for k, v in (extra_tensors or {}).items():
        tensors[k] = v
    meta = {"kind": kind, "config": model.config.to_dict(), "chars": "".join(model.vocab.chars)}
    meta.update(extra_meta or {})
    save(path, tensors, meta)


def load_model(path, expected_kind: str | None = None):
    """Rebuild a model from :func:`save_model` output; returns ``(model, tensors, meta)``."""
    from .asr import ASRConfig, ASRModel
    from .lm import CharLM, LMConfig
    from .tte import TTEConfig, TTEModel
    from .vocab import Vocab

    tensors, meta = load(path)
    kind = meta.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise FormatError(f"{path}: expected a {expected_kind} checkpoint, found {kind!r}")
    builders = {"asr": (ASRModel, ASRConfig), "tte": (TTEModel, TTEConfig), "lm": (CharLM, LMConfig)}
    if kind not in builders:
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    cls, cfg_cls = builders[kind]
    model = cls(cfg_cls.from_dict(meta["config"]), Vocab(meta["chars"]), np.random.default_rng(0))
    model.load_state_dict({k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")})
    return model, tensors, meta
