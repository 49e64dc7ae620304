"""Character vocabulary with reserved padding, start and end tokens."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

from .errors import FormatError, InputError

PAD, SOS, EOS = "<pad>", "<sos>", "<eos>"
RESERVED = (PAD, SOS, EOS)


class Vocab:
    """Dense token ids: ``<pad>=0``, ``<sos>=1``, ``<eos>=2``, then the characters.

    Model outputs range over ``<eos>`` plus the characters, so output index
    ``k`` corresponds to token id ``k + 2``.
    """

    pad_id, sos_id, eos_id = 0, 1, 2
    offset = 2

    def __init__(self, chars: Iterable[str]):
        chars = list(chars)
        if len(set(chars)) != len(chars):
            raise InputError("duplicate characters in vocabulary")
        for ch in chars:
            if len(ch) != 1:
                raise InputError(f"vocabulary entries must be single characters, got {ch!r}")
        self.chars = chars
        self.tokens = list(RESERVED) + chars
        self._index = {ch: i + len(RESERVED) for i, ch in enumerate(chars)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and other.chars == self.chars

    def __repr__(self) -> str:
        return f"Vocab({''.join(self.chars)!r})"

    @property
    def n_out(self) -> int:
        """Size of the output distribution (characters plus ``<eos>``)."""
        return len(self.chars) + 1

    def encode(self, text: str, eos: bool = True) -> list[int]:
        try:
            ids = [self._index[ch] for ch in text]
        except KeyError as exc:
            raise InputError(f"character {exc.args[0]!r} not in vocabulary") from None
        return ids + [self.eos_id] if eos else ids

    def decode(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == self.eos_id:
                break
            if i >= len(RESERVED):
                out.append(self.tokens[i])
        return "".join(out)

    def check_ids(self, ids: Sequence[int]) -> None:
        for i in ids:
            if not 0 <= int(i) < len(self.tokens):
                raise InputError(f"token id {i} outside vocabulary of size {len(self.tokens)}")

    def save(self, path) -> None:
        Path(path).write_text("".join(tok + "\n" for tok in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:3]) != RESERVED:
            raise FormatError(f"{path}: vocabulary must start with {', '.join(RESERVED)}")
        return cls(lines[3:])
