from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class Vocabulary:
    """Token inventory; ``blank_id`` and ``eos_id`` are ordinary indices into ``tokens``."""

    tokens: tuple[str, ...]
    blank_id: int = 0
    eos_id: int = -1

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if self.eos_id < 0:
            object.__setattr__(self, "eos_id", len(tokens) + self.eos_id)
        if len(set(tokens)) != len(tokens):
            raise ContractError("token strings must be unique")
        if self.blank_id == self.eos_id:
            raise ContractError("blank_id and eos_id must differ")
        if not (0 <= self.blank_id < len(tokens) and 0 <= self.eos_id < len(tokens)):
            raise ContractError("blank_id and eos_id must index into tokens")

    @classmethod
    def toy(cls, n: int) -> Vocabulary:
        """Blank at 0, ``n`` lowercase letters, EOS last."""
        letters = [chr(ord("a") + i) if i < 26 else f"t{i}" for i in range(n)]
        return cls(tuple(["<b>"] + letters + ["<eos>"]), blank_id=0, eos_id=n + 1)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def content_ids(self) -> list[int]:
        """Ids that may appear in a transcript."""
        return [i for i in range(self.size) if i not in (self.blank_id, self.eos_id)]

    def encode(self, symbols) -> list[int]:
        index = {t: i for i, t in enumerate(self.tokens)}
        return [index[s] for s in symbols]

    def decode(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "blank_id": self.blank_id, "eos_id": self.eos_id}

    @classmethod
    def from_dict(cls, d: dict) -> Vocabulary:
        return cls(tuple(d["tokens"]), blank_id=d["blank_id"], eos_id=d["eos_id"])


@dataclass
class Alignment:
    """One symbol (possibly blank) per encoder frame."""

    ids: np.ndarray
    frame_logprob: np.ndarray | None = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)

    def __len__(self) -> int:
        return len(self.ids)

    def key(self) -> bytes:
        return self.ids.tobytes()

    def logprob(self) -> float | None:
        return None if self.frame_logprob is None else float(np.sum(self.frame_logprob))


@dataclass
class TriggerMask:
    """Token-to-frame map: ``rows[u]`` marks the frames token ``u`` pools from.

    There is one row per collapsed token plus a final EOS row. With no
    expansion the rows partition the frames, which means the EOS row is
    empty when the last token starts on the final frame; use
    :meth:`attention_rows` for a mask where every row has support.
    """

    rows: np.ndarray
    boundaries: list[int]
    expansion: int = 0

    @property
    def num_frames(self) -> int:
        return self.rows.shape[1]

    def attention_rows(self) -> np.ndarray:
        rows = self.rows.copy()
        if not rows[-1].any():
            t = self.num_frames
            rows[-1, max(0, t - 1 - self.expansion) :] = True
        return rows


@dataclass(frozen=True)
class EsaConfig:
    tau: float = 0.9
    num_samples: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ContractError(f"tau must lie in (0, 1], got {self.tau}")
        if self.num_samples < 1:
            raise ContractError(f"num_samples must be >= 1, got {self.num_samples}")

