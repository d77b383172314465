import re
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import ContractError

_WORD = re.compile(r"[^\w\s]")


class Vocabulary(BaseModel):
    """Token strings indexed by id, with the EOS id and the start-of-transcript prelude"""

    model_config = ConfigDict(frozen=True)

    tokens: List[str]
    eos_id: int
    bos_sequence: List[int]

    @model_validator(mode="after")
    def _check_members(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("token strings must be unique")
        if not 0 <= self.eos_id < len(self.tokens):
            raise ValueError(f"eos_id {self.eos_id} is not a token id")
        if not self.bos_sequence:
            raise ValueError("bos_sequence must be non-empty")
        if any(not 0 <= t < len(self.tokens) for t in self.bos_sequence):
            raise ValueError("bos_sequence holds ids outside the vocabulary")
        return self

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def special_ids(self) -> List[int]:
        return sorted(set(self.bos_sequence) | {self.eos_id})

    @property
    def content_ids(self) -> List[int]:
        special = set(self.special_ids)
        return [i for i in range(self.size) if i not in special]

    def _lookup(self) -> Dict[str, int]:
        return {tok.lower(): i for i, tok in enumerate(self.tokens) if i not in self.special_ids}

    def decode(self, token_ids: List[int]) -> str:
        """Render content tokens as space-separated words; special tokens are dropped"""
        special = set(self.special_ids)
        return " ".join(self.tokens[t] for t in token_ids if t not in special)

    def encode(self, text: str) -> List[int]:
        """Map a whitespace-separated transcript onto content token ids"""
        lookup = self._lookup()
        ids = []
        for word in _WORD.sub(" ", text.lower()).split():
            if word not in lookup:
                raise ContractError(f"word '{word}' is not in the vocabulary")
            ids.append(lookup[word])
        return ids


class TranscriptionResult(BaseModel):
    """Greedy transcription of one example.

    token_ids holds the content tokens only (neither bos_sequence nor the
    terminating special token); an empty list means a special token, normally
    EOS, was the first generated token.
    """

    model_config = ConfigDict(frozen=True)

    token_ids: List[int] = Field(default_factory=list)
    text: str = ""
    hit_cap: bool = False
    first_token_id: Optional[int] = None

    @model_validator(mode="after")
    def _check_empty(self):
        if not self.token_ids and self.hit_cap:
            raise ValueError("an empty transcription cannot have hit the token cap")
        return self

    @property
    def is_empty(self) -> bool:
        return not self.token_ids

    def __len__(self) -> int:
        return len(self.token_ids)
