"""The ASR contract every victim model satisfies."""
import logging
from abc import ABC, abstractmethod
from typing import Callable, List, Sequence

import numpy as np
import torch

from ..errors import CapabilityError, ContractError, DomainError
from ..schema.audio import FrontendConfig, Waveform
from ..schema.victim import TranscriptionResult, Vocabulary

logger = logging.getLogger(__name__)

Scorer = Callable[[Sequence[int]], torch.Tensor]
LossFn = Callable[[Scorer], torch.Tensor]


def stack_audio(rows: Sequence[torch.Tensor]) -> torch.Tensor:
    """Right-pad 1-D sample tensors with zeros into a (B, N) batch"""
    width = max(int(r.shape[-1]) for r in rows)
    return torch.stack([torch.nn.functional.pad(r, (0, width - int(r.shape[-1]))) for r in rows])


class VictimModel(ABC):
    """Teacher-forced scoring, greedy decoding and input gradients.

    Subclasses implement encode/decode on batched tensors; everything else is
    derived here. Implementations must be read-only once built so scoring and
    decoding can run concurrently.
    """

    differentiable: bool = True

    def __init__(self, vocabulary: Vocabulary, frontend: FrontendConfig):
        self.vocabulary = vocabulary
        self.frontend = frontend

    @property
    @abstractmethod
    def identity(self) -> str:
        """name@version"""

    @property
    def max_context(self) -> int:
        """Longest token sequence (prelude included) decode accepts"""
        return 448

    @abstractmethod
    def encode(self, samples: torch.Tensor) -> torch.Tensor:
        """(B, N) float64 audio -> audio features consumed by decode"""

    @abstractmethod
    def decode(self, features: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """(B, P) token ids -> (B, P, V) next-token log-probs"""

    def logprobs(self, samples: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(samples), tokens)

    def as_tensor(self, x: Waveform) -> torch.Tensor:
        if x.sample_rate != self.frontend.sample_rate:
            raise ContractError(
                f"{self.identity} expects {self.frontend.sample_rate} Hz audio, got {x.sample_rate} Hz"
            )
        return torch.tensor(x.samples, dtype=torch.float64)

    def check_prefix(self, prefix: Sequence[int]) -> List[int]:
        prefix = [int(t) for t in prefix]
        bos = self.vocabulary.bos_sequence
        if prefix[: len(bos)] != bos:
            raise ContractError(f"prefix must start with {bos}, got {prefix[: len(bos)]}")
        if len(prefix) > self.max_context:
            raise ContractError(f"prefix longer than the model context ({self.max_context})")
        if any(not 0 <= t < self.vocabulary.size for t in prefix):
            raise ContractError("prefix holds ids outside the vocabulary")
        return prefix

    def sequence_logprobs(self, x: Waveform, prefix: Sequence[int]) -> np.ndarray:
        """(len(prefix), V) log-probs; row t scores the token following prefix[:t + 1]"""
        prefix = self.check_prefix(prefix)
        with torch.no_grad():
            out = self.logprobs(self.as_tensor(x).unsqueeze(0), torch.tensor([prefix]))
        return out[0].numpy()

    def next_token_logprobs(self, x: Waveform, prefix: Sequence[int]) -> np.ndarray:
        return self.sequence_logprobs(x, prefix)[-1]

    def transcribe(self, x: Waveform, max_tokens: int = 224) -> TranscriptionResult:
        return self.transcribe_many([x], max_tokens)[0]

    def transcribe_many(self, waves: Sequence[Waveform], max_tokens: int = 224,
                        batch_size: int = 32) -> List[TranscriptionResult]:
        """Greedy argmax decoding until EOS or max_tokens content tokens"""
        if max_tokens < 1:
            raise DomainError(f"max_tokens must be >= 1, got {max_tokens}")

        results: List[TranscriptionResult] = []
        for start in range(0, len(waves), batch_size):
            chunk = waves[start:start + batch_size]
            with torch.no_grad():
                results.extend(self._greedy(stack_audio([self.as_tensor(w) for w in chunk]), max_tokens))
        return results

    def _greedy(self, samples: torch.Tensor, max_tokens: int) -> List[TranscriptionResult]:
        vocab = self.vocabulary
        special = set(vocab.special_ids)
        cap = min(max_tokens, self.max_context - len(vocab.bos_sequence))
        features = self.encode(samples)
        batch = samples.shape[0]

        tokens = torch.tensor([vocab.bos_sequence] * batch)
        generated: List[List[int]] = [[] for _ in range(batch)]
        first: List[int] = [vocab.eos_id] * batch
        done = [False] * batch

        for step in range(cap):
            nxt = self.decode(features, tokens)[:, -1, :].argmax(dim=-1)
            for i, t in enumerate(nxt.tolist()):
                if done[i]:
                    continue
                if step == 0:
                    first[i] = t
                # a special token other than eos ends the transcription too
                if t in special:
                    done[i] = True
                else:
                    generated[i].append(t)
            if all(done):
                break
            # finished rows keep decoding eos; their output is ignored
            tokens = torch.cat([tokens, nxt.unsqueeze(1)], dim=1)

        return [
            TranscriptionResult(
                token_ids=generated[i],
                text=vocab.decode(generated[i]),
                hit_cap=not done[i],
                first_token_id=first[i],
            )
            for i in range(batch)
        ]

    def input_gradient(self, x: Waveform, loss_fn: LossFn) -> np.ndarray:
        """d loss / d samples, with loss_fn(scorer) built from scorer(prefix) -> (P, V) log-probs"""
        if not self.differentiable:
            raise CapabilityError(f"{self.identity} does not provide input gradients")

        samples = self.as_tensor(x).requires_grad_(True)
        features = self.encode(samples.unsqueeze(0))

        def scorer(prefix: Sequence[int]) -> torch.Tensor:
            return self.decode(features, torch.tensor([self.check_prefix(prefix)]))[0]

        loss = loss_fn(scorer)
        if not torch.is_tensor(loss) or not loss.requires_grad:
            return np.zeros(len(x))
        (grad,) = torch.autograd.grad(loss, samples, allow_unused=True)
        if grad is None:
            return np.zeros(len(x))
        return grad.detach().numpy()
