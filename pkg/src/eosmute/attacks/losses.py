"""Complete- and partial-suppression objectives."""
from typing import List, Optional, Sequence, Tuple

import torch

from ..audio.core import splice_snippet
from ..errors import DomainError
from ..schema.attack import AttackSnippet
from ..schema.audio import Waveform
from ..victim.base import VictimModel


def teacher_forced_prefixes(
    model: VictimModel,
    prefix_sources: Optional[Sequence[Sequence[int]]],
    delta: int,
    batch: int,
) -> Tuple[torch.Tensor, List[int]]:
    """Token batch bos ++ src[:T-1] (eos-padded) and the horizon T of each row.

    T = min(delta, |src|), forced to 1 for an empty source.
    """
    vocab = model.vocabulary
    sources = [list(s) for s in prefix_sources] if prefix_sources is not None else [[] for _ in range(batch)]
    horizons = [min(delta, len(src)) if src else 1 for src in sources]
    prefixes = [vocab.bos_sequence + src[: t - 1] for src, t in zip(sources, horizons)]

    width = max(len(p) for p in prefixes)
    tokens = torch.full((batch, width), vocab.eos_id, dtype=torch.long)
    for row, prefix in enumerate(prefixes):
        tokens[row, : len(prefix)] = torch.tensor(prefix)
    return tokens, horizons


def suppression_losses(
    model: VictimModel,
    audio: torch.Tensor,
    prefix_sources: Optional[Sequence[Sequence[int]]] = None,
    delta: int = 1,
) -> torch.Tensor:
    """Per-example -(1/T) Σ_t log P(y_t = eos | audio, bos ++ src[:t-1]) for a (B, N) batch"""
    if delta < 1:
        raise DomainError(f"delta must be >= 1, got {delta}")

    tokens, horizons = teacher_forced_prefixes(model, prefix_sources, delta, audio.shape[0])
    eos_logp = model.logprobs(audio, tokens)[..., model.vocabulary.eos_id]
    start = len(model.vocabulary.bos_sequence) - 1
    return torch.stack([-eos_logp[row, start:start + t].mean() for row, t in enumerate(horizons)])


def _attacked(model: VictimModel, a: AttackSnippet, x: Waveform) -> torch.Tensor:
    return model.as_tensor(splice_snippet(x, a, a.params.position_seconds)).unsqueeze(0)


def complete_suppression_loss(model: VictimModel, a: AttackSnippet, x: Waveform) -> float:
    """-log P(y_1 = eos | a ⊕ x, bos)"""
    with torch.no_grad():
        return float(suppression_losses(model, _attacked(model, a, x))[0])


def partial_suppression_loss(model: VictimModel, a: AttackSnippet, x: Waveform,
                             prefix_source: Sequence[int], delta: int) -> float:
    with torch.no_grad():
        return float(suppression_losses(model, _attacked(model, a, x), [prefix_source], delta)[0])
