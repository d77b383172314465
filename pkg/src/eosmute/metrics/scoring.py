"""Attack and defence power measurements: ∅, ASL, BLEU′, WER and α."""
import logging
import math
import re
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Union

import jiwer
from sacrebleu.metrics import BLEU

from ..errors import DomainError
from ..schema.metrics import METRIC_NAMES, EvalRecord, MetricBundle, MetricDelta
from ..schema.victim import TranscriptionResult

logger = logging.getLogger(__name__)

Words = Union[str, Sequence[str]]

# |α_base| below this leaves α_% undefined
UNDEFINED_BASE = 1e-12

_PUNCT = re.compile(r"[^\w\s']|(?<!\w)'|'(?!\w)")


def normalize_words(words: Words, normalize: bool = True) -> List[str]:
    """Split into words; lowercase and strip punctuation when normalize is set"""
    text = words if isinstance(words, str) else " ".join(words)
    if normalize:
        text = _PUNCT.sub(" ", text.lower())
    return text.split()


BLEU_SMOOTHING = 1e-9
BLEU_NOTE = (
    f"bleu: sacrebleu sentence BLEU on whitespace words, up to 4-grams, effective order "
    f"(hypotheses shorter than 4 words use fewer n-gram orders), floor smoothing {BLEU_SMOOTHING:g} "
    f"for zero n-gram counts; short hypotheses score higher than under plain 4-gram BLEU"
)


@lru_cache(maxsize=1)
def _sentence_bleu() -> BLEU:
    return BLEU(tokenize="none", smooth_method="floor", smooth_value=BLEU_SMOOTHING, effective_order=True)


def _mean(values: Sequence[float]) -> float:
    # fsum makes the mean independent of example order
    return math.fsum(values) / len(values)


def empty_rate(results: Sequence[TranscriptionResult]) -> float:
    if not results:
        raise DomainError("empty_rate needs at least one transcription")
    return _mean([1.0 if r.is_empty else 0.0 for r in results])


def avg_seq_len(results: Sequence[TranscriptionResult]) -> float:
    if not results:
        raise DomainError("avg_seq_len needs at least one transcription")
    return _mean([float(len(r.token_ids)) for r in results])


def wer(hypothesis: Words, reference: Words, normalize: bool = True) -> float:
    """Word-level edit distance over reference length; not clipped at 1"""
    ref = normalize_words(reference, normalize)
    if not ref:
        raise DomainError("wer needs a non-empty reference")
    hyp = normalize_words(hypothesis, normalize)
    if not hyp:
        return 1.0
    return float(jiwer.wer(" ".join(ref), " ".join(hyp)))


def bleu_prime(hypothesis: Words, reference: Words, normalize: bool = True) -> float:
    """Sentence BLEU in [0, 1], defined as 0 for an empty hypothesis"""
    ref = normalize_words(reference, normalize)
    if not ref:
        raise DomainError("bleu_prime needs a non-empty reference")
    hyp = normalize_words(hypothesis, normalize)
    if not hyp:
        return 0.0
    score = _sentence_bleu().sentence_score(" ".join(hyp), [" ".join(ref)]).score / 100.0
    return min(1.0, max(0.0, score))


def bundle(records: Sequence[EvalRecord], normalize: bool = True) -> MetricBundle:
    if not records:
        raise DomainError("bundle needs at least one evaluation record")

    transcriptions = [r.transcription for r in records]
    return MetricBundle(
        empty_rate=empty_rate(transcriptions),
        asl=avg_seq_len(transcriptions),
        bleu=_mean([bleu_prime(r.transcription.text, r.reference, normalize) for r in records]),
        wer=_mean([wer(r.transcription.text, r.reference, normalize) for r in records]),
        n_examples=len(records),
    )


def _delta(a: Optional[float], b: Optional[float]) -> Optional[float]:
    if a is None or b is None:
        return None
    return a - b


def attack_power(attacked: MetricBundle, clean: MetricBundle) -> MetricDelta:
    """attacked - clean for every metric (difference of dataset means)"""
    return MetricDelta(**{name: _delta(getattr(attacked, name), getattr(clean, name))
                          for name in METRIC_NAMES})


def retained_power(alpha_d: MetricDelta, alpha_base: MetricDelta) -> Dict[str, Optional[float]]:
    """100 * α_d / α_base per metric; None where α_base is (numerically) zero"""
    pct: Dict[str, Optional[float]] = {}
    for name in METRIC_NAMES:
        d, b = getattr(alpha_d, name), getattr(alpha_base, name)
        if d is None or b is None or abs(b) < UNDEFINED_BASE:
            pct[name] = None
        else:
            pct[name] = 100.0 * (d / b)
    return pct
