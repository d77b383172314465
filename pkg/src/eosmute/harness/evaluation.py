import logging
from typing import List, Optional, Sequence

from ..attacks.trainer import init_snippet
from ..audio.core import splice_snippet
from ..defences.dsp import DefenceChain
from ..metrics.scoring import bundle
from ..schema.attack import AttackSnippet
from ..schema.audio import SnippetParams, Waveform
from ..schema.harness import Example
from ..schema.metrics import EvalRecord, MetricBundle
from ..victim.base import VictimModel

logger = logging.getLogger(__name__)


def baseline_random_snippet(params: SnippetParams, seed: int = 0, sample_rate: int = 16000) -> AttackSnippet:
    """Untrained uniform noise in [-ε, ε]: the baseline every attack is compared with"""
    snippet = init_snippet(params, seed, "uniform", sample_rate)
    return snippet.model_copy(update={"objective": None, "trained_on": None})


def prepare_inputs(examples: Sequence[Example], snippet: Optional[AttackSnippet] = None,
                   defence: Optional[DefenceChain] = None) -> List[Waveform]:
    """d(a ⊕ x), d(x), a ⊕ x or x for every example"""
    waves = [ex.waveform for ex in examples]
    if snippet is not None:
        waves = [splice_snippet(w, snippet, snippet.params.position_seconds) for w in waves]
    if defence is not None:
        waves = [defence(w) for w in waves]
    return waves


def evaluate(model: VictimModel, examples: Sequence[Example], snippet: Optional[AttackSnippet] = None,
             defence: Optional[DefenceChain] = None, max_tokens: int = 224) -> MetricBundle:
    results = model.transcribe_many(prepare_inputs(examples, snippet, defence), max_tokens)
    return bundle([EvalRecord(transcription=r, reference=ex.text) for r, ex in zip(results, examples)])
