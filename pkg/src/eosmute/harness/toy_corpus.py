"""Synthetic corpus: each content token is a short tone pair, transcripts are token words."""
import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.signal.windows import hann

from ..audio.core import save_wav, seconds_to_samples
from ..schema.audio import DEFAULT_SAMPLE_RATE, Waveform
from ..schema.harness import SPLITS, DatasetManifest, Example, ManifestEntry
from ..victim.toy import make_vocabulary
from .manifest import write_manifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"


class ToyCorpusConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = 0
    vocab_size: int = Field(default=16, ge=4)
    n_train: int = Field(default=500, ge=0)
    n_validation: int = Field(default=150, ge=0)
    n_test: int = Field(default=250, ge=0)
    min_tokens: int = Field(default=2, ge=1)
    max_tokens: int = Field(default=6, ge=1)
    tone_seconds: float = Field(default=0.12, gt=0)
    gap_seconds: float = Field(default=0.05, ge=0)
    lead_seconds: Tuple[float, float] = (0.05, 0.3)
    amplitude: Tuple[float, float] = (0.2, 0.5)
    tail_seconds: float = Field(default=0.1, ge=0)
    noise_std: float = Field(default=2e-3, ge=0)
    sample_rate: int = DEFAULT_SAMPLE_RATE

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.max_tokens < self.min_tokens:
            raise ValueError("max_tokens must be >= min_tokens")
        _, top = tone_pair(self.vocab_size - 3)
        if top >= self.sample_rate / 2:
            raise ValueError(f"vocab_size {self.vocab_size} puts tones above Nyquist")
        return self

    def split_sizes(self) -> List[Tuple[str, int]]:
        return list(zip(SPLITS, (self.n_train, self.n_validation, self.n_test)))


def tone_pair(index: int) -> Tuple[float, float]:
    """Frequencies (Hz) rendering the index-th content token"""
    return 250.0 + 130.0 * index, 4000.0 + 110.0 * index


def render_tokens(content_indices: List[int], rng: np.random.Generator, cfg: ToyCorpusConfig) -> np.ndarray:
    sr = cfg.sample_rate
    n_tone = seconds_to_samples(cfg.tone_seconds, sr)
    t = np.arange(n_tone) / sr
    envelope = hann(n_tone, sym=False)
    amp = rng.uniform(*cfg.amplitude)

    pieces = [np.zeros(seconds_to_samples(rng.uniform(*cfg.lead_seconds), sr))]
    gap = np.zeros(seconds_to_samples(cfg.gap_seconds, sr))
    for index in content_indices:
        f1, f2 = tone_pair(index)
        pieces.append(0.5 * amp * envelope * (np.sin(2 * np.pi * f1 * t) + np.sin(2 * np.pi * f2 * t)))
        pieces.append(gap)
    pieces.append(np.zeros(seconds_to_samples(cfg.tail_seconds, sr)))

    samples = np.concatenate(pieces)
    samples = samples + rng.normal(0.0, cfg.noise_std, samples.shape[0])
    return np.clip(samples, -1.0, 1.0)


def generate_toy_corpus(cfg: ToyCorpusConfig = ToyCorpusConfig()) -> List[Example]:
    """Deterministic in-memory corpus: train, then validation, then test examples"""
    vocab = make_vocabulary(cfg.vocab_size)
    content = vocab.content_ids
    rng = np.random.default_rng(cfg.seed)

    examples: List[Example] = []
    for split, count in cfg.split_sizes():
        for _ in range(count):
            n_tok = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
            picks = [int(i) for i in rng.integers(0, len(content), n_tok)]
            samples = render_tokens(picks, rng, cfg)
            examples.append(Example(
                waveform=Waveform(samples=samples, sample_rate=cfg.sample_rate),
                text=vocab.decode([content[i] for i in picks]),
                split=split,
            ))
    logger.info(f"Generated toy corpus seed={cfg.seed}: {len(examples)} utterances")
    return examples


def write_toy_corpus(directory: Union[str, Path], cfg: ToyCorpusConfig = ToyCorpusConfig()) -> DatasetManifest:
    """Write 16-bit PCM WAVs plus manifest.jsonl; audio paths are relative to directory"""
    directory = Path(directory)
    entries: List[ManifestEntry] = []
    counters = {s: 0 for s in SPLITS}
    for example in generate_toy_corpus(cfg):
        rel = f"audio/{example.split}_{counters[example.split]:04d}.wav"
        counters[example.split] += 1
        save_wav(example.waveform, directory / rel)
        entries.append(ManifestEntry(audio=rel, text=example.text, split=example.split))

    manifest = DatasetManifest(entries=entries, root=str(directory.resolve()))
    write_manifest(manifest, directory / MANIFEST_NAME)
    logger.info(f"Toy corpus written to {directory}: {counters}")
    return manifest
