"""Shared fixtures: small toy models, in-memory corpora and stub victims."""
from typing import List

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from eosmute.harness.manifest import ExperimentData
from eosmute.harness.toy_corpus import ToyCorpusConfig, generate_toy_corpus
from eosmute.schema.audio import FrontendConfig, Waveform
from eosmute.schema.harness import Example
from eosmute.services.artifact_store import ArtifactStore
from eosmute.victim.base import VictimModel
from eosmute.victim.pretraining import PretrainConfig, pretrain
from eosmute.victim.registry import ModelRegistry
from eosmute.victim.toy import ToyModelConfig, make_toy_model, make_vocabulary

SMALL_CONFIG = ToyModelConfig(
    vocab_size=8,
    n_state=32,
    n_head=2,
    n_audio_layer=1,
    n_text_layer=1,
    max_positions=32,
    frontend=FrontendConfig(chunk_seconds=2.0),
)

SMALL_CORPUS = ToyCorpusConfig(vocab_size=8, n_train=8, n_validation=4, n_test=6)


class QuadraticVictim(VictimModel):
    """-log P(eos) is increasing in q = Σ (a_i - c_i)² over the first len(c) samples"""

    def __init__(self, centre):
        super().__init__(make_vocabulary(4), FrontendConfig())
        self.centre = torch.tensor(np.asarray(centre, dtype=np.float64))

    @property
    def identity(self) -> str:
        return "quadratic@test"

    def encode(self, samples: torch.Tensor) -> torch.Tensor:
        head = samples[:, : self.centre.shape[0]]
        return ((head - self.centre) ** 2).sum(dim=-1, keepdim=True)

    def decode(self, features: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        batch, positions = tokens.shape
        mask = torch.ones(self.vocabulary.size, dtype=torch.float64)
        mask[self.vocabulary.eos_id] = 0.0
        logits = (features.reshape(-1, 1, 1) * mask).expand(batch, positions, -1)
        return F.log_softmax(logits, dim=-1)


class TriggerVictim(VictimModel):
    """Says `words` times 'alfa', or nothing once the first 10 ms exceed `threshold` in magnitude"""

    differentiable = False

    def __init__(self, threshold: float = 0.01, words: int = 2, name: str = "trigger"):
        super().__init__(make_vocabulary(4), FrontendConfig())
        self.threshold = threshold
        self.words = words
        self.name = name

    @property
    def identity(self) -> str:
        return f"{self.name}@test"

    def encode(self, samples: torch.Tensor) -> torch.Tensor:
        return samples[:, :160].abs().amax(dim=-1, keepdim=True)

    def decode(self, features: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        batch, positions = tokens.shape
        triggered = (features.reshape(-1, 1) > self.threshold).expand(batch, positions)
        speaking = (torch.arange(positions) < self.words).unsqueeze(0).expand(batch, positions)
        target = torch.where(triggered | ~speaking, self.vocabulary.eos_id, 2)
        logits = F.one_hot(target, self.vocabulary.size).to(torch.float64) * 10.0
        return F.log_softmax(logits, dim=-1)


def silent_examples(n: int, split: str = "test", seconds: float = 0.5, text: str = "alfa alfa") -> List[Example]:
    samples = np.zeros(int(seconds * 16000))
    return [Example(waveform=Waveform(samples=samples), text=text, split=split) for _ in range(n)]


@pytest.fixture(scope="session")
def small_config() -> ToyModelConfig:
    return SMALL_CONFIG


@pytest.fixture
def toy_model():
    """Untrained small toy model; cheap enough to build per test"""
    return make_toy_model(0, SMALL_CONFIG.vocab_size, SMALL_CONFIG)


@pytest.fixture(scope="session")
def toy_examples() -> List[Example]:
    return generate_toy_corpus(SMALL_CORPUS)


@pytest.fixture(scope="session")
def toy_data(toy_examples) -> ExperimentData:
    return ExperimentData.from_examples(toy_examples)


@pytest.fixture(scope="session")
def full_corpus() -> List[Example]:
    return generate_toy_corpus(ToyCorpusConfig())


@pytest.fixture(scope="session")
def pretrained_toy(full_corpus):
    """toy:42 with the default configuration, pre-trained on the default corpus"""
    model = make_toy_model(42)
    pretrain(model, [ex for ex in full_corpus if ex.split == "train"], PretrainConfig())
    return model


@pytest.fixture
def quadratic_victim():
    centre = np.where(np.arange(160) % 2 == 0, 0.2, -0.2)
    return QuadraticVictim(centre)


@pytest.fixture
def quadratic_data():
    train = silent_examples(8, "train", text="alfa bravo")
    val = silent_examples(4, "validation", text="alfa bravo")
    test = silent_examples(4, "test", text="alfa bravo")
    return ExperimentData(train, val, test)


@pytest.fixture
def trigger_victim():
    return TriggerVictim()


@pytest.fixture
def store(tmp_path) -> ArtifactStore:
    return ArtifactStore(tmp_path / "cache")


@pytest.fixture
def registry(store) -> ModelRegistry:
    """Registry with two small toy models registered under fixed names"""
    reg = ModelRegistry(store=store, model_config=SMALL_CONFIG)
    reg.register("small:0", make_toy_model(0, SMALL_CONFIG.vocab_size, SMALL_CONFIG))
    reg.register("small:1", make_toy_model(1, SMALL_CONFIG.vocab_size, SMALL_CONFIG))
    return reg
