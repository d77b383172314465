"""Resolve model specs ('toy:<seed>', 'checkpoint:<path>', registered adapters) to victims."""
import logging
import threading
from functools import lru_cache
from typing import Callable, Dict, List, Optional

from ..errors import ConfigurationError
from ..harness.toy_corpus import ToyCorpusConfig, generate_toy_corpus
from ..services.artifact_store import ArtifactStore, get_artifact_store
from ..utils.file_utils import canonical_hash
from .base import VictimModel
from .checkpoint import load_checkpoint, save_checkpoint
from .pretraining import PretrainConfig, pretrain
from .toy import ToyModelConfig, make_toy_model

logger = logging.getLogger(__name__)

ModelFactory = Callable[[str], VictimModel]


class ModelRegistry:
    def __init__(
        self,
        store: Optional[ArtifactStore] = None,
        model_config: ToyModelConfig = ToyModelConfig(),
        pretrain_config: PretrainConfig = PretrainConfig(),
        corpus_config: ToyCorpusConfig = ToyCorpusConfig(),
    ):
        self.store = store
        self.model_config = model_config
        self.pretrain_config = pretrain_config
        self.corpus_config = corpus_config
        self._models: Dict[str, VictimModel] = {}
        self._factories: Dict[str, ModelFactory] = {
            "toy": self._make_toy,
            "checkpoint": lambda path: load_checkpoint(path),
        }
        self._lock = threading.Lock()
        self._spec_locks: Dict[str, threading.Lock] = {}
        self._training_locks: Dict[str, threading.Lock] = {}

    def register(self, name: str, model: VictimModel):
        """Register a ready model under an exact spec name"""
        with self._lock:
            self._models[name] = model

    def register_factory(self, prefix: str, factory: ModelFactory):
        """Register an adapter resolving '<prefix>:<argument>' specs"""
        with self._lock:
            self._factories[prefix] = factory

    def names(self) -> List[str]:
        return sorted(set(self._models) | {f"{p}:" for p in self._factories})

    def resolve(self, spec: str) -> VictimModel:
        with self._lock:
            if spec in self._models:
                return self._models[spec]
            spec_lock = self._spec_locks.setdefault(spec, threading.Lock())

        with spec_lock:
            with self._lock:
                if spec in self._models:
                    return self._models[spec]
            prefix, _, argument = spec.partition(":")
            factory = self._factories.get(prefix)
            if factory is None:
                raise ConfigurationError(f"unknown model '{spec}'; known prefixes: {', '.join(sorted(self._factories))}")
            model = factory(argument)
            with self._lock:
                self._models[spec] = model
        logger.info(f"Resolved model {spec} -> {model.identity}")
        return model

    def training_lock(self, model: VictimModel) -> threading.Lock:
        """Exclusive lock for jobs that train against model"""
        with self._lock:
            return self._training_locks.setdefault(model.identity, threading.Lock())

    def toy_cache_key(self, seed: int) -> str:
        return canonical_hash({
            "seed": seed,
            "model": self.model_config.model_dump(),
            "pretrain": self.pretrain_config.model_dump(),
            "corpus": self.corpus_config.model_dump(),
        })

    def _make_toy(self, argument: str) -> VictimModel:
        try:
            seed = int(argument)
        except ValueError as e:
            raise ConfigurationError(f"toy model spec needs an integer seed, got 'toy:{argument}'") from e

        key = self.toy_cache_key(seed)
        if self.store is not None and self.store.has_checkpoint(key):
            return load_checkpoint(self.store.checkpoint_path(key))

        model = make_toy_model(seed, self.model_config.vocab_size, self.model_config)
        train = [ex for ex in generate_toy_corpus(self.corpus_config) if ex.split == "train"]
        pretrain(model, train, self.pretrain_config)
        if self.store is not None:
            save_checkpoint(model, self.store.checkpoint_path(key))
        return model


@lru_cache
def get_model_registry(cache_dir: Optional[str] = None, pretrain_epochs: Optional[int] = None) -> ModelRegistry:
    """Get the process-wide model registry backed by the artifact store"""
    pretrain_config = PretrainConfig() if pretrain_epochs is None else PretrainConfig(epochs=pretrain_epochs)
    return ModelRegistry(store=get_artifact_store(cache_dir), pretrain_config=pretrain_config)
