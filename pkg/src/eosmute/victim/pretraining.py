"""Supervised pre-training of the toy victim on the toy corpus."""
import logging
import math
import time
from typing import List, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from ..audio.core import seconds_to_samples
from ..errors import ConfigurationError
from ..schema.harness import Example
from ..utils.logging import get_run_logger
from .base import stack_audio
from .toy import ToyVictim

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100


class PretrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=40, ge=0)
    learning_rate: float = Field(default=2e-3, gt=0)
    batch_size: int = Field(default=16, ge=1)
    seed: int = 0
    grad_clip: float = Field(default=1.0, gt=0)
    # Random noise bursts keep random snippets from derailing transcription
    noise_probability: float = Field(default=0.5, ge=0, le=1)
    noise_max_amplitude: float = Field(default=0.03, ge=0)
    noise_max_seconds: float = Field(default=1.0, gt=0)
    noise_max_position_seconds: float = Field(default=1.0, ge=0)


def insert_noise_burst(samples: np.ndarray, rng: np.random.Generator, cfg: PretrainConfig,
                       sample_rate: int) -> np.ndarray:
    amplitude = rng.uniform(0.0, cfg.noise_max_amplitude)
    length = int(rng.integers(1, seconds_to_samples(cfg.noise_max_seconds, sample_rate) + 1))
    position = int(rng.integers(0, seconds_to_samples(cfg.noise_max_position_seconds, sample_rate) + 1))
    position = min(position, samples.shape[0])
    burst = rng.uniform(-amplitude, amplitude, length)
    return np.concatenate([samples[:position], burst, samples[position:]])


def _teacher_forcing_batch(targets: Sequence[List[int]], bos: List[int], eos: int):
    """inputs = bos ++ y (eos-padded); labels = y ++ [eos] aligned to the last bos row"""
    width = len(bos) + max(len(y) for y in targets)
    inputs = torch.full((len(targets), width), eos, dtype=torch.long)
    labels = torch.full((len(targets), width), IGNORE_INDEX, dtype=torch.long)
    for row, y in enumerate(targets):
        seq = bos + y
        inputs[row, : len(seq)] = torch.tensor(seq)
        start = len(bos) - 1
        labels[row, start: start + len(y) + 1] = torch.tensor(y + [eos])
    return inputs, labels


def pretrain(model: ToyVictim, examples: Sequence[Example], cfg: PretrainConfig = PretrainConfig()) -> List[float]:
    """Teacher-forced cross entropy with Adam; returns the mean loss of each epoch"""
    if not examples:
        raise ConfigurationError("pre-training needs at least one example")

    vocab = model.vocabulary
    targets = [vocab.encode(ex.text) for ex in examples]
    rng = np.random.default_rng(cfg.seed)
    run_logger = get_run_logger(f"pretrain.{model.name}")
    run_logger.log_execution_start({"examples": len(examples), "config": cfg.model_dump()})

    started = time.monotonic()
    steps_per_epoch = math.ceil(len(examples) / cfg.batch_size)
    history: List[float] = []
    model.unfreeze()
    optimizer = torch.optim.Adam(model.network.parameters(), lr=cfg.learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=max(1, cfg.epochs * steps_per_epoch)
    )
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(examples))
            losses: List[float] = []
            for start in range(0, len(order), cfg.batch_size):
                batch_idx = order[start:start + cfg.batch_size]
                audio = []
                for i in batch_idx:
                    samples = examples[i].waveform.samples
                    if rng.random() < cfg.noise_probability:
                        samples = insert_noise_burst(samples, rng, cfg, model.frontend.sample_rate)
                    audio.append(torch.tensor(samples, dtype=torch.float64))

                inputs, labels = _teacher_forcing_batch([targets[i] for i in batch_idx],
                                                        vocab.bos_sequence, vocab.eos_id)
                logp = model.logprobs(stack_audio(audio), inputs)
                loss = F.nll_loss(logp.reshape(-1, logp.shape[-1]), labels.reshape(-1),
                                  ignore_index=IGNORE_INDEX)

                optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.network.parameters(), cfg.grad_clip)
                optimizer.step()
                scheduler.step()
                losses.append(loss.item())

            epoch_loss = math.fsum(losses) / len(losses)
            history.append(epoch_loss)
            run_logger.log_metric("pretrain_loss", epoch_loss, {"epoch": epoch})
            logger.debug(f"{model.name} pre-training epoch {epoch}: loss {epoch_loss:.4f}")
    except Exception as e:
        run_logger.log_error(e, {"model": model.name})
        raise
    finally:
        model.mark_trained()

    run_logger.log_execution_end({"final_loss": history[-1] if history else None, "identity": model.identity},
                                 time.monotonic() - started)
    return history
