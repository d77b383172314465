"""Universal snippet training with AdamW, l∞ projection and early stopping."""
import logging
import math
import time
from typing import List, Optional, Sequence, Union

import numpy as np
import torch

from ..audio.core import seconds_to_samples, splice_tensor
from ..errors import CapabilityError, ConfigurationError, EosmuteError
from ..schema.attack import AttackSnippet, InitScheme, IterationRecord, ObjectiveKind, TrainConfig
from ..schema.audio import DEFAULT_SAMPLE_RATE, SnippetParams, _frozen_array
from ..schema.harness import Example
from ..utils.logging import get_run_logger
from ..victim.base import VictimModel, stack_audio
from .losses import suppression_losses

logger = logging.getLogger(__name__)

VALIDATION_BATCH = 16


def quantize_to_float32(samples: np.ndarray, epsilon: float) -> np.ndarray:
    """Round to float32 (the artifact precision) without leaving [-ε, ε]"""
    bound = np.float32(epsilon)
    if float(bound) > epsilon:
        bound = np.nextafter(bound, np.float32(0))
    return np.clip(np.asarray(samples, dtype=np.float32), -bound, bound).astype(np.float64)


def init_snippet(params: SnippetParams, seed: int = 0, scheme: InitScheme = "uniform",
                 sample_rate: int = DEFAULT_SAMPLE_RATE) -> AttackSnippet:
    n = seconds_to_samples(params.length_seconds, sample_rate)
    if scheme == "zeros":
        samples = np.zeros(n)
    elif scheme == "uniform":
        rng = np.random.default_rng(seed)
        samples = quantize_to_float32(rng.uniform(-params.epsilon, params.epsilon, n), params.epsilon)
    else:
        raise ConfigurationError(f"unknown init scheme '{scheme}'")
    return AttackSnippet(samples=samples, params=params, sample_rate=sample_rate, seed=seed)


def project_linf(a: Union[AttackSnippet, torch.Tensor], epsilon: Optional[float] = None):
    """Clip every sample into [-ε, ε]. A tensor is projected in place (outside autograd) and returned"""
    if isinstance(a, torch.Tensor):
        if epsilon is None:
            raise ConfigurationError("projecting a raw tensor needs epsilon")
        with torch.no_grad():
            a.clamp_(-epsilon, epsilon)
        return a
    eps = a.params.epsilon if epsilon is None else epsilon
    return a.model_copy(update={"samples": _frozen_array(np.clip(a.samples, -eps, eps), "samples")})


def prefix_sources(model: VictimModel, examples: Sequence[Example], cfg: TrainConfig) -> List[List[int]]:
    """y_{<t} for the partial objective: the clean greedy transcription, or the reference"""
    if cfg.prefix_mode == "reference":
        return [model.vocabulary.encode(ex.text) for ex in examples]
    results = model.transcribe_many([ex.waveform for ex in examples], max_tokens=cfg.delta_horizon)
    return [r.token_ids for r in results]


def _tensors(examples: Sequence[Example]) -> List[torch.Tensor]:
    return [torch.tensor(ex.waveform.samples, dtype=torch.float64) for ex in examples]


def validation_loss(model: VictimModel, snippet: torch.Tensor, audio: Sequence[torch.Tensor],
                    position: int, sources: Optional[Sequence[List[int]]], delta: int) -> float:
    """Mean objective over the validation set, reduced in a fixed order"""
    losses: List[float] = []
    with torch.no_grad():
        for start in range(0, len(audio), VALIDATION_BATCH):
            chunk = audio[start:start + VALIDATION_BATCH]
            batch = stack_audio([splice_tensor(x, snippet, position) for x in chunk])
            srcs = sources[start:start + VALIDATION_BATCH] if sources is not None else None
            losses.extend(suppression_losses(model, batch, srcs, delta).tolist())
    return math.fsum(losses) / len(losses)


def train_attack(
    model: VictimModel,
    train_set: Sequence[Example],
    val_set: Sequence[Example],
    params: SnippetParams = SnippetParams(),
    cfg: TrainConfig = TrainConfig(),
    objective: ObjectiveKind = "complete",
) -> AttackSnippet:
    """Train a universal snippet; returns the best-validation snippet with its history"""
    if not model.differentiable:
        raise CapabilityError(f"{model.identity} cannot be attacked: no input gradients")
    if not train_set or not val_set:
        raise ConfigurationError("train_attack needs non-empty training and validation sets")

    sample_rate = model.frontend.sample_rate
    delta = cfg.delta_horizon if objective == "partial" else 1
    snippet = init_snippet(params, cfg.seed, cfg.init_scheme, sample_rate)
    provenance = {
        "objective": objective,
        "delta_horizon": delta,
        "trained_on": model.identity,
        "seed": cfg.seed,
        "config": cfg,
    }
    if cfg.max_iterations == 0:
        return snippet.model_copy(update=provenance)

    run_logger = get_run_logger(f"attack.{objective}")
    run_logger.log_execution_start({"model": model.identity, "params": params.model_dump(),
                                    "config": cfg.model_dump(), "train": len(train_set), "val": len(val_set)})

    position = seconds_to_samples(params.position_seconds, sample_rate)
    eps = params.epsilon
    train_audio, val_audio = _tensors(train_set), _tensors(val_set)
    train_src = val_src = None
    if objective == "partial":
        train_src = prefix_sources(model, train_set, cfg)
        val_src = prefix_sources(model, val_set, cfg)

    a = torch.tensor(snippet.samples, dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.AdamW([a], lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)

    best = a.detach().clone()
    best_val = math.inf
    reference = math.inf
    patience_left = cfg.patience
    history: List[IterationRecord] = []
    started = time.monotonic()

    for iteration in range(1, cfg.max_iterations + 1):
        order = rng.permutation(len(train_audio))
        step_losses: List[float] = []
        timed_out = False

        for start in range(0, len(order), cfg.batch_size):
            if time.monotonic() - started > cfg.time_limit_seconds:
                timed_out = True
                break
            idx = order[start:start + cfg.batch_size]
            batch = stack_audio([splice_tensor(train_audio[i], a, position) for i in idx])
            srcs = [train_src[i] for i in idx] if train_src is not None else None

            loss = suppression_losses(model, batch, srcs, delta).sum()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            project_linf(a, eps)
            if float(a.detach().abs().max()) > eps:
                raise EosmuteError(f"snippet left the l∞ ball after iteration {iteration}")
            step_losses.append(loss.item())

        train_loss = math.fsum(step_losses) / len(step_losses) if step_losses else math.nan
        if timed_out:
            if step_losses:
                history.append(IterationRecord(iteration=iteration, train_loss=train_loss,
                                               patience_left=patience_left))
            logger.info(f"Time limit of {cfg.time_limit_seconds}s reached during iteration {iteration}")
            break

        val = validation_loss(model, a.detach(), val_audio, position, val_src, delta)
        improved = val < best_val
        if improved:
            best_val = val
            best = a.detach().clone()
        if val < reference - cfg.min_delta:
            reference = val
            patience_left = cfg.patience
        else:
            patience_left -= 1

        history.append(IterationRecord(iteration=iteration, train_loss=train_loss, val_loss=val,
                                       patience_left=patience_left, improved=improved))
        run_logger.log_metric("val_loss", val, {"iteration": iteration, "train_loss": train_loss,
                                                "patience_left": patience_left})
        if patience_left <= 0:
            logger.info(f"Early stopping after iteration {iteration}")
            break

    result = AttackSnippet(
        samples=quantize_to_float32(best.numpy(), eps),
        params=params,
        sample_rate=sample_rate,
        history=history,
        **provenance,
    )
    run_logger.log_execution_end({"best_val_loss": best_val, "iterations": len(history)},
                                 time.monotonic() - started)
    return result
