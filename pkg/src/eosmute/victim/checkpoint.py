"""Single-file checkpoints: 8-byte header length, JSON header, torch state dict."""
import io
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import torch

from ..errors import ConfigurationError
from ..schema.victim import Vocabulary
from .toy import ToyModelConfig, ToyVictim, build_network

logger = logging.getLogger(__name__)

FORMAT = "eosmute-toy-checkpoint"
HEADER_BYTES = 8


def save_checkpoint(model: ToyVictim, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": FORMAT,
        "identity": model.identity,
        "seed": model.seed,
        "trained": model.trained,
        "vocab": model.vocabulary.model_dump(),
        "frontend": model.frontend.model_dump(),
        "config": model.config.model_dump(),
    }
    header_raw = json.dumps(header, sort_keys=True).encode("utf-8")

    payload = io.BytesIO()
    torch.save(model.network.state_dict(), payload)

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(len(header_raw).to_bytes(HEADER_BYTES, "little"))
        f.write(header_raw)
        f.write(payload.getvalue())
    os.replace(tmp, path)
    logger.info(f"Checkpoint saved: {path} ({model.identity})")
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, torch.Tensor]]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER_BYTES:
        raise ConfigurationError(f"{path} is not a checkpoint")
    size = int.from_bytes(raw[:HEADER_BYTES], "little")
    try:
        header = json.loads(raw[HEADER_BYTES:HEADER_BYTES + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"{path} has a corrupt checkpoint header") from e
    if header.get("format") != FORMAT:
        raise ConfigurationError(f"{path} is not a {FORMAT} file")
    state = torch.load(io.BytesIO(raw[HEADER_BYTES + size:]), weights_only=True)
    return header, state


def load_checkpoint(path: Union[str, Path]) -> ToyVictim:
    header, state = read_checkpoint(path)
    config = ToyModelConfig(**header["config"])
    network = build_network(config, header["seed"])
    network.load_state_dict(state)
    model = ToyVictim(network, config, header["seed"], Vocabulary(**header["vocab"]),
                      trained=header.get("trained", False))
    if model.identity != header["identity"]:
        raise ConfigurationError(
            f"checkpoint {path} identity mismatch: header {header['identity']}, parameters {model.identity}"
        )
    return model
