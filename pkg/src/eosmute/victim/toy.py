"""Seeded, differentiable Whisper-shaped encoder-decoder used as the desk-scale victim."""
import hashlib
import logging
import threading
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import Tensor, nn

from ..audio.core import log_mel_tensor
from ..errors import ContractError
from ..schema.audio import FrontendConfig
from ..schema.victim import Vocabulary
from .base import VictimModel

logger = logging.getLogger(__name__)

BOS_TOKEN = "<|startoftranscript|>"
EOS_TOKEN = "<|endoftext|>"

CONTENT_WORDS = [
    "alfa", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliett", "kilo", "lima", "mike", "november", "oscar", "papa",
    "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray", "yankee", "zulu",
]

_build_lock = threading.Lock()


class ToyModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    vocab_size: int = Field(default=16, ge=4)
    n_state: int = Field(default=64, gt=0)
    n_head: int = Field(default=4, gt=0)
    n_audio_layer: int = Field(default=2, ge=1)
    n_text_layer: int = Field(default=2, ge=1)
    max_positions: int = Field(default=256, ge=2)
    frontend: FrontendConfig = FrontendConfig(chunk_seconds=3.0)

    @model_validator(mode="after")
    def _check_heads(self):
        if self.n_state % self.n_head:
            raise ValueError("n_state must be divisible by n_head")
        return self


def make_vocabulary(vocab_size: int) -> Vocabulary:
    if vocab_size < 4:
        raise ContractError(f"vocab_size must be >= 4 (bos, eos, 2 content tokens), got {vocab_size}")
    content = [
        CONTENT_WORDS[i] if i < len(CONTENT_WORDS) else f"w{i}"
        for i in range(vocab_size - 2)
    ]
    return Vocabulary(tokens=[BOS_TOKEN, EOS_TOKEN, *content], eos_id=1, bos_sequence=[0])


def sinusoids(length: int, channels: int, max_timescale: float = 10000.0) -> Tensor:
    log_increment = np.log(max_timescale) / (channels // 2 - 1)
    inv = torch.exp(-log_increment * torch.arange(channels // 2, dtype=torch.float64))
    scaled = torch.arange(length, dtype=torch.float64)[:, None] * inv[None, :]
    return torch.cat([torch.sin(scaled), torch.cos(scaled)], dim=1)


class MultiHeadAttention(nn.Module):
    def __init__(self, n_state: int, n_head: int):
        super().__init__()
        self.n_head = n_head
        self.query = nn.Linear(n_state, n_state)
        self.key = nn.Linear(n_state, n_state, bias=False)
        self.value = nn.Linear(n_state, n_state)
        self.out = nn.Linear(n_state, n_state)

    def _split(self, x: Tensor) -> Tensor:
        b, t, c = x.shape
        return x.view(b, t, self.n_head, c // self.n_head).transpose(1, 2)

    def forward(self, x: Tensor, xa: Optional[Tensor] = None, causal: bool = False) -> Tensor:
        src = x if xa is None else xa
        q, k, v = self._split(self.query(x)), self._split(self.key(src)), self._split(self.value(src))
        out = F.scaled_dot_product_attention(q, k, v, is_causal=causal)
        b, _, t, _ = out.shape
        return self.out(out.transpose(1, 2).reshape(b, t, -1))


class ResidualAttentionBlock(nn.Module):
    def __init__(self, n_state: int, n_head: int, cross_attention: bool = False):
        super().__init__()
        self.attn = MultiHeadAttention(n_state, n_head)
        self.attn_ln = nn.LayerNorm(n_state)
        self.cross_attn = MultiHeadAttention(n_state, n_head) if cross_attention else None
        self.cross_attn_ln = nn.LayerNorm(n_state) if cross_attention else None
        self.mlp = nn.Sequential(nn.Linear(n_state, 4 * n_state), nn.GELU(), nn.Linear(4 * n_state, n_state))
        self.mlp_ln = nn.LayerNorm(n_state)

    def forward(self, x: Tensor, xa: Optional[Tensor] = None, causal: bool = False) -> Tensor:
        x = x + self.attn(self.attn_ln(x), causal=causal)
        if self.cross_attn is not None:
            x = x + self.cross_attn(self.cross_attn_ln(x), xa)
        return x + self.mlp(self.mlp_ln(x))


class AudioEncoder(nn.Module):
    def __init__(self, n_mels: int, n_ctx: int, n_state: int, n_head: int, n_layer: int):
        super().__init__()
        self.conv1 = nn.Conv1d(n_mels, n_state, kernel_size=3, padding=1)
        self.conv2 = nn.Conv1d(n_state, n_state, kernel_size=3, stride=2, padding=1)
        self.register_buffer("positional_embedding", sinusoids(n_ctx, n_state))
        self.blocks = nn.ModuleList([ResidualAttentionBlock(n_state, n_head) for _ in range(n_layer)])
        self.ln_post = nn.LayerNorm(n_state)

    def forward(self, mel: Tensor) -> Tensor:
        x = F.gelu(self.conv1(mel))
        x = F.gelu(self.conv2(x)).permute(0, 2, 1)
        x = x + self.positional_embedding[: x.shape[1]]
        for block in self.blocks:
            x = block(x)
        return self.ln_post(x)


class TextDecoder(nn.Module):
    def __init__(self, n_vocab: int, n_ctx: int, n_state: int, n_head: int, n_layer: int):
        super().__init__()
        self.token_embedding = nn.Embedding(n_vocab, n_state)
        self.positional_embedding = nn.Parameter(torch.randn(n_ctx, n_state) * 0.01)
        self.blocks = nn.ModuleList(
            [ResidualAttentionBlock(n_state, n_head, cross_attention=True) for _ in range(n_layer)]
        )
        self.ln = nn.LayerNorm(n_state)

    def forward(self, tokens: Tensor, xa: Tensor) -> Tensor:
        x = self.token_embedding(tokens) + self.positional_embedding[: tokens.shape[-1]]
        for block in self.blocks:
            x = block(x, xa, causal=True)
        x = self.ln(x)
        return x @ self.token_embedding.weight.T


class ToyNetwork(nn.Module):
    def __init__(self, config: ToyModelConfig):
        super().__init__()
        fe = config.frontend
        n_audio_ctx = -(-fe.chunk_frames // 2)
        self.encoder = AudioEncoder(fe.n_mels, n_audio_ctx, config.n_state, config.n_head, config.n_audio_layer)
        self.decoder = TextDecoder(
            config.vocab_size, config.max_positions, config.n_state, config.n_head, config.n_text_layer
        )


class ToyVictim(VictimModel):
    """Whisper-shaped victim over log-Mel features; float64 throughout"""

    def __init__(self, network: ToyNetwork, config: ToyModelConfig, seed: int,
                 vocabulary: Optional[Vocabulary] = None, trained: bool = False):
        super().__init__(vocabulary or make_vocabulary(config.vocab_size), config.frontend)
        self.network = network
        self.config = config
        self.seed = seed
        self.trained = trained
        self._version: Optional[str] = None
        self.freeze()

    @property
    def name(self) -> str:
        return f"toy:{self.seed}"

    @property
    def identity(self) -> str:
        if self._version is None:
            self._version = self.parameters_digest()[:12]
        return f"{self.name}@{self._version}"

    @property
    def max_context(self) -> int:
        return self.config.max_positions

    def parameters_digest(self) -> str:
        sha256 = hashlib.sha256()
        for key, tensor in sorted(self.network.state_dict().items()):
            sha256.update(key.encode("utf-8"))
            sha256.update(tensor.detach().contiguous().numpy().tobytes())
        return sha256.hexdigest()

    def freeze(self):
        for p in self.network.parameters():
            p.requires_grad_(False)
        self.network.eval()

    def unfreeze(self):
        for p in self.network.parameters():
            p.requires_grad_(True)
        self.network.train()

    def mark_trained(self):
        self.trained = True
        self._version = None
        self.freeze()

    def fit_to_chunk(self, samples: Tensor) -> Tensor:
        """Keep the first chunk; zero-pad shorter audio"""
        n = self.frontend.chunk_samples
        if samples.shape[-1] >= n:
            return samples[..., :n]
        return F.pad(samples, (0, n - samples.shape[-1]))

    def encode(self, samples: Tensor) -> Tensor:
        fe = self.frontend
        mel = log_mel_tensor(
            self.fit_to_chunk(samples),
            sample_rate=fe.sample_rate,
            n_mels=fe.n_mels,
            window=fe.window,
            hop=fe.hop,
            log_floor=fe.log_floor,
        )
        return self.network.encoder((mel + 4.0) / 4.0)

    def decode(self, features: Tensor, tokens: Tensor) -> Tensor:
        if features.shape[0] != tokens.shape[0]:
            features = features.expand(tokens.shape[0], -1, -1)
        logits = self.network.decoder(tokens, features)
        return F.log_softmax(logits, dim=-1)

    def __repr__(self) -> str:
        return f"ToyVictim({self.identity!r}, trained={self.trained})"


def build_network(config: ToyModelConfig, seed: int) -> ToyNetwork:
    """Parameters depend only on (config, seed); the global RNG is left untouched"""
    with _build_lock, torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        network = ToyNetwork(config).double()
    return network


def make_toy_model(seed: int, vocab_size: int = 16, config: Optional[ToyModelConfig] = None) -> ToyVictim:
    config = config or ToyModelConfig()
    if config.vocab_size != vocab_size:
        config = config.model_copy(update={"vocab_size": vocab_size})
    vocabulary = make_vocabulary(vocab_size)
    model = ToyVictim(build_network(config, seed), config, seed, vocabulary)
    logger.info(f"Built toy model seed={seed} vocab={vocab_size}: {model.identity}")
    return model
