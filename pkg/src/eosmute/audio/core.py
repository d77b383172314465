"""Waveform IO, log-Mel features and snippet splicing."""
import logging
import math
from functools import lru_cache
from pathlib import Path
from typing import TYPE_CHECKING, Union

import librosa
import numpy as np
import soundfile as sf
import torch
from scipy.signal import resample_poly

from ..errors import AudioDecodeError, ContractError, DomainError, EmptyAudioError
from ..schema.audio import DEFAULT_SAMPLE_RATE, MelSpectrogram, Waveform
from ..utils.file_utils import read_raw_samples, write_raw_samples

if TYPE_CHECKING:
    from ..schema.attack import AttackSnippet

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def load_waveform(path: PathLike, target_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Decode a PCM file, downmix to mono and resample to target_rate"""
    try:
        data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError, ValueError) as e:
        raise AudioDecodeError(f"cannot decode audio file {path}: {e}") from e

    if data.shape[0] == 0:
        raise EmptyAudioError(f"audio file {path} has no samples")

    samples = data.mean(axis=1)
    if rate != target_rate:
        g = math.gcd(int(rate), int(target_rate))
        samples = resample_poly(samples, target_rate // g, int(rate) // g)
        logger.debug(f"Resampled {path} from {rate} Hz to {target_rate} Hz")

    return Waveform(samples=np.clip(samples, -1.0, 1.0), sample_rate=target_rate)


def save_wav(x: Waveform, path: PathLike) -> Path:
    """Write 16-bit PCM WAV"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), np.clip(x.samples, -1.0, 1.0), x.sample_rate, subtype="PCM_16")
    return path


def save_waveform_raw(x: Waveform, path: PathLike) -> Path:
    """Interchange format: raw little-endian float32 + {sample_rate} sidecar"""
    written, _ = write_raw_samples(path, x.samples, {"sample_rate": x.sample_rate})
    return written


def load_waveform_raw(path: PathLike) -> Waveform:
    samples, sidecar = read_raw_samples(path)
    if samples.size == 0:
        raise EmptyAudioError(f"raw waveform {path} has no samples")
    return Waveform(samples=samples, sample_rate=int(sidecar["sample_rate"]))


def seconds_to_samples(seconds: float, sample_rate: int = DEFAULT_SAMPLE_RATE) -> int:
    if seconds < 0:
        raise DomainError(f"seconds must be >= 0, got {seconds}")
    return int(round(seconds * sample_rate))


@lru_cache(maxsize=16)
def _mel_basis_np(sample_rate: int, window: int, n_mels: int) -> np.ndarray:
    basis = librosa.filters.mel(sr=sample_rate, n_fft=window, n_mels=n_mels)
    basis = np.asarray(basis, dtype=np.float64)
    basis.setflags(write=False)
    return basis


def mel_center_frequencies(sample_rate: int, n_mels: int) -> np.ndarray:
    """Center frequency (Hz) of each filter of the Mel filterbank"""
    return librosa.mel_frequencies(n_mels=n_mels + 2, fmax=sample_rate / 2.0)[1:-1]


def log_mel_tensor(
    samples: torch.Tensor,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    n_mels: int = 80,
    window: int = 400,
    hop: int = 160,
    log_floor: float = 1e-10,
) -> torch.Tensor:
    """Differentiable log-Mel of (..., n_samples) audio -> (..., n_mels, ceil(n/hop))"""
    basis = torch.tensor(_mel_basis_np(sample_rate, window, n_mels), dtype=samples.dtype)
    hann = torch.hann_window(window, periodic=True, dtype=samples.dtype)

    n_frames = -(-samples.shape[-1] // hop)
    stft = torch.stft(
        samples,
        n_fft=window,
        hop_length=hop,
        win_length=window,
        window=hann,
        center=True,
        pad_mode="constant",
        return_complex=True,
    )
    # |X|^2 without abs(): keeps the gradient defined at zero bins
    power = stft.real ** 2 + stft.imag ** 2
    mel = torch.matmul(basis, power[..., :n_frames])
    return torch.log10(torch.clamp(mel, min=log_floor))


def log_mel(
    x: Waveform,
    n_mels: int = 80,
    window: int = 400,
    hop: int = 160,
    log_floor: float = 1e-10,
) -> MelSpectrogram:
    if len(x) == 0:
        raise EmptyAudioError("log_mel needs at least one sample")
    if hop <= 0 or window < hop:
        raise DomainError(f"need window >= hop > 0, got window={window}, hop={hop}")

    with torch.no_grad():
        frames = log_mel_tensor(
            torch.tensor(x.samples, dtype=torch.float64),
            sample_rate=x.sample_rate,
            n_mels=n_mels,
            window=window,
            hop=hop,
            log_floor=log_floor,
        )
    return MelSpectrogram(frames=frames.numpy(), n_mels=n_mels, hop_seconds=hop / x.sample_rate)


def splice_snippet(x: Waveform, a: "AttackSnippet", position_seconds: float) -> Waveform:
    """x[0:p] ++ a ++ x[p:]; at T=0 this prepends a. No re-clamping."""
    if a.sample_rate != x.sample_rate:
        raise ContractError(
            f"sample rate mismatch: audio {x.sample_rate} Hz, snippet {a.sample_rate} Hz"
        )
    if not 0.0 <= position_seconds <= 1.0:
        raise DomainError(f"position must lie in [0, 1] s, got {position_seconds}")

    p = seconds_to_samples(position_seconds, x.sample_rate)
    samples = np.concatenate([x.samples[:p], a.samples, x.samples[p:]])
    return Waveform(samples=samples, sample_rate=x.sample_rate)


def splice_tensor(x: torch.Tensor, a: torch.Tensor, position: int) -> torch.Tensor:
    """Tensor form of splice_snippet used inside the training graph"""
    return torch.cat([x[..., :position], a, x[..., position:]], dim=-1)
