"""Signal-level defences: Mu-law companding and Butterworth low-pass filtering."""
import json
import logging
from functools import lru_cache
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.signal import butter, sosfilt

from ..errors import ConfigurationError, DomainError
from ..schema.audio import Waveform
from ..schema.defence import LowPassParams, MuLawParams

logger = logging.getLogger(__name__)

DefenceFn = Callable[[Waveform], Waveform]

# Every chain is applied forward only
FILTER_MODE = "causal"


def _check_unit_range(x: Waveform, op: str):
    peak = float(np.max(np.abs(x.samples))) if len(x) else 0.0
    if peak > 1.0:
        raise DomainError(f"{op} needs samples in [-1, 1], got peak {peak:.6g}")


def _quantize(samples: np.ndarray, bits: int) -> np.ndarray:
    levels = (1 << bits) - 1
    return np.round((samples + 1.0) * 0.5 * levels) / levels * 2.0 - 1.0


def mu_compress(x: Waveform, p: Optional[MuLawParams] = None) -> Waveform:
    """sign(x) ln(1 + mu|x|) / ln(1 + mu)"""
    p = p or MuLawParams()
    _check_unit_range(x, "mu_compress")
    s = x.samples
    y = np.sign(s) * np.log1p(p.mu * np.abs(s)) / np.log1p(p.mu)
    if p.quantize:
        y = _quantize(y, p.bits)
    return Waveform(samples=y, sample_rate=x.sample_rate)


def mu_expand(x: Waveform, p: Optional[MuLawParams] = None) -> Waveform:
    """sign(x) ((1 + mu)^|x| - 1) / mu"""
    p = p or MuLawParams()
    _check_unit_range(x, "mu_expand")
    s = x.samples
    y = np.sign(s) * np.expm1(np.abs(s) * np.log1p(p.mu)) / p.mu
    return Waveform(samples=y, sample_rate=x.sample_rate)


@lru_cache(maxsize=64)
def _butter_sos(order: int, cutoff_hz: float, sample_rate: int) -> np.ndarray:
    return butter(order, cutoff_hz, btype="low", fs=sample_rate, output="sos")


def butterworth_lowpass(x: Waveform, p: LowPassParams) -> Waveform:
    """Order-n Butterworth low-pass (bilinear IIR, second-order sections), causal"""
    nyquist = x.sample_rate / 2.0
    if p.cutoff_hz >= nyquist:
        raise DomainError(f"cutoff {p.cutoff_hz} Hz must lie below Nyquist ({nyquist} Hz)")
    sos = _butter_sos(p.order, float(p.cutoff_hz), x.sample_rate)
    return Waveform(samples=sosfilt(sos, x.samples), sample_rate=x.sample_rate)


def identity(x: Waveform) -> Waveform:
    return x


def _make_identity() -> DefenceFn:
    return identity


def _make_mu_compress(**params) -> DefenceFn:
    p = MuLawParams(**params)
    return lambda x: mu_compress(x, p)


def _make_mu_expand(**params) -> DefenceFn:
    p = MuLawParams(**params)
    return lambda x: mu_expand(x, p)


def _make_butterworth(**params) -> DefenceFn:
    p = LowPassParams(**params)
    return lambda x: butterworth_lowpass(x, p)


_REGISTRY: Dict[str, Callable[..., DefenceFn]] = {
    "identity": _make_identity,
    "mu_compress": _make_mu_compress,
    "mu_expand": _make_mu_expand,
    "butterworth": _make_butterworth,
    "lowpass": _make_butterworth,
}


def register_defence(name: str, factory: Callable[..., DefenceFn]):
    """Register a defence factory; factory(**params) must return Waveform -> Waveform"""
    if name in _REGISTRY:
        logger.warning(f"Replacing registered defence '{name}'")
    _REGISTRY[name] = factory


def available_defences() -> List[str]:
    return sorted(_REGISTRY)


def make_defence(name: str, **params) -> DefenceFn:
    factory = _REGISTRY.get(name)
    if factory is None:
        raise ConfigurationError(
            f"unknown defence '{name}'; known: {', '.join(available_defences())}"
        )
    try:
        return factory(**params)
    except (ValidationError, TypeError) as e:
        raise ConfigurationError(f"invalid parameters for defence '{name}': {e}") from e


def _step_label(name: str, params: Dict[str, Any]) -> str:
    if not params:
        return name
    inner = " ".join(f"{k}={params[k]:g}" if isinstance(params[k], float) else f"{k}={params[k]}"
                     for k in sorted(params))
    return f"{name}[{inner}]"


class DefenceChain:
    """Composition d = d_k ∘ ... ∘ d_1; the empty chain is the identity"""

    def __init__(self, steps: Sequence[Tuple[str, Dict[str, Any], DefenceFn]] = (),
                 label: Optional[str] = None):
        self.steps = list(steps)
        self.label = label or self._default_label()

    def _default_label(self) -> str:
        named = [(n, p) for n, p, _ in self.steps if n != "identity" or p]
        if not named:
            return "identity"
        return "+".join(_step_label(n, p) for n, p in named)

    def __call__(self, x: Waveform) -> Waveform:
        for _, _, fn in self.steps:
            x = fn(x)
        return x

    @property
    def is_identity(self) -> bool:
        return all(n == "identity" for n, _, _ in self.steps)

    def describe(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "steps": [{"name": n, **p} for n, p, _ in self.steps],
            "filter_mode": FILTER_MODE,
        }

    def __repr__(self) -> str:
        return f"DefenceChain({self.label!r})"


def defence_chain(
    names: Sequence[str],
    params: Optional[Union[Sequence[Dict[str, Any]], Dict[str, Dict[str, Any]]]] = None,
    label: Optional[str] = None,
) -> DefenceChain:
    """Build a chain from names; params is either a list aligned with names or a name -> params map"""
    if params is None:
        per_step = [{} for _ in names]
    elif isinstance(params, dict):
        per_step = [dict(params.get(n, {})) for n in names]
    else:
        per_step = [dict(p) for p in params]
        if len(per_step) != len(names):
            raise ConfigurationError("defence params must align with defence names")

    steps = [(n, p, make_defence(n, **p)) for n, p in zip(names, per_step)]
    return DefenceChain(steps, label=label)


def chain_from_config(config: Union[str, List[Dict[str, Any]]], label: Optional[str] = None) -> DefenceChain:
    """[{"name": "butterworth", "cutoff_hz": 7000, "order": 5}, ...] or its JSON text"""
    if isinstance(config, str):
        try:
            config = json.loads(config)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"defence chain is not valid JSON: {e}") from e
    if not isinstance(config, list):
        raise ConfigurationError("defence chain config must be a JSON list")

    names, params = [], []
    for item in config:
        if not isinstance(item, dict) or "name" not in item:
            raise ConfigurationError(f"defence entry needs a 'name': {item!r}")
        item = dict(item)
        names.append(item.pop("name"))
        params.append(item)
    return defence_chain(names, params, label=label)


def _coerce(value: str) -> Any:
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


def parse_chain_spec(spec: str) -> DefenceChain:
    """Parse a compact 'mu_compress,mu_expand' or 'butterworth:cutoff_hz=7000:order=5' chain"""
    names, params = [], []
    for part in filter(None, (s.strip() for s in spec.split(","))):
        name, *kvs = part.split(":")
        p: Dict[str, Any] = {}
        for kv in kvs:
            if "=" not in kv:
                raise ConfigurationError(f"malformed defence parameter '{kv}' in '{part}'")
            key, value = kv.split("=", 1)
            p[key] = _coerce(value)
        names.append(name)
        params.append(p)
    return defence_chain(names, params)
