from typing import Any, Dict, List, Optional


class EosmuteError(Exception):
    """Base class for every error raised by eosmute"""


class DomainError(EosmuteError, ValueError):
    """Numeric input outside the domain an operation is defined on"""


class EmptyAudioError(DomainError):
    """Audio with zero samples"""


class AudioDecodeError(EosmuteError, OSError):
    """Audio file that cannot be read or decoded"""


class ContractError(EosmuteError, ValueError):
    """A call contract was violated (prefix, sample rate, ...)"""


class ConfigurationError(EosmuteError, ValueError):
    """Unknown names, empty datasets or otherwise unusable configuration"""


class CapabilityError(EosmuteError, TypeError):
    """The model cannot do what was asked of it (e.g. produce gradients)"""


class ManifestError(ConfigurationError):
    def __init__(self, message: str, offending: Optional[List[Dict[str, Any]]] = None):
        self.offending = offending or []
        if self.offending:
            details = "; ".join(
                f"line {item.get('line')}: {item.get('reason')}" for item in self.offending
            )
            message = f"{message}: {details}"
        super().__init__(message)
