"""Secret-shared transfer learning across data domains.

Additive secret sharing over Z_{2^k} with information-theoretic MACs, a
trusted-dealer offline phase, a batched MAC check, and transfer units that
mix the activation maps of per-domain CNNs on authenticated shares.
"""

from .errors import (
    ConfigError,
    MacCheckFailed,
    PeerAborted,
    ProtocolAbort,
    RangeError,
    ShapeMismatch,
    SpdzTransferError,
    TransportError,
    TriplesExhausted,
)
from .ring import DEFAULT_CODEC, DEFAULT_RING, FixedPointCodec, Ring
from .sharing import AuthShare, reconstruct, share

__version__ = "0.1.0"

__all__ = [
    "AuthShare",
    "ConfigError",
    "DEFAULT_CODEC",
    "DEFAULT_RING",
    "FixedPointCodec",
    "MacCheckFailed",
    "PeerAborted",
    "ProtocolAbort",
    "RangeError",
    "Ring",
    "ShapeMismatch",
    "SpdzTransferError",
    "TransportError",
    "TriplesExhausted",
    "reconstruct",
    "share",
]
