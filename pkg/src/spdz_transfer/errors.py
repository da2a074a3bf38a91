"""Exception hierarchy shared by all layers."""


class SpdzTransferError(Exception):
    """Base class for every error raised by this package."""


class RangeError(SpdzTransferError, ValueError):
    """A real value cannot be represented by the fixed-point codec."""


class ShapeMismatch(SpdzTransferError, ValueError):
    pass


class TriplesExhausted(SpdzTransferError):
    """The preprocessing pool ran dry; the run was under-provisioned."""


class TransportError(SpdzTransferError):
    """A peer disconnected or failed to deliver within the round deadline."""


class ProtocolAbort(SpdzTransferError):
    """The computation halted with the bottom output.

    ``round`` is the protocol round in which the abort was raised.
    """

    def __init__(self, message: str, round: int = -1, party: int = -1):
        super().__init__(message)
        self.round = round
        self.party = party


class MacCheckFailed(ProtocolAbort):
    """The batched MAC check did not sum to zero."""


class PeerAborted(ProtocolAbort):
    """Another party broadcast ABORT."""


class ConfigError(SpdzTransferError, ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.path = path
